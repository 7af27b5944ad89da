"""Numpy implementation of the MPC solver kernels.

Same API as the compiled ``_fastcore`` module; used when the extension is
not built or when ``DAAMPC_BACKEND=pure`` is set. The QP Newton systems are
the same as in the compiled Riccati recursion but are solved here in
condensed (input-only) form with dense linear algebra.

Shapes: ``N`` horizon, ``M`` intruders. ``ref`` is (N, 3), ``intr`` is
(M, N, 2), weights ``Q``/``Qf`` are 3x3. Heading residuals are wrapped to
(-pi, pi].
"""
import math

import numpy as np

NAME = "pure"
_TWO_PI = 2.0 * math.pi


def _wrap(a):
    w = math.pi - np.mod(math.pi - a, _TWO_PI)
    return np.where(w <= -math.pi, w + _TWO_PI, w)


def rollout(s0, u, v, te):
    """Euler rollout; returns (N+1, 3) states with unwrapped headings."""
    u = np.asarray(u, dtype=float)
    n = u.size
    out = np.empty((n + 1, 3))
    x, y, h = float(s0[0]), float(s0[1]), float(s0[2])
    out[0] = x, y, h
    for k in range(n):
        x += te * v * math.cos(h)
        y += te * v * math.sin(h)
        h += te * u[k]
        out[k + 1] = x, y, h
    return out


def residuals(states, ref, target):
    n = ref.shape[0]
    e = np.empty((n + 1, 3))
    e[:n, :2] = states[:n, :2] - ref[:, :2]
    e[:n, 2] = _wrap(states[:n, 2] - ref[:, 2])
    e[n, :2] = states[n, :2] - target[:2]
    e[n, 2] = _wrap(np.array([states[n, 2] - target[2]]))[0]
    return e


def separation(states, intr, rho2):
    """Constraint violations c[j, k] = rho^2 - dist^2 and the optimal slacks."""
    n = intr.shape[1] if intr.size else states.shape[0] - 1
    if intr.shape[0] == 0:
        return np.zeros((0, n)), np.zeros(n)
    dx = states[None, :n, 0] - intr[:, :, 0]
    dy = states[None, :n, 1] - intr[:, :, 1]
    c = rho2 - (dx * dx + dy * dy)
    eps = np.maximum(0.0, c.max(axis=0))
    return c, eps


def evaluate(s0, u, v, te, ref, target, intr, Q, Qf, R, w, rho2):
    """Objective with states eliminated by rollout and slacks at their optimum."""
    states = rollout(s0, u, v, te)
    e = residuals(states, ref, target)
    n = ref.shape[0]
    f = float(np.einsum("ka,ab,kb->", e[:n], Q, e[:n]) + e[n] @ Qf @ e[n])
    du = np.diff(u)
    f += R * float(du @ du)
    _, eps = separation(states, intr, rho2)
    f += w * float(eps @ eps)
    return f, states, eps


def sensitivities(states, v, te):
    """d(x_k, y_k, sigma_k)/du_m for k = 0..N, each (N+1, N)."""
    n = states.shape[0] - 1
    sig = states[:, 2]
    px = np.concatenate(([0.0], np.cumsum(-te * te * v * np.sin(sig[:n]))))
    py = np.concatenate(([0.0], np.cumsum(te * te * v * np.cos(sig[:n]))))
    K = np.arange(n + 1)[:, None]
    Mi = np.arange(n)[None, :]
    mask2 = Mi <= K - 2
    gx = np.where(mask2, px[K] - px[Mi + 1], 0.0)
    gy = np.where(mask2, py[K] - py[Mi + 1], 0.0)
    gs = np.where(Mi <= K - 1, te, 0.0)
    return gx, gy, gs


# Stage Hessian eigenvalues are floored at this fraction of the smallest
# eigenvalue of the tracking weight.
CURVATURE_FLOOR = 1e-2


def _sep_terms(states, intr, rho2):
    """Offsets to each intruder and the separation violations c = rho^2 - d^2."""
    n = intr.shape[1]
    dx = states[None, :n, 0] - intr[:, :, 0]
    dy = states[None, :n, 1] - intr[:, :, 1]
    return dx, dy, rho2 - (dx * dx + dy * dy)


def costates(states, u, v, te, ref, target, intr, Q, Qf, R, w, rho2):
    """Adjoint pass of the rollout objective.

    Returns ``(grad, p, lam)``: the exact input gradient, costates
    ``p[k] = dF/ds_k`` including all downstream effects (k = 1..N) and the
    separation multipliers ``lam[k] = 4 w eps_k`` of the worst intruder.
    """
    n = ref.shape[0]
    e = residuals(states, ref, target)
    expl = np.empty((n + 1, 3))
    expl[:n] = 2.0 * e[:n] @ Q
    expl[n] = 2.0 * Qf @ e[n]
    lam = np.zeros(n + 1)
    if intr.shape[0]:
        dx, dy, c = _sep_terms(states, intr, rho2)
        js = c.argmax(axis=0)
        ar = np.arange(n)
        eps = np.maximum(0.0, c[js, ar])
        lam[:n] = 4.0 * w * eps
        expl[:n, 0] -= lam[:n] * dx[js, ar]
        expl[:n, 1] -= lam[:n] * dy[js, ar]
    p = np.zeros((n + 1, 3))
    grad = np.empty(n)
    px, py, ps = expl[n]
    p[n] = px, py, ps
    tv = te * v
    for k in range(n - 1, -1, -1):
        grad[k] = te * ps
        if k == 0:
            break
        h = states[k, 2]
        ps = ps + expl[k, 2] + tv * (-math.sin(h) * px + math.cos(h) * py)
        px = px + expl[k, 0]
        py = py + expl[k, 1]
        p[k] = px, py, ps
    du = np.diff(u)
    grad[1:] += 2.0 * R * du
    grad[:-1] -= 2.0 * R * du
    return grad, p, lam


def gradient(states, u, v, te, ref, target, intr, Q, Qf, R, w, rho2):
    """Exact gradient of ``evaluate`` with respect to the inputs."""
    return costates(states, u, v, te, ref, target, intr, Q, Qf, R, w, rho2)[0]


def stage_hessians(states, u, v, te, ref, target, intr, Q, Qf, R, w, rho2):
    """Per-stage Lagrangian Hessians in state space, projected to be PD.

    Each (3, 3) block is 2W plus the curvature of the Euler step weighted by
    the next costate (heading-heading entry) minus the separation multiplier
    on the position entries. Negative eigenvalues are raised to a floor so
    the QP stays strictly convex.
    """
    n = ref.shape[0]
    _, p, lam = costates(states, u, v, te, ref, target, intr, Q, Qf, R, w, rho2)
    W = np.empty((n + 1, 3, 3))
    W[:n] = Q
    W[n] = Qf
    Hs = 2.0 * W
    h = states[1:n, 2]
    Hs[1:n, 2, 2] -= te * v * (np.cos(h) * p[2:, 0] + np.sin(h) * p[2:, 1])
    Hs[:, 0, 0] -= lam
    Hs[:, 1, 1] -= lam
    ev, V = np.linalg.eigh(Hs)
    floor = CURVATURE_FLOOR * np.array([
        np.linalg.eigvalsh(2.0 * Q)[0], np.linalg.eigvalsh(2.0 * Qf)[0]])
    fl = np.full(n + 1, floor[0])
    fl[n] = floor[1]
    ev = np.maximum(ev, fl[:, None])
    Hs = np.einsum("kab,kb,kcb->kac", V, ev, V)
    Hs[0] = 0.0
    return Hs


def _condensed(states, u, v, te, ref, target, intr, Q, Qf, R, w, rho2):
    """Dense input-space QP data: Hessian, gradient at du=0, constraint rows."""
    n = ref.shape[0]
    gx, gy, gs = sensitivities(states, v, te)
    G = np.stack([gx, gy, gs], axis=1)  # (N+1, 3, N)
    Hs = stage_hessians(states, u, v, te, ref, target, intr, Q, Qf, R, w, rho2)
    H = np.einsum("kam,kab,kbn->mn", G, Hs, G)
    if n > 1:
        idx = np.arange(n)
        diag = np.full(n, 4.0 * R)
        diag[0] = diag[-1] = 2.0 * R
        H[idx, idx] += diag
        H[idx[:-1], idx[1:]] -= 2.0 * R
        H[idx[1:], idx[:-1]] -= 2.0 * R
    e = residuals(states, ref, target)
    W = np.empty((n + 1, 3, 3))
    W[:n] = Q
    W[n] = Qf
    g = 2.0 * np.einsum("kam,kab,kb->m", G, W, e)
    du = np.diff(u)
    g[1:] += 2.0 * R * du
    g[:-1] -= 2.0 * R * du
    if intr.shape[0]:
        dx, dy, c = _sep_terms(states, intr, rho2)
        A = 2.0 * (dx[:, :, None] * gx[None, :n, :] + dy[:, :, None] * gy[None, :n, :])
    else:
        c = np.zeros((0, n))
        A = np.zeros((0, n, n))
    return H, g, A, c


def qp_step(states, u, v, te, ref, target, intr, Q, Qf, R, w, rho2, lo, hi,
            tol=1e-10, max_iter=80):
    """SQP step from the current (rollout-feasible) iterate.

    Solves the QP in (du, eps)

        min  model tracking/rate cost + w |eps|^2
        s.t. eps_k + a_jk . ds_k >= rho^2 - d_jk^2,  eps >= 0,
             lo <= u + du <= hi

    with a Mehrotra predictor-corrector interior-point method started from a
    strictly feasible point. Returns ``(du, status, iterations)``; status 0
    converged, 1 iteration limit, 2 numerical failure.
    """
    n = u.size
    H, g0, A, c = _condensed(states, u, v, te, ref, target, intr, Q, Qf, R, w, rho2)
    m = A.shape[0]
    lb = lo - u
    ub = hi - u
    width = hi - lo
    du = np.clip(np.zeros(n), lb + 0.01 * width, ub - 0.01 * width)
    eps_pad = 1e-2 * rho2
    if m:
        eps = np.maximum(0.0, (c - A @ du).max(axis=0)) + eps_pad
    else:
        eps = np.full(n, eps_pad)

    def rows(du, eps):
        sep = A @ du + eps[None, :] - c
        return sep, eps.copy(), du - lb, ub - du

    def ct(ysep, yeps, ylo, yhi):
        cu = ylo - yhi
        ce = yeps.copy()
        if m:
            cu = cu + np.einsum("jk,jkn->n", ysep, A)
            ce += ysep.sum(axis=0)
        return cu, ce

    t = rows(du, eps)
    grad_u = H @ du + g0
    gscale = np.abs(grad_u).max() * width + 2.0 * w * eps.max() * eps.max()
    nrows = m * n + 3 * n
    mu0 = max(gscale, 1e-300) / nrows
    # Stop on the scale of the problem at the current iterate: the padded,
    # interior start point would otherwise leave the step short of active
    # input bounds.
    need_max = max(float(c.max()), 0.0) if m else 0.0
    stop_scale = max(np.abs(g0).max() * width + 2.0 * w * need_max * need_max, 1e-12 * gscale)
    mu_stop = tol * max(stop_scale, 1e-300) / nrows
    lam = tuple(mu0 / ti for ti in t)
    dual_factor = 1.0
    for it in range(1, max_iter + 1):
        tv = np.concatenate([x.ravel() for x in t])
        lv = np.concatenate([x.ravel() for x in lam])
        mu = float(tv @ lv) / nrows
        if mu <= mu_stop and dual_factor <= tol:
            return du, 0, it
        D = tuple(li / ti for li, ti in zip(lam, t))
        E = 2.0 * w + D[1]
        Huu = H + np.diag(D[2] + D[3])
        if m:
            dsum = D[0].sum(axis=0)
            E = E + dsum
            # Per-stage weight diag(D) - D D'/E with the diagonal formed as
            # D_j (E - D_j) / E so nothing cancels when the barrier is stiff.
            Tw = -D[0][:, None, :] * D[0][None, :, :] / E
            rest = 2.0 * w + D[1] + dsum[None, :] - D[0]
            jj = np.arange(m)
            Tw[jj, jj, :] = D[0] * rest / E
            Huu = Huu + np.einsum("ijk,ikm,jkn->mn", Tw, A, A)
            B = np.einsum("jk,jkn->kn", D[0], A)
        else:
            B = np.zeros((n, n))
        try:
            L = np.linalg.cholesky(Huu)
        except np.linalg.LinAlgError:
            return du, 2, it
        grad_u = H @ du + g0
        grad_e = 2.0 * w * eps

        def newton(rc):
            psi = tuple(-li + rci / ti for li, rci, ti in zip(lam, rc, t))
            cu, ce = ct(*psi)
            gu = grad_u + cu
            ge = grad_e + ce
            rhs = -(gu - B.T @ (ge / E))
            ddu = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
            deps = -(ge + B @ ddu) / E
            dt = rows(ddu, deps)
            dt = (dt[0] + c, dt[1], ddu, -ddu)  # rows() subtracts constants
            dlam = tuple(-(rci + li * dti) / ti for rci, li, dti, ti in zip(rc, lam, dt, t))
            return ddu, deps, dt, dlam

        def max_step(x, dx):
            neg = dx < 0.0
            if not neg.any():
                return 1.0
            return min(1.0, float((-x[neg] / dx[neg]).min()))

        def step_len(dt, dlam):
            a = 1.0
            for x, dx in zip(t, dt):
                a = min(a, max_step(x.ravel(), dx.ravel()))
            for x, dx in zip(lam, dlam):
                a = min(a, max_step(x.ravel(), dx.ravel()))
            return a

        rc = tuple(ti * li for ti, li in zip(t, lam))
        _, _, dt_a, dl_a = newton(rc)
        a_aff = step_len(dt_a, dl_a)
        mu_aff = sum(float(((ti + a_aff * dti) * (li + a_aff * dli)).sum())
                     for ti, dti, li, dli in zip(t, dt_a, lam, dl_a)) / nrows
        sigma = (mu_aff / mu) ** 3
        rc = tuple(ti * li + dti * dli - sigma * mu
                   for ti, li, dti, dli in zip(t, lam, dt_a, dl_a))
        ddu, deps, dt, dlam = newton(rc)
        a = min(1.0, 0.995 * step_len(dt, dlam))
        du = du + a * ddu
        eps = eps + a * deps
        t = tuple(ti + a * dti for ti, dti in zip(t, dt))
        lam = tuple(li + a * dli for li, dli in zip(lam, dlam))
        dual_factor *= 1.0 - a
    return du, 1, max_iter
