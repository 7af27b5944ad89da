# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MPC solver kernels.

Mirrors ``_purecore`` function for function. The QP Newton systems are
solved stage by stage with a Riccati recursion on the augmented state
(dx, dy, dheading, previous input), which is O(N) per interior-point
iteration instead of the dense O(N^3) condensed solve.
"""
import numpy as np

from libc.math cimport sin, cos, fmod, fabs, M_PI
from scipy.linalg.cython_lapack cimport dsyev

NAME = "compiled"

cdef double TWO_PI = 2.0 * M_PI
# Must match _purecore.CURVATURE_FLOOR.
CURVATURE_FLOOR = 1e-2


cdef inline double _wrap(double a) nogil:
    cdef double r = fmod(M_PI - a, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    cdef double w = M_PI - r
    if w <= -M_PI:
        w += TWO_PI
    return w


def rollout(s0, u, double v, double te):
    """Euler rollout; returns (N+1, 3) states with unwrapped headings."""
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t n = uu.shape[0], k
    out = np.empty((n + 1, 3))
    cdef double[:, ::1] o = out
    cdef double x = float(s0[0]), y = float(s0[1]), h = float(s0[2])
    o[0, 0] = x
    o[0, 1] = y
    o[0, 2] = h
    for k in range(n):
        x += te * v * cos(h)
        y += te * v * sin(h)
        h += te * uu[k]
        o[k + 1, 0] = x
        o[k + 1, 1] = y
        o[k + 1, 2] = h
    return out


cdef void _residuals(double[:, ::1] s, double[:, ::1] ref, double[::1] target,
                     double[:, ::1] e) noexcept nogil:
    cdef Py_ssize_t n = ref.shape[0], k
    for k in range(n):
        e[k, 0] = s[k, 0] - ref[k, 0]
        e[k, 1] = s[k, 1] - ref[k, 1]
        e[k, 2] = _wrap(s[k, 2] - ref[k, 2])
    e[n, 0] = s[n, 0] - target[0]
    e[n, 1] = s[n, 1] - target[1]
    e[n, 2] = _wrap(s[n, 2] - target[2])


cdef inline double _quad3(double[:, ::1] W, double a, double b, double c) noexcept nogil:
    return (a * (W[0, 0] * a + W[0, 1] * b + W[0, 2] * c)
            + b * (W[1, 0] * a + W[1, 1] * b + W[1, 2] * c)
            + c * (W[2, 0] * a + W[2, 1] * b + W[2, 2] * c))


cdef void _worst(double[:, ::1] s, double[:, :, ::1] intr, double rho2, Py_ssize_t k,
                 double *eps, double *dx, double *dy) noexcept nogil:
    """Largest violation at step k, clipped at 0, and the offset producing it."""
    cdef Py_ssize_t j, m = intr.shape[0]
    cdef double best = -1e308, c, ddx, ddy
    eps[0] = 0.0
    dx[0] = 0.0
    dy[0] = 0.0
    for j in range(m):
        ddx = s[k, 0] - intr[j, k, 0]
        ddy = s[k, 1] - intr[j, k, 1]
        c = rho2 - (ddx * ddx + ddy * ddy)
        if c > best:
            best = c
            dx[0] = ddx
            dy[0] = ddy
    if m > 0 and best > 0.0:
        eps[0] = best


def evaluate(s0, u, double v, double te, ref, target, intr, Q, Qf, double R,
             double w, double rho2):
    """Objective with states eliminated by rollout and slacks at their optimum."""
    states = rollout(s0, u, v, te)
    cdef double[:, ::1] s = states
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:, ::1] rf = np.ascontiguousarray(ref, dtype=np.float64)
    cdef double[::1] tg = np.ascontiguousarray(target, dtype=np.float64)
    cdef double[:, :, ::1] it = np.ascontiguousarray(intr, dtype=np.float64)
    cdef double[:, ::1] Wq = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[:, ::1] Wf = np.ascontiguousarray(Qf, dtype=np.float64)
    cdef Py_ssize_t n = rf.shape[0], k
    e_arr = np.empty((n + 1, 3))
    cdef double[:, ::1] e = e_arr
    eps_arr = np.zeros(n)
    cdef double[::1] eps = eps_arr
    cdef double f = 0.0, d, dx, dy
    _residuals(s, rf, tg, e)
    for k in range(n):
        f += _quad3(Wq, e[k, 0], e[k, 1], e[k, 2])
    f += _quad3(Wf, e[n, 0], e[n, 1], e[n, 2])
    for k in range(1, n):
        d = uu[k] - uu[k - 1]
        f += R * d * d
    for k in range(n):
        _worst(s, it, rho2, k, &eps[k], &dx, &dy)
        f += w * eps[k] * eps[k]
    return f, states, eps_arr


cdef void _costates(double[:, ::1] s, double[::1] uu, double v, double te,
                    double[:, ::1] rf, double[::1] tg, double[:, :, ::1] it,
                    double[:, ::1] Wq, double[:, ::1] Wf, double R, double w,
                    double rho2, double[::1] grad, double[:, ::1] p,
                    double[::1] lam, double[:, ::1] e) noexcept nogil:
    cdef Py_ssize_t n = rf.shape[0], k, a
    cdef double px, py, ps, ex, ey, es, eps, dx, dy, h, tv = te * v, d
    _residuals(s, rf, tg, e)
    for a in range(3):
        p[0, a] = 0.0
    px = 2.0 * (Wf[0, 0] * e[n, 0] + Wf[0, 1] * e[n, 1] + Wf[0, 2] * e[n, 2])
    py = 2.0 * (Wf[1, 0] * e[n, 0] + Wf[1, 1] * e[n, 1] + Wf[1, 2] * e[n, 2])
    ps = 2.0 * (Wf[2, 0] * e[n, 0] + Wf[2, 1] * e[n, 1] + Wf[2, 2] * e[n, 2])
    p[n, 0] = px
    p[n, 1] = py
    p[n, 2] = ps
    lam[n] = 0.0
    _worst(s, it, rho2, 0, &eps, &dx, &dy)
    lam[0] = 4.0 * w * eps
    k = n - 1
    while k >= 0:
        grad[k] = te * ps
        if k == 0:
            break
        ex = 2.0 * (e[k, 0] * Wq[0, 0] + e[k, 1] * Wq[1, 0] + e[k, 2] * Wq[2, 0])
        ey = 2.0 * (e[k, 0] * Wq[0, 1] + e[k, 1] * Wq[1, 1] + e[k, 2] * Wq[2, 1])
        es = 2.0 * (e[k, 0] * Wq[0, 2] + e[k, 1] * Wq[1, 2] + e[k, 2] * Wq[2, 2])
        _worst(s, it, rho2, k, &eps, &dx, &dy)
        lam[k] = 4.0 * w * eps
        ex -= lam[k] * dx
        ey -= lam[k] * dy
        h = s[k, 2]
        ps = ps + es + tv * (-sin(h) * px + cos(h) * py)
        px = px + ex
        py = py + ey
        p[k, 0] = px
        p[k, 1] = py
        p[k, 2] = ps
        k -= 1
    for k in range(1, n):
        d = 2.0 * R * (uu[k] - uu[k - 1])
        grad[k] += d
        grad[k - 1] -= d


def gradient(states, u, double v, double te, ref, target, intr, Q, Qf, double R,
             double w, double rho2):
    """Exact gradient of ``evaluate`` with respect to the inputs (adjoint pass)."""
    cdef double[:, ::1] rf = np.ascontiguousarray(ref, dtype=np.float64)
    cdef Py_ssize_t n = rf.shape[0]
    grad = np.empty(n)
    p = np.empty((n + 1, 3))
    lam = np.empty(n + 1)
    e = np.empty((n + 1, 3))
    _costates(np.ascontiguousarray(states, dtype=np.float64),
              np.ascontiguousarray(u, dtype=np.float64), v, te, rf,
              np.ascontiguousarray(target, dtype=np.float64),
              np.ascontiguousarray(intr, dtype=np.float64),
              np.ascontiguousarray(Q, dtype=np.float64),
              np.ascontiguousarray(Qf, dtype=np.float64), R, w, rho2, grad, p, lam, e)
    return grad


cdef int _eig3(double *a, double *ev) noexcept nogil:
    """Eigen-decomposition of a symmetric 3x3 (row-major == column-major)."""
    cdef char jobz = b'V'
    cdef char uplo = b'U'
    cdef int n = 3, lda = 3, lwork = 16, info = 0
    cdef double work[16]
    dsyev(&jobz, &uplo, &n, a, &lda, ev, work, &lwork, &info)
    return info


cdef double _min_eig(double[:, ::1] W):
    cdef double a[9]
    cdef double ev[3]
    cdef int i, j
    for i in range(3):
        for j in range(3):
            a[3 * i + j] = 2.0 * W[i, j]
    if _eig3(a, ev) != 0:
        raise ArithmeticError("eigen-decomposition failed")
    return ev[0]


def stage_hessians(states, u, double v, double te, ref, target, intr, Q, Qf,
                   double R, double w, double rho2):
    """Per-stage projected Lagrangian Hessians, (N+1, 3, 3); see _purecore."""
    cdef double[:, ::1] rf = np.ascontiguousarray(ref, dtype=np.float64)
    cdef Py_ssize_t n = rf.shape[0]
    Hs = np.empty((n + 1, 3, 3))
    _stage_hessians(np.ascontiguousarray(states, dtype=np.float64),
                    np.ascontiguousarray(u, dtype=np.float64), v, te, rf,
                    np.ascontiguousarray(target, dtype=np.float64),
                    np.ascontiguousarray(intr, dtype=np.float64),
                    np.ascontiguousarray(Q, dtype=np.float64),
                    np.ascontiguousarray(Qf, dtype=np.float64), R, w, rho2, Hs,
                    np.empty(n), np.empty((n + 1, 3)), np.empty(n + 1),
                    np.empty((n + 1, 3)))
    return Hs


cdef int _stage_hessians(double[:, ::1] s, double[::1] uu, double v, double te,
                         double[:, ::1] rf, double[::1] tg, double[:, :, ::1] it,
                         double[:, ::1] Wq, double[:, ::1] Wf, double R, double w,
                         double rho2, double[:, :, ::1] Hs, double[::1] grad,
                         double[:, ::1] p, double[::1] lam, double[:, ::1] e) except -1:
    cdef Py_ssize_t n = rf.shape[0], k, i, j, l
    cdef double fq = CURVATURE_FLOOR * _min_eig(Wq)
    cdef double ff = CURVATURE_FLOOR * _min_eig(Wf)
    cdef double a[9]
    cdef double ev[3]
    cdef double fl, acc
    cdef double[:, ::1] W
    _costates(s, uu, v, te, rf, tg, it, Wq, Wf, R, w, rho2, grad, p, lam, e)
    for i in range(3):
        for j in range(3):
            Hs[0, i, j] = 0.0
    for k in range(1, n + 1):
        W = Wf if k == n else Wq
        fl = ff if k == n else fq
        for i in range(3):
            for j in range(3):
                a[3 * i + j] = 2.0 * W[i, j]
        a[0] -= lam[k]
        a[4] -= lam[k]
        if k < n:
            a[8] -= te * v * (cos(s[k, 2]) * p[k + 1, 0] + sin(s[k, 2]) * p[k + 1, 1])
        if _eig3(a, ev) != 0:
            raise ArithmeticError("eigen-decomposition failed")
        for l in range(3):
            if ev[l] < fl:
                ev[l] = fl
        # eigenvectors are the rows of a (column-major output)
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for l in range(3):
                    acc += a[3 * l + i] * ev[l] * a[3 * l + j]
                Hs[k, i, j] = acc
    return 0


cdef inline double _max_step(double x, double dx, double a) noexcept nogil:
    if dx < 0.0 and -x / dx < a:
        return -x / dx
    return a


def qp_step(states, u, double v, double te, ref, target, intr, Q, Qf, double R,
            double w, double rho2, double lo, double hi, double tol=1e-10,
            int max_iter=80):
    """SQP step from the current (rollout-feasible) iterate.

    Same QP, starting point, Mehrotra iteration and stopping rule as the
    numpy kernel; only the linear algebra differs. Returns
    ``(du, status, iterations)``.
    """
    cdef double[:, ::1] s = np.ascontiguousarray(states, dtype=np.float64)
    cdef double[::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:, ::1] rf = np.ascontiguousarray(ref, dtype=np.float64)
    cdef double[::1] tg = np.ascontiguousarray(target, dtype=np.float64)
    cdef double[:, :, ::1] itr = np.ascontiguousarray(intr, dtype=np.float64)
    cdef double[:, ::1] Wq = np.ascontiguousarray(Q, dtype=np.float64)
    cdef double[:, ::1] Wf = np.ascontiguousarray(Qf, dtype=np.float64)
    cdef Py_ssize_t n = rf.shape[0], m = itr.shape[0]
    cdef Py_ssize_t k, j, i, it
    cdef int status = 1, iters = max_iter

    Hs_a = np.empty((n + 1, 3, 3))
    cdef double[:, :, ::1] Hs = Hs_a
    cdef double[:, ::1] e = np.empty((n + 1, 3))
    cdef double[:, ::1] pco = np.empty((n + 1, 3))
    cdef double[::1] lamk = np.empty(n + 1)
    cdef double[::1] gtmp = np.empty(n)
    _stage_hessians(s, uu, v, te, rf, tg, itr, Wq, Wf, R, w, rho2, Hs, gtmp, pco,
                    lamk, e)

    # stage data
    cdef double[::1] sn = np.empty(n + 1)
    cdef double[::1] cs = np.empty(n + 1)
    cdef double[:, ::1] gs = np.empty((n + 1, 3))   # 2 W e_k
    cdef double[:, ::1] ax = np.empty((max(m, 1), n))  # separation row gradients
    cdef double[:, ::1] ay = np.empty((max(m, 1), n))
    cdef double[:, ::1] cc = np.empty((max(m, 1), n))
    cdef double[::1] rb = np.zeros(n)  # u_k - u_{k-1}
    cdef double[:, ::1] W
    for k in range(n + 1):
        sn[k] = sin(s[k, 2])
        cs[k] = cos(s[k, 2])
        W = Wf if k == n else Wq
        for i in range(3):
            gs[k, i] = 2.0 * (W[i, 0] * e[k, 0] + W[i, 1] * e[k, 1] + W[i, 2] * e[k, 2])
    cdef double ddx, ddy
    for j in range(m):
        for k in range(n):
            ddx = s[k, 0] - itr[j, k, 0]
            ddy = s[k, 1] - itr[j, k, 1]
            cc[j, k] = rho2 - (ddx * ddx + ddy * ddy)
            if k == 0:
                ax[j, k] = 0.0
                ay[j, k] = 0.0
            else:
                ax[j, k] = 2.0 * ddx
                ay[j, k] = 2.0 * ddy
    for k in range(1, n):
        rb[k] = uu[k] - uu[k - 1]

    cdef double tv = te * v
    cdef double width = hi - lo
    # iterate
    du_a = np.empty(n)
    cdef double[::1] du = du_a
    cdef double[::1] eps = np.empty(n)
    cdef double[:, ::1] ds = np.zeros((n + 1, 3))
    cdef double[::1] lb = np.empty(n)
    cdef double[::1] ub = np.empty(n)
    cdef double[:, ::1] t_sep = np.empty((max(m, 1), n))
    cdef double[:, ::1] l_sep = np.empty((max(m, 1), n))
    cdef double[:, ::1] t3 = np.empty((3, n))  # eps, lo, hi rows
    cdef double[:, ::1] l3 = np.empty((3, n))
    # directions and scratch
    cdef double[::1] ddu = np.empty(n)
    cdef double[::1] deps = np.empty(n)
    cdef double[:, ::1] dds = np.zeros((n + 1, 3))
    cdef double[:, ::1] dt_sep = np.empty((max(m, 1), n))
    cdef double[:, ::1] dl_sep = np.empty((max(m, 1), n))
    cdef double[:, ::1] dt3 = np.empty((3, n))
    cdef double[:, ::1] dl3 = np.empty((3, n))
    cdef double[:, ::1] rc_sep = np.empty((max(m, 1), n))
    cdef double[:, ::1] rc3 = np.empty((3, n))
    cdef double[:, ::1] K = np.empty((n, 4))
    cdef double[::1] Quu = np.empty(n)
    cdef double[::1] E = np.empty(n)
    cdef double[::1] bx = np.empty(n)
    cdef double[::1] by = np.empty(n)
    cdef double[::1] ge = np.empty(n)
    cdef double[:, ::1] Dsep = np.empty((max(m, 1), n))

    cdef double x, pad, mx, val, need_max = 0.0, g0max = 0.0
    # model gradient and required slack at the current iterate (du = 0)
    cdef double[::1] zero_u = np.zeros(n)
    cdef double[:, ::1] zero_s = np.zeros((n + 1, 3))
    cdef double[::1] g0 = np.empty(n)
    _model_gradient(zero_u, zero_s, Hs, gs, sn, cs, tv, te, R, rb, g0, n)
    for k in range(n):
        if fabs(g0[k]) > g0max:
            g0max = fabs(g0[k])
        for j in range(m):
            if cc[j, k] > need_max:
                need_max = cc[j, k]
    for k in range(n):
        lb[k] = lo - uu[k]
        ub[k] = hi - uu[k]
        x = 0.0
        if x < lb[k] + 0.01 * width:
            x = lb[k] + 0.01 * width
        if x > ub[k] - 0.01 * width:
            x = ub[k] - 0.01 * width
        du[k] = x
    _forward_states(du, ds, sn, cs, tv, te, n)
    pad = 1e-2 * rho2
    for k in range(n):
        mx = 0.0
        for j in range(m):
            val = cc[j, k] - (ax[j, k] * ds[k, 0] + ay[j, k] * ds[k, 1])
            if val > mx:
                mx = val
        eps[k] = mx + pad
    _rows(du, eps, ds, ax, ay, cc, lb, ub, t_sep, t3, m, n)

    # scale of the problem at the start point
    cdef double[::1] gmod = np.empty(n)
    _model_gradient(du, ds, Hs, gs, sn, cs, tv, te, R, rb, gmod, n)
    cdef double gmax = 0.0, emax = 0.0
    for k in range(n):
        if fabs(gmod[k]) > gmax:
            gmax = fabs(gmod[k])
        if eps[k] > emax:
            emax = eps[k]
    cdef double gscale = gmax * width + 2.0 * w * emax * emax
    cdef double nrows = <double>(m * n + 3 * n)
    cdef double mu0 = gscale / nrows
    if mu0 < 1e-300 / nrows:
        mu0 = 1e-300 / nrows
    # Stop on the scale of the problem at the current iterate: the padded,
    # interior start point would otherwise leave the step short of active
    # input bounds.
    cdef double stop_scale = g0max * width + 2.0 * w * need_max * need_max
    if stop_scale < 1e-12 * gscale:
        stop_scale = 1e-12 * gscale
    if stop_scale < 1e-300:
        stop_scale = 1e-300
    cdef double mu_stop = tol * stop_scale / nrows
    for j in range(m):
        for k in range(n):
            l_sep[j, k] = mu0 / t_sep[j, k]
    for i in range(3):
        for k in range(n):
            l3[i, k] = mu0 / t3[i, k]

    cdef double dual_factor = 1.0, mu, mu_aff, a_aff, sigma, alpha
    cdef int ok
    for it in range(1, max_iter + 1):
        mu = 0.0
        for j in range(m):
            for k in range(n):
                mu += t_sep[j, k] * l_sep[j, k]
        for i in range(3):
            for k in range(n):
                mu += t3[i, k] * l3[i, k]
        mu /= nrows
        if mu <= mu_stop and dual_factor <= tol:
            status = 0
            iters = it
            break
        ok = _factor(Hs, ax, ay, t_sep, l_sep, t3, l3, Dsep, E, bx, by, K, Quu,
                     sn, cs, tv, te, R, w, m, n)
        if not ok:
            status = 2
            iters = it
            break
        # predictor
        for j in range(m):
            for k in range(n):
                rc_sep[j, k] = t_sep[j, k] * l_sep[j, k]
        for i in range(3):
            for k in range(n):
                rc3[i, k] = t3[i, k] * l3[i, k]
        _newton(du, eps, ds, Hs, gs, ax, ay, t_sep, l_sep, t3, l3, rc_sep, rc3,
                E, bx, by, K, Quu, sn, cs, tv, te, R, w, rb, ge,
                ddu, deps, dds, dt_sep, dl_sep, dt3, dl3, m, n)
        a_aff = _step_len(t_sep, l_sep, t3, l3, dt_sep, dl_sep, dt3, dl3, m, n)
        mu_aff = 0.0
        for j in range(m):
            for k in range(n):
                mu_aff += (t_sep[j, k] + a_aff * dt_sep[j, k]) * (l_sep[j, k] + a_aff * dl_sep[j, k])
        for i in range(3):
            for k in range(n):
                mu_aff += (t3[i, k] + a_aff * dt3[i, k]) * (l3[i, k] + a_aff * dl3[i, k])
        mu_aff /= nrows
        sigma = (mu_aff / mu) ** 3
        # corrector
        for j in range(m):
            for k in range(n):
                rc_sep[j, k] = t_sep[j, k] * l_sep[j, k] + dt_sep[j, k] * dl_sep[j, k] - sigma * mu
        for i in range(3):
            for k in range(n):
                rc3[i, k] = t3[i, k] * l3[i, k] + dt3[i, k] * dl3[i, k] - sigma * mu
        _newton(du, eps, ds, Hs, gs, ax, ay, t_sep, l_sep, t3, l3, rc_sep, rc3,
                E, bx, by, K, Quu, sn, cs, tv, te, R, w, rb, ge,
                ddu, deps, dds, dt_sep, dl_sep, dt3, dl3, m, n)
        alpha = 0.995 * _step_len(t_sep, l_sep, t3, l3, dt_sep, dl_sep, dt3, dl3, m, n)
        if alpha > 1.0:
            alpha = 1.0
        for k in range(n):
            du[k] += alpha * ddu[k]
            eps[k] += alpha * deps[k]
        for k in range(n + 1):
            for i in range(3):
                ds[k, i] += alpha * dds[k, i]
        for j in range(m):
            for k in range(n):
                t_sep[j, k] += alpha * dt_sep[j, k]
                l_sep[j, k] += alpha * dl_sep[j, k]
        for i in range(3):
            for k in range(n):
                t3[i, k] += alpha * dt3[i, k]
                l3[i, k] += alpha * dl3[i, k]
        dual_factor *= 1.0 - alpha
    return du_a, status, iters


cdef void _forward_states(double[::1] du, double[:, ::1] ds, double[::1] sn,
                          double[::1] cs, double tv, double te, Py_ssize_t n) noexcept nogil:
    """Linearised state perturbations for input perturbations du (ds_0 = 0)."""
    cdef Py_ssize_t k
    ds[0, 0] = 0.0
    ds[0, 1] = 0.0
    ds[0, 2] = 0.0
    for k in range(n):
        ds[k + 1, 0] = ds[k, 0] - tv * sn[k] * ds[k, 2]
        ds[k + 1, 1] = ds[k, 1] + tv * cs[k] * ds[k, 2]
        ds[k + 1, 2] = ds[k, 2] + te * du[k]


cdef void _rows(double[::1] du, double[::1] eps, double[:, ::1] ds,
                double[:, ::1] ax, double[:, ::1] ay, double[:, ::1] cc,
                double[::1] lb, double[::1] ub, double[:, ::1] t_sep,
                double[:, ::1] t3, Py_ssize_t m, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j, k
    for j in range(m):
        for k in range(n):
            t_sep[j, k] = ax[j, k] * ds[k, 0] + ay[j, k] * ds[k, 1] + eps[k] - cc[j, k]
    for k in range(n):
        t3[0, k] = eps[k]
        t3[1, k] = du[k] - lb[k]
        t3[2, k] = ub[k] - du[k]


cdef void _model_gradient(double[::1] du, double[:, ::1] ds, double[:, :, ::1] Hs,
                          double[:, ::1] gs, double[::1] sn, double[::1] cs,
                          double tv, double te, double R, double[::1] rb,
                          double[::1] out, Py_ssize_t n) noexcept nogil:
    """Gradient of the tracking/rate model with respect to du (adjoint pass)."""
    cdef Py_ssize_t k, i
    cdef double p0, p1, p2, q0, q1, q2, r
    p0 = gs[n, 0] + Hs[n, 0, 0] * ds[n, 0] + Hs[n, 0, 1] * ds[n, 1] + Hs[n, 0, 2] * ds[n, 2]
    p1 = gs[n, 1] + Hs[n, 1, 0] * ds[n, 0] + Hs[n, 1, 1] * ds[n, 1] + Hs[n, 1, 2] * ds[n, 2]
    p2 = gs[n, 2] + Hs[n, 2, 0] * ds[n, 0] + Hs[n, 2, 1] * ds[n, 1] + Hs[n, 2, 2] * ds[n, 2]
    k = n - 1
    while k >= 0:
        out[k] = te * p2
        if k == 0:
            break
        q0 = gs[k, 0] + Hs[k, 0, 0] * ds[k, 0] + Hs[k, 0, 1] * ds[k, 1] + Hs[k, 0, 2] * ds[k, 2]
        q1 = gs[k, 1] + Hs[k, 1, 0] * ds[k, 0] + Hs[k, 1, 1] * ds[k, 1] + Hs[k, 1, 2] * ds[k, 2]
        q2 = gs[k, 2] + Hs[k, 2, 0] * ds[k, 0] + Hs[k, 2, 1] * ds[k, 1] + Hs[k, 2, 2] * ds[k, 2]
        p2 = p2 + q2 + tv * (-sn[k] * p0 + cs[k] * p1)
        p0 = p0 + q0
        p1 = p1 + q1
        k -= 1
    for k in range(1, n):
        r = 2.0 * R * (rb[k] + du[k] - du[k - 1])
        out[k] += r
        out[k - 1] -= r


cdef int _factor(double[:, :, ::1] Hs, double[:, ::1] ax, double[:, ::1] ay,
                 double[:, ::1] t_sep, double[:, ::1] l_sep, double[:, ::1] t3,
                 double[:, ::1] l3, double[:, ::1] Dsep, double[::1] E,
                 double[::1] bx, double[::1] by, double[:, ::1] K, double[::1] Quu,
                 double[::1] sn, double[::1] cs, double tv, double te, double R,
                 double w, Py_ssize_t m, Py_ssize_t n) noexcept nogil:
    """Barrier-weighted stage matrices and the Riccati gains.

    Stores per stage the slack pivot E, the slack coupling b = sum_j D_j a_j,
    the feedback gain K (4) and the input pivot Quu. Returns 0 if a pivot is
    not positive.
    """
    cdef Py_ssize_t k, i, j
    cdef double P[4][4]
    cdef double Hh[3][3]
    cdef double FB[4]
    cdef double Qux[4]
    cdef double M1[3][3]
    cdef double Qxx[4][4]
    cdef double dsum, twij, rr, qvv, bfb, dlo, dhi
    # terminal cost-to-go
    for i in range(4):
        for j in range(4):
            P[i][j] = 0.0
    for i in range(3):
        for j in range(3):
            P[i][j] = Hs[n, i, j]
    k = n - 1
    while k >= 0:
        # slack elimination and barrier terms of stage k
        dsum = 0.0
        for j in range(m):
            Dsep[j, k] = l_sep[j, k] / t_sep[j, k]
            dsum += Dsep[j, k]
        E[k] = 2.0 * w + l3[0, k] / t3[0, k] + dsum
        bx[k] = 0.0
        by[k] = 0.0
        for i in range(3):
            for j in range(3):
                Hh[i][j] = Hs[k, i, j]
        for i in range(m):
            bx[k] += Dsep[i, k] * ax[i, k]
            by[k] += Dsep[i, k] * ay[i, k]
            for j in range(m):
                if i == j:
                    twij = Dsep[i, k] * (2.0 * w + l3[0, k] / t3[0, k] + dsum - Dsep[i, k]) / E[k]
                else:
                    twij = -Dsep[i, k] * Dsep[j, k] / E[k]
                Hh[0][0] += twij * ax[i, k] * ax[j, k]
                Hh[0][1] += twij * ax[i, k] * ay[j, k]
                Hh[1][0] += twij * ay[i, k] * ax[j, k]
                Hh[1][1] += twij * ay[i, k] * ay[j, k]
        rr = 2.0 * R if k >= 1 else 0.0
        dlo = l3[1, k] / t3[1, k]
        dhi = l3[2, k] / t3[2, k]
        qvv = rr + dlo + dhi
        # F B with B = (0, 0, te, 1)
        for i in range(4):
            FB[i] = P[i][2] * te + P[i][3]
        bfb = te * FB[2] + FB[3]
        Quu[k] = qvv + bfb
        if not Quu[k] > 0.0:
            return 0
        # Qux = Qzv + (A' FB[0:3], 0); A' x = (x0, x1, x2 + tv(-sn x0 + cs x1))
        Qux[0] = FB[0]
        Qux[1] = FB[1]
        Qux[2] = FB[2] + tv * (-sn[k] * FB[0] + cs[k] * FB[1])
        Qux[3] = -rr
        # Qxx = diag(Hh, rr) + [[A' P33 A, 0], [0, 0]]
        for i in range(3):
            M1[i][0] = P[i][0]
            M1[i][1] = P[i][1]
            M1[i][2] = P[i][2] + tv * (-sn[k] * P[i][0] + cs[k] * P[i][1])
        for j in range(3):
            Qxx[0][j] = M1[0][j]
            Qxx[1][j] = M1[1][j]
            Qxx[2][j] = M1[2][j] + tv * (-sn[k] * M1[0][j] + cs[k] * M1[1][j])
        for i in range(3):
            for j in range(3):
                Qxx[i][j] += Hh[i][j]
            Qxx[i][3] = 0.0
            Qxx[3][i] = 0.0
        Qxx[3][3] = rr
        for i in range(4):
            K[k, i] = -Qux[i] / Quu[k]
        for i in range(4):
            for j in range(4):
                P[i][j] = Qxx[i][j] - Qux[i] * Qux[j] / Quu[k]
        k -= 1
    return 1


cdef void _newton(double[::1] du, double[::1] eps, double[:, ::1] ds,
                  double[:, :, ::1] Hs, double[:, ::1] gs, double[:, ::1] ax,
                  double[:, ::1] ay, double[:, ::1] t_sep, double[:, ::1] l_sep,
                  double[:, ::1] t3, double[:, ::1] l3, double[:, ::1] rc_sep,
                  double[:, ::1] rc3, double[::1] E, double[::1] bx, double[::1] by,
                  double[:, ::1] K, double[::1] Quu, double[::1] sn, double[::1] cs,
                  double tv, double te, double R, double w, double[::1] rb,
                  double[::1] ge, double[::1] ddu, double[::1] deps,
                  double[:, ::1] dds, double[:, ::1] dt_sep, double[:, ::1] dl_sep,
                  double[:, ::1] dt3, double[:, ::1] dl3, Py_ssize_t m,
                  Py_ssize_t n) noexcept nogil:
    """Newton direction for complementarity targets rc (linear Riccati pass)."""
    cdef Py_ssize_t k, j, i
    cdef double f[4]
    cdef double qz[4]
    cdef double z[4]
    cdef double g0, g1, g2, psi, psx, psy, qv, qu, r, vk, zn0, zn1, zn2
    # backward linear pass
    for i in range(3):
        f[i] = gs[n, i] + Hs[n, i, 0] * ds[n, 0] + Hs[n, i, 1] * ds[n, 1] + Hs[n, i, 2] * ds[n, 2]
    f[3] = 0.0
    k = n - 1
    while k >= 0:
        # psi = -lam + rc / t for every row; slack gradient and its coupling
        ge[k] = 2.0 * w * eps[k] + (-l3[0, k] + rc3[0, k] / t3[0, k])
        psx = 0.0
        psy = 0.0
        for j in range(m):
            psi = -l_sep[j, k] + rc_sep[j, k] / t_sep[j, k]
            ge[k] += psi
            psx += psi * ax[j, k]
            psy += psi * ay[j, k]
        g0 = gs[k, 0] + Hs[k, 0, 0] * ds[k, 0] + Hs[k, 0, 1] * ds[k, 1] + Hs[k, 0, 2] * ds[k, 2]
        g1 = gs[k, 1] + Hs[k, 1, 0] * ds[k, 0] + Hs[k, 1, 1] * ds[k, 1] + Hs[k, 1, 2] * ds[k, 2]
        g2 = gs[k, 2] + Hs[k, 2, 0] * ds[k, 0] + Hs[k, 2, 1] * ds[k, 1] + Hs[k, 2, 2] * ds[k, 2]
        qz[0] = g0 + psx - bx[k] * ge[k] / E[k]
        qz[1] = g1 + psy - by[k] * ge[k] / E[k]
        qz[2] = g2
        if k >= 1:
            r = 2.0 * R * (rb[k] + du[k] - du[k - 1])
        else:
            r = 0.0
        qz[3] = -r
        qv = r + (-l3[1, k] + rc3[1, k] / t3[1, k]) - (-l3[2, k] + rc3[2, k] / t3[2, k])
        qu = qv + te * f[2] + f[3]
        # feedforward term, kept in ddu until the forward pass
        ddu[k] = -qu / Quu[k]
        # f <- qz + A~' f + K qu
        zn0 = qz[0] + f[0] + K[k, 0] * qu
        zn1 = qz[1] + f[1] + K[k, 1] * qu
        zn2 = qz[2] + f[2] + tv * (-sn[k] * f[0] + cs[k] * f[1]) + K[k, 2] * qu
        f[3] = qz[3] + K[k, 3] * qu
        f[0] = zn0
        f[1] = zn1
        f[2] = zn2
        k -= 1
    # forward pass
    for i in range(4):
        z[i] = 0.0
    for k in range(n):
        vk = K[k, 0] * z[0] + K[k, 1] * z[1] + K[k, 2] * z[2] + K[k, 3] * z[3] + ddu[k]
        ddu[k] = vk
        dds[k, 0] = z[0]
        dds[k, 1] = z[1]
        dds[k, 2] = z[2]
        deps[k] = -(ge[k] + bx[k] * z[0] + by[k] * z[1]) / E[k]
        for j in range(m):
            dt_sep[j, k] = ax[j, k] * z[0] + ay[j, k] * z[1] + deps[k]
        dt3[0, k] = deps[k]
        dt3[1, k] = vk
        dt3[2, k] = -vk
        zn0 = z[0] - tv * sn[k] * z[2]
        zn1 = z[1] + tv * cs[k] * z[2]
        zn2 = z[2] + te * vk
        z[0] = zn0
        z[1] = zn1
        z[2] = zn2
        z[3] = vk
    dds[n, 0] = z[0]
    dds[n, 1] = z[1]
    dds[n, 2] = z[2]
    for j in range(m):
        for k in range(n):
            dl_sep[j, k] = -(rc_sep[j, k] + l_sep[j, k] * dt_sep[j, k]) / t_sep[j, k]
    for i in range(3):
        for k in range(n):
            dl3[i, k] = -(rc3[i, k] + l3[i, k] * dt3[i, k]) / t3[i, k]


cdef double _step_len(double[:, ::1] t_sep, double[:, ::1] l_sep, double[:, ::1] t3,
                      double[:, ::1] l3, double[:, ::1] dt_sep, double[:, ::1] dl_sep,
                      double[:, ::1] dt3, double[:, ::1] dl3, Py_ssize_t m,
                      Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t j, k
    cdef double a = 1.0
    for j in range(m):
        for k in range(n):
            a = _max_step(t_sep[j, k], dt_sep[j, k], a)
            a = _max_step(l_sep[j, k], dl_sep[j, k], a)
    for j in range(3):
        for k in range(n):
            a = _max_step(t3[j, k], dt3[j, k], a)
            a = _max_step(l3[j, k], dl3[j, k], a)
    return a
