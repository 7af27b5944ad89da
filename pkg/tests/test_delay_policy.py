import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from daampc.delay_policy import (
    DELAY_KINDS, DelayModel, PolicyKind, SolutionBuffer, act, effective_delay_steps,
    lognormal_params, sample_delay, sample_delays,
)
from daampc.ocp import CONVERGED, OcpSolution


def plan(values):
    n = len(values)
    return OcpSolution(np.asarray(values, float), np.zeros((n + 1, 3)), np.zeros(n), 0.0, CONVERGED)


@pytest.mark.parametrize("kind,value", [("auto", 1.0), ("quick", 4.0), ("slow", 12.0)])
def test_fixed_delays(kind, value):
    rng = np.random.default_rng(0)
    state = rng.bit_generator.state
    assert sample_delay(DelayModel(kind), rng) == value
    assert rng.bit_generator.state == state  # no draw consumed


def test_unknown_kind_and_bad_moments():
    with pytest.raises(ValueError):
        DelayModel("fast")
    with pytest.raises(ValueError):
        DelayModel("stochastic", lognormal_mu=0.0)


def test_lognormal_moment_matching():
    mu_n, sigma_n = lognormal_params(4.0, 2.5)
    assert mu_n == pytest.approx(math.log(16 / math.sqrt(16 + 6.25)), abs=1e-12)
    assert sigma_n == pytest.approx(math.sqrt(math.log(1 + 6.25 / 16)), abs=1e-12)
    assert mu_n == pytest.approx(1.2215, abs=5e-4) and sigma_n == pytest.approx(0.5742, abs=5e-4)
    dist = stats.lognorm(s=sigma_n, scale=math.exp(mu_n))
    assert dist.mean() == pytest.approx(4.0, rel=1e-12)
    assert dist.std() == pytest.approx(2.5, rel=1e-12)


def test_lognormal_tail_probabilities_analytic():
    mu_n, sigma_n = DelayModel("stochastic").normal_params
    dist = stats.lognorm(s=sigma_n, scale=math.exp(mu_n))
    assert dist.cdf(1.0) == pytest.approx(0.0167, abs=5e-4)
    assert dist.sf(12.0) == pytest.approx(0.0139, abs=5e-4)


def test_lognormal_tail_probabilities_empirical():
    d = sample_delays(DelayModel("stochastic"), np.random.default_rng(123), 1_000_000)
    assert abs((d < 1).mean() - 0.0167) <= 0.003
    assert abs((d > 12).mean() - 0.0139) <= 0.003
    assert d.mean() == pytest.approx(4.0, rel=0.01)
    assert d.std() == pytest.approx(2.5, rel=0.02)


def test_scalar_and_vector_draws_agree():
    m = DelayModel("stochastic")
    a = np.random.default_rng(9)
    b = np.random.default_rng(9)
    assert [sample_delay(m, a) for _ in range(5)] == pytest.approx(sample_delays(m, b, 5).tolist(), rel=1e-15)


def test_effective_delay_examples():
    assert effective_delay_steps(DelayModel("auto"), 1.0) == (1, 1)
    assert effective_delay_steps(DelayModel("slow"), 12.0) == (12, 12)
    assert effective_delay_steps(DelayModel("stochastic"), 7.3) == (7, 4)
    assert effective_delay_steps(DelayModel("auto"), 0.0) == (0, 0)
    with pytest.raises(ValueError):
        effective_delay_steps(DelayModel("auto"), -1.0)
    with pytest.raises(ValueError):
        effective_delay_steps(DelayModel("auto"), math.inf)


@given(st.floats(0, 100))
def test_lag_is_nearest_step(delay):
    lag, _ = effective_delay_steps(DelayModel("stochastic"), delay)
    assert abs(lag - delay) <= 0.5


def test_buffer_ordering_and_lookup():
    buf = SolutionBuffer(3)
    for t in range(5):
        buf.push(t, plan([t]))
    assert buf.steps == [2, 3, 4] and len(buf) == 3
    assert buf.get(3).inputs[0] == 3
    with pytest.raises(KeyError):
        buf.get(1)
    with pytest.raises(KeyError):
        buf.get(7)
    with pytest.raises(ValueError):
        buf.push(4, plan([0]))
    with pytest.raises(ValueError):
        SolutionBuffer(0)


def _filled(lag, n=20, steps=26):
    buf = SolutionBuffer(lag + 2)
    for t in range(steps):
        buf.push(t, plan(100 * t + np.arange(n)))
    return buf


def test_act_policies():
    buf = _filled(12)
    t = 25
    assert act(buf, t, 12, 12, PolicyKind.DELAY) == 100 * 13 + 12
    assert act(buf, t, 12, 12, PolicyKind.COMMON) == 100 * 13
    assert act(buf, t, 12, 12, "common") == 100 * 13
    buf0 = _filled(0)
    assert act(buf0, t, 0, 0, "delay") == act(buf0, t, 0, 0, "common") == 2500


def test_act_before_first_advisory_and_failed_solve():
    buf = SolutionBuffer(5)
    buf.push(0, None)
    assert act(buf, 3, 4, 4, "delay") == 0.0
    assert act(buf, 4, 4, 4, "delay") is None


def test_act_index_clamped_to_horizon():
    buf = SolutionBuffer(3)
    buf.push(0, plan([1.0, 2.0, 3.0]))
    assert act(buf, 0, 0, 10, "delay") == 3.0


@given(st.integers(0, 15), st.integers(0, 15), st.sampled_from(list(PolicyKind)), st.integers(0, 29))
def test_act_is_causal(lag, pidx, kind, t):
    # every plan encodes its issue step; the applied value must come from t - lag
    buf = SolutionBuffer(lag + 2)
    for s in range(t + 1):
        buf.push(s, plan(np.full(20, float(s))))
    out = act(buf, t, lag, pidx, kind)
    if t < lag:
        assert out == 0.0
    else:
        assert out == t - lag <= t


def test_delay_kinds_constant():
    assert DELAY_KINDS == ("auto", "quick", "slow", "stochastic")
