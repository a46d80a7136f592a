import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughpde.errors import ConfigurationError, OrderingError, ParameterError
from roughpde.rough_core import (Control, TimePartition, TwoIndexMap, control_superadditivity_check, delta_op,
                                 fbm_covariance, fbm_sample, holder_seminorm, holder_seminorm_path, pl_lift)

times = st.floats(0, 10, allow_nan=False)


def test_partition_refine_and_index():
    P = TimePartition.dyadic(1.0, 4, 2)
    assert P.steps == 16
    assert P.refine().steps == 32
    assert np.array_equal(P.refine().points[::2], P.points)
    assert P.index_of(0.25) == 4
    with pytest.raises(ConfigurationError):
        P.index_of(0.3)
    with pytest.raises(ConfigurationError):
        TimePartition(np.array([0.0, 0.5, 0.4]))


def test_delta_examples():
    sq = TwoIndexMap(lambda s, t: (t - s) ** 2)
    assert delta_op(sq, 0, 1, 2) == 2
    lin = TwoIndexMap(lambda s, t: t - s)
    assert delta_op(lin, 0.3, 0.7, 1.9) == pytest.approx(0, abs=1e-15)
    with pytest.raises(OrderingError):
        delta_op(lin, 1, 0, 2)


@given(st.lists(times, min_size=3, max_size=3))
def test_increments_in_kernel_of_delta(tr):
    s, th, t = sorted(tr)
    h = TwoIndexMap.increments(lambda r: np.array([np.sin(r), r**3]))
    assert np.max(np.abs(delta_op(h, s, th, t))) <= 1e-12 * (1 + t**3)


@given(st.lists(times, min_size=4, max_size=4))
def test_cocycle_identity(q):
    # delta(delta h) on a quadruple: the two ways of splitting a quadruple agree
    a, b, c, d = sorted(q)
    h = TwoIndexMap(lambda s, t: np.cos(3 * s) * t**2 + s * t)
    dh = lambda s, u, t: delta_op(h, s, u, t)
    lhs = dh(a, b, d) + dh(b, c, d)
    rhs = dh(a, c, d) + dh(a, b, c)
    assert abs(lhs - rhs) <= 1e-9 * (1 + abs(lhs))


def test_holder_examples():
    P = TimePartition.uniform(1.0, 16)
    assert holder_seminorm(TwoIndexMap(lambda s, t: t - s), P, 1.0) == pytest.approx(1.0)
    assert holder_seminorm(TwoIndexMap(lambda s, t: (t - s) ** 0.5), P, 0.5) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        holder_seminorm(TwoIndexMap(lambda s, t: t - s), P, 0.0)


def test_holder_fbm_against_pair_scan():
    P = TimePartition.uniform(1.0, 256)
    W = fbm_sample(0.45, 256, seed=3)
    fast = holder_seminorm_path(W, P.points, 0.4)
    pts = P.points
    slow = max(abs(W[j] - W[i]) / (pts[j] - pts[i]) ** 0.4 for i in range(257) for j in range(i + 1, 257))
    assert np.isfinite(fast)
    assert fast == pytest.approx(slow, rel=1e-13)


def test_pl_lift_examples():
    P = TimePartition(np.array([0.0, 1.0, 2.0]))
    rp = pl_lift(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]), P)
    assert rp.area(0, 2)[0, 1] == pytest.approx(0.5)
    assert pl_lift(np.sin(P.points), P).area(0, 2).shape == (1, 1)
    assert np.all(pl_lift(np.sin(P.points), P).area(0, 2) == 0)
    line = pl_lift(np.outer(P.points, [1.0, 1.0]), P)
    assert np.max(np.abs(line.area(0, 2))) == 0
    with pytest.raises(ConfigurationError):
        pl_lift(np.zeros((1, 2)), TimePartition(np.array([0.0, 1.0])))


def test_l_path_area_by_quadrature():
    # brute force 1/2 int (Z1 dZ2 - Z2 dZ1) on a fine subdivision
    s = np.linspace(0, 2, 20001)
    Z1 = np.minimum(s, 1.0)
    Z2 = np.maximum(s - 1.0, 0.0)
    area = 0.5 * np.sum(0.5 * (Z1[1:] + Z1[:-1]) * np.diff(Z2) - 0.5 * (Z2[1:] + Z2[:-1]) * np.diff(Z1))
    rp = pl_lift(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]), TimePartition(np.array([0.0, 1.0, 2.0])))
    assert rp.area(0, 2)[0, 1] == pytest.approx(area, abs=1e-12)


@given(st.integers(0, 2**31), st.integers(2, 3), st.floats(0.1, 0.6))
def test_pl_lift_chen(seed, m, alpha_shift):
    rng = np.random.default_rng(seed)
    P = TimePartition.uniform(1.0, 12)
    rp = pl_lift(rng.normal(size=(13, m)).cumsum(axis=0), P)
    assert rp.chen_residual() <= 1e-12


@given(st.floats(0.1, 5.0), st.floats(-3, 3), st.floats(-3, 3))
def test_reparametrized_segment_has_no_area(speed, a, b):
    P = TimePartition.uniform(1.0, 10)
    r = P.points ** speed
    rp = pl_lift(np.outer(r, [a, b]), P)
    assert np.max(np.abs(rp.area(0, 10))) <= 1e-12 * (1 + a * a + b * b)


def test_fbm_covariance_value():
    assert fbm_covariance(np.array([1.0, 2.0]), 0.4)[0, 1] == pytest.approx(0.5 * 2**0.8, abs=1e-12)
    assert fbm_covariance(np.array([1.0, 2.0]), 0.4)[0, 1] == pytest.approx(0.87055, abs=1e-5)


def test_fbm_determinism_and_errors():
    assert np.array_equal(fbm_sample(0.45, 64, 7), fbm_sample(0.45, 64, 7))
    assert not np.array_equal(fbm_sample(0.45, 64, 7), fbm_sample(0.45, 64, 8))
    with pytest.raises(ParameterError):
        fbm_sample(1.2, 16, 0)


@given(st.floats(0.35, 0.95), st.floats(0.1, 10.0))
def test_fbm_scaling(H, T):
    t = np.arange(1, 17) / 16
    assert np.max(np.abs(fbm_covariance(T * t, H) - T ** (2 * H) * fbm_covariance(t, H))) <= 1e-12 * T ** (2 * H) * 4


def test_brownian_increments():
    n, reps = 8, 10_000
    W = np.stack([fbm_sample(0.5, n, s) for s in range(reps)])
    inc = np.diff(W, axis=1)
    var = inc[:, 2].var()
    se = var * np.sqrt(2 / reps)
    assert abs(var - 1 / n) <= 3 * se
    corr = np.mean(inc[:, 1] * inc[:, 5])
    assert abs(corr) <= 3 * (1 / n) / np.sqrt(reps)


def test_control_examples():
    P = TimePartition.uniform(1.0, 10)
    assert control_superadditivity_check(Control("power", a=2.0), P).ok
    assert not control_superadditivity_check(Control("power", a=0.5), P).ok
    f = np.abs(np.sin(5 * P.points))
    assert control_superadditivity_check(Control("integral", f=f, partition=P), P).ok
    with pytest.raises(OrderingError):
        Control("power")(1.0, 0.5)
