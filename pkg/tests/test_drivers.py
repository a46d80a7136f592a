import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughpde.drivers import (adjoint_residual, bracket, build_B, build_P_backward, build_product_driver, build_Q,
                              chen_residual_driver, operator_holder_audit, trig_probes)
from roughpde.errors import ConfigurationError, PreconditionError, UnsupportedError
from roughpde.grid_ops import PeriodicGrid, negative_sobolev2
from roughpde.rough_core import TimePartition, pl_lift
from roughpde.sheet import SigmaField, canonical_lift_sheet, linear_sheet, sheet_from_sigma

G = PeriodicGrid(64)
P = TimePartition.uniform(1.0, 8)
x = G.x


def sheet(seed=0, **slots):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(9, 1)) * np.sin(x) + rng.normal(size=(9, 1)) * 0.5 * np.cos(2 * x) + 0.2
    X = np.cumsum(X, axis=0) * 0.2
    X -= X[0]
    return canonical_lift_sheet(P, G, X, **slots)


def probes(seed=0, count=3):
    return trig_probes(G, degree=6, seed=seed, count=count)


def test_build_B_rejects_affine_slots():
    sh = sheet()
    with pytest.raises(ConfigurationError):
        build_B(sh.with_fields(Y0=sh.X))
    with pytest.raises(ConfigurationError):
        build_Q(sh.zero_bracket("L"))


def test_Q_specializes_to_B():
    sh = sheet(1)
    B, Q = build_B(sh), build_Q(sh)
    for p in trig_probes(G, seed=3, count=50):
        for i, j in [(0, 8), (2, 5)]:
            assert np.max(np.abs(B.apply1(i, j, p) - Q.apply1(i, j, p))) <= 1e-12
            assert np.max(np.abs(B.apply2(i, j, p) - Q.apply2(i, j, p))) <= 1e-12


def test_scalar_multiplicative_driver():
    g = np.sin(3 * P.points) + P.points
    tri = canonical_lift_sheet(P, G, np.zeros((9, G.n)), Y0=np.tile(g[:, None], (1, G.n)))
    Q = build_Q(tri)
    z = np.cos(x) + 2
    for i, j in [(0, 8), (1, 6)]:
        gij = g[j] - g[i]
        assert np.max(np.abs(Q.apply1(i, j, z) - gij * z)) <= 1e-13
        assert np.max(np.abs(Q.apply2(i, j, z) - 0.5 * gij**2 * z)) <= 1e-13


def test_backward_rejects_affine():
    with pytest.raises(UnsupportedError):
        build_P_backward(build_Q(sheet(Ym1=sheet().X)))


def test_bracket_vanishes_for_one_field():
    rng = np.random.default_rng(4)
    rp = pl_lift(rng.normal(size=9).cumsum(), P)
    sh = sheet_from_sigma(SigmaField(G, np.sin(x) + 0.3 * np.cos(2 * x)), rp)
    br = bracket(build_B(sh))
    assert max(np.max(np.abs(br.coefficient(i, j))) for i in range(9) for j in range(i + 1, 9)) <= 1e-10


def test_bracket_divergence_free_transport():
    br = bracket(build_B(linear_sheet(P, G, np.full(G.n, 0.7))))
    assert np.max(np.abs(br.divergence(0, 8))) <= 1e-12


def test_bracket_operator_matches_coefficient():
    sh = sheet(5)
    br = bracket(build_B(sh))
    from roughpde.grid_ops import dx
    f = np.sin(2 * x) + 0.3 * np.cos(5 * x)
    # on mid-frequency fields the operator and the coefficient field agree up to discretization
    lhs = br.apply(1, 7, f)
    rhs = br.coefficient(1, 7) * dx(f, G, order=4)
    assert np.max(np.abs(lhs - rhs)) <= 0.05 * np.max(np.abs(rhs)) + 1e-12


def test_bracket_needs_plain():
    with pytest.raises(ConfigurationError):
        bracket(build_Q(sheet()))


def shared_pair(seed):
    base = sheet(seed)
    rng = np.random.default_rng(seed + 1)
    Y = base.with_fields(Y0=0.3 * rng.normal() * base.X, Ym1=np.cos(x) * base.X)
    Z = base.with_fields(Y0=-0.2 * base.X, Ym1=0.4 * np.sin(2 * x) * base.X)
    return base, Y, Z


def test_product_driver_pure_transport_third_row():
    base = sheet(2)
    D = build_product_driver(base, base)
    B = build_B(base)
    u, v = np.sin(x) + 1.5, np.cos(2 * x)
    U = np.stack([u, v, u * v])
    for i, j in [(0, 8), (3, 6)]:
        assert np.max(np.abs(D.increment(i, j, U)[2] - B.increment(i, j, u * v))) <= 1e-12


def test_product_driver_offsets():
    base, Y, Z = shared_pair(3)
    D = build_product_driver(Y, Z)
    zero = np.zeros((3, G.n))
    i, j = 1, 7
    l1 = D.apply1(i, j, zero)
    assert np.allclose(l1[0], Y.increment("Ym1", i, j), atol=1e-15)
    assert np.allclose(l1[1], Z.increment("Ym1", i, j), atol=1e-15)
    assert np.max(np.abs(l1[2])) == 0
    l2 = D.apply2(i, j, zero)
    prod = Y.increment("Ym1", i, j) * Z.increment("Ym1", i, j)
    assert np.max(np.abs(l2[2] - prod)) <= 1e-13


def test_product_driver_triangular_and_shared():
    base, Y, Z = shared_pair(4)
    D = build_product_driver(Y, Z)
    for lvl in (D.level1(0, 8), D.level2(0, 8)):
        for blk in [(0, 1), (0, 2), (1, 0), (1, 2)]:
            assert blk not in lvl.lin
    other = sheet(9)
    with pytest.raises(PreconditionError):
        build_product_driver(Y, other)


@given(st.integers(0, 2**20))
def test_product_driver_chen(seed):
    base, Y, Z = shared_pair(seed)
    D = build_product_driver(Y, Z)
    pr = [np.stack(trig_probes(G, degree=4, seed=seed, count=3))]
    assert chen_residual_driver(D, pr, indices=np.arange(0, 9, 2)).max_residual <= 1e-9


def test_chen_plain_affine_backward():
    sh = sheet(6)
    pr = probes()
    assert chen_residual_driver(build_B(sh), pr).max_residual <= 1e-12
    aff = sh.with_fields(Y0=0.3 * np.cos(x) * sh.X, Ym1=0.2 * np.sin(2 * x) * sh.X)
    assert chen_residual_driver(build_Q(aff), pr).max_residual <= 1e-12
    assert chen_residual_driver(build_P_backward(build_B(sh)), pr).max_residual <= 1e-12


def test_chen_sigma_sheet():
    rng = np.random.default_rng(8)
    rp = pl_lift(rng.normal(size=(9, 2)).cumsum(axis=0) * 0.4, P)
    sh = sheet_from_sigma(SigmaField(G, np.stack([np.sin(x), 0.5 * np.cos(x)])), rp)
    assert chen_residual_driver(build_Q(sh), probes()).max_residual <= 1e-9


def test_zeroed_level2_defect_is_rhs():
    sh = sheet(7)
    B = build_B(sh)
    B0 = build_B(sh, zero_level2=True)
    p = probes(count=1)[0]
    rep = chen_residual_driver(B0, [p])
    worst = 0.0
    for s in range(9):
        for th in range(s + 1, 9):
            for t in range(th + 1, 9):
                worst = max(worst, float(negative_sobolev2(B.apply1(th, t, B.apply1(s, th, p)), G, 2)))
    assert rep.max_residual > 0
    assert rep.max_residual == pytest.approx(worst, rel=1e-10)


def test_diagonal_vanishing():
    sh = sheet(1)
    aff = sh.with_fields(Y0=np.cos(x) * sh.X, Ym1=np.sin(x) * sh.X)
    p = probes(count=1)[0]
    for D in (build_B(sh), build_P_backward(build_B(sh)), build_Q(aff)):
        for i in (0, 4, 8):
            assert np.max(np.abs(D.apply1(i, i, p))) == 0
            assert np.max(np.abs(D.apply2(i, i, p))) == 0


@given(st.integers(0, 63), st.integers(1, 6))
def test_locality(start, k):
    B = build_B(sheet(2))
    f = np.zeros(G.n)
    cells = (start + np.arange(k)) % G.n
    f[cells] = 1.0 + np.arange(k)
    # fourth-order stencils reach two cells per derivative
    for level, reach in ((1, 2), (2, 4)):
        out = B.apply1(0, 8, f) if level == 1 else B.apply2(0, 8, f)
        allowed = np.zeros(G.n, bool)
        allowed[(start + np.arange(-reach, k + reach)) % G.n] = True
        assert np.all(out[~allowed] == 0)


@given(st.integers(0, 2**20))
def test_adjoint_involution(seed):
    B = build_B(sheet(seed % 17))
    Pb = build_P_backward(B)
    pr = trig_probes(G, seed=seed, count=2)
    for i, j in [(0, 8), (2, 3)]:
        back1 = Pb.level1(i, j).transpose().scale(-1.0)
        back2 = Pb.level2(i, j).transpose().scale(-1.0)
        for p in pr:
            assert np.max(np.abs(back1(p[None])[0] - B.apply1(i, j, p))) <= 1e-12
            assert np.max(np.abs(back2(p[None])[0] - B.apply2(i, j, p))) <= 1e-12
    assert adjoint_residual(B, Pb, pr, pr, [(0, 8), (1, 5)]) <= 1e-12


def test_operator_holder_audit_bounds_pairs():
    sh = sheet(3)
    B = build_B(sh)
    pr = probes()
    for level in (1, 2):
        Qa = operator_holder_audit(B, pr, level)
        assert np.isfinite(Qa) and Qa > 0
        for p in pr:
            lp = np.sqrt(np.sum(p ** 2) * G.h)
            for i, j in [(0, 8), (2, 4), (5, 6)]:
                val = negative_sobolev2(B.apply1(i, j, p) if level == 1 else B.apply2(i, j, p), G, level)
                assert val <= Qa * (P.points[j] - P.points[i]) ** (level * B.alpha) * lp * (1 + 1e-12)
