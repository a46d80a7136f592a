import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughpde.errors import ConfigurationError, PreconditionError
from roughpde.grid_ops import PeriodicGrid, dx
from roughpde.rough_core import TimePartition, fbm_sample, pl_lift
from roughpde.sheet import (SigmaField, canonical_lift_sheet, derivative_triad, fbm_sigma_sheet, gene_chen_residual,
                            linear_sheet, rho_alpha_metric, sheet_from_sigma, transport_source_triad)

G = PeriodicGrid(128)
P = TimePartition.uniform(1.0, 16)
x = G.x


def sigma_sheet(sig, Z, part=P):
    return sheet_from_sigma(SigmaField(G, np.atleast_2d(sig)), pl_lift(Z, part))


def test_constant_sigma_has_no_bracket():
    sh = sigma_sheet(np.ones(G.n) * 0.7, np.sin(3 * P.points))
    assert np.max(np.abs(sh.bracket("L", 0, 16))) <= 1e-15


def test_scalar_sigma_bracket_closed_form():
    Z = np.cumsum(np.r_[0, np.random.default_rng(1).normal(size=16)]) * 0.25
    sh = sigma_sheet(np.sin(x), Z)
    i, j = 3, 11
    z = Z[j] - Z[i]
    exact = 0.5 * z**2 * np.sin(x) * np.cos(x)
    assert np.max(np.abs(sh.bracket("L", i, j) - exact)) <= 1e-6 * z**2
    # oracle: canonical lift of the sheet X_t = sin(x) Z_t, which is linear in t between nodes
    fine = P.refine(3)
    Zf = np.interp(fine.points, P.points, Z)
    cl = canonical_lift_sheet(fine, G, np.outer(Zf, np.sin(x)))
    assert np.max(np.abs(cl.bracket("L", 8 * i, 8 * j) - sh.bracket("L", i, j))) <= 1e-12


def test_corrupted_area_breaks_chen():
    rng = np.random.default_rng(2)
    rp = pl_lift(rng.normal(size=(17, 2)).cumsum(axis=0) * 0.3, P)
    sig = SigmaField(G, np.stack([np.sin(x), np.cos(2 * x)]))
    good = gene_chen_residual(sheet_from_sigma(sig, rp)).overall
    bad = gene_chen_residual(sheet_from_sigma(sig, rp.perturb_area(2, 9, 0.1))).overall
    assert good <= 1e-10
    assert bad > 1e-3


def test_sigma_dimension_mismatch():
    rp = pl_lift(np.zeros((17, 2)), P)
    with pytest.raises(ConfigurationError):
        sheet_from_sigma(SigmaField(G, np.sin(x)), rp)


def test_linear_sheet_bracket():
    V = np.sin(x) + 0.3 * np.cos(2 * x)
    sh = linear_sheet(P, G, V)
    dV = dx(V, G, order=4)
    for i, j in [(0, 16), (3, 7), (5, 6)]:
        dt = P.points[j] - P.points[i]
        assert np.max(np.abs(sh.bracket("L", i, j) - 0.5 * dt**2 * V * dV)) <= 1e-13


def test_constant_in_time_or_space_has_no_bracket():
    still = canonical_lift_sheet(P, G, np.tile(np.sin(x), (17, 1)))
    assert np.max(np.abs(still.bracket("L", 0, 16))) == 0
    flat = linear_sheet(P, G, np.full(G.n, 0.4))
    assert np.max(np.abs(flat.bracket("L", 0, 16))) <= 1e-15


def test_dual_triad_flat_sheet():
    flat = linear_sheet(P, G, np.full(G.n, 0.4))
    dual = derivative_triad(flat, "dual_multiplicative")
    assert np.max(np.abs(dual.Y0)) <= 1e-15
    assert np.array_equal(dual.X, -flat.X)
    src = derivative_triad(flat, "transport_source")
    assert np.max(np.abs(src.bracket("aff", 0, 16))) <= 1e-15


def test_dual_triad_second_entry():
    sh = linear_sheet(P, G, np.sin(x))
    dual = derivative_triad(sh, "dual_multiplicative")
    i, j = 2, 13
    dt = P.points[j] - P.points[i]
    L = sh.bracket("L", i, j)
    X = sh.increment("X", i, j)
    from_lift = dx(L, G, order=4) - 0.5 * dx(X, G, order=4) ** 2
    exact = 0.5 * dt**2 * (np.cos(2 * x) - np.cos(x) ** 2)
    assert np.max(np.abs(dual.bracket("L0", i, j) - exact)) <= 1e-5 * dt**2
    assert np.max(np.abs(dual.bracket("L0", i, j) - from_lift)) <= 1e-5 * dt**2


def test_transport_source_needs_pure_transport():
    sh = linear_sheet(P, G, np.sin(x))
    with pytest.raises(PreconditionError):
        transport_source_triad(sh.with_fields(Y0=sh.X))


def test_zeroed_bracket_defect_is_rhs():
    sh = linear_sheet(P, G, np.sin(x) + 0.5)
    rep = gene_chen_residual(sh.zero_bracket("L"))
    worst = 0.0
    for s in range(17):
        for th in range(s + 1, 17):
            for t in range(th + 1, 17):
                worst = max(worst, np.max(np.abs(sh.increment("X", th, t) * dx(sh.increment("X", s, th), G, order=4))))
    assert rep.max_residual["L"] == pytest.approx(worst, rel=1e-12)


@pytest.mark.parametrize("build", ["canonical", "sigma", "fbm"])
def test_constructors_pass_chen(build):
    rng = np.random.default_rng(4)
    if build == "canonical":
        X = rng.normal(size=(17, 1)) * np.sin(x) + rng.normal(size=(17, 1)) * np.cos(3 * x)
        sh = canonical_lift_sheet(P, G, X, Y0=0.2 * X, Ym1=np.cos(x) * X)
        tol = 1e-12
    elif build == "sigma":
        sh = sigma_sheet(np.stack([np.sin(x), np.cos(x)]), rng.normal(size=(17, 2)).cumsum(0))
        tol = 1e-10
    else:
        sh = fbm_sigma_sheet(G, P, np.sin(x), 0.45, level=4, seed=3)
        tol = 1e-10
    assert gene_chen_residual(sh).overall <= tol


@given(st.integers(0, 2**31), st.integers(1, 7))
def test_derivative_triad_commutes_with_translation(seed, cells):
    rng = np.random.default_rng(seed)
    Pc = TimePartition.uniform(1.0, 4)
    X = rng.normal(size=(5, 1)) * np.sin(x + rng.uniform(0, 6)) + rng.normal(size=(5, 1)) * np.cos(2 * x)
    sh = canonical_lift_sheet(Pc, G, X)
    for mode in ("dual_multiplicative", "transport_source"):
        a = derivative_triad(sh.translate(cells), mode)
        b = derivative_triad(sh, mode)
        for name in ("X", "Y0", "Ym1"):
            if a.has(name):
                assert np.array_equal(getattr(a, name), np.roll(getattr(b, name), cells, axis=-1))
        for name in ("L", "L0", "aff"):
            assert np.array_equal(a.bracket(name, 0, 4), np.roll(b.bracket(name, 0, 4), cells, axis=-1))


def _random_sheet(rng, part):
    X = rng.normal(size=(len(part), 1)) * np.sin(x) + rng.normal(size=(len(part), 1)) * np.cos(x) * 0.5
    return canonical_lift_sheet(part, G, X)


def test_rho_zero_cases():
    rng = np.random.default_rng(5)
    Pc = TimePartition.uniform(1.0, 8)
    sh = _random_sheet(rng, Pc)
    assert rho_alpha_metric(sh, sh) == 0
    # W^{3,inf} differences amplify round-off by about h^-3
    assert rho_alpha_metric(sh, sh.with_fields(X=sh.X + 3.0)) <= 1e-9
    with pytest.raises(ConfigurationError):
        rho_alpha_metric(sh, _random_sheet(rng, TimePartition.uniform(1.0, 4)))


@given(st.integers(0, 2**31))
def test_rho_pseudometric(seed):
    rng = np.random.default_rng(seed)
    Pc = TimePartition.uniform(1.0, 6)
    a, b, c = (_random_sheet(rng, Pc) for _ in range(3))
    ab, bc, ac = rho_alpha_metric(a, b), rho_alpha_metric(b, c), rho_alpha_metric(a, c)
    assert ab == pytest.approx(rho_alpha_metric(b, a), rel=1e-12)
    assert ac <= ab + bc + 1e-12


def test_rho_fbm_levels_decrease():
    # the decay rate in k is 2^{-k (H - alpha)}, so it is only visible with a wide Holder gap;
    # seed-to-seed noise is averaged over 8 paths
    Gc = PeriodicGrid(32)
    Pf = TimePartition.uniform(1.0, 64)
    sig = 0.5 * np.sin(Gc.x)
    rows = []
    for seed in range(8):
        sh = {k: fbm_sigma_sheet(Gc, Pf, sig, 0.9, level=k, seed=seed, sample_level=6).with_fields(alpha=0.4)
              for k in range(1, 7)}
        rows.append([rho_alpha_metric(sh[k], sh[k + 2]) for k in (1, 2, 3, 4)])
    d = np.mean(rows, axis=0)
    assert np.all(np.asarray(rows) > 0)
    assert np.all(np.diff(d) < 0)


def test_fbm_sheet_nested_levels_share_path():
    Pf = TimePartition.uniform(1.0, 32)
    a = fbm_sigma_sheet(G, Pf, np.sin(x), 0.45, level=5, seed=2, sample_level=5)
    b = fbm_sigma_sheet(G, Pf, np.sin(x), 0.45, level=3, seed=2, sample_level=5)
    assert np.allclose(a.nodal("X")[::4], b.nodal("X")[::4], atol=1e-14)
    W = fbm_sample(0.45, 32, 2)
    assert np.allclose(a.increment("X", 0, 32), W[32] * np.sin(x))
