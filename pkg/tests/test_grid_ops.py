import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughpde.errors import ConfigurationError, PreconditionError, UnsupportedError
from roughpde.grid_ops import (NonlinearDiffusion, PeriodicGrid, constant_diffusion, dx, fd_apply, gn_check, inner,
                               interp_check, negative_sobolev2, norm, norm_report, write_pgm)

G = PeriodicGrid(64)
seeds = st.integers(0, 2**31)


def random_field(seed, n=64, degree=12):
    rng = np.random.default_rng(seed)
    x = 2 * np.pi * np.arange(n) / n
    k = np.arange(degree + 1)[:, None]
    return np.sum(rng.normal(size=(degree + 1, 1)) * np.cos(k * x) + rng.normal(size=(degree + 1, 1)) * np.sin(k * x), 0)


def test_fd_constant_and_sine():
    assert np.all(fd_apply(np.full(64, 2.5), "d", G) == 0)
    assert np.all(fd_apply(np.full(64, 2.5), "laplace", G) == 0)
    err = np.max(np.abs(fd_apply(np.sin(G.x), "d", G) - np.cos(G.x)))
    assert err <= G.h**2 / 6
    assert G.h**2 / 6 == pytest.approx(1.61e-3, rel=1e-2)
    with pytest.raises(ConfigurationError):
        fd_apply(np.zeros(32), "d", G)
    with pytest.raises(ConfigurationError):
        fd_apply(np.zeros(64), "curl", G)


def test_fd_2d_div_and_mixed():
    g2 = PeriodicGrid(16, d=2)
    X, Y = g2.mesh()
    f = np.sin(X) * np.cos(Y)
    assert np.allclose(fd_apply(np.stack([f, f]), "div", g2), dx(f, g2, axis=0) + dx(f, g2, axis=1))
    assert np.allclose(fd_apply(f, "dd", g2, axis=0, axis2=1), dx(dx(f, g2, axis=0), g2, axis=1))


def test_norm_closed_forms():
    s = np.sin(G.x)
    assert norm(s, G, "L", 2) == pytest.approx(np.sqrt(np.pi), rel=1e-14)
    assert norm(s, G, "L", np.inf) == pytest.approx(1.0)
    assert norm(s, G, "W-", 2, 1) == pytest.approx(np.sqrt(np.pi / 2), rel=1e-13)
    assert not norm_report(s, G, "W-", 2, 1).surrogate
    assert norm_report(s, G, "W-", 3, 1).surrogate


def test_norm_rejects_unsupported():
    with pytest.raises(UnsupportedError):
        norm(np.zeros(64), G, "L", 0.5)
    with pytest.raises(UnsupportedError):
        norm(np.zeros(64), G, "W", 2, 4)
    with pytest.raises(UnsupportedError):
        norm(np.zeros(64), G, "H", 2)


@given(seeds, seeds)
def test_summation_by_parts(a, b):
    f, g = random_field(a), random_field(b)
    assert abs(inner(dx(f, G), g, G) + inner(f, dx(g, G), G)) <= 1e-13 * (1 + norm(f, G) * norm(g, G))


@given(seeds, st.integers(0, 2))
def test_negative_norm_monotone(seed, k):
    f = random_field(seed)
    a, b = norm(f, G, "W-", 2, k + 1), norm(f, G, "W-", 2, k)
    assert a <= b * (1 + 1e-14)
    assert norm(f, G, "W-", 2, 0) == pytest.approx(norm(f, G, "L", 2), rel=1e-12)


@given(seeds)
def test_lp_log_convexity(seed):
    f = random_field(seed)
    l1, l2, li = norm(f, G, "L", 1), norm(f, G, "L", 2), norm(f, G, "L", np.inf)
    assert l2 <= np.sqrt(l1 * li) * (1 + 1e-12)


def test_negative_sobolev_batches():
    f = np.stack([random_field(1), random_field(2)])
    assert np.allclose(negative_sobolev2(f, G, 2), [negative_sobolev2(f[0], G, 2), negative_sobolev2(f[1], G, 2)])


def test_interp_check_examples():
    t = np.linspace(0, 1, 17)
    assert interp_check(np.zeros((17, 64)), t, G, 4, np.inf).ratio == 0
    f = np.tile(np.sin(G.x), (17, 1))
    rep = interp_check(f, t, G, 4, np.inf)
    # the central difference of sin is (sin h / h) cos
    grad = np.sqrt(np.pi) * np.sin(G.h) / G.h
    assert rep.lhs == pytest.approx(1.0, rel=1e-14)
    assert rep.ratio == pytest.approx(1.0 / (grad + np.sqrt(np.pi)), rel=1e-12)
    with pytest.raises(PreconditionError, match="rho in \\[4, inf\\]"):
        interp_check(f, t, G, 2, np.inf)
    with pytest.raises(PreconditionError):
        interp_check(f, t, G, 4, 1.5)


def test_gn_check_examples():
    one = gn_check(np.ones(64), G)
    assert one.lhs == pytest.approx(2 * np.pi)
    assert one.rhs == pytest.approx((2 * np.pi) ** 2)
    assert one.ratio == pytest.approx(1 / (2 * np.pi), rel=1e-14)
    s = gn_check(np.sin(G.x), G)
    d = np.sqrt(np.pi) * np.sin(G.h) / G.h
    assert s.lhs == pytest.approx(3 * np.pi / 4, rel=1e-14)
    assert s.ratio == pytest.approx((3 * np.pi / 4) / (np.pi**1.5 * d + np.pi**2), rel=1e-12)
    assert gn_check(np.zeros(64), G).ratio == 0


def test_ellipticity_sampling():
    lam = 0.5
    good = NonlinearDiffusion(lambda t, x, z: 1.0 + 0.5 * np.sin(z) * np.cos(x), lam)
    ok, bad = good.check_ellipticity()
    assert ok and bad == 0
    weak = NonlinearDiffusion(lambda t, x, z: 0.2 + 0.0 * z, lam)
    ok, bad = weak.check_ellipticity(samples=1000)
    assert not ok and bad == 1000
    assert constant_diffusion(2.0).check_ellipticity(samples=100)[0]


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        PeriodicGrid(7)
    with pytest.raises(UnsupportedError):
        PeriodicGrid(16, d=3)


def test_write_pgm(tmp_path):
    a = np.outer(np.arange(4), np.ones(6))
    lo, hi = write_pgm(tmp_path / "f.pgm", a, ["# test"])
    raw = (tmp_path / "f.pgm").read_bytes()
    assert raw.startswith(b"P5\n6 4\n255\n")
    body = np.frombuffer(raw[len(b"P5\n6 4\n255\n"):], dtype=np.uint8).reshape(4, 6)
    assert body[0, 0] == 0 and body[-1, 0] == 255
    assert (lo, hi) == (0.0, 3.0)
    assert (tmp_path / "f.pgm.csv").read_text().splitlines()[0] == "# test"
