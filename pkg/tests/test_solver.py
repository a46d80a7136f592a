import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughpde.drivers import build_B, build_Q
from roughpde.errors import CoercivityError, ConfigurationError, DivergenceError, ParameterError, StabilityError
from roughpde.experiments import Setup, make_sheet
from roughpde.grid_ops import PeriodicGrid, integrate
from roughpde.rough_core import Control, TimePartition
from roughpde.sheet import canonical_lift_sheet, linear_sheet
from roughpde.solver import (ParabolicProblem, bihari_envelope, energy_monitor, lps_check, moser_recursion_bound,
                             moser_unroll, remainder_ledger, reversed_problem, rough_gronwall_certify, solve)

G = PeriodicGrid(64)
x = G.x


def smooth_sheet(P, g=G, amp=0.3):
    return make_sheet({"kind": "smooth", "profile": [{"shape": "sin", "amp": amp}], "freq": [2.0]}, g, P)


def test_heat_closed_form():
    P = TimePartition.uniform(1.0, 32)
    tr = solve(ParabolicProblem(G, P, np.sin(x), diffusion=1.0))
    dt = 1 / 32
    lam = 1 + dt * (2 / G.h**2) * (1 - np.cos(G.h))
    for k in range(33):
        assert np.max(np.abs(tr.fields[k] - lam ** (-k) * np.sin(x))) <= 1e-12
    assert np.max(tr.residual) <= 1e-12


def test_zero_data():
    P = TimePartition.uniform(0.5, 16)
    tr = solve(ParabolicProblem(G, P, np.zeros(G.n), driver=build_B(smooth_sheet(P)), diffusion=1.0))
    assert np.all(tr.fields == 0)


def test_transport_characteristics_order():
    g = PeriodicGrid(256)
    errs, hs = [], []
    for steps in (32, 64, 128):
        P = TimePartition.uniform(1.0, steps)
        sh = linear_sheet(P, g, np.full(g.n, 0.5))
        tr = solve(ParabolicProblem(g, P, np.sin(g.x), driver=build_B(sh)))
        errs.append(np.max(np.abs(tr.final - np.sin(g.x + 0.5))))
        hs.append(1 / steps)
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order >= 1.5


def test_solver_errors():
    P = TimePartition.uniform(1.0, 4)
    big = linear_sheet(P, G, np.full(G.n, 40.0))
    with pytest.raises(StabilityError):
        solve(ParabolicProblem(G, P, np.sin(x), driver=build_B(big), substep_budget=2))
    bad = np.sin(x)
    bad[3] = np.nan
    with pytest.raises(DivergenceError):
        solve(ParabolicProblem(G, P, bad, diffusion=1.0))
    with pytest.raises(CoercivityError):
        solve(ParabolicProblem(G, P, np.sin(x), diffusion=-1.0))
    with pytest.raises(ConfigurationError):
        ParabolicProblem(G, P, np.zeros(32))


def test_ledger_pure_increment():
    # u_t = u_0 + Y^{-1}_{0t}: additive path, no transport, no drift
    P = TimePartition.uniform(1.0, 32)
    g = np.sin(7 * P.points) + P.points**2
    X = np.zeros((33, G.n))
    tri = canonical_lift_sheet(P, G, X, Ym1=np.outer(g, np.cos(x)))
    prob = ParabolicProblem(G, P, np.sin(x), driver=build_Q(tri))
    tr = solve(prob)
    assert np.max(np.abs(tr.fields - (np.sin(x) + np.outer(g, np.cos(x))))) <= 1e-13
    led = remainder_ledger(tr, prob, levels=[0, 1, 2, 3])
    nat = [v for (_, _, space, v) in led.samples if space.startswith("W-3")]
    assert max(nat) <= 1e-14


def test_ledger_needs_three_levels():
    P = TimePartition.uniform(0.5, 16)
    prob = ParabolicProblem(G, P, np.sin(x), driver=build_B(smooth_sheet(P)), diffusion=1.0)
    with pytest.raises(ConfigurationError):
        remainder_ledger(solve(prob), prob, levels=[0, 1])


def test_ledger_superlinear():
    g = PeriodicGrid(128)
    P = TimePartition.uniform(0.5, 256)
    prob = ParabolicProblem(g, P, np.sin(g.x), driver=build_B(smooth_sheet(P, g)))
    led = remainder_ledger(solve(prob), prob)
    assert led.natural.exponent > 1
    assert led.natural.exponent >= 2.7
    assert led.ru.exponent >= 1.8


def test_mass_conservation_divergence_free():
    P = TimePartition.uniform(1.0, 256)
    sh = make_sheet({"kind": "fbm", "H": 0.45, "level": 6, "seed": 2, "profile": [{"shape": "one", "amp": 0.2}]}, G, P)
    for a in (None, 1.0):
        tr = solve(ParabolicProblem(G, P, np.sin(x) + np.cos(3 * x) ** 2, driver=build_B(sh), diffusion=a))
        mass = integrate(tr.fields, G, axis=-1)
        assert np.max(np.abs(np.diff(mass))) <= 1e-12


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_linearity(al, be):
    P = TimePartition.uniform(0.5, 16)
    B = build_B(smooth_sheet(P))
    u0, v0 = np.sin(x), np.cos(2 * x) + 0.3
    run = lambda d: solve(ParabolicProblem(G, P, d, driver=B, diffusion=1.0 + 0.3 * np.cos(x))).fields
    assert np.max(np.abs(run(al * u0 + be * v0) - al * run(u0) - be * run(v0))) <= 1e-10


def test_time_reversal_involution():
    P = TimePartition.uniform(0.5, 32)
    prob, _, _ = Setup(n=64, T=0.5, steps=32, sheet={"kind": "smooth", "profile": [{"shape": "sin", "amp": 0.3}]},
                       diffusion=1.0).build()
    fwd = solve(prob)
    back = solve(reversed_problem(prob))
    assert back.direction == "backward"
    assert np.max(np.abs(back.fields[::-1] - fwd.fields)) <= 1e-12


def test_energy_constant_stable_under_refinement():
    su = Setup(n=64, T=0.25, steps=64,
               sheet={"kind": "fbm", "H": 0.45, "level": 6, "seed": 1, "profile": [{"shape": "sin", "amp": 0.3}]})
    C = []
    for lev in (0, 1):
        prob, _, _ = su.build(lev)
        C.append(energy_monitor(solve(prob), prob.grid).C_run)
    assert abs(C[1] - C[0]) <= 0.1 * C[0]


def test_gronwall_examples():
    t = np.linspace(0, 1, 21)
    rep = rough_gronwall_certify(np.exp(t), t, Control("power", a=1.0), 1.0, 1.0)
    assert rep.hypothesis_pass
    for C in (0.1, 1.0, 10.0):
        rep = rough_gronwall_certify(np.full(21, 2.0), t, Control("power", a=0.5), 1.0, 1.0, C=C)
        assert rep.hypothesis_pass and rep.bound_satisfied
    rep = rough_gronwall_certify(np.exp(5 * t), t, Control("power", a=1.0), 1.0, 1.0)
    assert not rep.hypothesis_pass and rep.violations


def test_moser_recursion():
    assert moser_recursion_bound(2, 2, 2, 1, 3) == 2048
    assert moser_unroll(2, 2, 2, 1, 3) == [1, 2, 16, 2048]


@given(st.floats(1.1, 3.0), st.floats(0.1, 3.0), st.integers(0, 6))
def test_moser_exponent_collapse(beta, U0, n):
    U = moser_unroll(1.0, 1.0, beta, U0, n)
    assert U[-1] <= U0 ** (beta**n) * (1 + 1e-12)
    assert moser_recursion_bound(1.0, 1.0, beta, U0, n) == pytest.approx(U0 ** (beta**n), rel=1e-12)


def test_lps_examples():
    assert lps_check(np.inf, 2, 1, strict=True)
    assert not lps_check(2, 1, 1, strict=True)
    assert lps_check(2, 1, 1, strict=False)
    for q in (1, 2, np.inf):
        assert not lps_check(1, q, 1, strict=True)
    with pytest.raises(ParameterError):
        lps_check(0.5, 2, 1)


def test_bihari_examples():
    env = bihari_envelope(0.0, 1.0, 1.0)
    assert env.y0 == 1.0
    assert env.blowup == pytest.approx(0.5)
    assert env.Tstar == pytest.approx(0.45)
    flat = bihari_envelope(0.3, 1e-12, 2.0)
    assert flat.Tstar == 2.0
    assert np.max(np.abs(flat.y / flat.y0 - 1)) <= 1e-10
