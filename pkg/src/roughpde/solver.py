"""IMEX Davie stepper for rough parabolic problems on the periodic 1D grid, plus analyzers.

One step from node k to k+1 (solver nodes are every `stride`-th point of the
driver partition) solves

    (I - dt A(u_k)) u_{k+1} = u_k + dt drift(u_k) + Q^1 u_k + Q^2 u_k

with A(w) = d(a dw) the conservative three-point diffusion, a frozen at u_k.
It is written for the increment u_{k+1} - u_k, so a vanishing right-hand
side leaves the state untouched bit for bit.

Drift convention (forward form):

    du = [d(a du) + d(F u) - b du - c u - f0 + d f1] dt + dQ(u).

A backward problem  d sigma + [same operator] dt = dP sigma,  sigma_T given,
is solved on reversed time with the reflected driver and reversed data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg, stats

from .drivers import BackwardDriver, Driver, ExampleConventionDriver, PathDriver, ReflectedDriver, reflect
from .errors import (CoercivityError, ConfigurationError, DivergenceError, ParameterError,
                     PreconditionError, StabilityError)
from .grid_ops import NonlinearDiffusion, PeriodicGrid, dx, integrate, interp_conditions, negative_sobolev2
from .rough_core import Control, TimePartition


# -- problem and trajectory -----------------------------------------------------

@dataclass
class ParabolicProblem:
    """Coefficients are None, scalars, fields (n,), per-node tables (K+1, n) or callables (k, t, u)."""
    grid: PeriodicGrid
    partition: TimePartition
    initial: np.ndarray
    driver: Driver | None = None
    diffusion: object = None
    F: object = None
    b: object = None
    c: object = None
    f0: object = None
    f1: object = None
    extra_drift: Callable | None = None
    direction: str = "forward"
    stride: int = 1
    transport_policy: str = "auto"
    cfl: float = 0.9
    substep_budget: int = 64
    lps: tuple | None = None

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ConfigurationError(f"unknown direction {self.direction!r}")
        if self.grid.d != 1:
            raise ConfigurationError("the stepper works on the 1D torus")
        if self.partition.steps % self.stride:
            raise ConfigurationError("stride must divide the number of partition steps")
        if self.driver is not None and len(self.driver.partition) != len(self.partition):
            raise ConfigurationError("driver and problem partitions differ")
        self.initial = np.asarray(self.initial, float)
        if self.initial.shape[-1] != self.grid.n:
            raise ConfigurationError("datum does not match the grid")
        if self.transport_policy not in ("auto", "on", "off"):
            raise ConfigurationError(f"unknown transport policy {self.transport_policy!r}")

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(0, len(self.partition), self.stride)

    @property
    def times(self) -> np.ndarray:
        return self.partition.points[self.nodes]


@dataclass
class Trajectory:
    times: np.ndarray
    nodes: np.ndarray
    fields: np.ndarray
    residual: np.ndarray
    cfl: np.ndarray
    substeps: np.ndarray
    rough: np.ndarray
    direction: str = "forward"

    @property
    def final(self):
        return self.fields[-1]

    def energy(self, grid: PeriodicGrid) -> np.ndarray:
        return integrate(self.fields ** 2, grid, axis=-1)

    def to_csv_rows(self, grid: PeriodicGrid):
        for k, t in enumerate(self.times):
            for x, v in enumerate(np.atleast_2d(self.fields[k])[0]):
                yield (k, float(t), x, float(grid.x[x]), float(v))

    def diagnostics_rows(self, grid: PeriodicGrid):
        E = self.energy(grid)
        E = E if E.ndim == 1 else E[:, 0]
        for k in range(len(self.times) - 1):
            yield (k, float(self.cfl[k]), int(self.substeps[k]), float(self.residual[k]), float(E[k + 1]))


# -- coefficient plumbing -------------------------------------------------------

def _coef(spec, k, t, u):
    if spec is None:
        return None
    if callable(spec):
        return spec(k, t, u)
    arr = np.asarray(spec, float)
    if arr.ndim == 2:
        return arr[k]
    return arr


def _reverse_spec(spec, K, T):
    if spec is None or np.ndim(spec) == 0 and not callable(spec):
        return spec
    if isinstance(spec, NonlinearDiffusion):
        return NonlinearDiffusion(lambda t, x, z: spec.a(T - t, x, z), spec.lam,
                                  None if spec.a_x is None else (lambda t, x, z: spec.a_x(T - t, x, z)),
                                  None if spec.a_z is None else (lambda t, x, z: spec.a_z(T - t, x, z)))
    if callable(spec):
        return lambda k, t, u: spec(K - k, T - t, u)
    arr = np.asarray(spec, float)
    return arr[::-1].copy() if arr.ndim == 2 else arr


def diffusion_field(problem: ParabolicProblem, k, t, u):
    """Frozen diffusion coefficient a(t_k, x, u_k), or None."""
    d = problem.diffusion
    if d is None:
        return None
    if isinstance(d, NonlinearDiffusion):
        a = np.asarray(d(t, problem.grid.x, u), float)
        if np.any(a < d.lam) or np.any(a > 1.0 / d.lam):
            raise CoercivityError(f"ellipticity lost at node {k}: range [{a.min():.3g}, {a.max():.3g}]")
        return np.broadcast_to(a, u.shape)
    a = np.asarray(_coef(d, k, t, u), float)
    if np.any(a <= 0):
        raise CoercivityError(f"nonpositive diffusion at node {k}")
    return np.broadcast_to(a, u.shape)


def apply_diffusion(a, w, grid: PeriodicGrid):
    """d(a dw) with midpoint-averaged coefficients."""
    ap = 0.5 * (a + np.roll(a, -1, axis=-1))
    am = 0.5 * (a + np.roll(a, 1, axis=-1))
    return (ap * (np.roll(w, -1, axis=-1) - w) - am * (w - np.roll(w, 1, axis=-1))) / grid.h ** 2


def standard_drift(problem: ParabolicProblem, k, t, u):
    """Explicit drift d(F u) - b du - c u - f0 + d f1 (+ extra), second-order differences."""
    g = problem.grid
    out = np.zeros_like(u)
    F = _coef(problem.F, k, t, u)
    if F is not None:
        out += dx(F * u, g)
    b = _coef(problem.b, k, t, u)
    if b is not None:
        out -= b * dx(u, g)
    c = _coef(problem.c, k, t, u)
    if c is not None:
        out -= c * u
    f0 = _coef(problem.f0, k, t, u)
    if f0 is not None:
        out -= f0
    f1 = _coef(problem.f1, k, t, u)
    if f1 is not None:
        out += dx(np.broadcast_to(f1, u.shape), g)
    if problem.extra_drift is not None:
        out += problem.extra_drift(k, t, u)
    return out


def total_drift(problem: ParabolicProblem, k, t, u):
    """A(u) u + drift(u), the integrand of the time integral in the expansion."""
    a = diffusion_field(problem, k, t, u)
    out = standard_drift(problem, k, t, u)
    return out if a is None else out + apply_diffusion(a, u, problem.grid)


def _cyclic_solve(a, dt, rhs, grid: PeriodicGrid):
    """Solve (I - dt A) x = rhs for the cyclic tridiagonal A; returns (x, residual)."""
    n = grid.n
    r = dt / grid.h ** 2
    ap = 0.5 * (a + np.roll(a, -1))
    am = 0.5 * (a + np.roll(a, 1))
    diag = 1.0 + r * (ap + am)
    up = -r * ap          # (x, x+1)
    lo = -r * am          # (x, x-1)
    # corners: (n-1, 0) = up[n-1], (0, n-1) = lo[0]; Sherman-Morrison with u = (g, 0.., up[-1]), v = (1, 0.., lo[0]/g)
    gam = -diag[0]
    dd = diag.copy()
    dd[0] -= gam
    dd[-1] -= up[-1] * lo[0] / gam
    ab = np.zeros((3, n))
    ab[0, 1:] = up[:-1]
    ab[1] = dd
    ab[2, :-1] = lo[1:]
    uvec = np.zeros(n)
    uvec[0], uvec[-1] = gam, up[-1]
    rhs2 = np.atleast_2d(rhs)
    sol = linalg.solve_banded((1, 1), ab, np.column_stack([rhs2.T, uvec]), check_finite=False)
    y, q = sol[:, :-1], sol[:, -1]
    vy = y[0] + lo[0] / gam * y[-1]
    vq = q[0] + lo[0] / gam * q[-1]
    x = (y - np.outer(q, vy / (1.0 + vq))).T
    Mx = diag * x + up * np.roll(x, -1, axis=-1) + lo * np.roll(x, 1, axis=-1)
    res = float(np.max(np.abs(Mx - rhs2))) if rhs2.size else 0.0
    return x.reshape(np.shape(rhs)), res


def transport_sup(D: Driver, i: int, j: int) -> float:
    """|X_ij|_inf of the transport part behind a driver (0 if it has none)."""
    if isinstance(D, ReflectedDriver):
        return transport_sup(D.P, D.N - j, D.N - i)
    if isinstance(D, (BackwardDriver, ExampleConventionDriver)):
        return transport_sup(D.B, i, j)
    if isinstance(D, PathDriver):
        if "X" not in D.bank.fields:
            return 0.0
        return float(np.max(np.abs(D.bank.increment("X", i, j))))
    return 0.0


def _substeps(problem, i, j):
    """Smallest k | (j - i) whose equal substeps satisfy the CFL rule."""
    D, g = problem.driver, problem.grid
    active = problem.transport_policy == "on" or (problem.transport_policy == "auto" and problem.diffusion is None)
    if D is None:
        return 1, 0.0
    lim = problem.cfl * g.h
    ratio = transport_sup(D, i, j) / g.h
    if not active or ratio * g.h <= lim:
        return 1, ratio
    span = j - i
    for k in range(2, min(span, problem.substep_budget) + 1):
        if span % k:
            continue
        w = span // k
        if all(transport_sup(D, i + q * w, i + (q + 1) * w) <= lim for q in range(k)):
            return k, ratio
    raise StabilityError(f"CFL violated on step ({i}, {j}): |X|/h = {ratio:.3g} beyond the substep budget")


def solve(problem: ParabolicProblem) -> Trajectory:
    if problem.direction == "backward":
        return _solve_backward(problem)
    return _solve_forward(problem)


def _solve_forward(problem: ParabolicProblem) -> Trajectory:
    g = problem.grid
    nodes, times = problem.nodes, problem.times
    K = nodes.size - 1
    u = problem.initial.copy()
    out = np.empty((K + 1,) + u.shape)
    out[0] = u
    res = np.zeros(K)
    cfl = np.zeros(K)
    nsub = np.ones(K, dtype=int)
    rough = np.zeros(K)
    D = problem.driver
    for k in range(K):
        i, j = int(nodes[k]), int(nodes[k + 1])
        t = float(times[k])
        dt = float(times[k + 1] - times[k])
        a = diffusion_field(problem, k, t, u)
        rhs = dt * standard_drift(problem, k, t, u)
        if a is not None:
            rhs = rhs + dt * apply_diffusion(a, u, g)
        if D is not None:
            m, cfl[k] = _substeps(problem, i, j)
            nsub[k] = m
            if m == 1:
                r = D.increment(i, j, u)
            else:
                w = (j - i) // m
                v = u.copy()
                for q in range(m):
                    v = v + D.increment(i + q * w, i + (q + 1) * w, v)
                r = v - u
            rough[k] = float(np.max(np.abs(r)))
            rhs = rhs + r
        if a is None:
            delta = rhs
        else:
            if u.ndim == 1:
                delta, res[k] = _cyclic_solve(a, dt, rhs, g)
            else:
                delta = np.empty_like(rhs)
                for row in range(u.shape[0]):
                    delta[row], rr = _cyclic_solve(a[row], dt, rhs[row], g)
                    res[k] = max(res[k], rr)
        u = u + delta
        if not np.all(np.isfinite(u)):
            raise DivergenceError(f"non-finite field after step {k}")
        out[k + 1] = u
    return Trajectory(times, nodes, out, res, cfl, nsub, rough, "forward")


def reversed_problem(problem: ParabolicProblem) -> ParabolicProblem:
    """Forward problem on reversed time equivalent to a backward problem (and vice versa)."""
    K = problem.nodes.size - 1
    T = problem.partition.T
    rev = dict(problem.__dict__)
    rev["partition"] = TimePartition(T - problem.partition.points[::-1])
    rev["driver"] = None if problem.driver is None else reflect(problem.driver)
    for name in ("diffusion", "F", "b", "c", "f0", "f1", "extra_drift"):
        rev[name] = _reverse_spec(getattr(problem, name), K, T)
    rev["direction"] = "forward" if problem.direction == "backward" else "backward"
    return ParabolicProblem(**rev)


def _solve_backward(problem: ParabolicProblem) -> Trajectory:
    """Terminal datum problem.initial at T; solved forward in reversed time."""
    tr = _solve_forward(reversed_problem(problem))
    return Trajectory(problem.times, problem.nodes, tr.fields[::-1].copy(), tr.residual[::-1].copy(),
                      tr.cfl[::-1].copy(), tr.substeps[::-1].copy(), tr.rough[::-1].copy(), "backward")


# -- remainder ledger ---------------------------------------------------------

@dataclass
class LedgerFit:
    exponent: float
    stderr: float
    levels: int

    @property
    def band(self):
        return (self.exponent - 2 * self.stderr, self.exponent + 2 * self.stderr)


@dataclass
class RemainderLedger:
    samples: list                  # (s, t, space, norm)
    natural: LedgerFit
    ru: LedgerFit

    def rows(self):
        return list(self.samples)


def _fit(gaps, values) -> LedgerFit:
    gaps, values = np.asarray(gaps), np.asarray(values)
    ok = values > 0
    if ok.sum() < 3:
        raise ConfigurationError("exponent fit needs at least 3 dyadic levels with nonzero samples")
    r = stats.linregress(np.log(gaps[ok]), np.log(values[ok]))
    return LedgerFit(float(r.slope), float(r.stderr), int(ok.sum()))


def remainder_ledger(traj: Trajectory, problem: ParabolicProblem, levels=None, max_pairs: int = 64) -> RemainderLedger:
    """u_nat = u_st - int(A u + drift) - Q^1 u_s - Q^2 u_s and R^u = u_st - Q^1 u_s over dyadic gaps."""
    if problem.direction != "forward":
        problem = reversed_problem(problem)
        traj = Trajectory(traj.times, traj.nodes, traj.fields[::-1], traj.residual, traj.cfl,
                          traj.substeps, traj.rough)
    K = traj.nodes.size - 1
    g = problem.grid
    top = int(np.floor(np.log2(K)))
    levels = list(range(0, top + 1)) if levels is None else list(levels)
    if len(levels) < 3:
        raise ConfigurationError("remainder ledger needs at least 3 dyadic levels")
    times = traj.times
    integrand = np.stack([total_drift(problem, k, times[k], traj.fields[k]) for k in range(K + 1)])
    dtk = np.diff(times)
    trap = np.concatenate([np.zeros((1,) + integrand.shape[1:]),
                           np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * dtk.reshape((-1,) + (1,) * (integrand.ndim - 1)),
                                     axis=0)])
    D = problem.driver
    samples, gaps, nat, ru = [], [], [], []
    for lev in levels:
        gap = 2 ** lev
        if gap > K:
            continue
        starts = np.arange(0, K - gap + 1, gap)
        if starts.size > max_pairs:
            starts = starts[np.linspace(0, starts.size - 1, max_pairs).astype(int)]
        worst_n, worst_r = 0.0, 0.0
        for k in starts:
            s, t = int(k), int(k + gap)
            us = traj.fields[s]
            du = traj.fields[t] - us
            q1 = D.apply1(int(traj.nodes[s]), int(traj.nodes[t]), us) if D is not None else 0 * us
            q2 = D.apply2(int(traj.nodes[s]), int(traj.nodes[t]), us) if D is not None else 0 * us
            un = du - (trap[t] - trap[s]) - q1 - q2
            r = du - q1
            vn = float(np.max(negative_sobolev2(un, g, 3)))
            vr = float(np.max(negative_sobolev2(r, g, 2)))
            samples.append((float(times[s]), float(times[t]), "W-3,2", vn))
            samples.append((float(times[s]), float(times[t]), "W-2,2 R", vr))
            worst_n, worst_r = max(worst_n, vn), max(worst_r, vr)
        gaps.append(times[gap] - times[0])
        nat.append(worst_n)
        ru.append(worst_r)
    return RemainderLedger(samples, _fit(gaps, nat), _fit(gaps, ru))


# -- energy and Gronwall -------------------------------------------------------

@dataclass
class EnergyReport:
    E: np.ndarray                 # |u_t|^2 + int_0^t |du|^2
    sup_l2: float
    dissipation: float
    C_run: float


def energy_monitor(traj: Trajectory, grid: PeriodicGrid) -> EnergyReport:
    u = traj.fields
    l2 = integrate(u ** 2, grid, axis=-1)
    grad = integrate(dx(u, grid) ** 2, grid, axis=-1)
    diss = np.concatenate([[0.0], np.cumsum(0.5 * (grad[1:] + grad[:-1]) * np.diff(traj.times))])
    E = l2 + diss
    u0 = l2[0]
    return EnergyReport(E, float(np.max(l2)), float(diss[-1]),
                        float((np.max(l2) + diss[-1]) / u0) if u0 > 0 else 0.0)


@dataclass
class GronwallReport:
    hypothesis_pass: bool
    violations: list
    bound: float | None
    bound_satisfied: bool | None
    C: float


def _table(obj, times):
    if callable(obj):
        return np.array([[obj(s, t) if t >= s else 0.0 for t in times] for s in times])
    if np.ndim(obj) == 0:
        return np.full((times.size, times.size), float(obj))
    return np.asarray(obj, float)


def phi_superadditive(phi_tab, atol: float = 1e-13) -> bool:
    n = phi_tab.shape[0]
    for s in range(n):
        for th in range(s, n):
            t = np.arange(th, n)
            if np.any(phi_tab[s, th] + phi_tab[th, t] > phi_tab[s, t] + atol * (1 + np.abs(phi_tab[s, t]))):
                return False
    return True


def rough_gronwall_certify(E, times, omega, kappa: float, L: float, phi=0.0, C: float = 1.0) -> GronwallReport:
    """Check E_t - E_s <= sup_[s,t] E * omega^kappa + phi on pairs with omega <= L, then evaluate the bound."""
    E = np.asarray(E, float)
    times = np.asarray(times, float)
    if np.any(E < 0):
        raise PreconditionError("E must be nonnegative")
    W = _table(omega, times)
    P = _table(phi, times)
    if not phi_superadditive(P):
        raise PreconditionError("phi is not superadditive on the grid")
    n = E.size
    runmax = np.array([[np.max(E[s:t + 1]) if t >= s else 0.0 for t in range(n)] for s in range(n)])
    I, J = np.triu_indices(n, 1)
    mask = W[I, J] <= L
    lhs = E[J] - E[I]
    rhs = runmax[I, J] * W[I, J] ** kappa + P[I, J]
    bad = mask & (lhs > rhs + 1e-12 * (1 + np.abs(rhs)))
    viol = [(float(times[i]), float(times[j]), float(a - b))
            for i, j, a, b in zip(I[bad], J[bad], lhs[bad], rhs[bad])]
    if viol:
        return GronwallReport(False, viol, None, None, C)
    bound = float(np.exp(W[0, -1] / C) * (E[0] + np.max(np.abs(P[0]))))
    return GronwallReport(True, [], bound, bool(np.max(E) <= bound), C)


def gronwall_scan(E, times, omega, kappa, L, phi=0.0, grid_C=None):
    """Largest C on the scan grid whose bound still holds (the tightest certified bound)."""
    grid_C = np.geomspace(1e-3, 1e3, 61) if grid_C is None else np.asarray(grid_C)
    best = None
    for C in sorted(grid_C):
        rep = rough_gronwall_certify(E, times, omega, kappa, L, phi, float(C))
        if not rep.hypothesis_pass:
            return rep
        if rep.bound_satisfied:
            best = rep
    return best


def increment_control(traj: Trajectory, alpha: float) -> Control:
    """Tabulated control from the recorded rough increments: omega(s,t) = (sum |Q u| over [s,t])^{1/alpha}."""
    cum = np.concatenate([[0.0], np.cumsum(traj.rough)])
    tab = np.maximum(cum[None, :] - cum[:, None], 0.0) ** (1.0 / alpha)
    return Control(kind="tabulated", partition=TimePartition(np.asarray(traj.times, float)), table=tab)


# -- LPS, Moser, Bihari ----------------------------------------------------------

def _recip(p):
    return 0.0 if np.isinf(p) else 1.0 / p


def lps_check(r: float, q: float, d: int, strict: bool = True) -> bool:
    if r < 1 or q < 1:
        raise ParameterError("LPS exponents must lie in [1, inf]")
    val = _recip(r) + d * _recip(q) / 2
    return bool(val < 1) if strict else bool(val <= 1)


def moser_recursion_bound(C: float, tau: float, beta: float, U0: float, n: int) -> float:
    """Closed-form bound for U_{k+1} <= C tau^k U_k^beta."""
    e = beta - 1.0
    bn = beta ** n
    return C ** ((bn - 1) / e) * tau ** ((bn - 1) / e ** 2 - n / e) * U0 ** bn


def moser_unroll(C: float, tau: float, beta: float, U0: float, n: int) -> list:
    """Iterates of the recursion taken with equality."""
    U = [U0]
    for k in range(n):
        U.append(C * tau ** k * U[-1] ** beta)
    return U


def moser_epsilon_window(r: float, q: float, d: int, samples: int = 4001):
    """Admissible epsilon: below the cap and such that the first rung meets the interpolation conditions."""
    eps_max = 2.0 / d * (1.0 - _recip(r) - d * _recip(q) / 2)
    if eps_max <= 0:
        raise PreconditionError("LPS condition fails; no admissible epsilon")
    rho0 = 2.0 / (1.0 - _recip(r))
    sig0 = 2.0 / (1.0 - _recip(q))
    ok = []
    for eps in np.linspace(0, eps_max, samples)[1:-1]:
        b = 1 + eps
        if interp_conditions(rho0 * b, sig0 * b, d) is None:
            ok.append(eps)
    if not ok:
        raise PreconditionError("no epsilon puts the ladder inside the interpolation range")
    return eps_max, rho0, sig0, (min(ok), max(ok))


def _st_lognorm(z, times, grid, rho, sigma):
    """log ||z||_{L^rho(0,T; L^sigma)} with max-scaling so huge exponents stay finite."""
    M = float(np.max(np.abs(z)))
    if M == 0:
        return -np.inf
    w = np.abs(z) / M
    if np.isinf(sigma):
        sp = np.max(w, axis=-1)
    else:
        sp = integrate(w ** sigma, grid, axis=-1) ** (1.0 / sigma)
    if np.isinf(rho):
        tn = np.max(sp)
    else:
        tn = np.trapezoid(sp ** rho, times) ** (1.0 / rho)
    return np.log(M) + np.log(tn)


@dataclass
class MoserReport:
    eps: float
    beta: float
    rho: np.ndarray
    sigma: np.ndarray
    logU: np.ndarray
    C_hat: float
    log_bounds: np.ndarray
    log_limit_bound: float
    sup_z: float

    @property
    def limit_bound(self) -> float:
        return float(np.exp(self.log_limit_bound))

    @property
    def passed(self) -> bool:
        return bool(np.log(max(self.sup_z, 1e-300)) <= self.log_limit_bound + 1e-12
                    and np.all(self.logU <= self.log_bounds + 1e-9 * (1 + np.abs(self.log_bounds))))


def moser_bound(problem: ParabolicProblem, traj: Trajectory, r: float = np.inf, q: float = 2.0,
                eps: float | None = None, rungs: int = 24) -> MoserReport:
    D = problem.driver
    if D is not None and isinstance(D, PathDriver) and ({"Y0", "Ym1"} & set(D.bank.fields)):
        raise PreconditionError("Moser bound needs a pure transport driver (Y0 = Ym1 = 0)")
    d = problem.grid.d
    if not lps_check(r, q, d, strict=True):
        raise PreconditionError(f"LPS condition fails for (r, q) = ({r}, {q})")
    eps_max, rho0, sig0, (lo, hi) = moser_epsilon_window(r, q, d)
    if eps is None:
        eps = 0.5 * (lo + hi)
    if not (0 < eps < eps_max):
        raise PreconditionError(f"eps must lie in (0, {eps_max})")
    beta = 1.0 + eps
    why = interp_conditions(rho0 * beta, sig0 * beta, d)
    assert why is None, f"first rung violates the interpolation conditions: {why}"
    z = traj.fields
    times = traj.times
    n = np.arange(rungs + 1)
    rho = rho0 * beta ** (n + 1)
    sig = sig0 * beta ** (n + 1)
    logU = np.empty(rungs + 1)
    for k in n:
        ln = _st_lognorm(z, times, problem.grid, rho[k], sig[k])
        logU[k] = ln if k == 0 else np.logaddexp(beta ** k * ln, 0.0)
    logC = np.max(logU[1:] - n[:-1] * np.log(beta) - beta * logU[:-1])
    bn = beta ** n
    logB = (bn - 1) / eps * logC + ((bn - 1) / eps ** 2 - n / eps) * np.log(beta) + bn * logU[0]
    logBinf = logC / eps + np.log(beta) / eps ** 2 + logU[0]
    return MoserReport(eps, beta, rho0 * beta ** n, sig0 * beta ** n, logU, float(np.exp(logC)),
                       logB, float(logBinf), float(np.max(np.abs(z))))


@dataclass
class BihariEnvelope:
    times: np.ndarray
    y: np.ndarray
    y0: float
    blowup: float
    Tstar: float


def bihari_envelope(E0: float, Ctilde: float, T: float, times=None, safety: float = 0.9) -> BihariEnvelope:
    if E0 < 0 or Ctilde <= 0:
        raise ParameterError("need E0 >= 0 and Ctilde > 0")
    times = np.linspace(0, T, 257) if times is None else np.asarray(times, float)
    y0 = Ctilde * (1.0 + E0)
    blow = 1.0 / (2 * Ctilde * y0 ** 2)
    Tstar = min(T, safety * blow)
    arg = 1.0 - 2 * Ctilde * y0 ** 2 * times
    y = np.where(arg > 0, y0 / np.sqrt(np.where(arg > 0, arg, 1.0)), np.inf)
    return BihariEnvelope(times, y, y0, blow, Tstar)


def calibrate_bihari(E, times) -> float:
    """Smallest Ctilde with E_t <= Ctilde (1 + int_0^t E^3) on the run."""
    E = np.asarray(E, float)
    I3 = np.concatenate([[0.0], np.cumsum(0.5 * (E[1:] ** 3 + E[:-1] ** 3) * np.diff(times))])
    return float(np.max(E / (1.0 + I3)))
