"""Space-dependent rough enhancements on the 1D torus.

A sheet component is stored in one of two ways, and the lift object knows how
to take increments and iterated integrals of it:

* SegmentLift: nodal values F[k, x] on the time partition, linear in time
  between nodes (canonical lift, brackets integrated exactly per segment);
* PathLift: spatial coefficients F[mu, x] of a finite rough path Z, i.e. the
  component is F_mu(x) Z^mu_t, and brackets come from the path's second level.

Brackets are <A, B>_st = int_s^t dA_r B_{s r}, evaluated pointwise in x.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PreconditionError, UnsupportedError
from .grid_ops import PeriodicGrid, dx, shift, winf_norm
from .rough_core import FiniteRoughPath, TimePartition, fbm_sample, pl_lift


class SegmentLift:
    kind = "segment"

    def __init__(self, partition: TimePartition):
        self.partition = partition

    def check(self, F, grid):
        if F.shape != (len(self.partition), grid.n):
            raise ConfigurationError(f"nodal field needs shape {(len(self.partition), grid.n)}, got {F.shape}")

    def nodal(self, F):
        return F

    def increment(self, F, i, j):
        return F[j] - F[i]

    def bracket(self, A, B, i, j):
        if np.ndim(i) == 0:
            dA = np.diff(A[i:j + 1], axis=0)
            dB = np.diff(B[i:j + 1], axis=0)
            return np.sum(dA * (0.5 * dB + B[i:j] - B[i]), axis=0)
        dA = np.diff(A, axis=0)
        dB = np.diff(B, axis=0)
        C = np.concatenate([np.zeros((1,) + A.shape[1:]), np.cumsum(dA * (0.5 * dB + B[:-1]), axis=0)])
        i = np.asarray(i)
        j = np.asarray(j)
        return C[j] - C[i] - B[i] * (A[j] - A[i])

    def reversed(self):
        return self

    def reverse_field(self, F):
        return F[::-1].copy()


class PathLift:
    kind = "path"

    def __init__(self, rp: FiniteRoughPath):
        self.rp = rp
        self.partition = rp.partition

    def check(self, F, grid):
        if F.shape != (self.rp.m, grid.n):
            raise ConfigurationError(f"coefficient field needs shape {(self.rp.m, grid.n)}, got {F.shape}")

    def nodal(self, F):
        return self.rp.Z @ F

    def increment(self, F, i, j):
        return self.rp.increment(i, j) @ F

    def bracket(self, A, B, i, j):
        z = self.rp.second_level(i, j)          # z[..., nu, mu] = int Z^nu dZ^mu
        return np.einsum("...nm,mx,nx->...x", z, A, B)

    def reversed(self):
        return PathLift(self.rp.reversed())

    def reverse_field(self, F):
        return F


def space_derivative(F, grid: PeriodicGrid):
    """Fourth-order central difference along x; the same for both lift kinds."""
    return dx(F, grid, axis=-1, order=4)


FIRST = ("X", "Y0", "Ym1")
SECOND = ("L", "L0", "aff")


@dataclass(eq=False)
class EnhancementTriad:
    """First level (Y^{-1}, Y^0, X = Y^1) and its brackets on the 1D torus.

    Brackets are materialized lazily per pair and memoized:
        L   = <X, dX>,   L0 = <X, dY0>,   aff = <X, dYm1> + <Y0, Ym1>.
    Names in `zeroed` are forced to zero (used to build defective triads).
    """
    lift: object
    grid: PeriodicGrid
    X: np.ndarray
    Y0: np.ndarray | None = None
    Ym1: np.ndarray | None = None
    alpha: float = 0.5
    zeroed: frozenset = frozenset()
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.grid.d != 1:
            raise UnsupportedError("sheets are implemented on the 1D torus")
        for name in FIRST:
            F = getattr(self, name)
            if F is not None:
                F = np.asarray(F, float)
                self.lift.check(F, self.grid)
                setattr(self, name, F)

    @property
    def partition(self) -> TimePartition:
        return self.lift.partition

    def field(self, name):
        F = getattr(self, name)
        return None if F is None else F

    def has(self, name) -> bool:
        return getattr(self, name) is not None

    @property
    def pure_transport(self) -> bool:
        return self.Y0 is None and self.Ym1 is None

    def deriv(self, name):
        key = ("deriv", name)
        if key not in self._cache:
            F = getattr(self, name)
            self._cache[key] = None if F is None else space_derivative(F, self.grid)
        return self._cache[key]

    def increment(self, name, i, j):
        F = getattr(self, name)
        shape = np.shape(i) + (self.grid.n,)
        if F is None:
            return np.zeros(shape)
        return self.lift.increment(F, i, j)

    def nodal(self, name):
        F = getattr(self, name)
        if F is None:
            return np.zeros((len(self.partition), self.grid.n))
        return self.lift.nodal(F)

    def _raw_bracket(self, A, B, i, j):
        if A is None or B is None:
            return np.zeros(np.shape(i) + (self.grid.n,))
        return self.lift.bracket(A, B, i, j)

    def bracket(self, name, i, j):
        """Second-level entry `name` on pair(s) (i, j)."""
        if name not in SECOND:
            raise ConfigurationError(f"unknown bracket {name!r}")
        scalar = np.ndim(i) == 0
        key = (name, int(i), int(j)) if scalar else None
        if scalar:
            with self._lock:
                hit = self._cache.get(key)
            if hit is not None:
                return hit
        if name in self.zeroed:
            out = np.zeros(np.shape(i) + (self.grid.n,))
        elif name == "L":
            out = self._raw_bracket(self.X, self.deriv("X"), i, j)
        elif name == "L0":
            out = self._raw_bracket(self.X, self.deriv("Y0"), i, j)
        else:
            out = self._raw_bracket(self.X, self.deriv("Ym1"), i, j) + self._raw_bracket(self.Y0, self.Ym1, i, j)
        if scalar:
            with self._lock:
                self._cache[key] = out
        return out

    def two_point(self, a, b, o, i, j):
        """<F_a(x), F_b(x + o h)> on pair(s) (i, j); used by the driver stencils."""
        A = getattr(self, a)
        B = getattr(self, b)
        if A is None or B is None:
            return np.zeros(np.shape(i) + (self.grid.n,))
        scalar = np.ndim(i) == 0
        key = ("tp", a, b, o, int(i), int(j)) if scalar else None
        if scalar:
            with self._lock:
                hit = self._cache.get(key)
            if hit is not None:
                return hit
        out = self.lift.bracket(A, shift(B, o), i, j)
        if scalar:
            with self._lock:
                self._cache[key] = out
        return out

    def with_fields(self, **kw) -> "EnhancementTriad":
        args = dict(X=self.X, Y0=self.Y0, Ym1=self.Ym1, alpha=self.alpha, zeroed=self.zeroed)
        args.update(kw)
        return EnhancementTriad(self.lift, self.grid, **args)

    def zero_bracket(self, *names) -> "EnhancementTriad":
        return self.with_fields(zeroed=frozenset(self.zeroed | set(names)))

    def reversed(self) -> "EnhancementTriad":
        """Triad of t -> Y_{T - t}."""
        lift = self.lift.reversed()
        rev = {n: (None if getattr(self, n) is None else self.lift.reverse_field(getattr(self, n)))
               for n in FIRST}
        return EnhancementTriad(lift, self.grid, alpha=self.alpha, zeroed=self.zeroed, **rev)

    def translate(self, cells: int) -> "EnhancementTriad":
        moved = {n: (None if getattr(self, n) is None else np.roll(getattr(self, n), cells, axis=-1))
                 for n in FIRST}
        return self.with_fields(**moved)

    def to_csv_rows(self):
        rows = []
        for name in FIRST:
            if getattr(self, name) is None:
                continue
            vals = self.nodal(name)
            for k in range(vals.shape[0]):
                for x in range(vals.shape[1]):
                    rows.append((k, x, name, float(vals[k, x])))
        return rows


@dataclass(frozen=True)
class SigmaField:
    """Coefficients sigma_mu(x), mu = 1..m, of X = sigma_mu Z^mu on the 1D torus."""
    grid: PeriodicGrid
    sigma: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sigma, float))
        if s.shape[1] != self.grid.n:
            raise ConfigurationError("sigma must be tabulated on the grid")
        object.__setattr__(self, "sigma", s)

    @property
    def m(self) -> int:
        return self.sigma.shape[0]

    def derivative(self):
        return space_derivative(self.sigma, self.grid)


# -- constructors -------------------------------------------------------------

def sheet_from_sigma(sigma: SigmaField, rp: FiniteRoughPath, alpha: float | None = None,
                     source0: np.ndarray | None = None, source_m1: np.ndarray | None = None) -> EnhancementTriad:
    """X_st = sigma_mu Z^mu_st with L = z^{mu nu} d sigma_mu sigma_nu read off rp."""
    if sigma.m != rp.m:
        raise ConfigurationError(f"sigma has m={sigma.m} but the rough path has m={rp.m}")
    return EnhancementTriad(PathLift(rp), sigma.grid, sigma.sigma,
                            None if source0 is None else np.atleast_2d(source0),
                            None if source_m1 is None else np.atleast_2d(source_m1),
                            alpha=rp.alpha if alpha is None else alpha)


def canonical_lift_sheet(partition: TimePartition, grid: PeriodicGrid, X, Y0=None, Ym1=None,
                         alpha: float = 0.5) -> EnhancementTriad:
    """Canonical lift of sheets given by nodal values, linear in time between nodes."""
    return EnhancementTriad(SegmentLift(partition), grid, np.asarray(X, float),
                            None if Y0 is None else np.asarray(Y0, float),
                            None if Ym1 is None else np.asarray(Ym1, float), alpha=alpha)


def linear_sheet(partition: TimePartition, grid: PeriodicGrid, V, alpha: float = 1.0) -> EnhancementTriad:
    """X_t(x) = t V(x)."""
    t = partition.points[:, None]
    return canonical_lift_sheet(partition, grid, t * np.asarray(V, float)[None, :], alpha=alpha)


def fbm_sigma_sheet(grid: PeriodicGrid, partition: TimePartition, sigma, H: float, level: int,
                    seed: int, base: int = 1, sample_level: int | None = None) -> EnhancementTriad:
    """sigma(x) W^H_t with W^H kept on base 2^level steps, interpolated linearly onto `partition`.

    W^H is sampled on base 2^sample_level steps (default: level) and then
    subsampled, so sheets at nested levels share one underlying path. The
    rough path is the canonical lift of the interpolated path.
    """
    T = partition.T
    sample_level = level if sample_level is None else sample_level
    if sample_level < level:
        raise ConfigurationError("sample_level must be >= level")
    steps = base * 2**level
    stride = 2 ** (sample_level - level)
    sig = np.atleast_2d(np.asarray(sigma, float))
    m = sig.shape[0]
    coarse = np.arange(steps + 1) * (T / steps)
    W = np.stack([fbm_sample(H, steps * stride, seed + 7919 * mu, T)[::stride] for mu in range(m)], axis=1)
    Z = np.stack([np.interp(partition.points, coarse, W[:, mu]) for mu in range(m)], axis=1)
    rp = pl_lift(Z, partition, alpha=max(H - 0.05, 1 / 3 + 1e-6))
    return sheet_from_sigma(SigmaField(grid, sig), rp)


def transport_source_triad(sheet: EnhancementTriad, sign: float = -1.0) -> EnhancementTriad:
    """Triad of dPhi = sign (dX dPhi/dx + d(dX/dx)): transport part sign X, source sign dX/dx."""
    if not sheet.pure_transport:
        raise PreconditionError("transport_source_triad expects a pure transport sheet")
    return sheet.with_fields(X=sign * sheet.X, Y0=None, Ym1=sign * sheet.deriv("X"))


def differentiate_triad(Z: EnhancementTriad) -> EnhancementTriad:
    """Triad of d/dx of a transport equation with additive input.

    If dPhi = dZ dPhi/dx + dZ^{-1}, then Psi = dPhi/dx has transport part Z,
    multiplicative part dZ/dx and additive part dZ^{-1}/dx. Its brackets are
    the canonical brackets of these fields, which coincide with
    d<Z,dZ> - (dZ)^2/2, <Z,dZ> and d<Z,dZ^{-1}> for geometric lifts.
    """
    if Z.Y0 is not None:
        raise PreconditionError("differentiate_triad expects Y0 = 0")
    return Z.with_fields(X=Z.X, Y0=Z.deriv("X"), Ym1=Z.deriv("Ym1"))


def derivative_triad(sheet: EnhancementTriad, mode: str, sign: float = -1.0) -> EnhancementTriad:
    """Derivative triads on the 1D torus.

    mode "dual_multiplicative": ([0, sign dX, sign X]; [d L - (dX)^2/2, L]; 0).
    mode "transport_source": triad of d/dx Phi where Phi solves the transport
    equation with additive input (built from the sheet if it is pure transport).
    """
    if sheet.grid.d != 1:
        raise UnsupportedError("derivative triads exist only for d = 1")
    if mode == "dual_multiplicative":
        if not sheet.pure_transport:
            raise PreconditionError("dual triad needs a pure transport sheet")
        return sheet.with_fields(X=sign * sheet.X, Y0=sign * sheet.deriv("X"), Ym1=None)
    if mode == "transport_source":
        Z = transport_source_triad(sheet, sign) if sheet.pure_transport else sheet
        return differentiate_triad(Z)
    raise ConfigurationError(f"unknown mode {mode!r}")


# -- audits -------------------------------------------------------------------

@dataclass
class ChenReport:
    max_residual: dict
    worst: dict
    rows: list

    @property
    def overall(self) -> float:
        return max(self.max_residual.values()) if self.max_residual else 0.0


def _pair_tables(triad: EnhancementTriad, idx):
    n = idx.size
    I, J = np.meshgrid(idx, idx, indexing="ij")
    tabs = {}
    for name in FIRST:
        tabs[name] = triad.increment(name, I, J)
    dtabs = {}
    for name in FIRST:
        D = triad.deriv(name)
        if D is None:
            dtabs[name] = np.zeros((n, n, triad.grid.n))
        else:
            dtabs[name] = triad.lift.increment(D, I, J)
    upper = J >= I
    for name in SECOND:
        T = np.zeros((n, n, triad.grid.n))
        T[upper] = triad.bracket(name, I[upper], J[upper])
        tabs[name] = T
    return tabs, dtabs


def gene_chen_residual(triad: EnhancementTriad, indices=None, keep_rows: bool = False) -> ChenReport:
    """Generalized Chen relations on all triples of `indices` (default: every node).

        delta Y = 0,   delta <X, dY>_{s th t} = X_{th t} dY_{s th},
        delta aff = X_{th t} dYm1_{s th} + Y0_{th t} Ym1_{s th}.
    """
    idx = np.arange(len(triad.partition)) if indices is None else np.asarray(indices)
    tabs, dtabs = _pair_tables(triad, idx)
    rels = {
        "X": lambda th_t, s_th: 0.0,
        "Y0": lambda th_t, s_th: 0.0,
        "Ym1": lambda th_t, s_th: 0.0,
        "L": lambda a, b: tabs["X"][a] * dtabs["X"][b],
        "L0": lambda a, b: tabs["X"][a] * dtabs["Y0"][b],
        "aff": lambda a, b: tabs["X"][a] * dtabs["Ym1"][b] + tabs["Y0"][a] * tabs["Ym1"][b],
    }
    nI = idx.size
    out = {k: 0.0 for k in rels}
    worst = {k: None for k in rels}
    rows = []
    for s in range(nI - 2):
        for th in range(s + 1, nI - 1):
            ts = np.arange(th + 1, nI)
            for name, rhs in rels.items():
                T = tabs[name]
                lhs = T[s, ts] - T[s, th] - T[th, ts]
                r = rhs((th, ts), (s, th))
                res = np.max(np.abs(lhs - r), axis=-1)
                k = int(np.argmax(res))
                if res[k] > out[name] or worst[name] is None:
                    out[name] = max(out[name], float(res[k]))
                    worst[name] = (int(idx[s]), int(idx[th]), int(idx[ts[k]]))
                if keep_rows:
                    rows.extend((name, int(idx[s]), int(idx[th]), int(idx[t]), float(v))
                                for t, v in zip(ts, res))
    present = {k: v for k, v in out.items()
               if k in SECOND or triad.has(k)}
    return ChenReport(present, {k: worst[k] for k in present}, rows)


def rho_alpha_metric(t1: EnhancementTriad, t2: EnhancementTriad, indices=None) -> float:
    """Holder-in-time W^{3,inf} seminorm of the first-level difference plus the
    2 alpha seminorm of the bracket difference in W^{2,inf}."""
    if t1.grid != t2.grid or len(t1.partition) != len(t2.partition) or \
            not np.allclose(t1.partition.points, t2.partition.points, rtol=0, atol=0):
        raise ConfigurationError("rho_alpha needs identical grids and partitions")
    alpha = min(t1.alpha, t2.alpha)
    idx = np.arange(len(t1.partition)) if indices is None else np.asarray(indices)
    pts = t1.partition.points[idx]
    I, J = np.triu_indices(idx.size, 1)
    dt = pts[J] - pts[I]
    total = 0.0
    for name in FIRST:
        if not (t1.has(name) or t2.has(name)):
            continue
        diff = t1.increment(name, idx[I], idx[J]) - t2.increment(name, idx[I], idx[J])
        total += float(np.max(winf_norm(diff, t1.grid, 3) / dt**alpha))
    for name in SECOND:
        diff = t1.bracket(name, idx[I], idx[J]) - t2.bracket(name, idx[I], idx[J])
        total += float(np.max(winf_norm(diff, t1.grid, 2) / dt ** (2 * alpha)))
    return total
