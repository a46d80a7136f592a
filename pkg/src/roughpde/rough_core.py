"""Time-side calculus: partitions, controls, two-index maps and level-2 rough paths."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ConfigurationError, FactorizationError, OrderingError, ParameterError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TimePartition:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ConfigurationError("partition needs at least two points")
        if pts[0] != 0.0:
            raise ConfigurationError("partition must start at 0")
        if np.any(np.diff(pts) <= 0):
            raise ConfigurationError("partition must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, T: float, steps: int) -> "TimePartition":
        if steps < 1 or T <= 0:
            raise ConfigurationError("need T > 0 and steps >= 1")
        pts = np.arange(steps + 1) * (T / steps)
        pts[-1] = T
        return cls(pts)

    @classmethod
    def dyadic(cls, T: float, base: int, level: int) -> "TimePartition":
        return cls.uniform(T, base * 2**level)

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def steps(self) -> int:
        return self.points.size - 1

    def __len__(self):
        return self.points.size

    def refine(self, level: int = 1) -> "TimePartition":
        pts = self.points
        for _ in range(level):
            mid = 0.5 * (pts[1:] + pts[:-1])
            new = np.empty(2 * pts.size - 1)
            new[0::2] = pts
            new[1::2] = mid
            pts = new
        return TimePartition(pts)

    def index_of(self, t: float) -> int:
        k = int(np.searchsorted(self.points, t))
        for j in (k - 1, k):
            if 0 <= j < self.points.size and abs(self.points[j] - t) <= 1e-12 * max(1.0, self.T):
                return j
        raise ConfigurationError(f"time {t} is not a partition point")

    def pairs(self):
        n = self.points.size
        return [(i, j) for i in range(n) for j in range(i + 1, n)]


# -- controls ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Control:
    """Superadditive map on the simplex.

    kind is "power" ((t-s)^a), "integral" ((int_s^t f)^a with f tabulated on
    `partition`), or "tabulated" (values on the partition index simplex).
    """
    kind: str
    a: float = 1.0
    f: np.ndarray | None = None
    partition: TimePartition | None = None
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("power", "integral", "tabulated"):
            raise ConfigurationError(f"unknown control kind {self.kind!r}")
        if self.kind == "integral":
            if self.f is None or self.partition is None:
                raise ConfigurationError("integral control needs f and partition")
            f = np.asarray(self.f, float)
            if np.any(f < 0):
                raise ParameterError("integral control needs f >= 0")
            pts = self.partition.points
            cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(pts))])
            object.__setattr__(self, "_cum", cum)
        if self.kind == "tabulated" and (self.table is None or self.partition is None):
            raise ConfigurationError("tabulated control needs table and partition")

    def __call__(self, s: float, t: float) -> float:
        if t < s:
            raise OrderingError(f"control needs s <= t, got ({s}, {t})")
        if self.kind == "power":
            return float((t - s) ** self.a)
        if self.kind == "integral":
            pts = self.partition.points
            F = np.interp([s, t], pts, self._cum)
            return float(max(F[1] - F[0], 0.0) ** self.a)
        i, j = self.partition.index_of(s), self.partition.index_of(t)
        return float(self.table[i, j])


@dataclass
class SuperadditivityReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def control_superadditivity_check(omega: Control, partition: TimePartition, rtol: float = 1e-13):
    """List triples (s, theta, t) with omega(s,theta) + omega(theta,t) > omega(s,t)."""
    pts = partition.points
    n = pts.size
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            W[i, j] = omega(pts[i], pts[j])
    rep = SuperadditivityReport()
    for i in range(n):
        for j in range(i, n):
            for k in range(j, n):
                excess = W[i, j] + W[j, k] - W[i, k]
                if excess > rtol * max(1.0, abs(W[i, k])):
                    rep.violations.append((pts[i], pts[j], pts[k], float(excess)))
    return rep


# -- two-index maps -----------------------------------------------------------

@dataclass(frozen=True)
class TwoIndexMap:
    eval: Callable[[float, float], object]

    def __call__(self, s, t):
        return self.eval(s, t)

    @classmethod
    def increments(cls, g: Callable[[float], object]) -> "TwoIndexMap":
        return cls(lambda s, t: np.asarray(g(t)) - np.asarray(g(s)))


def delta_op(h, s: float, theta: float, t: float):
    """(delta h)_{s theta t} = h_st - h_s,theta - h_theta,t."""
    if not (s <= theta <= t):
        raise OrderingError(f"need s <= theta <= t, got ({s}, {theta}, {t})")
    return h(s, t) - h(s, theta) - h(theta, t)


def _sup_norm(v) -> float:
    return float(np.max(np.abs(v))) if np.ndim(v) else abs(float(v))


def holder_seminorm(h, partition: TimePartition, alpha: float, norm=_sup_norm) -> float:
    """max over grid pairs s < t of |h_st| / (t - s)^alpha."""
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    if partition is None or len(partition) < 2:
        raise ConfigurationError("empty partition")
    pts = partition.points
    best = 0.0
    for i in range(pts.size):
        for j in range(i + 1, pts.size):
            best = max(best, norm(h(pts[i], pts[j])) / (pts[j] - pts[i]) ** alpha)
    return best


def holder_seminorm_path(values: np.ndarray, times: np.ndarray, alpha: float) -> float:
    """Vectorized seminorm of the increments of a path sampled at `times`.

    Extra trailing axes of `values` are reduced with the sup norm.
    """
    v = np.asarray(values, float)
    v = v.reshape(v.shape[0], -1)
    t = np.asarray(times, float)
    best = 0.0
    for i in range(t.size - 1):
        inc = np.max(np.abs(v[i + 1:] - v[i]), axis=1)
        best = max(best, float(np.max(inc / (t[i + 1:] - t[i]) ** alpha)))
    return best


# -- finite-dimensional rough paths -------------------------------------------

@dataclass(frozen=True)
class HolderMeta:
    alpha: float
    seminorms: dict


@dataclass(frozen=True, eq=False)
class FiniteRoughPath:
    """Level-2 geometric rough path on a partition.

    Only the Levy area is stored, as a cumulative area from 0 per node; the
    symmetric part of the second level is always 1/2 Z x Z. `overrides` are
    additive corrections on single pairs (used to build deliberately broken
    paths for audits).
    """
    partition: TimePartition
    Z: np.ndarray
    area0: np.ndarray
    alpha: float = 0.5
    overrides: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.Z.shape[1]

    def increment(self, i, j):
        return self.Z[j] - self.Z[i]

    def area(self, i, j):
        """Levy area on pairs; i, j may be index arrays of equal shape."""
        i = np.asarray(i)
        j = np.asarray(j)
        z0i = self.Z[i] - self.Z[0]
        zij = self.Z[j] - self.Z[i]
        outer = z0i[..., :, None] * zij[..., None, :]
        A = self.area0[j] - self.area0[i] - 0.5 * (outer - np.swapaxes(outer, -1, -2))
        if self.overrides:
            A = np.array(A, copy=True)
            if A.ndim == 2:
                A = A + self.overrides.get((int(i), int(j)), 0.0)
            else:
                flat_i, flat_j = i.reshape(-1), j.reshape(-1)
                Af = A.reshape(-1, self.m, self.m)
                for p, key in enumerate(zip(flat_i.tolist(), flat_j.tolist())):
                    if key in self.overrides:
                        Af[p] += self.overrides[key]
                A = Af.reshape(A.shape)
        return A

    def second_level(self, i, j):
        """z^{mu nu}_ij = int Z^mu_{s r} dZ^nu_r."""
        zij = self.increment(i, j)
        return 0.5 * zij[..., :, None] * zij[..., None, :] + self.area(i, j)

    def perturb_area(self, i: int, j: int, amount: float, mu: int = 0, nu: int = 1) -> "FiniteRoughPath":
        if self.m < 2:
            raise ConfigurationError("area perturbation needs m >= 2")
        d = np.zeros((self.m, self.m))
        d[mu, nu] += amount
        d[nu, mu] -= amount
        ov = dict(self.overrides)
        ov[(i, j)] = ov.get((i, j), 0.0) + d
        return FiniteRoughPath(self.partition, self.Z, self.area0, self.alpha, ov)

    def reversed(self) -> "FiniteRoughPath":
        """Lift of t -> Z_{T-t}; pair overrides are mapped with a sign flip."""
        out = pl_lift(self.Z[::-1].copy(), self.partition, self.alpha)
        n = len(self.partition) - 1
        if self.overrides:
            ov = {(n - j, n - i): -d for (i, j), d in self.overrides.items()}
            out = FiniteRoughPath(out.partition, out.Z, out.area0, out.alpha, ov)
        return out

    def chen_residual(self) -> float:
        """max over grid triples of |delta z_{s theta t} - Z_{s theta} x Z_{theta t}|."""
        n = len(self.partition)
        I, J = np.triu_indices(n, 1)
        table = np.zeros((n, n, self.m, self.m))
        table[I, J] = self.second_level(I, J)
        worst = 0.0
        for s in range(n - 2):
            th = np.arange(s + 1, n)
            zst = table[s]                      # (t, m, m)
            zsth = table[s, th]                 # (theta, m, m)
            zth_t = table[th]                   # (theta, t, m, m)
            Zsth = self.Z[th] - self.Z[s]
            Zth_t = self.Z[None, :] - self.Z[th][:, None]
            rhs = Zsth[:, None, :, None] * Zth_t[:, :, None, :]
            res = zst[None] - zsth[:, None] - zth_t - rhs
            mask = np.arange(n)[None, :] > th[:, None]
            if mask.any():
                worst = max(worst, float(np.max(np.abs(res[mask]))))
        return worst

    def holder_meta(self) -> HolderMeta:
        pts = self.partition.points
        n = pts.size
        lvl1 = holder_seminorm_path(self.Z, pts, self.alpha)
        I, J = np.triu_indices(n, 1)
        z2 = np.max(np.abs(self.second_level(I, J)).reshape(I.size, -1), axis=1)
        lvl2 = float(np.max(z2 / (pts[J] - pts[I]) ** (2 * self.alpha)))
        return HolderMeta(self.alpha, {"level1": lvl1, "level2": lvl2})

    def to_csv_rows(self):
        """Rows for the path file and the area file."""
        pts = self.partition.points
        zrows = [[float(pts[k])] + [float(v) for v in self.Z[k]] for k in range(pts.size)]
        iu = np.triu_indices(self.m, 1)
        arows = []
        for i, j in self.partition.pairs():
            A = self.area(i, j)
            arows.append([float(pts[i]), float(pts[j])] + [float(v) for v in A[iu]])
        return zrows, arows


def pl_lift(Z, partition: TimePartition, alpha: float = 0.5) -> FiniteRoughPath:
    """Canonical lift of the piecewise-linear interpolation of Z.

    Straight segments carry no area, so Chen's relation gives the cumulative
    area in closed form.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] < 2:
        raise ConfigurationError("pl_lift needs at least two points")
    if Z.shape[0] != len(partition):
        raise ConfigurationError("path length does not match partition")
    if alpha <= 1.0 / 3.0:
        raise ParameterError("alpha must exceed 1/3")
    z0 = Z[:-1] - Z[0]
    dZ = np.diff(Z, axis=0)
    outer = z0[:, :, None] * dZ[:, None, :]
    seg = 0.5 * (outer - np.swapaxes(outer, 1, 2))
    area0 = np.concatenate([np.zeros((1, Z.shape[1], Z.shape[1])), np.cumsum(seg, axis=0)])
    return FiniteRoughPath(partition, Z, area0, alpha)


# -- fractional Brownian motion -----------------------------------------------

def fbm_covariance(times, H: float) -> np.ndarray:
    s = np.asarray(times, float)[:, None]
    t = np.asarray(times, float)[None, :]
    return 0.5 * (s ** (2 * H) + t ** (2 * H) - np.abs(t - s) ** (2 * H))


@lru_cache(maxsize=32)
def _fbm_factor(H: float, n: int, T: float):
    times = np.arange(1, n + 1) * (T / n)
    C = fbm_covariance(times, H)
    try:
        return np.linalg.cholesky(C), 0.0
    except np.linalg.LinAlgError:
        jitter = 1e-12
        log.info("fBm covariance not positive definite (H=%s, n=%s); retrying with jitter %g", H, n, jitter)
        try:
            return np.linalg.cholesky(C + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError as exc:
            raise FactorizationError(
                f"Cholesky failed for H={H}, n={n}, also after jitter {jitter}") from exc


def fbm_sample(H: float, n: int, seed: int, T: float = 1.0) -> np.ndarray:
    """fBm values at k T / n, k = 0..n (value 0 at the origin)."""
    if not 0.0 < H < 1.0:
        raise ParameterError(f"Hurst index must lie in (0, 1), got {H}")
    if n < 1 or n > 4096:
        raise ParameterError("n must lie in 1..4096 for the dense factorization")
    L, _ = _fbm_factor(float(H), int(n), float(T))
    rng = np.random.default_rng(seed)
    return np.concatenate([[0.0], L @ rng.standard_normal(n)])
