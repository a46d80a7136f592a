"""Unbounded rough drivers as periodic stencil operators.

A driver is built from an operator path Q_t U = sum_a F^a_t (S_a U_{c(a)}) + offsets,
where F^a are sheet components and S_a fixed stencils (fourth-order d/dx or
the identity). Level one is the increment of this path and level two its
iterated integral

    Q^2_st U = int_s^t dQ~_r Q^1_{s r}(U),

which only involves the two-point brackets <F^a(x), F^b(x + o h)>_st. The
forward Chen relation delta Q^2 = Q~^1 o Q^1 then holds to round-off on the
grid, not merely up to the truncation error.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PreconditionError, UnsupportedError
from .grid_ops import D1_4, PeriodicGrid, negative_sobolev2, shift
from .sheet import EnhancementTriad


# -- stencil algebra ----------------------------------------------------------

class Stencil:
    """(S f)(x) = sum_o c_o(x) f(x + o h); coefficients broadcast over batch axes.

    Opposite offsets are summed pairwise first, so antisymmetric stencils
    annihilate constants exactly.
    """

    __slots__ = ("coefs",)

    def __init__(self, coefs: dict | None = None):
        self.coefs = dict(coefs or {})

    @classmethod
    def const(cls, weights: dict, scale: float = 1.0):
        return cls({o: w / scale for o, w in weights.items()})

    def apply(self, f):
        out = None
        done = set()
        for o in sorted(self.coefs, key=lambda k: (abs(k), k)):
            if o in done:
                continue
            term = self.coefs[o] * shift(f, o)
            if -o in self.coefs and o != 0:
                term = self.coefs[-o] * shift(f, -o) + term
                done.add(-o)
            done.add(o)
            out = term if out is None else out + term
        if out is None:
            return np.zeros_like(f, dtype=float)
        return out

    def __add__(self, other: "Stencil") -> "Stencil":
        out = dict(self.coefs)
        for o, c in other.coefs.items():
            out[o] = out[o] + c if o in out else c
        return Stencil(out)

    def scale(self, a) -> "Stencil":
        return Stencil({o: a * c for o, c in self.coefs.items()})

    def compose(self, other: "Stencil") -> "Stencil":
        """self o other as a single stencil."""
        out = {}
        for o, c in self.coefs.items():
            for p, d in other.coefs.items():
                term = c * (shift(d, o) if np.ndim(d) else d)
                out[o + p] = out[o + p] + term if o + p in out else term
        return Stencil(out)

    def transpose(self) -> "Stencil":
        """Adjoint for the grid pairing sum_x f g h."""
        return Stencil({-o: (shift(c, -o) if np.ndim(c) else c) for o, c in self.coefs.items()})

    def take(self, index) -> "Stencil":
        return Stencil({o: (c[index] if np.ndim(c) > 1 else c) for o, c in self.coefs.items()})

    def to_dense(self, n: int) -> np.ndarray:
        M = np.zeros((n, n))
        rows = np.arange(n)
        for o, c in self.coefs.items():
            M[rows, (rows + o) % n] += np.broadcast_to(c, (n,))
        return M


class Op:
    """Sum of stencil chains; a chain (S1, S2, ...) acts as S1 o S2 o ..."""

    __slots__ = ("chains",)

    def __init__(self, chains=()):
        self.chains = [tuple(c) for c in chains]

    @classmethod
    def of(cls, *stencils):
        return cls([stencils])

    def apply(self, f):
        out = None
        for chain in self.chains:
            g = f
            for S in reversed(chain):
                g = S.apply(g)
            out = g if out is None else out + g
        return np.zeros_like(f, dtype=float) if out is None else out

    def __add__(self, other: "Op") -> "Op":
        return Op(self.chains + other.chains)

    def scale(self, a) -> "Op":
        return Op([(c[0].scale(a),) + c[1:] for c in self.chains])

    def compose(self, other: "Op") -> "Op":
        return Op([a + b for a in self.chains for b in other.chains])

    def transpose(self) -> "Op":
        return Op([tuple(S.transpose() for S in reversed(c)) for c in self.chains])

    def take(self, index) -> "Op":
        return Op([tuple(S.take(index) for S in c) for c in self.chains])

    def to_dense(self, n: int) -> np.ndarray:
        M = np.zeros((n, n))
        for c in self.chains:
            P = np.eye(n)
            for S in c:
                P = P @ S.to_dense(n)
            M += P
        return M


class BlockAffine:
    """Affine map on nb stacked fields: (A U)_r = sum_c Op_rc U_c + b_r."""

    def __init__(self, nb: int, lin: dict | None = None, off: dict | None = None):
        self.nb = nb
        self.lin = dict(lin or {})
        self.off = dict(off or {})

    def linear(self, U):
        """Apply the linear part; U has the block axis first."""
        U = np.asarray(U, float)
        out = [None] * self.nb
        for (r, c), A in self.lin.items():
            term = A.apply(U[c])
            out[r] = term if out[r] is None else out[r] + term
        shapes = [o.shape for o in out if o is not None] + [U.shape[1:]]
        shape = np.broadcast_shapes(*shapes)
        return np.stack([np.broadcast_to(o, shape) if o is not None else np.zeros(shape) for o in out])

    def __call__(self, U):
        out = self.linear(U)
        for r, b in self.off.items():
            out[r] = out[r] + b
        return out

    def transpose(self) -> "BlockAffine":
        if self.off:
            raise UnsupportedError("adjoint of an affine offset is not defined here")
        return BlockAffine(self.nb, {(c, r): A.transpose() for (r, c), A in self.lin.items()})

    def scale(self, a) -> "BlockAffine":
        return BlockAffine(self.nb, {k: A.scale(a) for k, A in self.lin.items()},
                           {k: a * b for k, b in self.off.items()})

    def compose_linear(self, other: "BlockAffine") -> "BlockAffine":
        """Linear part of self composed with the full affine map other."""
        lin, off = {}, {}
        for (r, k), A in self.lin.items():
            for (k2, c), B in other.lin.items():
                if k2 != k:
                    continue
                P = A.compose(B)
                lin[(r, c)] = lin[(r, c)] + P if (r, c) in lin else P
            if k in other.off:
                b = A.apply(other.off[k])
                off[r] = off[r] + b if r in off else b
        return BlockAffine(self.nb, lin, off)

    def take(self, index) -> "BlockAffine":
        return BlockAffine(self.nb, {k: A.take(index) for k, A in self.lin.items()},
                           {k: (b[index] if np.ndim(b) > 1 else b) for k, b in self.off.items()})

    def to_dense(self, n: int) -> np.ndarray:
        M = np.zeros((self.nb * n, self.nb * n))
        for (r, c), A in self.lin.items():
            M[r * n:(r + 1) * n, c * n:(c + 1) * n] += A.to_dense(n)
        return M


# -- sheet bundles ------------------------------------------------------------

class FieldBank:
    """Named first-level components sharing one lift, with memoized two-point brackets."""

    def __init__(self, lift, grid: PeriodicGrid, fields: dict):
        self.lift = lift
        self.grid = grid
        self.fields = {k: v for k, v in fields.items() if v is not None}
        self._cache = {}
        self._lock = threading.Lock()

    @property
    def partition(self):
        return self.lift.partition

    def increment(self, name, i, j):
        if name not in self.fields:
            return np.zeros(np.shape(i) + (self.grid.n,))
        return self.lift.increment(self.fields[name], i, j)

    def _shifted(self, name, o):
        key = ("shift", name, o)
        with self._lock:
            hit = self._cache.get(key)
        if hit is None:
            hit = shift(self.fields[name], o)
            with self._lock:
                self._cache[key] = hit
        return hit

    def two_point(self, a, b, o, i, j):
        if a not in self.fields or b not in self.fields:
            return np.zeros(np.shape(i) + (self.grid.n,))
        scalar = np.ndim(i) == 0
        key = (a, b, o, int(i), int(j)) if scalar else None
        if scalar:
            with self._lock:
                hit = self._cache.get(key)
            if hit is not None:
                return hit
        out = self.lift.bracket(self.fields[a], self._shifted(b, o), i, j)
        if scalar:
            with self._lock:
                self._cache[key] = out
        return out


# -- drivers ------------------------------------------------------------------

@dataclass
class Term:
    row: int
    col: int
    name: str
    stencil: dict      # constant weights by offset


class Driver:
    """Common interface: level1(i, j), level2(i, j) as BlockAffine maps on index pairs."""
    flavor = "abstract"
    nb = 1

    def __init__(self, partition, grid, alpha):
        self.partition = partition
        self.grid = grid
        self.alpha = alpha
        self._memo = {}
        self._lock = threading.Lock()

    def _memoized(self, key, fn):
        with self._lock:
            hit = self._memo.get(key)
        if hit is None:
            hit = fn()
            with self._lock:
                if len(self._memo) > 4096:
                    self._memo.clear()
                self._memo[key] = hit
        return hit

    def level1(self, i, j) -> BlockAffine:
        if np.ndim(i) == 0:
            return self._memoized((1, int(i), int(j)), lambda: self._level1(i, j))
        return self._level1(i, j)

    def level2(self, i, j) -> BlockAffine:
        if np.ndim(i) == 0:
            return self._memoized((2, int(i), int(j)), lambda: self._level2(i, j))
        return self._level2(i, j)

    def _wrap(self, u):
        u = np.asarray(u, float)
        return u[None] if self.nb == 1 else u

    def _unwrap(self, U):
        return U[0] if self.nb == 1 else U

    def apply1(self, i, j, u):
        return self._unwrap(self.level1(i, j)(self._wrap(u)))

    def apply2(self, i, j, u):
        return self._unwrap(self.level2(i, j)(self._wrap(u)))

    def increment(self, i, j, u, g=None):
        """Q^1_ij(u) + Q^2_ij(g), with g = u by default."""
        g = u if g is None else g
        return self.apply1(i, j, u) + self.apply2(i, j, g)

    @property
    def backward(self) -> bool:
        return False


class PathDriver(Driver):
    """Forward driver generated by an operator path over a FieldBank."""

    def __init__(self, bank: FieldBank, terms, offsets, nb=1, alpha=0.5, flavor="affine",
                 zero_level2=False, provenance=None):
        super().__init__(bank.partition, bank.grid, alpha)
        self.bank = bank
        self.terms = [t for t in terms if t.name in bank.fields]
        self.offsets = [(r, n) for r, n in offsets if n in bank.fields]
        self.nb = nb
        self.flavor = flavor
        self.zero_level2 = zero_level2
        self.provenance = provenance

    def _S(self, weights):
        h = self.grid.h
        return weights, (h if weights is not IDENTITY else 1.0)

    def _level1(self, i, j):
        lin, off = {}, {}
        for t in self.terms:
            F = self.bank.increment(t.name, i, j)
            w, sc = self._S(t.stencil)
            S = Op.of(Stencil({o: (wo / sc) * F for o, wo in w.items()}))
            key = (t.row, t.col)
            lin[key] = lin[key] + S if key in lin else S
        for r, name in self.offsets:
            F = self.bank.increment(name, i, j)
            off[r] = off[r] + F if r in off else F
        return BlockAffine(self.nb, lin, off)

    def _level2(self, i, j):
        lin, off = {}, {}
        if self.zero_level2:
            return BlockAffine(self.nb, lin, off)
        for a in self.terms:
            wa, sa = self._S(a.stencil)
            for b in self.terms:
                if b.row != a.col:
                    continue
                wb, sb = self._S(b.stencil)
                outer = Stencil({o: (wo / sa) * self.bank.two_point(a.name, b.name, o, i, j)
                                 for o, wo in wa.items()})
                inner = Stencil.const(wb, sb)
                P = Op.of(outer) if wb is IDENTITY else Op.of(outer, inner)
                key = (a.row, b.col)
                lin[key] = lin[key] + P if key in lin else P
            for r, name in self.offsets:
                if r != a.col:
                    continue
                vec = sum((wo / sa) * self.bank.two_point(a.name, name, o, i, j) for o, wo in wa.items())
                off[a.row] = off[a.row] + vec if a.row in off else vec
        return BlockAffine(self.nb, lin, off)


IDENTITY = {0: 1.0}
DERIV = D1_4


class BackwardDriver(Driver):
    """P^i = -(B^i)^*, transposes taken for the grid pairing."""
    flavor = "backward"

    def __init__(self, B: Driver):
        if B.flavor != "plain":
            raise UnsupportedError("backward drivers are built from plain (linear) drivers")
        super().__init__(B.partition, B.grid, B.alpha)
        self.B = B
        self.nb = B.nb

    def _level1(self, i, j):
        return self.B._level1(i, j).transpose().scale(-1.0)

    def _level2(self, i, j):
        return self.B._level2(i, j).transpose().scale(-1.0)

    @property
    def backward(self) -> bool:
        return True


class ReflectedDriver(Driver):
    """Forward driver Q_st = -P_{T-t, T-s} obtained from a backward one (or vice versa)."""

    def __init__(self, P: Driver):
        super().__init__(P.partition, P.grid, P.alpha)
        self.P = P
        self.nb = P.nb
        self.flavor = "affine" if P.backward else "backward"
        self.N = len(P.partition) - 1

    def _level1(self, i, j):
        return self.P._level1(self.N - np.asarray(j), self.N - np.asarray(i)).scale(-1.0) \
            if np.ndim(i) else self.P.level1(self.N - j, self.N - i).scale(-1.0)

    def _level2(self, i, j):
        return self.P._level2(self.N - np.asarray(j), self.N - np.asarray(i)).scale(-1.0) \
            if np.ndim(i) else self.P.level2(self.N - j, self.N - i).scale(-1.0)

    @property
    def backward(self) -> bool:
        return not self.P.backward


class ExampleConventionDriver(Driver):
    """Plain driver whose level two is X^2 d^2 + L d, i.e. without the 1/2 (audit comparison only)."""
    flavor = "plain"

    def __init__(self, B: PathDriver):
        super().__init__(B.partition, B.grid, B.alpha)
        self.B = B

    def _level1(self, i, j):
        return self.B._level1(i, j)

    def _level2(self, i, j):
        L2 = self.B._level2(i, j)
        L1 = self.B._level1(i, j)
        extra = L1.compose_linear(L1).scale(0.5)
        return BlockAffine(1, {(0, 0): L2.lin.get((0, 0), Op()) + extra.lin[(0, 0)]})


# -- constructors -------------------------------------------------------------

def _bank(triad: EnhancementTriad, **extra):
    fields = {"X": triad.X, "Y0": triad.Y0, "Ym1": triad.Ym1}
    fields.update(extra)
    return FieldBank(triad.lift, triad.grid, fields)


def build_B(sheet: EnhancementTriad, zero_level2: bool = False, convention: str = "half") -> Driver:
    """B^1 = X d, B^2 = iterated integral (= 1/2 X X d^2 + L d in the continuum)."""
    if not sheet.pure_transport:
        raise ConfigurationError("sheet carries Y0/Ym1 slots; use build_Q")
    D = PathDriver(_bank(sheet), [Term(0, 0, "X", DERIV)], [], nb=1, alpha=sheet.alpha, flavor="plain",
                   zero_level2=zero_level2, provenance=sheet)
    if convention == "half":
        return D
    if convention == "example":
        return ExampleConventionDriver(D)
    raise ConfigurationError(f"unknown convention {convention!r}")


def build_Q(triad: EnhancementTriad, zero_level2: bool = False) -> Driver:
    """Affine driver Q^1 z = (X d + Y0) z + Ym1 and its iterated integral."""
    needed = {"L"} | ({"L0"} if triad.has("Y0") else set()) | ({"aff"} if triad.has("Ym1") else set())
    missing = sorted(needed & set(triad.zeroed))
    if missing:
        raise ConfigurationError(f"triad lacks bracket entries: {', '.join(missing)}")
    terms = [Term(0, 0, "X", DERIV), Term(0, 0, "Y0", IDENTITY)]
    return PathDriver(_bank(triad), terms, [(0, "Ym1")], nb=1, alpha=triad.alpha,
                      flavor="affine", zero_level2=zero_level2, provenance=triad)


def build_P_backward(B: Driver) -> Driver:
    return BackwardDriver(B)


def reflect(D: Driver) -> Driver:
    return ReflectedDriver(D)


def _same_lift(a, b) -> bool:
    if a is b:
        return True
    if a.kind != b.kind or len(a.partition) != len(b.partition):
        return False
    if not np.array_equal(a.partition.points, b.partition.points):
        return False
    if a.kind == "path":
        return np.array_equal(a.rp.Z, b.rp.Z) and np.array_equal(a.rp.area0, b.rp.area0) \
            and not a.rp.overrides and not b.rp.overrides
    return True


def build_product_driver(Yt: EnhancementTriad, Zt: EnhancementTriad) -> Driver:
    """3x3 driver on U = (u, v, uv) for two affine problems sharing their transport part."""
    if not _same_lift(Yt.lift, Zt.lift) or Yt.grid != Zt.grid or not np.array_equal(Yt.X, Zt.X):
        raise PreconditionError("product driver needs a shared transport part (no joint lift otherwise)")
    bank = FieldBank(Yt.lift, Yt.grid, {"X": Yt.X, "Y0": Yt.Y0, "Ym1": Yt.Ym1, "Z0": Zt.Y0, "Zm1": Zt.Ym1})
    terms = [
        Term(0, 0, "X", DERIV), Term(0, 0, "Y0", IDENTITY),
        Term(1, 1, "X", DERIV), Term(1, 1, "Z0", IDENTITY),
        Term(2, 2, "X", DERIV), Term(2, 2, "Y0", IDENTITY), Term(2, 2, "Z0", IDENTITY),
        Term(2, 0, "Zm1", IDENTITY), Term(2, 1, "Ym1", IDENTITY),
    ]
    return PathDriver(bank, terms, [(0, "Ym1"), (1, "Zm1")], nb=3, alpha=min(Yt.alpha, Zt.alpha),
                      flavor="product3", provenance=(Yt, Zt))


# -- bracket ------------------------------------------------------------------

@dataclass
class Bracket:
    """[B]_st = B^2 - 1/2 (B^1)^2 for a plain driver, a first-order operator."""
    B: Driver

    def coefficient(self, i, j):
        """Vector-field coefficient: L - 1/2 X dX (exact for the grid operators)."""
        tri = self.B.provenance
        X = tri.increment("X", i, j)
        from .grid_ops import dx
        return tri.bracket("L", i, j) - 0.5 * X * dx(X, self.B.grid, order=4)

    def operator(self, i, j) -> BlockAffine:
        L1 = self.B.level1(i, j)
        L2 = self.B.level2(i, j)
        sq = L1.compose_linear(L1).scale(-0.5)
        lin = {k: L2.lin.get(k, Op()) + sq.lin.get(k, Op()) for k in set(L2.lin) | set(sq.lin)}
        return BlockAffine(1, lin)

    def apply(self, i, j, f):
        return self.operator(i, j)(np.asarray(f, float)[None])[0]

    def divergence(self, i, j):
        from .grid_ops import dx
        return dx(self.coefficient(i, j), self.B.grid, order=4)


def bracket(B: Driver) -> Bracket:
    if B.flavor != "plain" or not isinstance(getattr(B, "provenance", None), EnhancementTriad):
        raise ConfigurationError("bracket needs a plain driver with its triad")
    return Bracket(B)


# -- audits -------------------------------------------------------------------

@dataclass
class DriverChenReport:
    flavor: str
    max_residual: float
    worst: tuple | None
    rows: list = field(default_factory=list)


def _upper_tables(D: Driver, idx, p):
    """T1[a, b], T2[a, b]: levels applied to probe p on pairs (idx[a], idx[b]), a < b."""
    n = idx.size
    I, J = np.triu_indices(n, 1)
    L1 = D._level1(idx[I], idx[J])
    L2 = D._level2(idx[I], idx[J])
    P = D._wrap(p)
    T1 = np.zeros((n, n, D.nb, D.grid.n))
    T2 = np.zeros((n, n, D.nb, D.grid.n))
    T1[I, J] = np.moveaxis(L1(P[:, None, :]), 0, 1)
    T2[I, J] = np.moveaxis(L2(P[:, None, :]), 0, 1)
    return L1, T1, T2, I, J


def _pair_lookup(n, I, J):
    lut = -np.ones((n, n), dtype=int)
    lut[I, J] = np.arange(I.size)
    return lut


def chen_residual_driver(D: Driver, probes, indices=None, keep_rows: bool = False) -> DriverChenReport:
    """Chen defect of the driver's flavor on every triple, in the W^{-2,2} norm.

    forward (plain/affine/product3): delta Q^2_{s th t} U - Q~^1_{th t} Q^1_{s th} U
    backward: delta P^2_{s th t} U + P~^1_{s th} P^1_{th t} U
    """
    idx = np.arange(len(D.partition)) if indices is None else np.asarray(indices)
    n = idx.size
    worst, where, rows = 0.0, None, []
    for pid, p in enumerate(probes):
        L1, T1, T2, I, J = _upper_tables(D, idx, p)
        lut = _pair_lookup(n, I, J)
        lin1 = BlockAffine(L1.nb, L1.lin)          # linear part, batched over pairs
        for s in range(n - 2):
            chunks, spans = [], []
            for th in range(s + 1, n - 1):
                ts = np.arange(th + 1, n)
                lhs = T2[s, ts] - T2[s, th][None] - T2[th, ts]
                if not D.backward:
                    g = T1[s, th]                     # Q^1_{s th} p
                    op = lin1.take(lut[th, ts])
                    rhs = np.moveaxis(op(g[:, None, :]), 0, 1)
                    chunks.append(lhs - rhs)
                else:
                    g = T1[th, ts]                    # P^1_{th t} p, one per t
                    op = lin1.take(lut[s, th])
                    rhs = np.moveaxis(op(np.moveaxis(g, 0, 1)), 0, 1)
                    chunks.append(lhs + rhs)
                spans.append((th, ts))
            # one batched norm evaluation per s
            nrm_all = np.max(negative_sobolev2(np.concatenate(chunks), D.grid, 2), axis=-1)
            off = 0
            for th, ts in spans:
                nrm = nrm_all[off:off + ts.size]
                off += ts.size
                k = int(np.argmax(nrm))
                if nrm[k] >= worst:
                    worst, where = float(nrm[k]), (int(idx[s]), int(idx[th]), int(idx[ts[k]]), pid)
                if keep_rows:
                    rows.extend((D.flavor, "chen", int(idx[s]), int(idx[th]), int(idx[t]), pid, float(v))
                                for t, v in zip(ts, nrm))
    return DriverChenReport(D.flavor, worst, where, rows)


def adjoint_residual(B: Driver, P: Driver, probes_f, probes_g, pairs) -> float:
    """max |<B^k f, g> + <f, P^k g>| over the given pairs and probes (k = 1, 2)."""
    h = B.grid.h
    worst = 0.0
    for i, j in pairs:
        for f in probes_f:
            for g in probes_g:
                for k in (1, 2):
                    Bf = B.apply1(i, j, f) if k == 1 else B.apply2(i, j, f)
                    Pg = P.apply1(i, j, g) if k == 1 else P.apply2(i, j, g)
                    worst = max(worst, abs(np.sum(Bf * g) * h + np.sum(f * Pg) * h))
    return worst


def operator_holder_audit(D: Driver, probes, level: int, indices=None) -> float:
    """[Q]_alpha estimate: max |Q^level_st p|_{W^{-level,2}} / ((t-s)^{level alpha} |p|_{L^2})."""
    idx = np.arange(len(D.partition)) if indices is None else np.asarray(indices)
    pts = D.partition.points
    I, J = np.triu_indices(idx.size, 1)
    op = D._level1(idx[I], idx[J]) if level == 1 else D._level2(idx[I], idx[J])
    dt = pts[idx[J]] - pts[idx[I]]
    best = 0.0
    for p in probes:
        lp = np.sqrt(np.sum(np.asarray(p) ** 2) * D.grid.h)
        Lp = op.linear(D._wrap(p)[:, None, :])
        nrm = np.max(negative_sobolev2(Lp, D.grid, level), axis=0)
        best = max(best, float(np.max(nrm / (dt ** (level * D.alpha) * lp))))
    return best


def trig_probes(grid: PeriodicGrid, degree: int = 8, nb: int = 1, seed: int = 0, count: int = 3):
    """Low-frequency trigonometric probe fields."""
    rng = np.random.default_rng(seed)
    x = grid.x
    out = []
    for _ in range(count):
        fields = []
        for _b in range(nb):
            a = rng.normal(size=degree + 1) / (1 + np.arange(degree + 1))
            b = rng.normal(size=degree + 1) / (1 + np.arange(degree + 1))
            k = np.arange(degree + 1)[:, None]
            fields.append(np.sum(a[:, None] * np.cos(k * x) + b[:, None] * np.sin(k * x), axis=0))
        out.append(fields[0] if nb == 1 else np.stack(fields))
    return out
