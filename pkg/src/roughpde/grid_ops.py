"""Periodic grids on [0, 2pi)^d, finite differences and grid norms."""
from __future__ import annotations

import itertools
from functools import lru_cache
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, PreconditionError, UnsupportedError


@dataclass(frozen=True)
class PeriodicGrid:
    n: int
    d: int = 1

    def __post_init__(self):
        if self.d not in (1, 2):
            raise UnsupportedError("grids support d = 1 or 2")
        if self.n < 8 or self.n % 2:
            raise ConfigurationError("need an even number of nodes n >= 8")

    @property
    def h(self) -> float:
        return 2 * np.pi / self.n

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    @property
    def shape(self):
        return (self.n,) * self.d

    def mesh(self):
        return np.meshgrid(*([self.x] * self.d), indexing="ij")

    @property
    def cell(self) -> float:
        return self.h**self.d


# weights for centered first and second derivatives, keyed by offset
D1_2 = {-1: -0.5, 1: 0.5}
D1_4 = {-2: 1 / 12, -1: -8 / 12, 1: 8 / 12, 2: -1 / 12}
D2_2 = {-1: 1.0, 0: -2.0, 1: 1.0}


def shift(f, o, axis=-1):
    """(S_o f)(x) = f(x + o h) with periodic wraparound."""
    f = np.asarray(f)
    n = f.shape[axis]
    o %= n
    if o == 0:
        return f
    if axis in (-1, f.ndim - 1):
        return np.concatenate((f[..., o:], f[..., :o]), axis=-1)
    return np.roll(f, -o, axis=axis)


def _stencil(f, weights, scale, axis=-1):
    out = np.zeros_like(f, dtype=float)
    for o, w in weights.items():
        out = out + w * shift(f, o, axis)
    return out / scale


def dx(f, grid: PeriodicGrid, axis=-1, order=2):
    w = D1_2 if order == 2 else D1_4
    if order not in (2, 4):
        raise UnsupportedError("first derivative available at order 2 or 4")
    return _stencil(np.asarray(f, float), w, grid.h, axis)


def dxx(f, grid: PeriodicGrid, axis=-1):
    return _stencil(np.asarray(f, float), D2_2, grid.h**2, axis)


def fd_apply(f, op: str, grid: PeriodicGrid, axis: int = 0, axis2: int | None = None):
    """Second-order central differences of a grid field.

    op: "d" (d/dx_axis), "dd" (d^2/dx_axis dx_axis2), "div" (field with a
    leading component axis of length d) or "laplace".
    """
    f = np.asarray(f, float)
    sp = grid.shape
    if op == "div":
        if f.shape != (grid.d,) + sp:
            raise ConfigurationError(f"div needs shape {(grid.d,) + sp}, got {f.shape}")
        return sum(dx(f[i], grid, axis=i) for i in range(grid.d))
    if f.shape != sp:
        raise ConfigurationError(f"field shape {f.shape} does not match grid {sp}")
    if op == "d":
        return dx(f, grid, axis=axis)
    if op == "dd":
        a2 = axis if axis2 is None else axis2
        if a2 == axis:
            return dxx(f, grid, axis=axis)
        return dx(dx(f, grid, axis=axis), grid, axis=a2)
    if op == "laplace":
        return sum(dxx(f, grid, axis=i) for i in range(grid.d))
    raise ConfigurationError(f"unknown operator {op!r}")


def inner(f, g, grid: PeriodicGrid) -> float:
    return float(np.sum(np.asarray(f) * np.asarray(g)) * grid.cell)


def integrate(f, grid: PeriodicGrid, axis=None):
    """Rectangle rule over the spatial axes (the trailing d axes by default)."""
    f = np.asarray(f, float)
    if axis is None:
        axis = tuple(range(f.ndim - grid.d, f.ndim))
    return np.sum(f, axis=axis) * grid.cell


# -- norms --------------------------------------------------------------------

def _lp(f, grid, p, axes):
    a = np.abs(f)
    if np.isinf(p):
        return np.max(a, axis=axes)
    return (np.sum(a**p, axis=axes) * grid.cell) ** (1.0 / p)


def _derivatives(f, grid, k, order):
    """All mixed grid derivatives of total order <= k, spatial axes trailing."""
    nd = f.ndim
    axes = list(range(nd - grid.d, nd))
    out = [f]
    for r in range(1, k + 1):
        for combo in itertools.combinations_with_replacement(axes, r):
            g = f
            for ax in combo:
                g = dx(g, grid, axis=ax, order=order)
            out.append(g)
    return out


def negative_fourier_weights(grid: PeriodicGrid, k: int) -> np.ndarray:
    return _fourier_weights(grid.n, grid.d, k)


@lru_cache(maxsize=64)
def _fourier_weights(n: int, d: int, k: int) -> np.ndarray:
    xi = np.fft.fftfreq(n, d=1.0 / n)
    mesh = np.meshgrid(*([xi] * d), indexing="ij")
    w = (1.0 + sum(m**2 for m in mesh)) ** (-k)
    w.setflags(write=False)
    return w


def negative_sobolev2(f, grid: PeriodicGrid, k: int):
    """|f|_{W^{-k,2}} with Parseval-normalized Fourier coefficients.

    Leading axes of f are treated as a batch.
    """
    f = np.asarray(f, float)
    axes = tuple(range(f.ndim - grid.d, f.ndim))
    F = np.fft.fftn(f, axes=axes) * (grid.cell / np.sqrt((2 * np.pi) ** grid.d))
    w = negative_fourier_weights(grid, k)
    return np.sqrt(np.sum(w * np.abs(F) ** 2, axis=axes))


def _dictionary(grid: PeriodicGrid, degree: int = 16):
    x = grid.mesh()
    ranges = [range(-degree, degree + 1)] * grid.d
    out = []
    for xi in itertools.product(*ranges):
        if tuple(-v for v in xi) < xi:
            continue
        phase = sum(a * b for a, b in zip(xi, x))
        out.append(np.cos(phase))
        if any(xi):
            out.append(np.sin(phase))
    return out


@dataclass(frozen=True)
class NormReport:
    value: float
    space: str
    surrogate: bool


def norm_report(f, grid: PeriodicGrid, space: str = "L", p: float = 2, k: int = 0,
                order: int = 2) -> NormReport:
    """Grid norms.

    space "L": L^p; "W": W^{k,p} (derivatives by central differences of the
    given order); "W-": W^{-k,p}. For p = 2 the negative norm is the Fourier
    multiplier (1+|xi|^2)^{-k/2}; for other p it is the dual norm over a fixed
    trigonometric dictionary, flagged as a surrogate.
    """
    f = np.asarray(f, float)
    if f.shape != grid.shape:
        raise ConfigurationError(f"field shape {f.shape} does not match grid {grid.shape}")
    if not (1 <= p <= np.inf):
        raise UnsupportedError(f"p = {p} outside [1, inf]")
    if not (0 <= k <= 3):
        raise UnsupportedError(f"k = {k} outside 0..3")
    axes = tuple(range(f.ndim))
    if space == "L":
        return NormReport(float(_lp(f, grid, p, axes)), f"L^{p}", False)
    if space == "W":
        parts = [_lp(g, grid, p, axes) for g in _derivatives(f, grid, k, order)]
        val = max(parts) if np.isinf(p) else sum(q**p for q in parts) ** (1.0 / p)
        return NormReport(float(val), f"W^{k},{p}", False)
    if space == "W-":
        if p == 2:
            return NormReport(float(negative_sobolev2(f, grid, k)), f"W^-{k},2", False)
        q = np.inf if p == 1 else (1.0 if np.isinf(p) else p / (p - 1))
        best = 0.0
        for phi in _dictionary(grid):
            den = norm_report(phi, grid, "W", q, k, order).value
            best = max(best, abs(inner(f, phi, grid)) / den)
        return NormReport(best, f"W^-{k},{p}", True)
    raise UnsupportedError(f"unknown space {space!r}")


def norm(f, grid: PeriodicGrid, space: str = "L", p: float = 2, k: int = 0, order: int = 2) -> float:
    return norm_report(f, grid, space, p, k, order).value


def winf_norm(f, grid: PeriodicGrid, k: int, order: int = 4):
    """W^{k,inf} grid norm, batched over leading axes (sup over nodes and derivatives)."""
    f = np.asarray(f, float)
    axes = tuple(range(f.ndim - grid.d, f.ndim))
    return np.max([np.max(np.abs(g), axis=axes) for g in _derivatives(f, grid, k, order)], axis=0)


# -- interpolation diagnostics -----------------------------------------------

def interp_conditions(rho: float, sigma: float, d: int):
    """Return None if (rho, sigma) are admissible, else a description of the violation."""
    inv_r = 0.0 if np.isinf(rho) else 1.0 / rho
    inv_s = 0.0 if np.isinf(sigma) else 1.0 / sigma
    if d == 1:
        if not 4 <= rho <= np.inf:
            return "d=1 requires rho in [4, inf]"
        if not 2 <= sigma <= np.inf:
            return "d=1 requires sigma in [2, inf]"
    elif d == 2:
        if not 2 < rho <= np.inf:
            return "d=2 requires rho in (2, inf]"
        if not 2 <= sigma < np.inf:
            return "d=2 requires sigma in [2, inf)"
    if inv_r + d * inv_s / 2 < d / 4 - 1e-15:
        return "requires 1/rho + d/(2 sigma) >= d/4"
    return None


@dataclass(frozen=True)
class InterpReport:
    lhs: float
    rhs: float
    ratio: float


def _time_norm(vals, times, p):
    if np.isinf(p):
        return float(np.max(vals))
    return float(np.trapezoid(vals**p, times) ** (1.0 / p))


def interp_check(f, times, grid: PeriodicGrid, rho: float, sigma: float) -> InterpReport:
    """Ratio |f|_{L^rho(L^sigma)} / (|grad f|_{L^2 L^2} + |f|_{L^inf L^2}) for a trace f[t, x...]."""
    why = interp_conditions(rho, sigma, grid.d)
    if why:
        raise PreconditionError(why)
    f = np.asarray(f, float)
    times = np.asarray(times, float)
    axes = tuple(range(1, f.ndim))
    inner_sigma = _lp(f, grid, sigma, axes)
    lhs = _time_norm(inner_sigma, times, rho)
    grad2 = sum(np.sum(dx(f, grid, axis=a) ** 2, axis=axes) * grid.cell for a in axes)
    rhs = float(np.sqrt(np.trapezoid(grad2, times))) + float(np.max(_lp(f, grid, 2, axes)))
    ratio = 0.0 if rhs == 0 and lhs == 0 else lhs / rhs
    return InterpReport(lhs, rhs, ratio)


def gn_check(v, grid: PeriodicGrid) -> InterpReport:
    """Ratio |v|_4^4 / (|v|_2^3 |v'|_2 + |v|_2^4) on the 1D torus."""
    if grid.d != 1:
        raise UnsupportedError("gn_check is one-dimensional")
    v = np.asarray(v, float)
    l4 = np.sum(v**4) * grid.h
    l2 = np.sqrt(np.sum(v**2) * grid.h)
    d2 = np.sqrt(np.sum(dx(v, grid) ** 2) * grid.h)
    rhs = l2**3 * d2 + l2**4
    return InterpReport(float(l4), float(rhs), 0.0 if rhs == 0 else float(l4 / rhs))


# -- nonlinear diffusion ------------------------------------------------------

@dataclass(frozen=True)
class NonlinearDiffusion:
    """Scalar coefficient a(t, x, z) with partials a_x, a_z (d = 1)."""
    a: Callable
    lam: float
    a_x: Callable | None = None
    a_z: Callable | None = None

    def __call__(self, t, x, z):
        return self.a(t, x, z)

    def check_ellipticity(self, samples: int = 10_000, seed: int = 0, zrange: float = 10.0):
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, 1, samples)
        x = rng.uniform(0, 2 * np.pi, samples)
        z = rng.uniform(-zrange, zrange, samples)
        xi = rng.normal(size=samples)
        q = self.a(t, x, z) * xi**2
        ok = (self.lam * xi**2 <= q) & (q <= xi**2 / self.lam)
        return bool(np.all(ok)), int(np.sum(~ok))


def constant_diffusion(value: float = 1.0) -> NonlinearDiffusion:
    return NonlinearDiffusion(
        a=lambda t, x, z: value + 0.0 * np.asarray(z, float) + 0.0 * np.asarray(x, float),
        lam=min(value, 1.0 / value),
        a_x=lambda t, x, z: 0.0 * np.asarray(z, float),
        a_z=lambda t, x, z: 0.0 * np.asarray(z, float),
    )


# -- output helpers -----------------------------------------------------------

def write_pgm(path, field, header_rows=None):
    """8-bit binary PGM heatmap plus a sidecar CSV with the value range."""
    a = np.atleast_2d(np.asarray(field, float))
    lo, hi = float(np.min(a)), float(np.max(a))
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.round((a - lo) * scale).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())
    side = str(path) + ".csv"
    with open(side, "w") as fh:
        for row in header_rows or []:
            fh.write(row + "\n")
        fh.write("min,max\n")
        fh.write(f"{lo!r},{hi!r}\n")
    return lo, hi
