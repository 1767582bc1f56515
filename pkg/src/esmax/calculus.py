"""Discrete calculus on periodic grids.

Two derivative backends:

* "fd"      -- central finite differences (order 2, 4 or 6) built from np.roll,
               so mixed partials commute exactly and the vector identity
               curl curl = grad div - div grad holds to rounding;
* "spectral" -- exact differentiation of grid modes via the FFT, used by the
               residual oracles and for cross-checks.

Twisted variants shift every derivative by a constant complex wavevector q
(d -> d + i q), which is how ModulatedField envelopes are differentiated
without ever materializing the phase factor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import map_coordinates, spline_filter

from .fields import Grid, ScalarField, VectorField
from .util import worker_count

_FD_COEFFS = {
    2: ((1,), (0.5,)),
    4: ((1, 2), (2.0 / 3.0, -1.0 / 12.0)),
    6: ((1, 2, 3), (0.75, -0.15, 1.0 / 60.0)),
}

DEFAULT_FD_ORDER = 4


def fd_derivative(values: np.ndarray, axis: int, spacing: float,
                  order: int = DEFAULT_FD_ORDER) -> np.ndarray:
    """Central-difference first derivative along a grid axis (periodic)."""
    offsets, weights = _FD_COEFFS[order]
    out = np.zeros_like(values)
    ax = axis + (values.ndim - 3)
    for off, w in zip(offsets, weights):
        out += w * (np.roll(values, -off, axis=ax) - np.roll(values, off, axis=ax))
    return out / spacing


def spectral_derivative(values: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    k = grid.freq_axis()
    shape = [1] * values.ndim
    shape[axis + (values.ndim - 3)] = grid.n
    mult = 1j * k.reshape(shape)
    axes = tuple(range(values.ndim - 3, values.ndim))
    w = worker_count()
    return sfft.ifftn(sfft.fftn(values, axes=axes, workers=w) * mult, axes=axes, workers=w)


class Derivative:
    """First-derivative operator bound to a grid, backend and stencil order."""

    def __init__(self, grid: Grid, backend: str = "fd", order: int = DEFAULT_FD_ORDER):
        if backend not in ("fd", "spectral"):
            raise ValueError(f"unknown backend {backend!r}")
        if backend == "fd" and order not in _FD_COEFFS:
            raise ValueError(f"unsupported stencil order {order}")
        self.grid = grid
        self.backend = backend
        self.order = order

    def __call__(self, values: np.ndarray, axis: int) -> np.ndarray:
        if self.backend == "fd":
            return fd_derivative(values, axis, self.grid.spacing, self.order)
        return spectral_derivative(values, axis, self.grid)

    # -- plain vector calculus -------------------------------------------------

    def grad(self, v: np.ndarray) -> np.ndarray:
        return np.stack([self(v, ax) for ax in range(3)])

    def div(self, w: np.ndarray) -> np.ndarray:
        return self(w[0], 0) + self(w[1], 1) + self(w[2], 2)

    def curl(self, w: np.ndarray) -> np.ndarray:
        return np.stack([
            self(w[2], 1) - self(w[1], 2),
            self(w[0], 2) - self(w[2], 0),
            self(w[1], 0) - self(w[0], 1),
        ])

    def jacobian(self, w: np.ndarray) -> np.ndarray:
        """J[i, j] = d_j w_i, shape (3, 3, n, n, n)."""
        return np.stack([np.stack([self(w[i], j) for j in range(3)]) for i in range(3)])

    def laplacian(self, v: np.ndarray) -> np.ndarray:
        """Iterated first derivatives, consistent with grad/div composition."""
        return sum(self(self(v, ax), ax) for ax in range(3))

    # -- twisted variants (derivative shifted by i*q) ---------------------------

    def tgrad(self, v: np.ndarray, q: np.ndarray) -> np.ndarray:
        return self.grad(v) + 1j * q[:, None, None, None] * v

    def tdiv(self, w: np.ndarray, q: np.ndarray) -> np.ndarray:
        return self.div(w) + 1j * np.einsum("i,i...->...", q, w)

    def tcurl(self, w: np.ndarray, q: np.ndarray) -> np.ndarray:
        curl = self.curl(w)
        qx = np.moveaxis(np.cross(q, np.moveaxis(w, 0, -1)), -1, 0)
        return curl + 1j * qx

    def tjacobian(self, w: np.ndarray, q: np.ndarray) -> np.ndarray:
        return self.jacobian(w) + 1j * np.einsum("i...,j->ij...", w, q)

    def tlaplacian(self, v: np.ndarray, q: np.ndarray) -> np.ndarray:
        zdotgrad = sum(q[ax] * self(v, ax) for ax in range(3))
        return self.laplacian(v) + 2j * zdotgrad - (q @ q) * v

    def tcurlcurl(self, w: np.ndarray, q: np.ndarray) -> np.ndarray:
        div = self.tdiv(w, q)
        graddiv = self.tgrad(div, q)
        tlap = np.stack([self.tlaplacian(w[c], q) for c in range(3)])
        return graddiv - tlap


STENCIL_KINDS = ("grad", "div", "curl", "jacobian", "laplacian", "grad_div")


def apply_stencil(f: ScalarField | VectorField, op_kind: str,
                  order: int = DEFAULT_FD_ORDER, backend: str = "fd"):
    """Differential operator on a plain field; returns a field of matching rank."""
    d = Derivative(f.grid, backend, order)
    v = f.values
    if op_kind == "grad":
        if f.components != 1:
            raise ValueError("grad expects a scalar field")
        return VectorField(f.grid, d.grad(v))
    if op_kind == "div":
        if f.components != 3:
            raise ValueError("div expects a vector field")
        return ScalarField(f.grid, d.div(v))
    if op_kind == "curl":
        if f.components != 3:
            raise ValueError("curl expects a vector field")
        return VectorField(f.grid, d.curl(v))
    if op_kind == "jacobian":
        if f.components != 3:
            raise ValueError("jacobian expects a vector field")
        return d.jacobian(v)
    if op_kind == "laplacian":
        if f.components == 1:
            return ScalarField(f.grid, d.laplacian(v))
        return VectorField(f.grid, np.stack([d.laplacian(v[c]) for c in range(3)]))
    if op_kind == "grad_div":
        if f.components != 3:
            raise ValueError("grad_div expects a vector field")
        return VectorField(f.grid, d.grad(d.div(v)))
    raise ValueError(f"unknown stencil kind {op_kind!r}; choose from {STENCIL_KINDS}")


# ---------------------------------------------------------------------------
# Fourier multipliers
# ---------------------------------------------------------------------------

@dataclass
class MultiplierResult:
    field: ScalarField | VectorField
    regularized: np.ndarray  # (m, 3) integer-ish frequencies that were dropped

    @property
    def regularized_count(self) -> int:
        return len(self.regularized)


def apply_fourier_multiplier(f: ScalarField | VectorField, symbol_fn,
                             floor: float = 0.0) -> MultiplierResult:
    """Componentwise: forward FFT, multiply by symbol(k1, k2, k3), inverse FFT.

    Lattice points where |symbol| < floor are zeroed in the output (their
    frequencies are reported). Zeroing, rather than clamping the symbol to the
    floor, keeps near-singular modes from being amplified by 1/floor; it acts
    as a principal-value choice for symbols that vanish on the lattice.
    """
    grid = f.grid
    k1, k2, k3 = grid.freq_mesh()
    sym = np.asarray(symbol_fn(k1, k2, k3), dtype=complex)
    bad = np.abs(sym) < floor if floor > 0 else np.zeros(sym.shape, dtype=bool)
    sym_safe = np.where(bad, 1.0, sym)
    axes = tuple(range(f.values.ndim - 3, f.values.ndim))
    w = worker_count()
    spec = sfft.fftn(f.values, axes=axes, workers=w)
    spec = np.where(bad, 0.0, spec * sym_safe)
    out = sfft.ifftn(spec, axes=axes, workers=w)
    reg = np.stack([k1[bad], k2[bad], k3[bad]], axis=-1) if bad.any() \
        else np.zeros((0, 3))
    cls = ScalarField if f.components == 1 else VectorField
    return MultiplierResult(cls(grid, out), reg)


# ---------------------------------------------------------------------------
# discrete C^m norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CmNorm:
    order: int
    value: float


MAX_CM_ORDER = 3


def _derivative_stack(values: np.ndarray, grid: Grid, m: int, order: int):
    """All FD partials of total order <= m, built by composing first derivatives."""
    level = {(0, 0, 0): values}
    yield values
    for _ in range(m):
        nxt = {}
        for idx, arr in level.items():
            for ax in range(3):
                jdx = list(idx)
                jdx[ax] += 1
                jdx = tuple(jdx)
                if jdx in nxt:
                    continue
                # differentiate in ascending-axis order for determinism
                nxt[jdx] = fd_derivative(arr, ax, grid.spacing, order)
        level = nxt
        yield from level.values()


def discrete_cm_norm(f: ScalarField | VectorField, m: int, mask: np.ndarray,
                     order: int = DEFAULT_FD_ORDER) -> CmNorm:
    """sup over masked nodes of |f| and all FD partials of total order <= m."""
    if not (0 <= m <= MAX_CM_ORDER):
        raise ValueError(f"order m must be in 0..{MAX_CM_ORDER}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (f.grid.n,) * 3:
        raise ValueError("mask shape does not match grid")
    if not mask.any():
        raise ValueError("empty mask")
    best = 0.0
    for arr in _derivative_stack(f.values, f.grid, m, order):
        a = np.abs(arr)
        if f.components == 3:
            a = a.max(axis=0)
        best = max(best, float(a[mask].max()))
    return CmNorm(m, best)


# ---------------------------------------------------------------------------
# interpolation (tricubic B-spline, periodic)
# ---------------------------------------------------------------------------

class Interpolator:
    """Periodic spline interpolation of one or more grid arrays at points.

    order=3 (tricubic) is the default: C^2 smoothness keeps interpolated
    quantities free of cell-scale derivative kinks, which matters when the
    interpolant feeds a reconstruction that is differentiated afterwards.
    order=1 gives plain trilinear interpolation.
    """

    def __init__(self, grid: Grid, values: np.ndarray, order: int = 3):
        self.grid = grid
        self.order = order
        comps = values if values.ndim == 4 else values[None]
        self._parts = []
        for c in comps:
            if order > 1:
                re = spline_filter(np.ascontiguousarray(c.real), order=order, mode="grid-wrap")
                im = spline_filter(np.ascontiguousarray(c.imag), order=order, mode="grid-wrap") \
                    if np.iscomplexobj(c) else None
            else:
                re = np.ascontiguousarray(c.real)
                im = np.ascontiguousarray(c.imag) if np.iscomplexobj(c) else None
            self._parts.append((re, im))
        self._scalar = values.ndim == 3

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        u = ((pts + 0.5 * self.grid.box_side) / self.grid.spacing).T
        out = []
        for re, im in self._parts:
            r = map_coordinates(re, u, order=self.order, mode="grid-wrap", prefilter=False)
            if im is not None:
                r = r + 1j * map_coordinates(im, u, order=self.order, mode="grid-wrap",
                                             prefilter=False)
            out.append(r)
        if self._scalar:
            return out[0]
        return np.stack(out, axis=-1)
