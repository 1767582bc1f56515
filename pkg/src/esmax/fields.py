"""Complex scalar/vector fields sampled on a uniform periodic 3-D grid.

The grid covers the box [-pi, pi)^3 by default (box_side = 2*pi), so the
Fourier lattice is integer-valued. Vector fields store components first:
values.shape == (3, n, n, n). Scalar fields store (n, n, n).

Rapidly oscillating or exponentially growing fields are represented in
factored form by ModulatedField: field(x) = exp(i q . x) * envelope(x) with a
constant (possibly complex) wavevector q. Only the smooth envelope lives on
the grid; the phase factor is handled analytically by the operators that
consume these fields. This keeps every stored array O(1) and well resolved
even when |Im q| * diam(domain) is large.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

TAU = 2.0 * np.pi


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with n samples per axis on a cube of side box_side."""

    n: int
    box_side: float = TAU

    def __post_init__(self):
        if self.n < 16:
            raise ValueError(f"grid needs n >= 16, got {self.n}")
        if self.box_side <= 0:
            raise ValueError("box_side must be positive")

    @property
    def spacing(self) -> float:
        return self.box_side / self.n

    def axis(self) -> np.ndarray:
        """1-D sample coordinates, [-box/2, box/2)."""
        return -0.5 * self.box_side + self.spacing * np.arange(self.n)

    def mesh(self):
        """Tuple of three (n,n,n) coordinate arrays (ij indexing)."""
        return _mesh(self.n, self.box_side)

    def coords(self) -> np.ndarray:
        """Stacked coordinates, shape (3, n, n, n)."""
        return np.stack(self.mesh())

    def freq_axis(self) -> np.ndarray:
        """1-D Fourier frequencies (radians per unit length)."""
        return _freq_axis(self.n, self.box_side)

    def freq_mesh(self):
        return _freq_mesh(self.n, self.box_side)


@lru_cache(maxsize=8)
def _mesh(n: int, box: float):
    x = -0.5 * box + (box / n) * np.arange(n)
    return np.meshgrid(x, x, x, indexing="ij")


@lru_cache(maxsize=8)
def _freq_axis(n: int, box: float):
    import scipy.fft as sfft

    return sfft.fftfreq(n, d=1.0 / n) * (TAU / box)


@lru_cache(maxsize=8)
def _freq_mesh(n: int, box: float):
    k = _freq_axis(n, box)
    return np.meshgrid(k, k, k, indexing="ij")


def _check_values(grid: Grid, values: np.ndarray, components: int) -> np.ndarray:
    values = np.asarray(values)
    want = (grid.n,) * 3 if components == 1 else (components,) + (grid.n,) * 3
    if values.shape != want:
        raise ValueError(f"field values shape {values.shape} != {want}")
    return values


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = _check_values(self.grid, self.values, 1)

    @property
    def components(self) -> int:
        return 1

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def assert_finite(self) -> "ScalarField":
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field contains non-finite values")
        return self


@dataclass
class VectorField:
    grid: Grid
    values: np.ndarray  # (3, n, n, n)

    def __post_init__(self):
        self.values = _check_values(self.grid, self.values, 3)

    @property
    def components(self) -> int:
        return 3

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.values.copy())

    def assert_finite(self) -> "VectorField":
        if not np.all(np.isfinite(self.values)):
            raise ValueError("vector field contains non-finite values")
        return self


def constant_vector_field(grid: Grid, vec) -> VectorField:
    vec = np.asarray(vec, dtype=complex)
    vals = np.broadcast_to(vec[:, None, None, None], (3, grid.n, grid.n, grid.n)).copy()
    return VectorField(grid, vals)


@dataclass
class ModulatedField:
    """Vector field exp(i q . x) * envelope(x) with constant complex wavevector q.

    With q = 0 this is a plain vector field. Products between a pair of
    ModulatedFields carry the combined phase exp(i (q1 + q2) . x); for the
    measurement pairs used here Im(q1 + q2) = 0, so such products are bounded
    and can be evaluated pointwise.
    """

    envelope: VectorField
    wavevector: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=complex))

    def __post_init__(self):
        self.wavevector = np.asarray(self.wavevector, dtype=complex).reshape(3)

    @property
    def grid(self) -> Grid:
        return self.envelope.grid

    def phase_at(self, points: np.ndarray) -> np.ndarray:
        """exp(i q . x) at points of shape (m, 3)."""
        return np.exp(1j * points @ self.wavevector)

    def log_magnitude_range(self, radius: float) -> float:
        """Upper bound on |log|exp(i q . x)|| over a centered ball."""
        return float(np.linalg.norm(np.imag(self.wavevector)) * radius)

    def magnitude_weight(self) -> np.ndarray:
        """|exp(i q . x)| on the grid (real array)."""
        im = np.imag(self.wavevector)
        x = self.grid.coords()
        return np.exp(-np.einsum("i,i...->...", im, x))

    def materialize(self) -> VectorField:
        """Evaluate exp(i q . x) * envelope on the grid nodes.

        The result is generally not periodic; it is intended for pointwise
        inspection and export, not for Fourier-side processing.
        """
        x = self.grid.coords()
        ph = np.exp(1j * np.einsum("i,i...->...", self.wavevector, x))
        big = np.max(np.abs(np.imag(self.wavevector))) * (np.sqrt(3.0) * self.grid.box_side / 2)
        if big > 700.0:
            raise ValueError(
                f"phase growth exp({big:.1f}) overflows float64; refuse to materialize")
        return VectorField(self.grid, ph[None] * self.envelope.values)

    def scaled(self, factor: np.ndarray | complex) -> "ModulatedField":
        return ModulatedField(VectorField(self.grid, self.envelope.values * factor),
                              self.wavevector)

    def with_envelope(self, values: np.ndarray) -> "ModulatedField":
        return ModulatedField(VectorField(self.grid, values), self.wavevector)


# ---------------------------------------------------------------------------
# field file format: per component, interleaved (re, im) float64, written with
# x fastest, plus a JSON sidecar {N, box_side, components, name}.
# ---------------------------------------------------------------------------

def save_field(f: ScalarField | VectorField, path: str | Path, name: str = "field") -> Path:
    path = Path(path)
    vals = f.values.astype(np.complex128)
    if f.components == 1:
        vals = vals[None]
    # in-memory layout is [comp, ix, iy, iz]; the file wants x fastest
    on_disk = np.ascontiguousarray(vals.transpose(0, 3, 2, 1))
    with open(path, "wb") as fh:
        on_disk.astype("<c16").tofile(fh)
    sidecar = {"N": f.grid.n, "box_side": f.grid.box_side,
               "components": f.components, "name": name}
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
    return path


def load_field(path: str | Path) -> ScalarField | VectorField:
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".json")) as fh:
        meta = json.load(fh)
    n, comps = int(meta["N"]), int(meta["components"])
    grid = Grid(n, float(meta["box_side"]))
    raw = np.fromfile(path, dtype="<c16").reshape(comps, n, n, n)
    vals = np.ascontiguousarray(raw.transpose(0, 3, 2, 1)).astype(np.complex128)
    if comps == 1:
        return ScalarField(grid, vals[0])
    return VectorField(grid, vals)
