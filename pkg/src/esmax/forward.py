"""Ground-truth coefficient synthesis, internal data D = L E, and boundary
traces G = nu x E, with optional perturbations for stability runs."""
from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np
import scipy.fft as sfft

from .calculus import Interpolator, discrete_cm_norm
from .cgo import CGOParams
from .fields import Grid, ModulatedField, ScalarField, VectorField
from .geometry import Domain
from .util import worker_count


def smooth_cutoff(r: np.ndarray, r_inner: float, r_outer: float) -> np.ndarray:
    """C-infinity transition: 1 for r <= r_inner, 0 for r >= r_outer."""
    t = np.clip((r - r_inner) / (r_outer - r_inner), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        f = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
        g = np.where(t < 1, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
    return g / (f + g)


def gaussian_bump(grid: Grid, center, width: float) -> np.ndarray:
    x1, x2, x3 = grid.mesh()
    c = np.asarray(center, dtype=float)
    r2 = (x1 - c[0])**2 + (x2 - c[1])**2 + (x3 - c[2])**2
    return np.exp(-r2 / width)


@dataclass
class CoefficientSpec:
    """Synthetic test coefficients: Gaussian bumps over constant backgrounds.

    The conductivity background sigma0 applies out to cutoff_inner and is
    taken smoothly to zero by cutoff_outer, so the refractive index equals 1
    near the box boundary (periodization stays benign and the oscillating
    solutions see a compactly supported contrast).
    """

    mobility_amp: float = 0.5
    mobility_center: tuple = (0.15, 0.1, -0.1)
    mobility_width: float = 0.15
    sigma0: float = 0.2
    sigma_amp: float = 0.3
    sigma_center: tuple = (-0.1, 0.12, 0.08)
    sigma_width: float = 0.15
    omega: float = 1.0
    epsilon0: float = 1.0
    mu0: float = 1.0
    cutoff_inner: float = 1.1
    cutoff_outer: float = 2.4


@dataclass
class Coefficients:
    L: ScalarField
    sigma: ScalarField
    epsilon: ScalarField
    omega: float
    epsilon0: float
    mu0: float
    spec: CoefficientSpec | None = None

    def validate(self, L_min: float = 1e-6):
        if np.any(np.real(self.L.values) < L_min):
            raise ValueError("mobility must stay positive")
        if np.any(np.real(self.sigma.values) < -1e-14):
            raise ValueError("conductivity must be nonnegative")
        if np.any(np.real(self.epsilon.values) <= 0):
            raise ValueError("permittivity must be positive")


def synthesize_coefficients(grid: Grid, spec: CoefficientSpec | None = None) -> Coefficients:
    spec = spec or CoefficientSpec()
    x1, x2, x3 = grid.mesh()
    r = np.sqrt(x1**2 + x2**2 + x3**2)
    L = 1.0 + spec.mobility_amp * gaussian_bump(grid, spec.mobility_center,
                                                spec.mobility_width)
    sigma = (spec.sigma0 + spec.sigma_amp * gaussian_bump(grid, spec.sigma_center,
                                                          spec.sigma_width))
    sigma = sigma * smooth_cutoff(r, spec.cutoff_inner, spec.cutoff_outer)
    eps = np.full(L.shape, spec.epsilon0)
    co = Coefficients(L=ScalarField(grid, L.astype(complex)),
                      sigma=ScalarField(grid, sigma.astype(complex)),
                      epsilon=ScalarField(grid, eps.astype(complex)),
                      omega=spec.omega, epsilon0=spec.epsilon0, mu0=spec.mu0,
                      spec=spec)
    co.validate()
    return co


def refractive_index(coeffs: Coefficients) -> tuple[ScalarField, float]:
    """n = (epsilon + i sigma / omega) / epsilon0 and k = omega sqrt(eps0 mu0)."""
    if np.any(np.real(coeffs.epsilon.values) <= 0):
        raise ValueError("permittivity must be positive")
    n = (coeffs.epsilon.values + 1j * coeffs.sigma.values / coeffs.omega) / coeffs.epsilon0
    k = coeffs.omega * np.sqrt(coeffs.epsilon0 * coeffs.mu0)
    return ScalarField(coeffs.L.grid, n), float(k)


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------

@dataclass
class BoundaryTrace:
    """Tangential trace samples nu x F at the domain's boundary points."""

    points: np.ndarray    # (m, 3)
    normals: np.ndarray   # (m, 3)
    values: np.ndarray    # (m, 3) complex


@dataclass
class MeasurementSet:
    """Internal data D_j = L E_j plus the boundary illuminations G_j = nu x E_j.

    Each D_j is held in factored form (envelope + wavevector). The generating
    field envelopes are retained so boundary values of the prescribed
    illumination can be evaluated at arbitrary boundary points; inversions
    must not read them in the interior.
    """

    data: list              # list[ModulatedField], D_j
    params: list            # list[CGOParams]
    domain: Domain
    illuminations: list     # list[ModulatedField], E_j (boundary use only)
    G: list = dfield(default_factory=list)           # list[BoundaryTrace]
    D_boundary: list = dfield(default_factory=list)  # list[BoundaryTrace]

    def __len__(self):
        return len(self.data)


def tangential_trace(E: ModulatedField, domain: Domain,
                     points: np.ndarray | None = None,
                     normals: np.ndarray | None = None,
                     interp_order: int = 3) -> BoundaryTrace:
    """nu x E at boundary points (interpolated envelope, analytic phase)."""
    if points is None:
        points = domain.boundary_points
        normals = domain.boundary_normals
    elif normals is None:
        normals = domain.shape.normal(points)
    half = 0.5 * E.grid.box_side
    if np.any(np.abs(points) >= half):
        raise ValueError("boundary sample outside the grid box")
    interp = Interpolator(E.grid, E.envelope.values, order=interp_order)
    env = interp(points)
    vals = env * E.phase_at(points)[:, None]
    return BoundaryTrace(points=np.asarray(points, dtype=float),
                         normals=np.asarray(normals, dtype=float),
                         values=np.cross(normals, vals))


def make_internal_data(L: ScalarField, E_list: list[ModulatedField],
                       params: list[CGOParams], domain: Domain) -> MeasurementSet:
    """D_j = L * E_j nodewise (exact product on the envelopes)."""
    if np.any(np.real(L.values) <= 0):
        raise ValueError("mobility must be positive")
    data = [E.with_envelope(L.values[None] * E.envelope.values) for E in E_list]
    mset = MeasurementSet(data=data, params=list(params), domain=domain,
                          illuminations=list(E_list))
    mset.G = [tangential_trace(E, domain) for E in E_list]
    mset.D_boundary = [tangential_trace(D, domain) for D in data]
    return mset


# ---------------------------------------------------------------------------
# perturbations
# ---------------------------------------------------------------------------

@dataclass
class NoiseSpec:
    amplitude: float = 0.0
    seed: int = 0
    mode: str = "smooth-random"   # or "coefficient-perturbation"
    band_limit: int = 4
    norm_order: int = 2


def band_limited_noise(grid: Grid, rng: np.random.Generator, band_limit: int,
                       components: int = 3) -> np.ndarray:
    """Smooth random complex field from a band-limited random spectrum."""
    k1, k2, k3 = grid.freq_mesh()
    band = ((np.abs(k1) <= band_limit) & (np.abs(k2) <= band_limit)
            & (np.abs(k3) <= band_limit))
    shape = (components,) + (grid.n,) * 3 if components > 1 else (grid.n,) * 3
    spec = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    spec = np.where(band, spec, 0.0)
    axes = tuple(range(spec.ndim - 3, spec.ndim))
    return sfft.ifftn(spec, axes=axes, workers=worker_count())


def perturb_data(mset: MeasurementSet, noise: NoiseSpec,
                 mask: np.ndarray | None = None) -> MeasurementSet:
    """Additive smooth-random envelope perturbation of each internal datum.

    The perturbation is normalized so its discrete C^m surrogate norm over the
    mask equals the requested amplitude; deterministic in the seed. (Data are
    held in factored form, so the perturbation applies to the envelope; the
    data norms used by the stability reports live in the same gauge.)
    """
    if noise.amplitude < 0:
        raise ValueError("noise amplitude must be nonnegative")
    if noise.mode != "smooth-random":
        raise ValueError("perturb_data handles the smooth-random mode; "
                         "coefficient perturbations re-run the synthesis")
    if noise.amplitude == 0.0:
        return MeasurementSet(data=[ModulatedField(d.envelope.copy(), d.wavevector)
                                    for d in mset.data],
                              params=list(mset.params), domain=mset.domain,
                              illuminations=list(mset.illuminations),
                              G=list(mset.G), D_boundary=list(mset.D_boundary))
    grid = mset.data[0].grid
    if mask is None:
        mask = mset.domain.inside_mask
    rng = np.random.default_rng(noise.seed)
    new_data = []
    for d in mset.data:
        p = band_limited_noise(grid, rng, noise.band_limit, components=3)
        nrm = discrete_cm_norm(VectorField(grid, p), noise.norm_order, mask).value
        p *= noise.amplitude / nrm
        new_data.append(d.with_envelope(d.envelope.values + p))
    out = MeasurementSet(data=new_data, params=list(mset.params), domain=mset.domain,
                         illuminations=list(mset.illuminations),
                         G=list(mset.G), D_boundary=list(mset.D_boundary))
    out.D_boundary = [tangential_trace(D, mset.domain) for D in new_data]
    return out


def data_difference_norm(a: MeasurementSet, b: MeasurementSet, m: int,
                         mask: np.ndarray) -> float:
    """max over measurements of the C^m surrogate norm of the envelope gap."""
    grid = a.data[0].grid
    worst = 0.0
    for da, db in zip(a.data, b.data):
        if not np.allclose(da.wavevector, db.wavevector):
            raise ValueError("measurement sets use different phases")
        diff = VectorField(grid, da.envelope.values - db.envelope.values)
        worst = max(worst, discrete_cm_norm(diff, m, mask).value)
    return worst
