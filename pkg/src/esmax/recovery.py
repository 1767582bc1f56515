"""Second reconstruction stage: E = D / L, then the refractive index from the
curl-curl quotient, then conductivity and permittivity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as _cheb

from .calculus import Derivative
from .fields import ModulatedField, ScalarField
from .forward import MeasurementSet, smooth_cutoff
from .geometry import Domain
from .transport import mobility_at_points

STENCIL_HALFWIDTH = 2
MASK_EROSION_CELLS = 2 * STENCIL_HALFWIDTH


@dataclass
class SmoothMobilityModel:
    """Boundary-anchored polynomial model of the reconstructed mobility.

    The raw nodewise reconstruction carries grid-scale noise whose gradient is
    amplified by the data's wavevector inside second-derivative quotients. A
    total-degree-capped Chebyshev least-squares fit over the reconstructed
    nodes, anchored by boundary mobility samples and blended smoothly into the
    constant background, provides the smooth divisor used by recover_e.
    """

    coeffs: np.ndarray
    degree: int
    scale: float
    center: np.ndarray
    fit_residual: float


def _cheb_design(pts: np.ndarray, degree: int, scale: float, center: np.ndarray):
    rel = (pts - center) / scale
    T = [_cheb.chebvander(np.clip(rel[:, ax], -1.0, 1.0), degree) for ax in range(3)]
    cols = [T[0][:, i] * T[1][:, j] * T[2][:, l]
            for i in range(degree + 1) for j in range(degree + 1)
            for l in range(degree + 1) if i + j + l <= degree]
    return np.stack(cols, axis=1)


def fit_smooth_mobility(L_rec: ScalarField, valid: np.ndarray, mset: MeasurementSet,
                        domain: Domain, degree: int = 12,
                        boundary_samples: int = 2000, seed: int = 0,
                        interp_order: int = 3):
    """Fit the smooth model and return (L_smooth ScalarField, model).

    The fitted polynomial is evaluated out to slightly beyond the region and
    tapered into the background value 1, so the result is globally smooth.
    """
    grid = L_rec.grid
    shape = domain.shape
    scale = 1.02 * float(shape.semi_axes.max())
    center = shape.center
    pts_in = np.stack(grid.mesh(), axis=-1)[valid]
    y_in = np.real(L_rec.values[valid])

    rng = np.random.default_rng(seed)
    u = rng.standard_normal((boundary_samples, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    bpts = shape.ray_exit(np.broadcast_to(center, (boundary_samples, 3)), u)
    yb, usable = mobility_at_points(mset, bpts, interp_order=interp_order)

    A = np.vstack([_cheb_design(pts_in, degree, scale, center),
                   _cheb_design(bpts[usable], degree, scale, center)])
    y = np.concatenate([y_in, yb[usable]])
    coeffs, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.abs(A @ coeffs - y).max())

    coords = np.stack(grid.mesh(), axis=-1)
    r = np.linalg.norm((coords - center) / shape.semi_axes, axis=-1)
    eval_zone = r < 1.5
    vals = np.ones((grid.n,) * 3)
    vals[eval_zone] = _cheb_design(coords[eval_zone], degree, scale, center) @ coeffs
    taper = smooth_cutoff(r, 1.02, 1.45)
    smooth = 1.0 + (vals - 1.0) * taper
    model = SmoothMobilityModel(coeffs=coeffs, degree=degree, scale=scale,
                                center=center, fit_residual=resid)
    return ScalarField(grid, smooth.astype(complex)), model


@dataclass
class RecoveredCoefficients:
    E_rec: list
    n_rec: ScalarField
    sigma_rec: np.ndarray       # real array
    epsilon_rec: np.ndarray     # real array
    pointwise_weight: ScalarField
    mask: np.ndarray
    low_weight_fraction: float = 0.0


def recover_e(mset: MeasurementSet, L_rec: ScalarField, mask: np.ndarray,
              L_floor: float = 0.5) -> list[ModulatedField]:
    """E_j = D_j / L nodewise (factored form; envelopes divided)."""
    Lv = np.real(L_rec.values)
    if np.any(Lv[mask] < L_floor):
        raise ValueError(f"reconstructed mobility below {L_floor} on the "
                         "evaluation mask")
    safe = np.where(np.abs(Lv) < 1e-6, 1.0, Lv)
    return [d.with_envelope(d.envelope.values / safe) for d in mset.data]


def recover_n(E_list: list[ModulatedField], k: float, mask: np.ndarray,
              weighting: str = "whitened", weight_floor: float = 1e-12,
              max_low_weight_fraction: float = 0.01):
    """Refractive index from the curl-curl quotient over the measurements.

    Per measurement the Rayleigh-type quotient
        q_j = (curl curl E_j) . conj(E_j) / (k^2 |E_j|^2)
    is formed with spectrally twisted derivatives on the envelope (the phase
    magnitude cancels inside the quotient). `weighting` controls the
    combination across measurements:

    * "whitened" (default): plain average of the q_j. Each measurement is
      normalized by its own local magnitude, which preserves the cancellation
      of wavevector-amplified errors between the members of a pair whose
      wavevectors sum to zero.
    * "magnitude": weights |E_j|^2 including the exponential phase magnitude.
      With strongly growing phases this degenerates to selecting a single
      measurement per point and loses that cancellation; kept for comparison.

    Returns (n_rec, weight, low_weight_fraction); weight is sum_j |E_j|^2.
    """
    if weighting not in ("whitened", "magnitude"):
        raise ValueError(f"unknown weighting {weighting!r}")
    grid = E_list[0].grid
    d = Derivative(grid, backend="spectral")
    num = np.zeros((grid.n,) * 3, dtype=complex)
    den = np.zeros((grid.n,) * 3)
    weight = np.zeros((grid.n,) * 3)
    for E in E_list:
        w = E.envelope.values
        cc = d.tcurlcurl(w, E.wavevector)
        q_num = np.einsum("i...,i...->...", cc, w.conj())
        q_den = np.einsum("i...,i...->...", np.abs(w), np.abs(w))
        mag2 = E.magnitude_weight() ** 2
        weight += mag2 * q_den
        if weighting == "whitened":
            num += q_num / np.maximum(q_den, 1e-300)
            den += 1.0
        else:
            num += mag2 * q_num
            den += mag2 * q_den
    n_rec = num / (k**2 * np.maximum(den, 1e-300))
    low = mask & (weight < weight_floor * float(weight[mask].max()))
    low_frac = float(low.sum()) / float(mask.sum())
    if low_frac > max_low_weight_fraction:
        raise ValueError(f"illumination weight below floor on {low_frac:.2%} of the mask")
    return (ScalarField(grid, n_rec), ScalarField(grid, weight.astype(complex)), low_frac)


def recover_sigma(n_rec: ScalarField, omega: float, epsilon0: float):
    """Invert n = (epsilon + i sigma/omega)/epsilon0 for sigma and epsilon."""
    sigma = omega * epsilon0 * np.imag(n_rec.values)
    eps = epsilon0 * np.real(n_rec.values)
    return sigma, eps


def recover_coefficients(mset: MeasurementSet, L_rec: ScalarField, valid: np.ndarray,
                         domain: Domain, k: float, omega: float, epsilon0: float,
                         base_mask: str = "omega1", smooth_degree: int = 12,
                         weighting: str = "whitened", L_floor: float = 0.5,
                         smooth: bool = True) -> RecoveredCoefficients:
    """Full second stage on the eroded mask; optionally fit the smooth divisor."""
    mask = domain.eroded_mask(MASK_EROSION_CELLS, base=base_mask)
    if smooth:
        L_div, _ = fit_smooth_mobility(L_rec, valid, mset, domain, degree=smooth_degree)
    else:
        L_div = L_rec
    E_list = recover_e(mset, L_div, mask, L_floor=L_floor)
    n_rec, weight, low_frac = recover_n(E_list, k, mask, weighting=weighting)
    sigma, eps = recover_sigma(n_rec, omega, epsilon0)
    return RecoveredCoefficients(E_rec=E_list, n_rec=n_rec, sigma_rec=sigma,
                                 epsilon_rec=eps, pointwise_weight=weight,
                                 mask=mask, low_weight_fraction=low_frac)
