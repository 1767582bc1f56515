"""Six-measurement reconstruction: three measurement pairs with independent
limit directions turn the transport relation into the gradient system
grad(L) + Gamma(x) L = 0, solved by line integration on the whole region."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calculus import Derivative, Interpolator
from .cgo import CANONICAL_ZETA0, CGOParams, make_pair
from .fields import Grid, ScalarField, VectorField
from .forward import MeasurementSet
from .geometry import Domain
from .transport import TransportField, mobility_at_points

MAX_FRAME_CONDITION = 10.0
DEFAULT_NODE_CONDITION_LIMIT = 1e3
DEFAULT_FAILURE_BUDGET = 1e-3

# cyclic axis permutation e1->e3->e2->e1, i.e. rotation by 120 degrees about
# the (1,1,1) diagonal; 90-degree rotations about a coordinate axis would map
# the canonical isotropic direction to a complex multiple of itself and leave
# the three limit directions linearly dependent.
_CYCLE = np.array([[0.0, 1.0, 0.0],
                   [0.0, 0.0, 1.0],
                   [1.0, 0.0, 0.0]])


def default_frames() -> list[np.ndarray]:
    return [np.eye(3), _CYCLE, _CYCLE @ _CYCLE]


@dataclass
class FrameSet:
    frames: list          # three rotations
    zeta0_dirs: np.ndarray  # (3, 3) complex, rows are the limit directions
    params: list          # six CGOParams, pairs per frame
    condition: float

    def pair(self, j: int) -> tuple[CGOParams, CGOParams]:
        return self.params[2 * j], self.params[2 * j + 1]


def build_measurement_frames(k: float, h: float, a: float = 0.0,
                             frames: list | None = None) -> FrameSet:
    """Three rotated measurement pairs with linearly independent limit directions."""
    frames = [np.asarray(F, dtype=float) for F in (frames or default_frames())]
    if len(frames) != 3:
        raise ValueError("need exactly three frames")
    dirs = np.stack([F @ CANONICAL_ZETA0 for F in frames])
    cond = float(np.linalg.cond(dirs))
    if cond > MAX_FRAME_CONDITION:
        raise ValueError(f"limit directions nearly dependent (condition {cond:.3g} "
                         f"> {MAX_FRAME_CONDITION})")
    params = []
    for F in frames:
        p1, p2 = make_pair(h, a, k, F)
        params.extend([p1, p2])
    return FrameSet(frames=frames, zeta0_dirs=dirs, params=params, condition=cond)


@dataclass
class GammaField:
    Gamma: VectorField        # complex, grad(L)/L = -Gamma
    condition: ScalarField    # nodewise condition number of the row matrix
    failed_fraction: float
    solve_residual: float


def assemble_gradient_system(tfs: list[TransportField], mask: np.ndarray,
                             cond_max: float = DEFAULT_NODE_CONDITION_LIMIT,
                             failure_budget: float = DEFAULT_FAILURE_BUDGET) -> GammaField:
    """Nodewise solve of B(x) Gamma(x) = (gamma^1, gamma^2, gamma^3)(x).

    B has rows beta^j(x); with each pair satisfying beta^j . grad L +
    gamma^j L = 0, the solution satisfies grad L + Gamma L = 0.
    """
    if len(tfs) != 3:
        raise ValueError("need three transport pairs")
    grid = tfs[0].beta.grid
    B = np.stack([np.moveaxis(tf.beta.values, 0, -1) for tf in tfs], axis=-2)
    gvec = np.stack([tf.gamma.values for tf in tfs], axis=-1)
    gam = np.linalg.solve(B, gvec[..., None])[..., 0]
    cond = np.linalg.cond(B)

    bad = mask & ~(cond <= cond_max)
    frac = float(bad.sum()) / float(mask.sum())
    if frac > failure_budget:
        raise ValueError(f"node condition exceeded {cond_max:g} on {frac:.2%} of the "
                         f"region (budget {failure_budget:.2%})")
    resid = B @ gam[..., None] - gvec[..., None]
    rel = float(np.abs(resid[mask]).max() / max(np.abs(gvec[mask]).max(), 1e-300))
    return GammaField(Gamma=VectorField(grid, np.moveaxis(gam, -1, 0)),
                      condition=ScalarField(grid, cond.astype(complex)),
                      failed_fraction=frac, solve_residual=rel)


@dataclass
class LineIntegrationDiagnostics:
    samples_per_path: int
    unusable_boundary: int
    path_independence: float | None = None


def _segment_integrals(GammaR: np.ndarray, grid: Grid, starts: np.ndarray,
                       ends: np.ndarray, samples: int, interp_order: int) -> np.ndarray:
    """Trapezoid integrals of Gamma . dl along straight segments (vectorized)."""
    interp = Interpolator(grid, GammaR, order=interp_order)
    s = np.linspace(0.0, 1.0, samples)[None, :, None]
    seg = starts[:, None, :] + s * (ends - starts)[:, None, :]
    vals = interp(seg.reshape(-1, 3)).reshape(len(starts), samples, 3)
    dl = (ends - starts)[:, None, :]
    integrand = np.einsum("mki,mki->mk", vals, np.broadcast_to(dl, vals.shape))
    return np.trapezoid(integrand, dx=1.0 / (samples - 1), axis=1)


def integrate_log_mobility(gf: GammaField, mset: MeasurementSet, domain: Domain,
                           mask: np.ndarray | None = None, interp_order: int = 3,
                           check_path_independence: bool = True):
    """L(x) = L0(x_b) exp(-int Gamma . dl) along the center-ray chord.

    x_b is where the ray from x through the region center meets the boundary
    on the far side (the longer, well-conditioned chord for a convex region).
    The real part of Gamma drives the integral; a second integration from the
    near-side exit provides the path-independence residual.

    Returns (L_rec ScalarField with ones off the mask, valid_mask, diagnostics).
    """
    grid = gf.Gamma.grid
    if mask is None:
        mask = domain.inside_mask
    pts = np.stack(grid.mesh(), axis=-1)[mask]
    center = domain.shape.center
    rel = pts - center
    rr = np.linalg.norm(rel, axis=1)
    u = np.where(rr[:, None] > 1e-12, rel / np.maximum(rr, 1e-12)[:, None],
                 np.array([0.0, 0.0, 1.0]))
    far = domain.shape.ray_exit(pts, -u)
    near = domain.shape.ray_exit(pts, u)

    spacing = grid.spacing
    max_len = float(np.linalg.norm(far - pts, axis=1).max())
    samples = max(9, int(np.ceil(2.0 * max_len / spacing)) + 1)

    GammaR = np.real(gf.Gamma.values)
    ints_far = _segment_integrals(GammaR, grid, far, pts, samples, interp_order)
    L0_far, usable_far = mobility_at_points(mset, far, interp_order=interp_order)
    vals = L0_far * np.exp(-ints_far)

    diag = LineIntegrationDiagnostics(samples_per_path=samples,
                                      unusable_boundary=int((~usable_far).sum()))
    if check_path_independence:
        ints_near = _segment_integrals(GammaR, grid, near, pts, samples, interp_order)
        L0_near, usable_near = mobility_at_points(mset, near, interp_order=interp_order)
        alt = L0_near * np.exp(-ints_near)
        both = usable_far & usable_near
        if both.any():
            diag.path_independence = float(
                np.abs(alt[both] - vals[both]).max() / np.abs(vals[both]).max())

    L_rec = np.ones((grid.n,) * 3)
    valid = np.zeros((grid.n,) * 3, dtype=bool)
    L_rec[mask] = np.where(usable_far, vals, 1.0)
    vflat = np.zeros(len(pts), dtype=bool)
    vflat[usable_far] = True
    valid[mask] = vflat
    return ScalarField(grid, L_rec.astype(complex)), valid, diag
