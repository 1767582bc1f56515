"""Measurement region geometry: convex shapes, boundary sampling and the
stability subregion that excludes a band around flow-tangent boundary points."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion
from scipy.spatial import cKDTree

from . import ConfigError
from .fields import Grid

MIN_BOX_MARGIN_CELLS = 4


@dataclass(frozen=True)
class Shape:
    center: np.ndarray
    semi_axes: np.ndarray  # equal entries for a ball

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "semi_axes", np.asarray(self.semi_axes, dtype=float).reshape(3))
        if np.any(self.semi_axes <= 0):
            raise ConfigError(f"degenerate shape: semi-axes {self.semi_axes}")

    @property
    def is_ball(self) -> bool:
        return bool(np.allclose(self.semi_axes, self.semi_axes[0]))

    @property
    def radius(self) -> float:
        return float(self.semi_axes.max())

    def level(self, pts: np.ndarray) -> np.ndarray:
        """Negative inside, zero on the boundary, positive outside."""
        q = (pts - self.center) / self.semi_axes
        return np.einsum("...i,...i->...", q, q) - 1.0

    def normal(self, pts: np.ndarray) -> np.ndarray:
        """Outward unit normal at (near-)boundary points."""
        g = 2.0 * (pts - self.center) / self.semi_axes**2
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def surface_point(self, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        st, ct = np.sin(theta), np.cos(theta)
        return self.center + np.stack(
            [self.semi_axes[0] * st * np.cos(phi),
             self.semi_axes[1] * st * np.sin(phi),
             self.semi_axes[2] * ct], axis=-1)

    def ray_exit(self, origin: np.ndarray, direction: np.ndarray) -> np.ndarray:
        """Forward intersection of rays origin + t*direction with the boundary."""
        o = (origin - self.center) / self.semi_axes
        d = direction / self.semi_axes
        a = np.einsum("...i,...i->...", d, d)
        b = np.einsum("...i,...i->...", o, d)
        c = np.einsum("...i,...i->...", o, o) - 1.0
        disc = b * b - a * c
        if np.any(disc < -1e-12):
            raise ValueError("ray misses the shape")
        t = (-b + np.sqrt(np.maximum(disc, 0.0))) / a
        return origin + t[..., None] * direction


def ball(center, radius: float) -> Shape:
    return Shape(np.asarray(center, dtype=float), np.full(3, float(radius)))


def ellipsoid(center, semi_axes) -> Shape:
    return Shape(np.asarray(center, dtype=float), np.asarray(semi_axes, dtype=float))


@dataclass
class Domain:
    """Convex region inside the periodic box, with boundary samples and masks.

    omega1_mask excludes grid nodes within r_cut of the tangent-point set
    T = {x on the boundary : normal(x) perpendicular to reference_direction}.
    """

    shape: Shape
    grid: Grid
    reference_direction: np.ndarray
    r_cut: float
    boundary_points: np.ndarray = field(repr=False)      # (m, 3)
    boundary_normals: np.ndarray = field(repr=False)     # (m, 3)
    boundary_tangents1: np.ndarray = field(repr=False)   # (m, 3)
    boundary_tangents2: np.ndarray = field(repr=False)   # (m, 3)
    inside_mask: np.ndarray = field(repr=False)
    omega1_mask: np.ndarray = field(repr=False)
    tangent_curve: np.ndarray = field(repr=False)        # (k, 3) samples of T

    @property
    def diameter(self) -> float:
        return 2.0 * float(self.shape.semi_axes.max())

    def eroded_mask(self, cells: int, base: str = "omega1") -> np.ndarray:
        m = self.omega1_mask if base == "omega1" else self.inside_mask
        return binary_erosion(m, iterations=cells) if cells > 0 else m.copy()


def _tangent_curve_samples(shape: Shape, direction: np.ndarray, m: int) -> np.ndarray:
    """The tangent set {x on boundary : normal(x) . direction = 0}.

    For an axis-aligned ellipsoid the condition reads w . (x - c) = 0 with
    w_i = direction_i / a_i^2, a central plane section, hence an ellipse.
    """
    w = direction / shape.semi_axes**2
    w = w / np.linalg.norm(w)
    # orthonormal basis of the section plane
    helper = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(w, helper)
    u /= np.linalg.norm(u)
    v = np.cross(w, u)
    phi = np.linspace(0.0, 2.0 * np.pi, m, endpoint=False)
    dirs = np.outer(np.cos(phi), u) + np.outer(np.sin(phi), v)
    scaled = dirs / shape.semi_axes
    radius = 1.0 / np.sqrt(np.einsum("ki,ki->k", scaled, scaled))
    return shape.center + radius[:, None] * dirs


def build_domain(shape: Shape, grid: Grid, reference_direction=(0.0, 0.0, 1.0),
                 r_cut: float | None = None) -> Domain:
    """Build the measurement region, its boundary sampling and the masks.

    Boundary samples are placed at roughly grid-spacing resolution on a
    latitude/longitude lattice; the latitude count is forced odd so the
    equatorial ring (the tangent set for an axis direction) is sampled
    exactly.
    """
    direction = np.asarray(reference_direction, dtype=float).reshape(3)
    nrm = np.linalg.norm(direction)
    if nrm == 0:
        raise ConfigError("reference direction must be nonzero")
    direction = direction / nrm
    if r_cut is None:
        r_cut = 0.2 * shape.radius
    if r_cut < 0:
        raise ConfigError("r_cut must be nonnegative")

    margin = 0.5 * grid.box_side - (np.abs(shape.center) + shape.semi_axes)
    if np.any(margin < MIN_BOX_MARGIN_CELLS * grid.spacing):
        raise ConfigError(
            f"shape too close to the box boundary (margin {margin.min():.3f} < "
            f"{MIN_BOX_MARGIN_CELLS} cells = {MIN_BOX_MARGIN_CELLS * grid.spacing:.3f})")

    a_max = shape.radius
    n_theta = max(15, int(np.round(np.pi * a_max / grid.spacing)))
    if n_theta % 2 == 0:
        n_theta += 1
    n_phi = max(16, int(np.round(2 * np.pi * a_max / grid.spacing)))
    theta = np.pi * (np.arange(n_theta) + 0.5) / n_theta
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    pts = shape.surface_point(tt.ravel(), pp.ravel())
    normals = shape.normal(pts)
    # tangent frame: colatitude direction, completed to an orthonormal triple
    dtheta = np.stack([shape.semi_axes[0] * np.cos(tt.ravel()) * np.cos(pp.ravel()),
                       shape.semi_axes[1] * np.cos(tt.ravel()) * np.sin(pp.ravel()),
                       -shape.semi_axes[2] * np.sin(tt.ravel())], axis=-1)
    dtheta -= normals * np.einsum("ki,ki->k", dtheta, normals)[:, None]
    t1 = dtheta / np.linalg.norm(dtheta, axis=-1, keepdims=True)
    t2 = np.cross(normals, t1)

    coords = np.stack(grid.mesh(), axis=-1)
    inside = shape.level(coords) < 0.0

    curve = _tangent_curve_samples(shape, direction, max(128, 4 * grid.n))
    if r_cut > 0:
        tree = cKDTree(curve)
        dist = np.full(inside.shape, np.inf)
        pts_in = coords[inside]
        dist_in, _ = tree.query(pts_in, k=1)
        dist[inside] = dist_in
        omega1 = inside & (dist > r_cut)
    else:
        omega1 = inside.copy()

    return Domain(shape=shape, grid=grid, reference_direction=direction, r_cut=float(r_cut),
                  boundary_points=pts, boundary_normals=normals,
                  boundary_tangents1=t1, boundary_tangents2=t2,
                  inside_mask=inside, omega1_mask=omega1, tangent_curve=curve)
