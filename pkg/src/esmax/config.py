"""Run configuration: dataclasses with full defaulting, YAML round trip and
targeted validation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import ConfigError

PIPELINES = ("transport-2", "matrix-6")
NOISE_MODES = ("smooth-random", "coefficient-perturbation")
CONVENTIONS = ("derived-identity", "as-printed", "auto")


@dataclass
class GridConfig:
    n: int = 64
    box_side: float = float(2.0 * np.pi)


@dataclass
class DomainConfig:
    shape: str = "ball"               # "ball" or "ellipsoid"
    center: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    radius: float = 0.8
    semi_axes: list | None = None     # for ellipsoids
    r_cut: float = 0.16
    reference_direction: list = field(default_factory=lambda: [0.0, 0.0, 1.0])


@dataclass
class CoefficientConfig:
    mobility_amp: float = 0.5
    mobility_center: list = field(default_factory=lambda: [0.15, 0.1, -0.1])
    mobility_width: float = 0.15
    sigma0: float = 0.2
    sigma_amp: float = 0.3
    sigma_center: list = field(default_factory=lambda: [-0.1, 0.12, 0.08])
    sigma_width: float = 0.15
    omega: float = 1.0
    epsilon0: float = 1.0
    mu0: float = 1.0
    cutoff_inner: float = 1.1
    cutoff_outer: float = 2.4


@dataclass
class CGOConfig:
    h: list = field(default_factory=lambda: [0.05])
    a: float = 0.0
    k: float = 1.0
    tol: float = 1e-10
    max_iter: int = 60
    max_growth: float = 40.0          # bound on |Im zeta| * diam


@dataclass
class TransportConfig:
    convention: str = "auto"
    stencil_order: int = 6
    step_factor: float = 6.0
    interp_order: int = 3
    max_failure_fraction: float = 0.01


@dataclass
class RecoveryConfig:
    smooth: bool = True
    smooth_degree: int = 12
    weighting: str = "whitened"
    L_floor: float = 0.5


@dataclass
class NoiseConfig:
    amplitude: float = 0.0
    seed: int = 0
    mode: str = "smooth-random"
    band_limit: int = 4
    norm_order: int = 2


@dataclass
class ToleranceConfig:
    l_rel: float = 0.05
    sigma_abs: float = 0.1
    identity_residual: float = 1e-2
    path_independence: float = 1e-3
    r_curlcurl: float = 1e-3


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    domain: DomainConfig = field(default_factory=DomainConfig)
    coefficients: CoefficientConfig = field(default_factory=CoefficientConfig)
    cgo: CGOConfig = field(default_factory=CGOConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    pipeline: str = "transport-2"
    seed: int = 0
    out: str | None = None

    # -- validation ----------------------------------------------------------

    def validate(self) -> "RunConfig":
        g = self.grid
        if g.n < 16:
            raise ConfigError(f"grid.n must be >= 16, got {g.n}")
        if g.box_side <= 0:
            raise ConfigError("grid.box_side must be positive")
        d = self.domain
        if d.shape not in ("ball", "ellipsoid"):
            raise ConfigError(f"domain.shape must be 'ball' or 'ellipsoid', got {d.shape!r}")
        if d.shape == "ball" and d.radius <= 0:
            raise ConfigError("domain.radius must be positive")
        if d.shape == "ellipsoid":
            if not d.semi_axes or len(d.semi_axes) != 3 or min(d.semi_axes) <= 0:
                raise ConfigError("domain.semi_axes must be three positive numbers")
        if d.r_cut < 0:
            raise ConfigError("domain.r_cut must be nonnegative")
        if not np.any(np.asarray(d.reference_direction, dtype=float)):
            raise ConfigError("domain.reference_direction must be nonzero")
        c = self.coefficients
        if c.omega <= 0 or c.epsilon0 <= 0 or c.mu0 <= 0:
            raise ConfigError("omega, epsilon0 and mu0 must be positive")
        if 1.0 + c.mobility_amp <= 0:
            raise ConfigError("mobility must stay positive (mobility_amp > -1)")
        if c.sigma0 < 0 or c.sigma0 + min(0.0, c.sigma_amp) < 0:
            raise ConfigError("conductivity must stay nonnegative")
        if not (0 < c.cutoff_inner < c.cutoff_outer < 0.5 * g.box_side):
            raise ConfigError("need 0 < cutoff_inner < cutoff_outer < box half-side")
        cg = self.cgo
        if not cg.h:
            raise ConfigError("cgo.h must list at least one value")
        k = cg.k
        for h in cg.h:
            if h <= 0:
                raise ConfigError("cgo.h entries must be positive")
            if 1.0 / h**2 + cg.a**2 / 4.0 - k**2 <= 0:
                raise ConfigError(f"h={h}, a={cg.a}, k={k} violate 1/h^2 + a^2/4 - k^2 > 0")
        if cg.tol <= 0 or cg.max_iter < 1:
            raise ConfigError("cgo.tol must be positive and cgo.max_iter >= 1")
        t = self.transport
        if t.convention not in CONVENTIONS:
            raise ConfigError(f"transport.convention must be one of {CONVENTIONS}")
        if t.stencil_order not in (2, 4, 6):
            raise ConfigError("transport.stencil_order must be 2, 4 or 6")
        if t.step_factor <= 0:
            raise ConfigError("transport.step_factor must be positive")
        if t.interp_order not in (1, 3):
            raise ConfigError("transport.interp_order must be 1 or 3")
        r = self.recovery
        if r.weighting not in ("whitened", "magnitude"):
            raise ConfigError("recovery.weighting must be 'whitened' or 'magnitude'")
        if r.smooth_degree < 2:
            raise ConfigError("recovery.smooth_degree must be >= 2")
        nz = self.noise
        if nz.amplitude < 0:
            raise ConfigError("noise.amplitude must be nonnegative")
        if nz.mode not in NOISE_MODES:
            raise ConfigError(f"noise.mode must be one of {NOISE_MODES}")
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        return self

    # -- (de)serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data or {})
        sections = {
            "grid": GridConfig, "domain": DomainConfig, "coefficients": CoefficientConfig,
            "cgo": CGOConfig, "transport": TransportConfig, "recovery": RecoveryConfig,
            "noise": NoiseConfig, "tolerances": ToleranceConfig,
        }
        kwargs = {}
        for key, section_cls in sections.items():
            sub = data.pop(key, {}) or {}
            unknown = set(sub) - {f for f in section_cls.__dataclass_fields__}
            if unknown:
                raise ConfigError(f"unknown keys in '{key}': {sorted(unknown)}")
            kwargs[key] = section_cls(**sub)
        for key in ("pipeline", "seed", "out"):
            if key in data:
                kwargs[key] = data.pop(key)
        if data:
            raise ConfigError(f"unknown top-level config keys: {sorted(data)}")
        return cls(**kwargs).validate()

    @classmethod
    def from_yaml(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_yaml(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    def with_overrides(self, grid_n: int | None = None, h_list: list | None = None,
                       seed: int | None = None, out: str | None = None,
                       pipeline: str | None = None) -> "RunConfig":
        cfg = self
        if grid_n is not None:
            cfg = replace(cfg, grid=replace(cfg.grid, n=grid_n))
        if h_list is not None:
            cfg = replace(cfg, cgo=replace(cfg.cgo, h=list(h_list)))
        if seed is not None:
            cfg = replace(cfg, seed=seed, noise=replace(cfg.noise, seed=seed))
        if out is not None:
            cfg = replace(cfg, out=out)
        if pipeline is not None:
            cfg = replace(cfg, pipeline=pipeline)
        return cfg.validate()
