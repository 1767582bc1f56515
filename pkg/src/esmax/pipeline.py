"""Configuration-driven pipeline runner and stability/decay harnesses."""
from __future__ import annotations

from dataclasses import dataclass, field as dfield, replace
from pathlib import Path

import numpy as np

from . import ConfigError, EsmaxError
from .calculus import Interpolator, discrete_cm_norm
from .cgo import (CGORemainder, assemble_cgo, make_pair, maxwell_residual,
                  remainder_asymptotics, solve_remainder)
from .config import RunConfig
from .fields import Grid, ScalarField, VectorField, save_field
from .forward import (CoefficientSpec, Coefficients, MeasurementSet, NoiseSpec,
                      band_limited_noise, data_difference_norm, gaussian_bump,
                      make_internal_data, perturb_data, refractive_index,
                      synthesize_coefficients, tangential_trace)
from .geometry import Domain, ball, build_domain, ellipsoid
from .io import (write_boundary_trace_csv, write_json, write_rows_csv,
                 write_slice_csv, read_json)
from .matrix_recon import assemble_gradient_system, build_measurement_frames, \
    integrate_log_mobility
from .recovery import MASK_EROSION_CELLS, recover_coefficients
from .transport import (assemble_vector_field, boundary_mobility, chi_weight,
                        direction_diagnostic, solve_transport,
                        transport_identity_residual, _trace_batch)
from .util import loglog_slope

EXIT_OK = 0
EXIT_HARD_ERROR = 1
EXIT_THRESHOLDS_MISSED = 2


# ---------------------------------------------------------------------------
# setting assembly
# ---------------------------------------------------------------------------

@dataclass
class Setting:
    config: RunConfig
    grid: Grid
    domain: Domain
    coeffs: Coefficients
    n_field: ScalarField
    k: float


def build_setting(config: RunConfig) -> Setting:
    config.validate()
    grid = Grid(config.grid.n, config.grid.box_side)
    d = config.domain
    if d.shape == "ball":
        shape = ball(d.center, d.radius)
    else:
        shape = ellipsoid(d.center, d.semi_axes)
    domain = build_domain(shape, grid, d.reference_direction, d.r_cut)
    c = config.coefficients
    spec = CoefficientSpec(
        mobility_amp=c.mobility_amp, mobility_center=tuple(c.mobility_center),
        mobility_width=c.mobility_width, sigma0=c.sigma0, sigma_amp=c.sigma_amp,
        sigma_center=tuple(c.sigma_center), sigma_width=c.sigma_width,
        omega=c.omega, epsilon0=c.epsilon0, mu0=c.mu0,
        cutoff_inner=c.cutoff_inner, cutoff_outer=c.cutoff_outer)
    coeffs = synthesize_coefficients(grid, spec)
    n_field, k = refractive_index(coeffs)
    if abs(k - config.cgo.k) > 1e-12 * max(k, config.cgo.k):
        raise ConfigError(f"cgo.k = {config.cgo.k} does not match omega*sqrt(eps0*mu0) = {k}")
    return Setting(config=config, grid=grid, domain=domain, coeffs=coeffs,
                   n_field=n_field, k=k)


def _solve_pair(setting: Setting, h: float, frame=None):
    cfg = setting.config.cgo
    p1, p2 = make_pair(h, cfg.a, cfg.k, frame)
    rems = []
    for p in (p1, p2):
        rem = solve_remainder(p, setting.n_field, tol=cfg.tol, max_iter=cfg.max_iter,
                              domain_diameter=setting.domain.diameter,
                              max_growth=cfg.max_growth)
        rem.residual = maxwell_residual(assemble_cgo(p, rem), setting.n_field,
                                        cfg.k, setting.domain.inside_mask)
        rems.append(rem)
    fields = [assemble_cgo(p, r) for p, r in zip((p1, p2), rems)]
    return (p1, p2), rems, fields


def synthesize_measurements(setting: Setting, frames=None) -> tuple[MeasurementSet, list]:
    """CGO solves and internal data for the configured pipeline."""
    cfg = setting.config
    h = cfg.cgo.h[0]
    params, fields, rems = [], [], []
    frame_list = frames if frames is not None else [None]
    for F in frame_list:
        (p1, p2), rr, ff = _solve_pair(setting, h, F)
        params.extend([p1, p2])
        rems.extend(rr)
        fields.extend(ff)
    mset = make_internal_data(setting.coeffs.L, fields, params, setting.domain)
    return mset, rems


def apply_noise(setting: Setting, mset: MeasurementSet, amplitude: float | None = None,
                frames=None):
    """Perturbed measurement set per the configured noise mode."""
    nz = setting.config.noise
    amp = nz.amplitude if amplitude is None else amplitude
    if amp == 0:
        return mset
    if nz.mode == "smooth-random":
        spec = NoiseSpec(amplitude=amp, seed=nz.seed, mode="smooth-random",
                         band_limit=nz.band_limit, norm_order=nz.norm_order)
        return perturb_data(mset, spec, mask=setting.domain.inside_mask)
    # coefficient-perturbation: regenerate data from (L + d*l, sigma + d*s)
    c = setting.config.coefficients
    pert = replace(setting.config,
                   coefficients=replace(c,
                                        mobility_amp=c.mobility_amp,
                                        sigma_amp=c.sigma_amp))
    grid = setting.grid
    bump_l = gaussian_bump(grid, (-0.2, -0.15, 0.2), 0.18)
    bump_s = gaussian_bump(grid, (0.18, -0.1, -0.15), 0.18)
    coeffs2 = synthesize_coefficients(grid, setting.coeffs.spec)
    coeffs2.L.values = coeffs2.L.values + amp * bump_l
    coeffs2.sigma.values = coeffs2.sigma.values + amp * bump_s
    n2, k2 = refractive_index(coeffs2)
    setting2 = Setting(config=setting.config, grid=grid, domain=setting.domain,
                       coeffs=coeffs2, n_field=n2, k=k2)
    mset2, _ = synthesize_measurements(setting2, frames=frames)
    return mset2


# ---------------------------------------------------------------------------
# reconstruction drivers
# ---------------------------------------------------------------------------

def _select_convention(d1, d2, chi, cfg, L_true, mask, direction_ref):
    """Assemble under the configured convention; 'auto' picks the one with the
    smaller ground-truth identity residual and records both."""
    tcfg = cfg.transport
    residuals = {}
    if tcfg.convention != "auto":
        tf = assemble_vector_field(d1, d2, chi, tcfg.convention,
                                   stencil_order=tcfg.stencil_order,
                                   direction_ref=direction_ref)
        if L_true is not None:
            residuals[tcfg.convention] = transport_identity_residual(tf, L_true, mask)
        return tf, residuals
    best = None
    for conv in ("derived-identity", "as-printed"):
        tf = assemble_vector_field(d1, d2, chi, conv,
                                   stencil_order=tcfg.stencil_order,
                                   direction_ref=direction_ref)
        if L_true is None:
            residuals[conv] = None
            if conv == "derived-identity":
                best = tf
            continue
        residuals[conv] = transport_identity_residual(tf, L_true, mask)
        if best is None or residuals[conv] < residuals[best.convention]:
            best = tf
    return best, residuals


@dataclass
class ReconstructionReport:
    config: RunConfig
    pipeline: str
    L_rec: ScalarField
    valid_mask: np.ndarray
    sigma_rec: np.ndarray
    n_rec: ScalarField
    recovery_mask: np.ndarray
    diagnostics: dict = dfield(default_factory=dict)
    errors: dict = dfield(default_factory=dict)
    thresholds: dict = dfield(default_factory=dict)
    exit_code: int = EXIT_OK
    artifacts: dict = dfield(default_factory=dict)

    # ground truth carried for stability re-runs and exports
    setting: Setting | None = None
    mset: MeasurementSet | None = None


def _reconstruct_transport2(setting: Setting, mset: MeasurementSet):
    cfg = setting.config
    grid, domain = setting.grid, setting.domain
    p1, p2 = mset.params[0], mset.params[1]
    chi = chi_weight(p1, p2, grid)
    L_true = setting.coeffs.L
    tf, conv_res = _select_convention(mset.data[0], mset.data[1], chi, cfg,
                                      L_true, domain.omega1_mask, p1.zeta0)
    L_rec, valid, tdiag = solve_transport(
        tf, mset, domain, mask=domain.inside_mask,
        interp_order=cfg.transport.interp_order,
        max_failure_fraction=cfg.transport.max_failure_fraction)
    diag = {
        "convention": tf.convention,
        "identity_residuals": conv_res,
        "direction_norms": direction_diagnostic(tf, L_true, p1.zeta0,
                                                domain.omega1_mask),
        "trace_failure_count": tdiag.trace_failures,
        "trace_seed_count": tdiag.seeds,
        "imag_transport_residual": tdiag.imag_residual,
        "rk_step": tdiag.step,
    }
    return L_rec, valid, tf, diag


def _reconstruct_matrix6(setting: Setting, mset: MeasurementSet, frames):
    cfg = setting.config
    grid, domain = setting.grid, setting.domain
    L_true = setting.coeffs.L
    tfs = []
    conv_all = {}
    for j in range(3):
        p1, p2 = mset.params[2 * j], mset.params[2 * j + 1]
        chi = chi_weight(p1, p2, grid)
        tf, conv_res = _select_convention(mset.data[2 * j], mset.data[2 * j + 1],
                                          chi, cfg, L_true, domain.inside_mask,
                                          p1.zeta0)
        conv_all[f"frame{j}"] = conv_res
        tfs.append(tf)
    gf = assemble_gradient_system(tfs, domain.inside_mask)
    L_rec, valid, ldiag = integrate_log_mobility(gf, mset, domain,
                                                 mask=domain.inside_mask,
                                                 interp_order=cfg.transport.interp_order)
    diag = {
        "convention": tfs[0].convention,
        "identity_residuals": conv_all,
        "max_condition": float(np.real(gf.condition.values[domain.inside_mask]).max()),
        "condition_failed_fraction": gf.failed_fraction,
        "nodewise_solve_residual": gf.solve_residual,
        "path_independence": ldiag.path_independence,
        "unusable_boundary_points": ldiag.unusable_boundary,
        "line_samples": ldiag.samples_per_path,
    }
    return L_rec, valid, tfs, diag


def run_pipeline(config: RunConfig) -> ReconstructionReport:
    """synthesize -> solve -> data -> reconstruct mobility -> recover sigma."""
    setting = build_setting(config)
    domain = setting.domain
    frames = None
    if config.pipeline == "matrix-6":
        fs = build_measurement_frames(config.cgo.k, config.cgo.h[0], config.cgo.a)
        frames = fs.frames
    mset, rems = synthesize_measurements(setting, frames=frames)
    mset_used = apply_noise(setting, mset, frames=frames)

    if config.pipeline == "transport-2":
        L_rec, valid, tf, diag = _reconstruct_transport2(setting, mset_used)
        base_mask = "omega1"
        compare_mask = domain.omega1_mask & valid
    else:
        L_rec, valid, tfs, diag = _reconstruct_matrix6(setting, mset_used, frames)
        base_mask = "inside"
        compare_mask = domain.inside_mask & valid

    rec = recover_coefficients(mset_used, L_rec, valid, domain, setting.k,
                               config.coefficients.omega, config.coefficients.epsilon0,
                               base_mask=base_mask,
                               smooth_degree=config.recovery.smooth_degree,
                               weighting=config.recovery.weighting,
                               L_floor=config.recovery.L_floor,
                               smooth=config.recovery.smooth)

    diag["cgo"] = [{
        "h": r.params.h, "a": r.params.a, "k": r.params.k, "index": r.params.index,
        "iterations": r.iterations, "final_update": r.final_update,
        "r_curlcurl": r.residual.r_curlcurl, "r_div": r.residual.r_div,
        "regularized_frequency_count": r.regularized_count,
        "greens_sign": r.greens_sign,
    } for r in rems]
    L0_vals, usable = boundary_mobility(mset_used)
    diag["boundary_mobility_unusable"] = int((~usable).sum())
    diag["low_weight_fraction"] = rec.low_weight_fraction

    # ground-truth errors
    L_true = np.real(setting.coeffs.L.values)
    sig_true = np.real(setting.coeffs.sigma.values)
    scale = config.coefficients.omega * config.coefficients.epsilon0
    errors = {}
    if compare_mask.any():
        errors["l_rel"] = float(np.abs(np.real(L_rec.values) - L_true)[compare_mask].max()
                                / np.abs(L_true).max())
    rmask = rec.mask
    if rmask.any():
        errors["sigma_abs"] = float(np.abs(rec.sigma_rec - sig_true)[rmask].max() / scale)
        n_true = setting.n_field.values
        errors["n_rel"] = float(np.abs(rec.n_rec.values - n_true)[rmask].max()
                                / np.abs(n_true).max())
    bt = boundary_mobility(mset)  # noiseless traces for the boundary check
    L_true_b, _ = bt
    # compare against the analytic mobility at the boundary samples
    interp = Interpolator(setting.grid, setting.coeffs.L.values, order=3)
    errors["boundary_mobility_rel"] = float(
        np.abs(L_true_b - np.real(interp(domain.boundary_points)))[usable].max()
        / np.abs(L_true).max())

    tol = config.tolerances
    thresholds = {
        "l_rel": errors.get("l_rel", np.inf) <= tol.l_rel,
        "sigma_abs": errors.get("sigma_abs", np.inf) <= tol.sigma_abs,
        "r_curlcurl": all(c["r_curlcurl"] <= tol.r_curlcurl for c in diag["cgo"]),
    }
    if config.pipeline == "matrix-6" and diag.get("path_independence") is not None:
        thresholds["path_independence"] = diag["path_independence"] <= tol.path_independence
    sel_res = diag["identity_residuals"]
    flat_res = []
    for v in sel_res.values():
        if isinstance(v, dict):
            flat_res.extend(x for x in v.values() if x is not None)
        elif v is not None:
            flat_res.append(v)
    if flat_res:
        thresholds["identity_residual"] = min(flat_res) <= tol.identity_residual
    exit_code = EXIT_OK if all(thresholds.values()) else EXIT_THRESHOLDS_MISSED

    report = ReconstructionReport(
        config=config, pipeline=config.pipeline, L_rec=L_rec, valid_mask=valid,
        sigma_rec=rec.sigma_rec, n_rec=rec.n_rec, recovery_mask=rec.mask,
        diagnostics=diag, errors=errors, thresholds=thresholds, exit_code=exit_code,
        setting=setting, mset=mset)
    if config.out:
        write_artifacts(report, mset_used)
    return report


def write_artifacts(report: ReconstructionReport, mset: MeasurementSet) -> None:
    out = Path(report.config.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = report.L_rec.grid
    files = {}
    files["L_rec"] = str(save_field(report.L_rec, out / "L_rec.f64", "L_rec"))
    files["sigma_rec"] = str(save_field(
        ScalarField(grid, report.sigma_rec.astype(complex)), out / "sigma_rec.f64",
        "sigma_rec"))
    files["n_rec"] = str(save_field(report.n_rec, out / "n_rec.f64", "n_rec"))
    if report.setting is not None:
        files["L_true"] = str(save_field(report.setting.coeffs.L, out / "L_true.f64",
                                         "L_true"))
        files["sigma_true"] = str(save_field(report.setting.coeffs.sigma,
                                             out / "sigma_true.f64", "sigma_true"))
    for j, d in enumerate(mset.data):
        files[f"D{j}"] = str(save_field(d.envelope, out / f"D{j}_envelope.f64",
                                        f"D{j}_envelope"))
        files[f"G{j}"] = str(write_boundary_trace_csv(mset.G[j], out / f"G{j}.csv"))
    manifest = {
        "config": report.config.to_dict(),
        "files": files,
        "params": [{
            "zeta": p.zeta, "eta": p.eta, "h": p.h, "a": p.a, "k": p.k,
            "index": p.index, "frame": p.frame,
        } for p in mset.params],
    }
    write_json(manifest, out / "manifest.json")
    write_json(summary_dict(report), out / "summary.json")
    report.artifacts = files


def summary_dict(report: ReconstructionReport) -> dict:
    return {
        "pipeline": report.pipeline,
        "errors": report.errors,
        "diagnostics": report.diagnostics,
        "thresholds": report.thresholds,
        "exit_code": report.exit_code,
        "valid_nodes": int(report.valid_mask.sum()),
        "recovery_nodes": int(report.recovery_mask.sum()),
    }


# ---------------------------------------------------------------------------
# stability experiments
# ---------------------------------------------------------------------------

@dataclass
class StabilityRow:
    delta: float
    delta_in: float
    delta_L: float
    delta_sigma: float
    ratio_L: float
    ratio_sigma: float


@dataclass
class StabilityReport:
    pipeline: str
    mode: str
    rows: list
    lipschitz_L: float
    lipschitz_sigma: float
    spread_L: float
    monotone: bool


def _reconstruct_for_stability(setting, mset, frames, norm_mask_base: str):
    cfg = setting.config
    domain = setting.domain
    if cfg.pipeline == "transport-2":
        L_rec, valid, _, _ = _reconstruct_transport2(setting, mset)
        base = "omega1"
    else:
        L_rec, valid, _, _ = _reconstruct_matrix6(setting, mset, frames)
        base = "inside"
    rec = recover_coefficients(mset, L_rec, valid, domain, setting.k,
                               cfg.coefficients.omega, cfg.coefficients.epsilon0,
                               base_mask=base, smooth_degree=cfg.recovery.smooth_degree,
                               weighting=cfg.recovery.weighting,
                               L_floor=cfg.recovery.L_floor, smooth=cfg.recovery.smooth)
    return L_rec, valid, rec


def stability_experiment(config: RunConfig, delta_list) -> StabilityReport:
    """Perturb the data at several amplitudes and record reconstruction norms.

    Norm orders: data m=2, mobility m=1, conductivity m=0, evaluated on the
    region appropriate to the pipeline (the stability subregion for two
    measurements, the full region for six).
    """
    deltas = sorted(float(d) for d in delta_list)
    if len([d for d in deltas if d > 0]) < 3:
        raise ConfigError("need at least 3 positive perturbation amplitudes")
    pos = [d for d in deltas if d > 0]
    if max(pos) / min(pos) < 99.0:
        raise ConfigError("amplitudes should span at least two decades")
    setting = build_setting(config)
    domain = setting.domain
    frames = None
    if config.pipeline == "matrix-6":
        frames = build_measurement_frames(config.cgo.k, config.cgo.h[0],
                                          config.cgo.a).frames
    mset0, _ = synthesize_measurements(setting, frames=frames)
    L0_rec, valid0, rec0 = _reconstruct_for_stability(setting, mset0, frames, "omega1")

    grid = setting.grid
    base_mask = domain.omega1_mask if config.pipeline == "transport-2" \
        else domain.inside_mask
    norm_mask = domain.eroded_mask(MASK_EROSION_CELLS,
                                   "omega1" if config.pipeline == "transport-2" else "inside")
    rows = []
    for d in deltas:
        if d == 0.0:
            rows.append(StabilityRow(0.0, 0.0, 0.0, 0.0, 0.0, 0.0))
            continue
        mset_d = apply_noise(setting, mset0, amplitude=d, frames=frames)
        L_d, valid_d, rec_d = _reconstruct_for_stability(setting, mset_d, frames, "omega1")
        din = data_difference_norm(mset0, mset_d, config.noise.norm_order, base_mask)
        common = valid0 & valid_d & norm_mask
        dL = discrete_cm_norm(ScalarField(grid, L_d.values - L0_rec.values), 1,
                              common).value
        ds = float(np.abs(rec_d.sigma_rec - rec0.sigma_rec)[rec0.mask & rec_d.mask].max())
        rows.append(StabilityRow(delta=d, delta_in=din, delta_L=dL, delta_sigma=ds,
                                 ratio_L=dL / din, ratio_sigma=ds / din))
    ratios = [r.ratio_L for r in rows if r.delta > 0]
    dins = [r.delta_in for r in rows if r.delta > 0]
    monotone = all(dins[i + 1] >= dins[i] for i in range(len(dins) - 1))
    return StabilityReport(pipeline=config.pipeline, mode=config.noise.mode, rows=rows,
                           lipschitz_L=max(ratios),
                           lipschitz_sigma=max(r.ratio_sigma for r in rows if r.delta > 0),
                           spread_L=max(ratios) / min(ratios), monotone=monotone)


def exit_map_stability(V: VectorField, domain: Domain, deltas, seed: int = 0,
                       subsample: int = 3, interp_order: int = 3) -> dict:
    """Exit-map sensitivity: perturb the traced field and compare exits.

    Returns {delta: ratio} with ratio = (sup |x_exit - x_exit'| +
    sup |t_exit - t_exit'|) / sup |V - V'|, measured over a subsampled set of
    seeds in the stability subregion.
    """
    grid = V.grid
    rng = np.random.default_rng(seed)
    pert = np.real(band_limited_noise(grid, rng, 3, components=3))
    pert /= np.abs(pert).max()
    seeds_all = np.stack(grid.mesh(), axis=-1)[domain.omega1_mask]
    seeds = seeds_all[::subsample]
    vmax = float(np.abs(V.values).max())
    dt = grid.spacing / (6.0 * vmax)
    max_steps = int(20.0 * domain.diameter / (0.05 * vmax * dt))

    def run_field(vals):
        vi = Interpolator(grid, vals, order=interp_order)
        res, _ = _trace_batch(seeds, lambda p: np.real(vi(p)), None, domain, dt,
                              +1.0, max_steps)
        return res

    base = run_field(np.real(V.values))
    out = {}
    for d in deltas:
        pert_res = run_field(np.real(V.values) + d * pert)
        ok = ~(base.failed | pert_res.failed)
        dx = np.linalg.norm(base.exit_points[ok] - pert_res.exit_points[ok], axis=1).max()
        dtm = np.abs(base.exit_times[ok] - pert_res.exit_times[ok]).max()
        out[float(d)] = float((dx + dtm) / d)
    return out


# ---------------------------------------------------------------------------
# decay sweep (remainder asymptotics + direction limit + operator norm)
# ---------------------------------------------------------------------------

@dataclass
class DecaySweepReport:
    remainder: object
    direction_rows: list       # (h, |zeta|, gap)
    direction_slope: float
    opnorm_rows: list          # (|zeta|, norm)
    opnorm_ratios: list


def decay_sweep(config: RunConfig) -> DecaySweepReport:
    setting = build_setting(config)
    h_list = sorted(config.cgo.h, reverse=True)
    if len(h_list) < 3:
        raise ConfigError("decay sweep needs at least 3 h values in cgo.h")
    mask = setting.domain.inside_mask
    rem_report = remainder_asymptotics(h_list, config.cgo.a, config.cgo.k, None,
                                       setting.n_field, mask,
                                       tol=config.cgo.tol, max_iter=config.cgo.max_iter)

    dir_rows = []
    for h in h_list:
        (p1, p2), rems, fields = _solve_pair(setting, h)
        mset = make_internal_data(setting.coeffs.L, fields, [p1, p2], setting.domain)
        chi = chi_weight(p1, p2, setting.grid)
        tf = assemble_vector_field(mset.data[0], mset.data[1], chi,
                                   "derived-identity",
                                   stencil_order=config.transport.stencil_order,
                                   direction_ref=p1.zeta0)
        gap = direction_diagnostic(tf, setting.coeffs.L, p1.zeta0, mask, orders=(0,))[0]
        dir_rows.append((h, p1.zeta_mag, gap))
    dir_slope = loglog_slope([r[0] for r in dir_rows], [r[2] for r in dir_rows])

    opnorm_rows = _opnorm_sweep(setting, h_list)
    ratios = [opnorm_rows[i + 1][1] / opnorm_rows[i][1]
              for i in range(len(opnorm_rows) - 1)]
    return DecaySweepReport(remainder=rem_report, direction_rows=dir_rows,
                            direction_slope=dir_slope, opnorm_rows=opnorm_rows,
                            opnorm_ratios=ratios)


def _opnorm_sweep(setting: Setting, h_list, n_probes: int = 10, band: int = 8,
                  seed: int = 7):
    """Measured Green-multiplier norm on random band-limited probes.

    Probes exclude the spectral plane orthogonal to Im(zeta): on that plane the
    discrete symbol has lattice minima that reflect quadrature artifacts of the
    singular set rather than the operator's decay, and they mask the 1/|zeta|
    scaling the probe measurement is after.
    """
    import scipy.fft as sfft

    from .cgo import faddeev_apply, make_zeta_eta
    from .fields import ScalarField as SF

    grid = setting.grid
    rng = np.random.default_rng(seed)
    k1, k2, k3 = grid.freq_mesh()
    band_mask = ((k1**2 + k2**2 + k3**2) <= band**2) & (np.abs(k2) >= 1)
    rows = []
    for h in sorted(h_list, reverse=True):
        p = make_zeta_eta(h, setting.config.cgo.a, setting.config.cgo.k)
        best = 0.0
        for _ in range(n_probes):
            spec = rng.standard_normal(k1.shape) + 1j * rng.standard_normal(k1.shape)
            v = sfft.ifftn(np.where(band_mask, spec, 0.0))
            out, _ = faddeev_apply(p, SF(grid, v))
            best = max(best, float(np.linalg.norm(out.values) / np.linalg.norm(v)))
        rows.append((p.zeta_mag, best))
    return rows


# ---------------------------------------------------------------------------
# plot-data export
# ---------------------------------------------------------------------------

def export_plot_data(out_dir: str | Path) -> list:
    """CSV bundle from a written run directory; header-only files when empty."""
    out = Path(out_dir)
    written = []
    summary = read_json(out / "summary.json") if (out / "summary.json").exists() else {}

    decay = summary.get("decay", {})
    rows = [(r["h"], r["zeta_mag"], r["gap_exact"], r["gap_limit"], r["pair_product_gap"])
            for r in decay.get("rows", [])]
    footer = (f"slope_exact={decay.get('slope_exact')}" if decay else None)
    written.append(write_rows_csv(out / "decay_curves.csv",
                                  ["h", "zeta_mag", "gap_exact", "gap_limit",
                                   "pair_product_gap"], rows, footer))

    stab = summary.get("stability", {})
    rows = [(r["delta"], r["delta_in"], r["delta_L"], r["delta_sigma"])
            for r in stab.get("rows", [])]
    written.append(write_rows_csv(out / "stability_scatter.csv",
                                  ["delta", "delta_in", "delta_L", "delta_sigma"], rows))

    from .fields import load_field

    n = None
    for name in ("L_true", "L_rec", "sigma_rec"):
        f = out / f"{name}.f64"
        if f.exists():
            fld = load_field(f)
            n = fld.grid.n
            axis = fld.grid.axis()
            written.append(write_slice_csv(fld.values, axis, "x3", n // 2,
                                           out / f"slice_{name}.csv", name))
    return written
