"""Command-line interface: pipeline runs, checks, stability and decay sweeps."""
from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

from . import EsmaxError
from .config import RunConfig
from .io import write_json
from .pipeline import (EXIT_HARD_ERROR, EXIT_OK, EXIT_THRESHOLDS_MISSED,
                       build_setting, decay_sweep, export_plot_data, run_pipeline,
                       stability_experiment, summary_dict, synthesize_measurements,
                       write_artifacts)
from .util import apply_thread_cap


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    h_list = [float(x) for x in args.h.split(",")] if args.h else None
    return cfg.with_overrides(grid_n=args.grid, h_list=h_list, seed=args.seed,
                              out=args.out, pipeline=getattr(args, "pipeline", None))


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file (defaults apply otherwise)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--grid", type=int, help="grid samples per axis override")
    p.add_argument("--h", help="comma-separated list of h values")


def cmd_cgo_check(args) -> int:
    cfg = _load_config(args)
    setting = build_setting(cfg)
    mset, rems = synthesize_measurements(setting)
    diag = {"cgo": [{
        "h": r.params.h, "index": r.params.index, "iterations": r.iterations,
        "final_update": r.final_update, "r_curlcurl": r.residual.r_curlcurl,
        "r_div": r.residual.r_div,
        "regularized_frequency_count": r.regularized_count,
        "greens_sign": r.greens_sign,
    } for r in rems]}
    ok = all(c["r_curlcurl"] <= cfg.tolerances.r_curlcurl for c in diag["cgo"])
    if cfg.out:
        write_json(diag, Path(cfg.out) / "cgo_check.json")
    _print_dict(diag)
    return EXIT_OK if ok else EXIT_THRESHOLDS_MISSED


def cmd_forward(args) -> int:
    cfg = _load_config(args)
    if not cfg.out:
        print("forward: --out is required", file=sys.stderr)
        return EXIT_HARD_ERROR
    setting = build_setting(cfg)
    frames = None
    if cfg.pipeline == "matrix-6":
        from .matrix_recon import build_measurement_frames
        frames = build_measurement_frames(cfg.cgo.k, cfg.cgo.h[0], cfg.cgo.a).frames
    mset, rems = synthesize_measurements(setting, frames=frames)
    from .fields import save_field
    from .io import write_boundary_trace_csv

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    files["L_true"] = str(save_field(setting.coeffs.L, out / "L_true.f64", "L_true"))
    files["sigma_true"] = str(save_field(setting.coeffs.sigma, out / "sigma_true.f64",
                                         "sigma_true"))
    for j, d in enumerate(mset.data):
        files[f"D{j}"] = str(save_field(d.envelope, out / f"D{j}_envelope.f64",
                                        f"D{j}_envelope"))
        files[f"G{j}"] = str(write_boundary_trace_csv(mset.G[j], out / f"G{j}.csv"))
    manifest = {"config": cfg.to_dict(), "files": files,
                "params": [{"zeta": p.zeta, "eta": p.eta, "h": p.h, "a": p.a,
                            "k": p.k, "index": p.index, "frame": p.frame}
                           for p in mset.params]}
    write_json(manifest, out / "manifest.json")
    print(f"wrote {len(files)} artifacts to {out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    report = run_pipeline(cfg)
    _print_dict(summary_dict(report))
    return report.exit_code


def cmd_recover_sigma(args) -> int:
    # re-runs the recovery stage of a full pipeline pass
    cfg = _load_config(args)
    report = run_pipeline(cfg)
    print(f"sigma_abs error: {report.errors.get('sigma_abs')}")
    return report.exit_code


def cmd_stability(args) -> int:
    cfg = _load_config(args)
    deltas = [float(x) for x in args.deltas.split(",")]
    rep = stability_experiment(cfg, deltas)
    data = {"stability": {
        "pipeline": rep.pipeline, "mode": rep.mode,
        "rows": [asdict(r) for r in rep.rows],
        "lipschitz_L": rep.lipschitz_L, "lipschitz_sigma": rep.lipschitz_sigma,
        "spread_L": rep.spread_L, "monotone": rep.monotone,
    }}
    if cfg.out:
        write_json(data, Path(cfg.out) / "stability.json")
    _print_dict(data)
    return EXIT_OK


def cmd_decay_sweep(args) -> int:
    cfg = _load_config(args)
    rep = decay_sweep(cfg)
    data = {"decay": {
        "rows": [{"h": r.h, "zeta_mag": r.zeta_mag, "gap_exact": r.gap_exact,
                  "gap_limit": r.gap_limit, "pair_product_gap": r.pair_product_gap}
                 for r in rep.remainder.rows],
        "slope_exact": rep.remainder.slope_exact,
        "slope_limit": rep.remainder.slope_limit,
        "product_monotone": rep.remainder.product_monotone,
        "direction_rows": rep.direction_rows,
        "direction_slope": rep.direction_slope,
        "opnorm_rows": rep.opnorm_rows,
        "opnorm_ratios": rep.opnorm_ratios,
    }}
    if cfg.out:
        write_json(data, Path(cfg.out) / "decay.json")
    _print_dict(data)
    return EXIT_OK


def cmd_export_plots(args) -> int:
    out = args.out or (args.config and RunConfig.from_yaml(args.config).out)
    if not out:
        print("export-plots: --out is required", file=sys.stderr)
        return EXIT_HARD_ERROR
    written = export_plot_data(out)
    for p in written:
        print(p)
    return EXIT_OK


def _print_dict(d: dict, indent: int = 0):
    import json

    from .io import _json_default

    print(json.dumps(d, indent=1, sort_keys=True, default=_json_default))


def main(argv=None) -> int:
    apply_thread_cap()
    ap = argparse.ArgumentParser(prog="esmax",
                                 description="mobility/conductivity reconstruction "
                                             "from internal Maxwell data")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cgo-check", help="solve and validate the oscillating solutions")
    _add_common(p)
    p.set_defaults(fn=cmd_cgo_check)

    p = sub.add_parser("forward", help="synthesize coefficients, data and traces")
    _add_common(p)
    p.set_defaults(fn=cmd_forward)

    p = sub.add_parser("reconstruct", help="full reconstruction pipeline")
    _add_common(p)
    p.add_argument("--pipeline", choices=("transport-2", "matrix-6"))
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("recover-sigma", help="mobility + conductivity recovery")
    _add_common(p)
    p.add_argument("--pipeline", choices=("transport-2", "matrix-6"))
    p.set_defaults(fn=cmd_recover_sigma)

    p = sub.add_parser("stability", help="perturb data and fit stability ratios")
    _add_common(p)
    p.add_argument("--deltas", default="1e-4,1e-3,1e-2",
                   help="comma-separated perturbation amplitudes")
    p.add_argument("--pipeline", choices=("transport-2", "matrix-6"))
    p.set_defaults(fn=cmd_stability)

    p = sub.add_parser("decay-sweep", help="remainder/direction decay over h")
    _add_common(p)
    p.set_defaults(fn=cmd_decay_sweep)

    p = sub.add_parser("export-plots", help="CSV bundle from a run directory")
    _add_common(p)
    p.set_defaults(fn=cmd_export_plots)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except EsmaxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HARD_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
