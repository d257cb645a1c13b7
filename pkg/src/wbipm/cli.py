"""Command-line front end: generate, solve, evaluate, sweep.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
All plots are emitted as data (CSV); rendering is out of scope.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import DENSE_GATE, default_sections, rmse_by_zsection, theorem_bound, zsection_rmse
from .errors import NumericalError, ValidationError
from .fileio import (
    Bundle,
    build_run_record,
    bundle_hash,
    coefficients_from_config,
    format_config,
    grid_from_config,
    history_rows,
    layout_from_config,
    parse_config,
    read_bundle,
    read_run_record,
    read_vector_mm,
    resolve_generate_config,
    write_bundle,
    write_csv,
    write_history_csv,
    write_matrix_mm,
    write_run_record,
    write_vector_mm,
)
from .forward import add_noise, assemble_fmt_operator, generate_phantom, random_inclusions
from .reg import MmConfig, Preconditioner, build_preconditioner
from .solver import SolveResult, WarmBasis, fhybr_solve, warmstart_solve, wbipm_solve
from .warmbasis import WarmBasisSpec

DEFAULT_SNAPSHOTS = (20, 50, 120)
DEFAULT_EVAL_ITERS = (20, 50, 120)


# ---------------------------------------------------------------------------
# shared problem construction (used by generate and sweep)

def _build_problem(cfg: dict[str, str], phantom_seed: int, noise_seed: int,
                   sigma: float, operator_cache: dict | None = None):
    """Assemble (A, grid, x_star, b_clean, b_noisy, eta, scale) for a config.

    The operator depends only on grid/coefficients/layout, so sweeps cache
    it across cells; the phantom uses `phantom_seed` and the noise draw
    `noise_seed`.
    """
    grid = grid_from_config(cfg)
    key = tuple(sorted((k, v) for k, v in cfg.items()
                       if k.startswith(("grid.", "coeff.", "layout.")) or k == "normalize_operator"))
    cached = operator_cache.get(key) if operator_cache is not None else None
    if cached is None:
        coeff = coefficients_from_config(cfg)
        layout = layout_from_config(cfg, grid)
        op = assemble_fmt_operator(grid, coeff, layout)
        scale = 1.0
        if cfg["normalize_operator"].lower() in ("true", "1", "yes", "on"):
            scale = float(np.linalg.norm(op.matrix, 2))
            op.matrix /= scale
        cached = (op, scale)
        if operator_cache is not None:
            operator_cache[key] = cached
    op, scale = cached

    inclusions = random_inclusions(
        grid, int(cfg["phantom.inclusions"]), phantom_seed,
        amplitude_range=(float(cfg["phantom.amp_min"]), float(cfg["phantom.amp_max"])),
    )
    x_star = generate_phantom(grid, inclusions)
    b_clean = op.apply(x_star)
    b_noisy, eta = add_noise(b_clean, sigma, noise_seed)
    return op, grid, x_star, b_clean, b_noisy, eta, scale


def _apply_overrides(cfg: dict[str, str], overrides) -> dict[str, str]:
    for item in overrides or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        cfg[key] = value
    return cfg


# ---------------------------------------------------------------------------
# generate

def cmd_generate(args) -> int:
    user = parse_config(args.config) if args.config else {}
    cfg = resolve_generate_config(_apply_overrides(user, args.set))
    seed = int(cfg["seed"])
    sigma = float(cfg["noise.sigma"])
    # phantom draws from `seed`, the noise realization from `seed + 1`
    op, grid, x_star, b_clean, b_noisy, eta, scale = _build_problem(
        cfg, phantom_seed=seed, noise_seed=seed + 1, sigma=sigma)
    extra = {
        "derived.M": str(op.shape[0]),
        "derived.N": str(op.shape[1]),
        "derived.operator_scale": repr(scale),
        "derived.version": __version__,
    }
    write_bundle(args.out, cfg, op.matrix, x_star, b_clean, b_noisy, eta, extra)
    print(f"bundle written to {args.out}: M={op.shape[0]} N={op.shape[1]} "
          f"sigma={sigma} seed={seed}")
    return 0


# ---------------------------------------------------------------------------
# solve

def _mm_config_from_args(args) -> MmConfig:
    return MmConfig(
        epsilon=args.epsilon,
        lambda_rule=args.lambda_rule, lambda_value=args.lambda_value,
        alpha_rule=args.alpha_rule, alpha_value=args.alpha_value,
        max_outer=args.max_outer, stagnation_tol=args.stagnation_tol,
        precond=args.precond,
    )


def _run_solver(bundle: Bundle, method: str, warm_spec: str | None, wb_seed: int,
                cfg: MmConfig, snapshots, keep_state=False) -> tuple[SolveResult, dict]:
    n = bundle.operator.shape[1]
    solver_cfg = {
        "bundle": str(bundle.path),
        "bundle_sha256": bundle.sha256,
        "method": method,
        "epsilon": cfg.epsilon,
        "lambda_rule": cfg.lambda_rule, "lambda_value": cfg.lambda_value,
        "alpha_rule": cfg.alpha_rule, "alpha_value": cfg.alpha_value,
        "max_outer": cfg.max_outer, "stagnation_tol": cfg.stagnation_tol,
        "precond": cfg.precond,
        "warm_basis": warm_spec, "wb_seed": wb_seed,
        "snapshots": sorted(snapshots),
    }
    if method == "fhybr":
        result = fhybr_solve(bundle.operator, bundle.b_noisy, cfg,
                             ground_truth=bundle.x_star, snapshot_iters=snapshots,
                             keep_state=keep_state)
        return result, solver_cfg
    if warm_spec is None:
        raise ValidationError(f"method {method} requires --warm-basis")
    spec = WarmBasisSpec.parse(warm_spec, seed=wb_seed)
    direction = spec.realize(x_star=bundle.x_star, n=n)
    if method == "wbipm":
        wb = WarmBasis.from_direction(bundle.operator, direction)
        result = wbipm_solve(bundle.operator, bundle.b_noisy, wb, cfg,
                             ground_truth=bundle.x_star, snapshot_iters=snapshots,
                             keep_state=keep_state)
    elif method == "warmstart":
        result = warmstart_solve(bundle.operator, bundle.b_noisy, direction, cfg,
                                 ground_truth=bundle.x_star, snapshot_iters=snapshots,
                                 keep_state=keep_state)
    else:
        raise ValidationError(f"unknown method {method!r}")
    return result, solver_cfg


def cmd_solve(args) -> int:
    bundle = read_bundle(args.bundle)
    snapshots = _parse_int_list(args.snapshots) if args.snapshots else list(DEFAULT_SNAPSHOTS)
    cfg = _mm_config_from_args(args)
    result, solver_cfg = _run_solver(bundle, args.method, args.warm_basis,
                                     args.wb_seed, cfg, snapshots,
                                     keep_state=bool(args.dump_basis))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("")

    final_x_path = Path(f"{stem}_x.mtx")
    write_vector_mm(final_x_path, result.x)
    snapshot_files = {}
    for k, vec in sorted(result.snapshots.items()):
        path = Path(f"{stem}_snap_k{k}.mtx")
        write_vector_mm(path, vec)
        snapshot_files[str(k)] = path.name

    final_extra = {"x_file": final_x_path.name}
    grid = bundle.grid
    sections = default_sections(grid.nz)
    final_extra["rmse_sections"] = [
        {"z_lo_mm": lo, "z_hi_mm": hi, "rmse": r}
        for lo, hi, r in zsection_rmse(result.x, bundle.x_star, grid, sections)
    ]
    if args.bound_report:
        final_extra["bound_report"] = _bound_report_dict(bundle, args, result, cfg)

    record = build_run_record(
        result, config=solver_cfg,
        seeds={"wb_seed": args.wb_seed, "bundle_seed": int(bundle.config["seed"])},
        final_extra=final_extra, snapshots=snapshot_files,
    )
    write_run_record(out, record)
    write_history_csv(f"{stem}_history.csv", history_rows(result))

    if args.dump_basis and result.state is not None:
        dump = Path(args.dump_basis)
        dump.mkdir(parents=True, exist_ok=True)
        state = result.state
        for name, mat in (("U", state.U), ("V", state.V), ("Z", state.Z),
                          ("G", state.G), ("T", state.T)):
            write_matrix_mm(dump / f"{name}.mtx", mat)

    rel = result.final_rel_error
    print(f"{args.method}: {result.iterations} iterations ({result.stop_reason}), "
          f"final relative error {rel:.6g}, record {out}")
    return 0


def _bound_report_dict(bundle: Bundle, args, result: SolveResult, cfg: MmConfig):
    n = bundle.operator.shape[1]
    if n > DENSE_GATE:
        return {"skipped": f"N={n} exceeds dense gate {DENSE_GATE}"}
    if args.method != "wbipm":
        return {"skipped": "bound report applies to the wbipm method"}
    last = result.history[-1]
    lam = last.lam if last.lam > 0 else cfg.lambda_value
    alpha = last.alpha if last.alpha > 0 else cfg.alpha_value
    if lam <= 0 or alpha <= 0:
        return {"skipped": "bound needs positive lambda and alpha"}
    spec = WarmBasisSpec.parse(args.warm_basis, seed=args.wb_seed)
    direction = spec.realize(x_star=bundle.x_star, n=n)
    wb = WarmBasis.from_direction(bundle.operator, direction)
    if cfg.precond == "identity":
        l_z = Preconditioner.identity(n)
    else:
        basis_iter = result.z if cfg.precond == "mm_z" else result.x
        l_z = build_preconditioner(basis_iter, cfg.epsilon)
    rep = theorem_bound(bundle.x_star, wb, bundle.operator, lam, alpha, l_z, bundle.eta)
    return {
        "c1": rep.c1, "c2": rep.c2, "c3": rep.c3,
        "term_alpha": rep.term_alpha, "term_align": rep.term_align,
        "term_align_gamma_form": rep.term_align_gamma_form,
        "term_noise": rep.term_noise, "total": rep.total,
        "observed_error": rep.observed_error, "theta_plus": rep.theta_plus,
        "certified": rep.certified, "lambda": lam, "alpha": alpha,
    }


# ---------------------------------------------------------------------------
# evaluate

def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected a comma-separated integer list, got {text!r}") from exc


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected a comma-separated number list, got {text!r}") from exc


def _parse_sections(text: str) -> list[tuple[int, int]]:
    out = []
    for part in text.split(","):
        lo, _, hi = part.partition("-")
        try:
            out.append((int(lo), int(hi)))
        except ValueError as exc:
            raise ValidationError(f"bad section range {part!r}") from exc
    return out


def _record_x_at(record: dict, record_path: Path, k: int) -> tuple[np.ndarray, int, bool]:
    """Reconstruction at iteration k, clipped to what the run reached."""
    iterations = record["final"]["iterations"]
    snapshots = record.get("snapshots", {})
    clipped = k > iterations
    if str(k) in snapshots and not clipped:
        return read_vector_mm(record_path.parent / snapshots[str(k)]), k, False
    if not clipped and str(k) not in snapshots:
        raise ValidationError(
            f"record {record_path} has no snapshot at k={k}; re-run solve with --snapshots")
    return read_vector_mm(record_path.parent / record["final"]["x_file"]), iterations, True


def cmd_evaluate(args) -> int:
    bundle = read_bundle(args.bundle)
    record_paths = [Path(p) for p in args.records]
    if len(record_paths) < 2:
        raise ValidationError("evaluate needs a baseline record plus at least one candidate")
    records = [read_run_record(p) for p in record_paths]
    for path, rec in zip(record_paths, records):
        if rec["config"].get("bundle_sha256") != bundle.sha256:
            raise ValidationError(f"record {path} was produced from a different bundle")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ks = _parse_int_list(args.at) if args.at else list(DEFAULT_EVAL_ITERS)
    sections = _parse_sections(args.sections) if args.sections \
        else default_sections(bundle.grid.nz)

    # relative error vs iteration, one row per (record, k)
    err_rows = []
    for path, rec in zip(record_paths, records):
        for row in rec["history"]:
            err_rows.append({"record": path.name, "method": rec["method"],
                             "k": row["k"], "rel_error": row["rel_error"]})
    write_csv(out / "relative_error.csv",
              ["record", "method", "k", "rel_error"], err_rows)

    baseline_path, baseline = record_paths[0], records[0]
    warnings = []
    table_rows = []
    for cand_path, cand in zip(record_paths[1:], records[1:]):
        for k in ks:
            base_x, base_k, base_clip = _record_x_at(baseline, baseline_path, k)
            cand_x, cand_k, cand_clip = _record_x_at(cand, cand_path, k)
            if base_clip or cand_clip:
                warnings.append(f"k={k} clipped to baseline k={base_k}, candidate k={cand_k}")
            table = rmse_by_zsection(cand_x, bundle.x_star, bundle.grid, sections, base_x)
            for row in list(table.rows) + [table.overall]:
                label = f"{row.z_lo_mm:g}-{row.z_hi_mm:g}" if row is not table.overall else "overall"
                table_rows.append({
                    "candidate": cand_path.name, "k": k, "section_mm": label,
                    "baseline_rmse": row.baseline_rmse, "rmse": row.rmse,
                    "improvement_pct": row.improvement_pct,
                })
    write_csv(out / "rmse_improvement.csv",
              ["candidate", "k", "section_mm", "baseline_rmse", "rmse", "improvement_pct"],
              table_rows)
    write_run_record(out / "evaluation.json", {
        "version": __version__, "kind": "evaluate",
        "bundle": str(bundle.path), "bundle_sha256": bundle.sha256,
        "baseline": baseline_path.name,
        "candidates": [p.name for p in record_paths[1:]],
        "at_iterations": ks, "warnings": warnings,
        "rmse_improvement": table_rows,
    })
    print(f"evaluation written to {out} ({len(table_rows)} table rows, "
          f"{len(warnings)} warnings)")
    return 0


# ---------------------------------------------------------------------------
# sweep

def _sweep_cell(cfg, sigma, sigma_idx, angle, method, seed_idx, base_seed,
                solver_cfg: MmConfig, operator_cache) -> dict:
    problem_seed = base_seed + seed_idx
    noise_seed = problem_seed * 1000 + sigma_idx + 1
    wb_seed = problem_seed * 1000 + 555
    op, grid, x_star, b_clean, b_noisy, eta, scale = _build_problem(
        cfg, phantom_seed=problem_seed, noise_seed=noise_seed, sigma=sigma,
        operator_cache=operator_cache)
    if method == "fhybr":
        result = fhybr_solve(op, b_noisy, solver_cfg, ground_truth=x_star)
    elif method == "wbipm":
        direction = WarmBasisSpec("angle", theta_deg=angle, seed=wb_seed).realize(x_star=x_star)
        wb = WarmBasis.from_direction(op, direction)
        result = wbipm_solve(op, b_noisy, wb, solver_cfg, ground_truth=x_star)
    elif method == "warmstart":
        direction = WarmBasisSpec("angle", theta_deg=angle, seed=wb_seed).realize(x_star=x_star)
        result = warmstart_solve(op, b_noisy, direction, solver_cfg, ground_truth=x_star)
    else:
        raise ValidationError(f"unknown method {method!r}")
    return {
        "sigma": sigma, "angle_deg": angle, "method": method, "seed_index": seed_idx,
        "problem_seed": problem_seed, "noise_seed": noise_seed, "wb_seed": wb_seed,
        "final_rel_error": result.final_rel_error,
        "final_res_full": result.final_res_full,
        "iterations": result.iterations, "stop_reason": result.stop_reason,
    }


def cmd_sweep(args) -> int:
    user = parse_config(args.config) if args.config else {}
    cfg = resolve_generate_config(_apply_overrides(user, args.set))
    base_seed = int(cfg["seed"])
    sigmas = _parse_float_list(args.noise)
    angles = _parse_float_list(args.angles)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    n_seeds = int(args.seeds)
    if not sigmas or not angles or not methods or n_seeds < 1:
        raise ValidationError("sweep needs nonempty noise/angle/method lists and >= 1 seed")
    solver_cfg = _mm_config_from_args(args)

    cells = [(sigma, si, angle, method, seed_idx)
             for si, sigma in enumerate(sigmas)
             for angle in angles
             for method in methods
             for seed_idx in range(n_seeds)]

    out = Path(args.out)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    operator_cache: dict = {}
    # warm the cache serially so threads share one assembled operator
    _build_problem(cfg, phantom_seed=base_seed, noise_seed=base_seed, sigma=0.0,
                   operator_cache=operator_cache)

    def run(cell):
        sigma, si, angle, method, seed_idx = cell
        try:
            return _sweep_cell(cfg, sigma, si, angle, method, seed_idx, base_seed,
                               solver_cfg, operator_cache)
        except Exception as exc:  # per-cell failures must not kill the sweep
            return {"sigma": sigma, "angle_deg": angle, "method": method,
                    "seed_index": seed_idx, "error": f"{type(exc).__name__}: {exc}"}

    if args.jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(cell) for cell in cells]

    for res in results:
        name = (f"cell_s{res['sigma']:g}_a{res['angle_deg']:g}_"
                f"{res['method']}_seed{res['seed_index']}.json")
        write_run_record(out / "cells" / name, res)

    agg_rows = []
    for sigma in sigmas:
        for angle in angles:
            for method in methods:
                group = [r for r in results
                         if r["sigma"] == sigma and r["angle_deg"] == angle
                         and r["method"] == method]
                good = [r for r in group if "error" not in r]
                agg_rows.append({
                    "sigma": sigma, "angle_deg": angle, "method": method,
                    "n_seeds": len(group), "n_failed": len(group) - len(good),
                    "mean_final_rel_error":
                        float(np.mean([r["final_rel_error"] for r in good])) if good else None,
                    "mean_final_res_full":
                        float(np.mean([r["final_res_full"] for r in good])) if good else None,
                })
    write_csv(out / "aggregate.csv",
              ["sigma", "angle_deg", "method", "n_seeds", "n_failed",
               "mean_final_rel_error", "mean_final_res_full"], agg_rows)
    write_run_record(out / "sweep.json", {
        "version": __version__, "kind": "sweep", "config": cfg,
        "noise": sigmas, "angles": angles, "methods": methods, "seeds": n_seeds,
        "aggregate": agg_rows,
    })
    print(f"sweep finished: {len(cells)} cells, aggregate in {out / 'aggregate.csv'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=1e-6, help="l1 smoothing parameter")
    p.add_argument("--lambda-rule", dest="lambda_rule", choices=["fixed", "wgcv"],
                   default="wgcv")
    p.add_argument("--lambda", dest="lambda_value", type=float, default=0.1,
                   help="lambda for --lambda-rule fixed")
    p.add_argument("--alpha-rule", dest="alpha_rule", choices=["fixed", "wgcv"],
                   default="fixed")
    p.add_argument("--alpha", dest="alpha_value", type=float, default=0.1,
                   help="alpha for --alpha-rule fixed")
    p.add_argument("--max-outer", type=int, default=120)
    p.add_argument("--stagnation-tol", type=float, default=1e-6)
    p.add_argument("--precond", choices=["mm_z", "mm_x", "identity"], default="mm_z")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wbipm",
        description="Warm-basis iterative projection solver for sparse linear "
                    "inverse problems (FMT-analog desk-scale toolkit).",
    )
    parser.add_argument("--version", action="version", version=f"wbipm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="assemble a synthetic problem bundle")
    p.add_argument("--config", help="key = value config file (defaults apply)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key")
    p.add_argument("--out", required=True, help="bundle output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="run a solver on a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--method", choices=["wbipm", "fhybr", "warmstart"], required=True)
    p.add_argument("--warm-basis", dest="warm_basis",
                   help="exact | angle:<deg> | file:<path> | random")
    p.add_argument("--wb-seed", dest="wb_seed", type=int, default=0)
    p.add_argument("--out", required=True, help="run-record JSON path")
    p.add_argument("--snapshots", help="comma list of iterations to snapshot "
                                       f"(default {','.join(map(str, DEFAULT_SNAPSHOTS))})")
    p.add_argument("--dump-basis", dest="dump_basis",
                   help="directory for Matrix Market dumps of U, V, Z, G, T")
    p.add_argument("--bound-report", dest="bound_report", action="store_true",
                   help="attach the dense-scale error-bound report")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="compare run records against ground truth")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--at", help="comma list of iterations for the RMSE tables "
                                f"(default {','.join(map(str, DEFAULT_EVAL_ITERS))})")
    p.add_argument("--sections", help="z sections as 1-based slice ranges, "
                                      "e.g. 1-4,5-8,9-12,13-15")
    p.add_argument("records", nargs="+", help="baseline record first, then candidates")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="noise x angle x method x seed study")
    p.add_argument("--config", help="base problem config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.add_argument("--noise", required=True, help="comma list of noise levels")
    p.add_argument("--angles", default="20", help="comma list of warm-basis angles (deg)")
    p.add_argument("--methods", default="wbipm,fhybr")
    p.add_argument("--seeds", default="10", help="number of seeded repetitions")
    p.add_argument("--jobs", type=int, default=4)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
