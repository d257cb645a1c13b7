"""On-disk formats: Matrix Market vectors and matrices, the flat
``key = value`` config dialect (with includes), problem bundles, and the
JSON run-record schema.

Run-record layout (stable field names):

    {
      "version": ...,            tool version string
      "kind": "solve",
      "method": "wbipm" | "fhybr" | "warmstart",
      "config": {...},           everything needed to re-run this solve
      "seeds": {...},
      "history": [ {"k", "lambda", "alpha", "res_projected",
                    "res_full", "rel_error"}, ... ],
      "timings": {"total_s", "per_iteration_s"},
      "final": {"iterations", "stop_reason", "c", "res_full", "rel_error",
                "rmse_sections"?, "bound_report"?},
      "snapshots": {k: filename, ...}
    }

Wall-clock numbers live only under "timings" so the "history" block is
byte-reproducible across identical seeded runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io

from . import __version__
from .errors import ValidationError
from .forward import (
    DenseMatrixOperator,
    Grid3,
    OpticalCoefficients,
    SourceDetectorLayout,
)
from .solver import SolveResult


# ---------------------------------------------------------------------------
# Matrix Market helpers

def write_vector_mm(path, v: np.ndarray) -> None:
    scipy.io.mmwrite(str(path), np.asarray(v, float).reshape(-1, 1), precision=17)


def read_vector_mm(path) -> np.ndarray:
    return np.asarray(scipy.io.mmread(str(path)), dtype=float).ravel()


def write_matrix_mm(path, a: np.ndarray) -> None:
    scipy.io.mmwrite(str(path), np.asarray(a, float), precision=17)


def read_matrix_mm(path) -> np.ndarray:
    a = scipy.io.mmread(str(path))
    if hasattr(a, "toarray"):  # coordinate-format import
        a = a.toarray()
    return np.asarray(a, dtype=float)


# ---------------------------------------------------------------------------
# config dialect

def parse_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``include <path>`` splices another
    file (relative to the including one) and later keys win."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            out.update(parse_config(path.parent / line[len("include "):].strip()))
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValidationError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def format_config(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


DEFAULT_GENERATE_CONFIG: dict[str, str] = {
    "grid.nx": "16", "grid.ny": "16", "grid.nz": "8",
    "grid.hx": "1.0", "grid.hy": "1.0", "grid.hz": "1.0",
    "coeff.mu_a_ex": "0.01", "coeff.mu_a_em": "0.01",
    "coeff.kappa_ex": "0.33", "coeff.kappa_em": "0.33",
    "coeff.eta": "1.0", "coeff.robin": "0.66",
    "layout.sources_x": "3", "layout.sources_y": "3",
    "layout.detectors_x": "8", "layout.detectors_y": "8",
    "phantom.inclusions": "2",
    "phantom.amp_min": "0.5", "phantom.amp_max": "2.0",
    "noise.sigma": "0.10",
    "seed": "7",
    "normalize_operator": "true",
}


def resolve_generate_config(user: dict[str, str]) -> dict[str, str]:
    unknown = sorted(set(user) - set(DEFAULT_GENERATE_CONFIG))
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    cfg = dict(DEFAULT_GENERATE_CONFIG)
    cfg.update(user)
    return cfg


def _as_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes", "on"):
        return True
    if text.lower() in ("false", "0", "no", "off"):
        return False
    raise ValidationError(f"expected a boolean, got {text!r}")


def grid_from_config(cfg: dict[str, str]) -> Grid3:
    return Grid3(int(cfg["grid.nx"]), int(cfg["grid.ny"]), int(cfg["grid.nz"]),
                 float(cfg["grid.hx"]), float(cfg["grid.hy"]), float(cfg["grid.hz"]))


def coefficients_from_config(cfg: dict[str, str]) -> OpticalCoefficients:
    return OpticalCoefficients(
        mu_a_ex=float(cfg["coeff.mu_a_ex"]), mu_a_em=float(cfg["coeff.mu_a_em"]),
        kappa_ex=float(cfg["coeff.kappa_ex"]), kappa_em=float(cfg["coeff.kappa_em"]),
        eta=float(cfg["coeff.eta"]), robin_coeff=float(cfg["coeff.robin"]),
    )


def layout_from_config(cfg: dict[str, str], grid: Grid3) -> SourceDetectorLayout:
    return SourceDetectorLayout.regular(
        grid,
        (int(cfg["layout.sources_x"]), int(cfg["layout.sources_y"])),
        (int(cfg["layout.detectors_x"]), int(cfg["layout.detectors_y"])),
    )


# ---------------------------------------------------------------------------
# bundles

BUNDLE_FILES = ("A.mtx", "x_star.mtx", "b_clean.mtx", "b_noisy.mtx", "eta.mtx")


@dataclass
class Bundle:
    path: Path
    config: dict[str, str]
    operator: DenseMatrixOperator
    grid: Grid3
    x_star: np.ndarray
    b_clean: np.ndarray
    b_noisy: np.ndarray
    eta: np.ndarray
    sha256: str


def write_bundle(directory, cfg: dict[str, str], a: np.ndarray, x_star, b_clean,
                 b_noisy, eta, extra_meta: dict[str, str]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix_mm(directory / "A.mtx", a)
    write_vector_mm(directory / "x_star.mtx", x_star)
    write_vector_mm(directory / "b_clean.mtx", b_clean)
    write_vector_mm(directory / "b_noisy.mtx", b_noisy)
    write_vector_mm(directory / "eta.mtx", eta)
    meta = dict(cfg)
    meta.update(extra_meta)
    (directory / "bundle.cfg").write_text(format_config(meta))


def bundle_hash(directory) -> str:
    directory = Path(directory)
    digest = hashlib.sha256()
    for name in BUNDLE_FILES + ("bundle.cfg",):
        digest.update(name.encode())
        digest.update((directory / name).read_bytes())
    return digest.hexdigest()


def read_bundle(directory) -> Bundle:
    directory = Path(directory)
    for name in BUNDLE_FILES + ("bundle.cfg",):
        if not (directory / name).is_file():
            raise ValidationError(f"bundle is missing {name}: {directory}")
    cfg = parse_config(directory / "bundle.cfg")
    return Bundle(
        path=directory,
        config=cfg,
        operator=DenseMatrixOperator(read_matrix_mm(directory / "A.mtx")),
        grid=grid_from_config(cfg),
        x_star=read_vector_mm(directory / "x_star.mtx"),
        b_clean=read_vector_mm(directory / "b_clean.mtx"),
        b_noisy=read_vector_mm(directory / "b_noisy.mtx"),
        eta=read_vector_mm(directory / "eta.mtx"),
        sha256=bundle_hash(directory),
    )


# ---------------------------------------------------------------------------
# run records

def _clean_float(x: float):
    """JSON-safe float: NaN/inf become None."""
    x = float(x)
    return x if math.isfinite(x) else None


def history_rows(result: SolveResult) -> list[dict]:
    """Deterministic per-iteration fields (no wall-clock)."""
    return [
        {
            "k": rec.k,
            "lambda": _clean_float(rec.lam),
            "alpha": _clean_float(rec.alpha),
            "res_projected": _clean_float(rec.res_projected),
            "res_full": _clean_float(rec.res_full),
            "rel_error": _clean_float(rec.rel_error),
        }
        for rec in result.history
    ]


def build_run_record(result: SolveResult, config: dict, seeds: dict,
                     final_extra: dict | None = None,
                     snapshots: dict[int, str] | None = None) -> dict:
    final = {
        "iterations": result.iterations,
        "stop_reason": result.stop_reason,
        "c": _clean_float(result.c),
        "res_full": _clean_float(result.final_res_full),
        "rel_error": _clean_float(result.final_rel_error),
    }
    if final_extra:
        final.update(final_extra)
    times = [rec.wall_time for rec in result.history]
    return {
        "version": __version__,
        "kind": "solve",
        "method": result.method,
        "config": config,
        "seeds": seeds,
        "history": history_rows(result),
        "timings": {
            "total_s": times[-1] if times else 0.0,
            "per_iteration_s": times,
        },
        "final": final,
        "snapshots": snapshots or {},
    }


def write_run_record(path, record: dict) -> None:
    Path(path).write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")


def read_run_record(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read run record {path}: {exc}") from exc


def write_history_csv(path, rows: list[dict]) -> None:
    fields = ["k", "lambda", "alpha", "res_projected", "res_full", "rel_error"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({f: row.get(f) for f in fields})


def write_csv(path, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
