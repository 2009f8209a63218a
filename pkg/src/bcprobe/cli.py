"""Command-line front end.

Subcommands: ``simulate``, ``probe``, ``curve``, ``selftest``, ``compare``.
All artifacts of a configuration go to ``<output>/<config hash>/``.  On
failure the last line on stderr is a JSON object with an ``error`` category,
and the exit code identifies the category.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, archive
from .config import PRESETS, ConfigError, ExperimentConfig, load as load_config, preset
from .geometry import DiskProbe, HalfSpace, Obstacle, RasterGrid, clearance_radius, h_region_exact, obstacle_preset
from .measurement import MeasurementError, MeasurementSet, add_awgn
from .pgm import read_pgm, write_pgm, mask_to_image
from .probing import (VolumeCurve, calibrate, difference_curve, error_map, oracle_difference,
                      reconstruct_h_region, volume_curve)
from .solver import SimGrid, SolverConfigError, SolverDivergence, simulate_basis

log = logging.getLogger("bcprobe")

EXIT_CODES = {
    "selftest_failed": 1,
    "config_error": 2,
    "archive_error": 3,
    "solver_error": 4,
    "io_error": 5,
    "data_mismatch": 6,
    "comparison_failed": 7,
    "internal_error": 70,
}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


# ---------------------------------------------------------------------------
# Configuration from file, preset and flags
# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="INI configuration file")
    g.add_argument("--preset", choices=PRESETS, help="start from a shipped preset (default noiseless)")
    g.add_argument("--obstacle", choices=("none", "disk", "square"))
    g.add_argument("--n-space", type=int, help="solver cells per side")
    g.add_argument("--n-x", type=int, help="receiver count")
    g.add_argument("--n-t", type=int, help="time samples on [0, 2T]")
    g.add_argument("--snr", help="noise level in dB, or 'none'")
    g.add_argument("--seed", type=int)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--n-r", type=int, help="radius grid size")
    g.add_argument("--r-min", type=float)
    g.add_argument("--r-max", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--n-cg", type=int)
    g.add_argument("--centers", help="'receivers' or a count of uniformly spaced probe centers")
    g.add_argument("--raster", type=int, help="cells per side of output masks")
    g.add_argument("--workers", type=int)
    g.add_argument("--output", help="root directory for run directories")


def resolve_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise CliError("config_error", "give either --config or --preset, not both")
    cfg = load_config(args.config) if args.config else preset(args.preset or "noiseless")
    m, p = cfg.measurement, cfg.probe
    mk = {}
    if args.n_space is not None:
        mk["n_space"] = args.n_space
    if args.n_x is not None:
        mk["n_x"] = args.n_x
    if args.n_t is not None:
        mk["n_t"] = args.n_t
    if mk:
        m = replace(m, **mk)
    pk = {}
    for name in ("epsilon", "n_r", "alpha", "n_cg"):
        v = getattr(args, name)
        if v is not None:
            pk[name] = v
    if args.r_min is not None or args.r_max is not None:
        pk["r_range"] = (args.r_min if args.r_min is not None else p.r_range[0],
                         args.r_max if args.r_max is not None else p.r_range[1])
    if args.centers is not None:
        if args.centers == "receivers":
            pk["y_samples"] = None
        else:
            count = int(args.centers)
            if count < 1:
                raise CliError("config_error", "--centers needs a positive count")
            pk["y_samples"] = tuple((i + 0.5) / count for i in range(count))
    if pk:
        p = replace(p, **pk)
    ck = {"measurement": m, "probe": p}
    if args.obstacle is not None:
        ck["obstacle"] = obstacle_preset(args.obstacle)
    if args.snr is not None:
        ck["snr_db"] = None if args.snr.lower() == "none" else float(args.snr)
    for name in ("seed", "raster", "workers", "output"):
        v = getattr(args, name)
        if v is not None:
            ck[name] = v
    return replace(cfg, **ck)


def run_directory(cfg: ExperimentConfig) -> Path:
    d = Path(cfg.output) / cfg.config_hash()
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("io_error", f"cannot create run directory {d}: {exc.strerror}") from None
    return d


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_text(path: Path, text: str):
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_manifest(run: Path, name: str, cfg: ExperimentConfig, command: str, started: float,
                   outputs: list[Path]):
    import scipy

    manifest = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_ini(),
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "workers": cfg.workers,
        "wall_clock_seconds": round(time.time() - started, 3),
        "outputs": {str(p.relative_to(run)): _sha256(p) for p in outputs},
    }
    path = run / f"manifest_{name}.json"
    _write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _write_text(run / "config.ini", cfg.to_ini())
    return path


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _archive_name(cfg: ExperimentConfig, calibration: bool) -> str:
    if calibration:
        return "calibration.ndmap"
    noise = "" if cfg.snr_db is None else f"_snr{cfg.snr_db:g}_seed{cfg.seed}"
    return f"data_{cfg.obstacle.kind}{noise}.ndmap"


def simulate_data(cfg: ExperimentConfig, calibration: bool = False) -> MeasurementSet:
    grid = SimGrid.for_sampling(cfg.measurement.n_space, cfg.measurement.dt_samp, cfg.courant_dt)
    obstacle = Obstacle.none() if calibration else cfg.obstacle
    try:
        data = simulate_basis(obstacle, cfg.measurement, grid, workers=cfg.workers)
    except (SolverConfigError, SolverDivergence) as exc:
        raise CliError("solver_error", str(exc)) from None
    if cfg.noisy and not calibration:
        data = add_awgn(data, cfg.snr_db, cfg.seed)
    return data


def ensure_archive(cfg: ExperimentConfig, run: Path, calibration: bool) -> tuple[Path, MeasurementSet, str]:
    """Load the archive of this configuration from the run directory,
    simulating it on first use."""
    path = run / _archive_name(cfg, calibration)
    if path.exists():
        data = _load_archive(path)
        return path, data, _sha256(path)
    log.info("simulating %s", path.name)
    data = simulate_data(cfg, calibration)
    try:
        digest = archive.save(data, path)
    except OSError as exc:
        raise CliError("io_error", f"cannot write {path}: {exc.strerror}") from None
    return path, data, digest


def cmd_simulate(args) -> int:
    started = time.time()
    cfg = resolve_config(args)
    run = run_directory(cfg)
    path = run / _archive_name(cfg, args.calibration)
    data = simulate_data(cfg, args.calibration)
    try:
        digest = archive.save(data, path)
    except OSError as exc:
        raise CliError("io_error", f"cannot write {path}: {exc.strerror}") from None
    write_manifest(run, "calibration" if args.calibration else "simulate", cfg, "simulate", started, [path])
    print(f"archive {path}")
    print(f"sha256 {digest}")
    return 0


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------


def _load_archive(path) -> MeasurementSet:
    try:
        return archive.load(path)
    except archive.ArchiveFormatError as exc:
        raise CliError("archive_error", f"{path}: {exc}") from None
    except OSError as exc:
        raise CliError("io_error", f"cannot read {path}: {exc.strerror}") from None
    except MeasurementError as exc:
        raise CliError("archive_error", f"{path}: {exc}") from None


def _check_against_config(data: MeasurementSet, cfg: ExperimentConfig, what: str, calibration: bool):
    if data.config != cfg.measurement:
        raise CliError("data_mismatch", f"{what} archive was recorded with {data.config}, "
                                        f"configuration asks for {cfg.measurement}")
    if calibration:
        if not data.obstacle.is_empty:
            raise CliError("data_mismatch", "calibration archive must describe the empty background")
        return
    if data.obstacle != cfg.obstacle:
        raise CliError("data_mismatch", f"{what} archive holds obstacle {data.obstacle}, "
                                        f"configuration asks for {cfg.obstacle}")
    want = None if cfg.snr_db is None else (cfg.snr_db, cfg.seed)
    have = None if data.noise is None else (data.noise.snr_db, data.noise.seed)
    if want != have:
        raise CliError("data_mismatch", f"{what} archive noise {have} does not match configuration {want}")


def _fmt(y: float) -> str:
    return f"{y:.4f}"


def run_probe(cfg: ExperimentConfig, data: MeasurementSet, cal: MeasurementSet, run: Path):
    params = cfg.probe_parameters()
    T = data.config.T
    grid = RasterGrid(cfg.raster)
    out_dir = run / "probe"
    (out_dir / "differences").mkdir(parents=True, exist_ok=True)
    outputs = []

    def emit(path: Path, text: str):
        _write_text(path, text)
        outputs.append(path)

    log.info("half-space curves")
    hs = HalfSpace(params.r_range[1], T)
    hs_data = volume_curve(hs, data, params)
    hs_cal = volume_curve(hs, cal, params)
    emit(out_dir / "halfspace_data.csv", hs_data.to_csv())
    emit(out_dir / "halfspace_calibration.csv", hs_cal.to_csv())
    hs_diff = difference_curve(hs_data, hs_cal, oracle_difference(hs, data.obstacle, params.radii(), grid))
    emit(out_dir / "halfspace_difference.csv", hs_diff.to_csv())

    log.info("disk probes at %d centers", len(params.centers(data.config.n_x)))
    calibration = calibrate(cal, params)
    rec = reconstruct_h_region(data, None, params, grid, calibration=calibration)
    rows = ["y,clearance,immediate,exact_clearance"]
    r_max = params.r_range[1]
    for y, c, d in zip(rec.centers, rec.clearances, rec.differences):
        ref = oracle_difference(DiskProbe(float(y), r_max, T), data.obstacle, d.radii, grid)
        d = VolumeCurve(d.family, d.radii, d.estimates, ref, d.y1)
        emit(out_dir / "differences" / f"y_{_fmt(y)}.csv", d.to_csv())
        exact = min(r_max, clearance_radius((float(y), 0.0), data.obstacle, T))
        rows.append(f"{_fmt(y)},{c.radius!r},{int(c.immediate)},{exact!r}")
    for y, o, e in zip(rec.centers, rec.obstacle_curves, rec.empty_curves):
        emit(out_dir / "differences" / f"y_{_fmt(y)}_data.csv", o.to_csv())
        emit(out_dir / "differences" / f"y_{_fmt(y)}_calibration.csv", e.to_csv())
    emit(out_dir / "clearances.csv", "\n".join(rows) + "\n")

    exact = h_region_exact(data.obstacle, T, grid, r_max=r_max)
    em = error_map(rec.mask, exact)
    for name, img in (("reconstruction.pgm", mask_to_image(rec.mask.mask)),
                      ("exact_region.pgm", mask_to_image(exact)), ("error_map.pgm", em.image)):
        write_pgm(out_dir / name, img)
        outputs.append(out_dir / name)
    emit(out_dir / "error_summary.csv", em.summary_csv())
    return outputs, em


def cmd_probe(args) -> int:
    started = time.time()
    cfg = resolve_config(args)
    run = run_directory(cfg)
    if args.data:
        data = _load_archive(args.data)
    else:
        _, data, _ = ensure_archive(cfg, run, calibration=False)
    if args.calibration:
        cal = _load_archive(args.calibration)
    else:
        _, cal, _ = ensure_archive(cfg, run, calibration=True)
    _check_against_config(data, cfg, "data", calibration=False)
    _check_against_config(cal, cfg, "calibration", calibration=True)
    if not data.compatible_with(cal):
        raise CliError("data_mismatch", "data and calibration archives use different measurement configurations")
    outputs, em = run_probe(cfg, data, cal, run)
    manifest = write_manifest(run, "probe", cfg, "probe", started, outputs)
    print(f"run {run}")
    print(f"false_positive_fraction {em.false_positive_cells * em.grid.cell_area:.6f}")
    print(f"false_negative_fraction {em.false_negative_cells * em.grid.cell_area:.6f}")
    print(f"error_fraction {em.error_fraction:.6f}")
    print(f"manifest {manifest}")
    return 0


# ---------------------------------------------------------------------------
# curve
# ---------------------------------------------------------------------------


def cmd_curve(args) -> int:
    cfg = resolve_config(args)
    data = _load_archive(args.data)
    params = cfg.probe_parameters()
    T = data.config.T
    if args.family == "halfspace":
        template = HalfSpace(params.r_range[1], T)
    else:
        template = DiskProbe(args.y, params.r_range[1], T)
    curve = volume_curve(template, data, params)
    if args.calibration:
        cal = _load_archive(args.calibration)
        if not data.compatible_with(cal):
            raise CliError("data_mismatch", "data and calibration archives use different measurement configurations")
        ref = oracle_difference(template, data.obstacle, curve.radii, RasterGrid(cfg.raster))
        curve = difference_curve(curve, volume_curve(template, cal, params), ref)
    text = curve.to_csv()
    if args.out:
        try:
            _write_text(Path(args.out), text)
        except OSError as exc:
            raise CliError("io_error", f"cannot write {args.out}: {exc.strerror}") from None
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def _compare_archives(a: MeasurementSet, b: MeasurementSet) -> dict:
    if a.traces.shape != b.traces.shape:
        return {"kind": "archive", "same_shape": False, "relative_l2": float("inf")}
    diff = float(np.linalg.norm(a.traces - b.traces))
    scale = float(np.linalg.norm(b.traces)) or 1.0
    return {"kind": "archive", "same_shape": True, "same_config": a.config == b.config,
            "same_obstacle": a.obstacle == b.obstacle, "max_abs": float(np.max(np.abs(a.traces - b.traces))),
            "relative_l2": diff / scale}


def cmd_compare(args) -> int:
    paths = [Path(args.first), Path(args.second)]
    for p in paths:
        if not p.exists():
            raise CliError("io_error", f"no such file: {p}")
    heads = [p.read_bytes()[:8] for p in paths]
    if all(h.startswith(archive.MAGIC) for h in heads):
        report = _compare_archives(_load_archive(paths[0]), _load_archive(paths[1]))
        measure = report["relative_l2"]
    elif all(h.startswith(b"P5") for h in heads):
        try:
            a, b = (read_pgm(p) > 127 for p in paths)
        except ValueError as exc:
            raise CliError("io_error", str(exc)) from None
        if a.shape != b.shape:
            raise CliError("data_mismatch", "images have different sizes")
        em = error_map(a, b)
        report = {"kind": "mask", "false_positive_cells": em.false_positive_cells,
                  "false_negative_cells": em.false_negative_cells, "error_fraction": em.error_fraction}
        measure = em.error_fraction
    else:
        raise CliError("data_mismatch", "compare needs two NDMAP01 archives or two PGM masks")
    report["identical_bytes"] = _sha256(paths[0]) == _sha256(paths[1])
    print(json.dumps(report, sort_keys=True))
    if args.tolerance is not None and not measure <= args.tolerance:
        raise CliError("comparison_failed", f"difference {measure:.3e} exceeds tolerance {args.tolerance:.3e}")
    return 0


# ---------------------------------------------------------------------------
# selftest
# ---------------------------------------------------------------------------


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    failures = run_selftest(archive_path=args.archive, fast=args.fast, stream=sys.stdout)
    if failures:
        raise CliError("selftest_failed", f"{len(failures)} check(s) failed: " + "; ".join(failures))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bcprobe", description="Obstacle detection with the boundary control method.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate the basis measurements and write an NDMAP01 archive")
    _add_config_flags(p)
    p.add_argument("--calibration", action="store_true", help="simulate the empty, noiseless background instead")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("probe", help="volume curves, clearances, reconstruction and error map")
    _add_config_flags(p)
    p.add_argument("--data", help="obstacle archive (simulated into the run directory if omitted)")
    p.add_argument("--calibration", help="empty-background archive (simulated if omitted)")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("curve", help="one volume curve as CSV")
    _add_config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--calibration", help="subtract the curve of this empty-background archive")
    p.add_argument("--family", choices=("halfspace", "disk"), default="halfspace")
    p.add_argument("--y", type=float, default=0.5, help="disk probe center on the bottom edge")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("selftest", help="fast invariant suite")
    p.add_argument("--archive", help="also validate this archive file")
    p.add_argument("--fast", action="store_true", help="skip the solver-based check")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("compare", help="compare two archives or two PGM masks")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--tolerance", type=float, help="fail when the difference exceeds this value")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        category, message = exc.category, str(exc)
    except ConfigError as exc:
        category, message = "config_error", str(exc)
    except archive.ArchiveFormatError as exc:
        category, message = "archive_error", str(exc)
    except (SolverConfigError, SolverDivergence) as exc:
        category, message = "solver_error", str(exc)
    except (MeasurementError, ValueError) as exc:
        category, message = "config_error", str(exc)
    except OSError as exc:
        category, message = "io_error", str(exc)
    except Exception as exc:  # keep the machine-readable contract for bugs, too
        log.debug("unexpected failure", exc_info=True)
        category, message = "internal_error", f"{type(exc).__name__}: {exc}"
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES[category]


if __name__ == "__main__":
    sys.exit(main())
