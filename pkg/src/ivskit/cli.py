"""Command-line entry point: ``ivskit {ivs,thermal,compare,synth,segment,version}``.

Exit codes: 0 success, 1 error, 2 finished but some records are degenerate.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import yaml

from . import __version__
from .config import ManifestError, RunManifest, load_manifest
from .imgcore import ImageFormatError, load_gray
from .ivs import compute_pair_ivs, read_ivs_csv, records_to_csv, records_to_json
from .matchsim import ZERO_KEYPOINTS
from .report import (
    DisjointGridError,
    align,
    comparison_csv,
    plot_components,
    plot_ivs,
    plot_overlay,
    plot_phi,
)
from .segment import (
    DEGENERATE_HISTOGRAM,
    ZERO_REFERENCE_AREA,
    SegmenterConfig,
    bubble_areas,
    save_label_mask,
    segment_classical,
    write_areas_csv,
)
from .synth import RegimeSchedule, generate_run
from .thermal import (
    GeometryError,
    geometry_from_config,
    read_thermal_csv,
    read_thermal_report,
    reduce_series,
    write_thermal_csv,
)

logger = logging.getLogger("ivskit")

EXIT_OK, EXIT_ERROR, EXIT_DEGENERATE = 0, 1, 2
DEGENERATE_FLAGS = {ZERO_KEYPOINTS, ZERO_REFERENCE_AREA, DEGENERATE_HISTOGRAM}


def _setup_logging(log_file=None):
    level = os.environ.get("IVSKIT_LOG", "WARNING").upper()
    root = logging.getLogger("ivskit")
    root.setLevel(logging.DEBUG)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(getattr(logging, level, logging.WARNING))
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(console)
    if log_file is not None:
        fh = logging.FileHandler(log_file, mode="w")
        fh.setLevel(logging.INFO)
        fh.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        root.addHandler(fh)


def _close_logging():
    root = logging.getLogger("ivskit")
    for h in list(root.handlers):
        if isinstance(h, logging.FileHandler):
            root.removeHandler(h)
            h.close()


def run_ivs(manifest: RunManifest, out_dir: Path, fmt: str = "csv", jobs: int = 1) -> int:
    """Visual part of the report bundle, plus thermal and comparison outputs when
    the manifest carries thermal data. Returns the exit code."""
    out_dir.mkdir(parents=True, exist_ok=True)
    records = compute_pair_ivs(
        manifest.frame_sets, manifest.trials, manifest.sift, manifest.match,
        manifest.segment, jobs=jobs,
    )
    if fmt == "json":
        meta = {"run_id": manifest.run_id, "rng_seed": manifest.trials.rng_seed,
                "n_trials": manifest.trials.n_trials}
        (out_dir / "ivs.json").write_text(records_to_json(records, meta))
    (out_dir / "ivs.csv").write_text(records_to_csv(records))
    plot_ivs(records, out_dir / "ivs_vs_q.svg")
    plot_components(records, out_dir / "similarity_vs_q.svg")

    log = logging.getLogger("ivskit.report")
    for r in records:
        if r.flags:
            log.info("record q_mid=%r (%s->%s) flags=%s", r.q_mid, r.set_n, r.set_n1, ";".join(r.flags))

    if manifest.thermal_csv is not None:
        thermal = reduce_series(read_thermal_csv(manifest.thermal_csv, manifest.thermal))
        write_thermal_csv(thermal, out_dir / "thermal.csv")
        plot_phi(thermal, out_dir / "phi_vs_q.svg")
        rows = align(read_ivs_csv(out_dir / "ivs.csv"), read_thermal_report(out_dir / "thermal.csv"))
        (out_dir / "comparison.csv").write_text(comparison_csv(rows))
        plot_overlay(rows, out_dir / "comparison.svg")

    if any(DEGENERATE_FLAGS & set(r.flags) for r in records):
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_ivs(args) -> int:
    manifest = load_manifest(args.manifest).with_overrides(args.seed, args.trials, args.out)
    out = manifest.output_dir or (manifest.base_dir / "report")
    out.mkdir(parents=True, exist_ok=True)
    _setup_logging(out / "ivs.log")
    try:
        return run_ivs(manifest, out, args.format, args.jobs)
    finally:
        _close_logging()


def cmd_thermal(args) -> int:
    geometry = {}
    inp = args.input
    if args.manifest:
        raw = yaml.safe_load(Path(args.manifest).read_text()) or {}
        geometry.update(raw.get("thermal") or {})
        if inp is None and raw.get("thermal_csv"):
            inp = str(Path(args.manifest).parent / raw["thermal_csv"])
    if args.config:
        geometry.update((yaml.safe_load(Path(args.config).read_text()) or {}).get("thermal", {}))
    for key in ("dx", "l", "k_cu", "u_t", "u_dx"):
        val = getattr(args, key)
        if val is not None:
            geometry[key] = val
    if inp is None:
        raise ManifestError("no thermal CSV given (--input or manifest thermal_csv)")
    geometry_from_config(geometry)
    samples = read_thermal_csv(inp, geometry)
    if len(samples) < 2:
        raise ValueError("thermal CSV needs at least two rows")
    out = Path(args.out or "thermal_report.csv")
    if out.suffix.lower() != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "thermal.csv"
    write_thermal_csv(reduce_series(samples), out)
    return EXIT_OK


def cmd_compare(args) -> int:
    ivs_rows = read_ivs_csv(args.ivs)
    thermal_rows = read_thermal_report(args.thermal) if args.thermal else []
    rows = align(ivs_rows, thermal_rows)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.csv").write_text(comparison_csv(rows))
    plot_overlay(rows, out / "comparison.svg")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = yaml.safe_load(Path(args.config).read_text()) or {}
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    schedule = RegimeSchedule.from_dict(cfg)
    path = generate_run(schedule, seed, args.out or "synth_run")
    print(path)
    return EXIT_OK


def cmd_segment(args) -> int:
    img = load_gray(args.image)
    threshold = "otsu" if args.threshold == "otsu" else float(args.threshold)
    cfg = SegmenterConfig(threshold=threshold, polarity=args.polarity,
                          min_instance_px=args.min_px, connectivity=args.connectivity)
    mask = segment_classical(img, cfg)
    if args.out:
        save_label_mask(mask, args.out)
    write_areas_csv([(Path(args.image).stem, bubble_areas(mask))], sys.stdout)
    return EXIT_DEGENERATE if DEGENERATE_FLAGS & set(mask.flags) else EXIT_OK


def cmd_version(args) -> int:
    print(__version__)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ivskit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ivs", help="compute IVS records for a run manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_ivs)

    p = sub.add_parser("thermal", help="reduce thermocouple readings to q, h and phi")
    p.add_argument("--input", help="thermal CSV (q_nominal,t1,t2,t3,t_sat)")
    p.add_argument("--manifest")
    p.add_argument("--config", help="YAML file with a 'thermal' block")
    p.add_argument("--dx", type=float)
    p.add_argument("--l", type=float)
    p.add_argument("--k-cu", dest="k_cu", type=float)
    p.add_argument("--u-t", dest="u_t", type=float)
    p.add_argument("--u-dx", dest="u_dx", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_thermal)

    p = sub.add_parser("compare", help="align IVS with phi and plot both")
    p.add_argument("--ivs", required=True)
    p.add_argument("--thermal")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="generate a synthetic fixture run")
    p.add_argument("--config", required=True, help="YAML regime schedule")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="segment one frame (debugging)")
    p.add_argument("--image", required=True)
    p.add_argument("--threshold", default="otsu")
    p.add_argument("--polarity", choices=("bright-bubbles", "dark-bubbles"), default="dark-bubbles")
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    p.add_argument("--min-px", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(func=cmd_version)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        return args.func(args)
    except (ManifestError, GeometryError, ImageFormatError, DisjointGridError,
            ValueError, OSError, yaml.YAMLError) as exc:
        logger.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
