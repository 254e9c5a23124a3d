"""Run manifests: one YAML file holding frame sets, thermal input and configs.

Paths inside a manifest are relative to the manifest's directory.
"""

from __future__ import annotations

import glob
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .imgcore import FrameRef
from .ivs import HeatFluxFrameSet, TrialPlan, check_run
from .matchsim import MatchParams
from .segment import SegmenterConfig
from .sift import SiftParams


class ManifestError(ValueError):
    """Raised for malformed or inconsistent run manifests."""


def _build(cls, cfg, section):
    cfg = dict(cfg or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ManifestError(f"unknown keys in [{section}]: {', '.join(unknown)}")
    try:
        return cls(**cfg)
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"invalid [{section}] config: {exc}") from exc


@dataclass
class RunManifest:
    run_id: str
    frame_sets: list
    base_dir: Path
    thermal_csv: Path | None = None
    thermal: dict = field(default_factory=dict)
    sift: SiftParams = field(default_factory=SiftParams)
    match: MatchParams = field(default_factory=MatchParams)
    segment: SegmenterConfig = field(default_factory=SegmenterConfig)
    trials: TrialPlan = field(default_factory=TrialPlan)
    output_dir: Path | None = None

    def with_overrides(self, seed=None, trials=None, out=None) -> "RunManifest":
        plan = self.trials
        if seed is not None:
            plan = replace(plan, rng_seed=int(seed))
        if trials is not None:
            plan = replace(plan, n_trials=int(trials))
        return replace(self, trials=plan,
                       output_dir=Path(out) if out is not None else self.output_dir)


def _frame_list(entry, base: Path, set_id: str) -> list[str]:
    frames = entry.get("frames")
    if isinstance(frames, str):
        found = sorted(glob.glob(str(base / frames)))
        if not found:
            raise ManifestError(f"frame set {set_id!r}: pattern {frames!r} matches no files")
        return found
    if not frames:
        raise ManifestError(f"frame set {set_id!r} lists no frames")
    return [str(base / f) for f in frames]


def load_manifest(path) -> RunManifest:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"{path}: manifest must be a mapping")
    base = path.parent.resolve()
    sets = []
    for i, entry in enumerate(raw.get("frame_sets") or []):
        set_id = str(entry.get("id", f"set{i:02d}"))
        if "q" not in entry:
            raise ManifestError(f"frame set {set_id!r} has no heat flux q")
        frames = _frame_list(entry, base, set_id)
        missing = [f for f in frames if not Path(f).is_file()]
        if missing:
            raise ManifestError(f"frame set {set_id!r}: missing frames {missing[:3]}")
        mask_dir = entry.get("mask_dir")
        try:
            sets.append(HeatFluxFrameSet(
                set_id=set_id, q=float(entry["q"]),
                frames=tuple(FrameRef(set_id, j, f) for j, f in enumerate(frames)),
                mask_dir=str(base / mask_dir) if mask_dir else None,
            ))
        except ValueError as exc:
            raise ManifestError(str(exc)) from exc
    try:
        check_run(sets)
    except ValueError as exc:
        raise ManifestError(str(exc)) from exc

    thermal_csv = raw.get("thermal_csv")
    out = raw.get("output_dir")
    return RunManifest(
        run_id=str(raw.get("run_id", path.stem)),
        frame_sets=sets,
        base_dir=base,
        thermal_csv=base / thermal_csv if thermal_csv else None,
        thermal=dict(raw.get("thermal") or {}),
        sift=_build(SiftParams, raw.get("sift"), "sift"),
        match=_build(MatchParams, raw.get("match"), "match"),
        segment=_build(SegmenterConfig, raw.get("segment"), "segment"),
        trials=_build(TrialPlan, raw.get("trials"), "trials"),
        output_dir=base / out if out else None,
    )
