"""Synthetic boiling frames and thermal series with exact ground truth.

Bubbles are hard-edged disks (a pixel belongs to a disk iff its centre lies
inside), so mask areas are exactly countable. Columnar, near-CHF vapor is
approximated by vertical chains of overlapping disks. Blur, a static heater
texture and sensor noise are applied to the image only, after the mask is
captured.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml
from scipy import ndimage

from .imgcore import FrameRef, GrayImage, save_gray
from .segment import LabelMask, MASK_SUFFIX, save_label_mask
from .thermal import K_COPPER

logger = logging.getLogger(__name__)


class Bubble(NamedTuple):
    cx: float
    cy: float
    radius: float
    intensity: float = 0.15


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    bubbles: tuple = ()
    background: float = 0.85
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    seed: int = 0
    texture_amplitude: float = 0.0
    texture_seed: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("scene dimensions must be positive")
        object.__setattr__(self, "bubbles", tuple(Bubble(*b) for b in self.bubbles))
        for b in self.bubbles:
            if b.radius <= 0:
                raise ValueError("bubble radius must be > 0")
            if not 0.0 <= b.intensity <= 1.0:
                raise ValueError("bubble intensity must lie in [0, 1]")
        if not 0.0 <= self.background <= 1.0:
            raise ValueError("background must lie in [0, 1]")


@dataclass(frozen=True)
class Scene:
    image: GrayImage
    mask: LabelMask
    areas: tuple
    dropped: int = 0


def disk_mask(shape, cx, cy, r) -> np.ndarray:
    rows, cols = np.ogrid[: shape[0], : shape[1]]
    return (cols - cx) ** 2 + (rows - cy) ** 2 <= r * r


def heater_texture(shape, seed: int, amplitude: float) -> np.ndarray:
    """Static smoothed-noise surface pattern, zero mean, peak ``amplitude``."""
    if amplitude == 0:
        return np.zeros(shape)
    rng = np.random.default_rng(seed)
    field_ = ndimage.gaussian_filter(rng.standard_normal(shape), 2.0, mode="wrap")
    field_ -= field_.mean()
    return amplitude * field_ / np.abs(field_).max()


def render_scene(spec: SceneSpec) -> Scene:
    shape = (spec.height, spec.width)
    union = np.zeros(shape, dtype=bool)
    img = np.full(shape, float(spec.background))
    dropped = 0
    for b in spec.bubbles:
        m = disk_mask(shape, b.cx, b.cy, b.radius)
        if not m.any():
            logger.warning("bubble at (%.1f, %.1f) lies outside the canvas; dropped", b.cx, b.cy)
            dropped += 1
            continue
        union |= m
        img[m] = b.intensity
    img = img + heater_texture(shape, spec.texture_seed, spec.texture_amplitude) * (~union)
    if spec.blur_sigma > 0:
        img = ndimage.gaussian_filter(img, spec.blur_sigma, mode="nearest")
    if spec.noise_sigma > 0:
        img = img + np.random.default_rng(spec.seed).normal(0.0, spec.noise_sigma, shape)
    img = np.clip(img, 0.0, 1.0)

    labels, n = ndimage.label(union, structure=np.ones((3, 3), dtype=bool))
    mask = LabelMask(labels)
    areas = tuple(int(a) for a in np.bincount(labels.ravel(), minlength=n + 1)[1:])
    return Scene(GrayImage(img), mask, areas, dropped)


@dataclass(frozen=True)
class RegimeLevel:
    q: float
    n_bubbles: int
    radius: float = 8.0
    radius_jitter: float = 0.0
    elongation: int = 1
    n_small: int = 0
    small_radius: float = 2.0
    h: float | None = None


@dataclass(frozen=True)
class RegimeSchedule:
    levels: tuple
    frames_per_level: int = 4
    width: int = 160
    height: int = 160
    background: float = 0.85
    bubble_intensity: float = 0.15
    noise_sigma: float = 0.01
    blur_sigma: float = 0.8
    texture_amplitude: float = 0.2
    t_sat: float = 100.0
    dx: float = 0.005
    l: float = 0.002
    k_cu: float = K_COPPER

    def __post_init__(self):
        qs = [lv.q for lv in self.levels]
        if len(qs) < 1 or any(b <= a for a, b in zip(qs, qs[1:])):
            raise ValueError("schedule levels must be strictly increasing in q")
        if self.frames_per_level < 2:
            raise ValueError("frames_per_level must be >= 2")

    @classmethod
    def from_dict(cls, cfg: dict) -> "RegimeSchedule":
        cfg = dict(cfg)
        if not cfg.get("levels"):
            raise ValueError("schedule needs a non-empty 'levels' list")
        try:
            levels = tuple(RegimeLevel(**lv) for lv in cfg.pop("levels"))
            cfg.pop("seed", None)
            return cls(levels=levels, **cfg)
        except TypeError as exc:
            raise ValueError(f"bad schedule config: {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = [asdict(lv) for lv in self.levels]
        return d


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, *key]))


def _place(rng, schedule: RegimeSchedule, level: RegimeLevel) -> tuple:
    """Jittered, non-touching bubble (or column) placement on the integer grid."""
    W, H = schedule.width, schedule.height
    placed = []  # (cx, cy_top, cy_bottom, r)
    bubbles = []

    def fits(cx, y0, y1, r):
        for pcx, py0, py1, pr in placed:
            dy = max(py0 - y1, y0 - py1, 0)
            if (cx - pcx) ** 2 + dy**2 <= (r + pr + 2) ** 2:
                return False
        return True

    def put(r, chain, intensity):
        step = max(1, int(round(0.8 * r)))
        span = step * (chain - 1)
        margin = int(np.ceil(r)) + 1
        for _ in range(200):
            cx = int(rng.integers(margin, W - margin))
            lo, hi = margin + int(np.ceil(span)), H - margin
            if hi <= lo:
                return
            cy = int(rng.integers(lo, hi))
            if fits(cx, cy - span, cy, r):
                placed.append((cx, cy - span, cy, r))
                for j in range(chain):
                    bubbles.append(Bubble(cx, cy - j * step, r, intensity))
                return
        logger.warning("could not place a bubble without contact after 200 tries")

    for _ in range(level.n_bubbles):
        r = level.radius
        if level.radius_jitter:
            r = max(1.0, r + float(rng.uniform(-level.radius_jitter, level.radius_jitter)))
        put(r, max(1, level.elongation), schedule.bubble_intensity)
    for _ in range(level.n_small):
        put(level.small_radius, 1, schedule.bubble_intensity)
    return tuple(bubbles)


def plan_run(schedule: RegimeSchedule, seed: int) -> list:
    """Scene specs for every frame, as ``(level_index, frame_index, SceneSpec)``."""
    plan = []
    texture_seed = int(_stream(seed, 0xC0FFEE).integers(2**31))
    for li, level in enumerate(schedule.levels):
        for fi in range(schedule.frames_per_level):
            rng = _stream(seed, li, fi)
            spec = SceneSpec(
                width=schedule.width, height=schedule.height,
                bubbles=_place(rng, schedule, level),
                background=schedule.background,
                noise_sigma=schedule.noise_sigma,
                blur_sigma=schedule.blur_sigma,
                seed=int(rng.integers(2**31)),
                texture_amplitude=schedule.texture_amplitude,
                texture_seed=texture_seed,
            )
            plan.append((li, fi, spec))
    return plan


def default_htc(schedule: RegimeSchedule) -> list[float]:
    """HTC series (W/cm^2K) with a step at every morphology change.

    Explicit ``h`` values on levels take precedence.
    """
    hs, jumps = [], 0
    prev = None
    for i, lv in enumerate(schedule.levels):
        sig = (lv.n_bubbles, lv.radius, lv.elongation, lv.n_small)
        if prev is not None and sig != prev:
            jumps += 1
        prev = sig
        hs.append(lv.h if lv.h is not None else 1.0 + 0.05 * i + 0.5 * jumps)
    return hs


def thermal_rows(schedule: RegimeSchedule) -> list[dict]:
    """Thermocouple readings consistent with each level's q and h."""
    rows = []
    for lv, h in zip(schedule.levels, default_htc(schedule)):
        q_si = lv.q * 1e4
        t_w = schedule.t_sat + lv.q / h
        t3 = t_w + q_si * schedule.l / schedule.k_cu
        step = q_si * schedule.dx / schedule.k_cu
        rows.append({"q_nominal": lv.q, "t1": t3 + 2 * step, "t2": t3 + step,
                     "t3": t3, "t_sat": schedule.t_sat})
    return rows


def level_id(li: int) -> str:
    return f"L{li:02d}"


def frame_stem(li: int, fi: int) -> str:
    return f"{level_id(li)}_F{fi:03d}"


def render_run(schedule: RegimeSchedule, seed: int):
    """In-memory run: frame sets, ``{FrameRef.key: Scene}`` and thermal rows."""
    from .ivs import HeatFluxFrameSet

    scenes, refs = {}, {}
    for li, fi, spec in plan_run(schedule, seed):
        ref = FrameRef(level_id(li), fi, f"frames/{frame_stem(li, fi)}.pgm")
        scenes[ref.key] = render_scene(spec)
        refs.setdefault(li, []).append(ref)
    sets = [
        HeatFluxFrameSet(set_id=level_id(li), q=lv.q, frames=tuple(refs[li]))
        for li, lv in enumerate(schedule.levels)
    ]
    return sets, scenes, thermal_rows(schedule)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def generate_run(schedule: RegimeSchedule, seed: int, out_dir, *, run_id: str | None = None,
                 manifest_extra: dict | None = None) -> Path:
    """Write frames, ground-truth masks, thermal CSV and a manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    frame_lists: dict[int, list[str]] = {}
    for li, fi, spec in plan_run(schedule, seed):
        scene = render_scene(spec)
        stem = frame_stem(li, fi)
        save_gray(scene.image, out / "frames" / f"{stem}.pgm")
        save_label_mask(scene.mask, out / "masks" / f"{stem}{MASK_SUFFIX}")
        frame_lists.setdefault(li, []).append(f"frames/{stem}.pgm")

    with open(out / "thermal.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["q_nominal", "t1", "t2", "t3", "t_sat"],
                            lineterminator="\n")
        wr.writeheader()
        for row in thermal_rows(schedule):
            wr.writerow({k: repr(float(v)) for k, v in row.items()})

    manifest = {
        "run_id": run_id or f"synth-{seed}",
        "frame_sets": [
            {"id": level_id(li), "q": float(lv.q), "frames": frame_lists[li], "mask_dir": "masks"}
            for li, lv in enumerate(schedule.levels)
        ],
        "thermal_csv": "thermal.csv",
        "thermal": {"dx": schedule.dx, "l": schedule.l, "k_cu": schedule.k_cu,
                    "u_t": 0.5, "u_dx": 0.25e-3},
        "segment": {"mode": "classical", "threshold": "otsu", "polarity": "dark-bubbles",
                    "min_instance_px": 1, "connectivity": 8},
        "match": {"ratio_threshold": 0.88},
        "sift": {},
        "trials": {"n_trials": 7, "rng_seed": int(seed)},
        "output_dir": "report",
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    path = out / "manifest.yaml"
    _atomic_write_text(path, yaml.safe_dump(manifest, sort_keys=False))
    return path
