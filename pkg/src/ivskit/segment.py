"""Bubble masks, vapor-area accounting and the physical similarity score.

Masks come either from the built-in threshold + connected-component
segmenter or from externally produced 16-bit PGM label maps
(``<frame_stem>.mask.pgm``, pixel value = instance id, 0 = background).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .imgcore import GrayImage, ImageFormatError, read_pgm_raw, to_grayscale_u8, write_pgm_raw

logger = logging.getLogger(__name__)

NO_INSTANCES = "no_instances"
NONE_ABOVE_MEAN = "no_area_above_mean"
DEGENERATE_HISTOGRAM = "degenerate_histogram"
ZERO_REFERENCE_AREA = "zero_reference_area"
OUT_OF_RANGE = "phys_out_of_range"

MASK_SUFFIX = ".mask.pgm"


@dataclass(frozen=True)
class SegmenterConfig:
    mode: str = "classical"
    threshold: str | float = "otsu"
    polarity: str = "dark-bubbles"
    min_instance_px: int = 1
    connectivity: int = 8
    mask_dir: str | None = None

    def __post_init__(self):
        if self.mode not in ("classical", "external"):
            raise ValueError(f"unknown segmenter mode {self.mode!r}")
        if self.threshold != "otsu":
            tau = float(self.threshold)
            if not 0.0 < tau < 1.0:
                raise ValueError("fixed threshold must lie in (0, 1)")
        if self.polarity not in ("bright-bubbles", "dark-bubbles"):
            raise ValueError(f"unknown polarity {self.polarity!r}")
        if self.min_instance_px < 1:
            raise ValueError("min_instance_px must be >= 1")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


@dataclass(frozen=True, eq=False)
class LabelMask:
    labels: np.ndarray
    flags: tuple = ()

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.int64, copy=True)
        if lab.ndim != 2:
            raise ValueError("label mask must be 2-D")
        if lab.size and lab.min() < 0:
            raise ValueError("label ids must be non-negative")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def n_instances(self) -> int:
        return len(self.instance_ids())

    def instance_ids(self) -> np.ndarray:
        ids = np.unique(self.labels)
        return ids[ids > 0]


@dataclass(frozen=True)
class BubbleAreas:
    areas: tuple
    mean_area: float
    filtered_total: int
    flags: tuple = ()


class PhysResult(NamedTuple):
    value: float
    flags: tuple = ()


def otsu_threshold(u8: np.ndarray) -> int | None:
    """Otsu level on the 256-bin histogram; foreground is ``u8 > level``.

    Returns None when fewer than two grey levels are present.
    """
    hist = np.bincount(np.asarray(u8, dtype=np.uint8).ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(hist) < 2:
        return None
    total = hist.sum()
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    w1 = total - w0
    mu0_sum = np.cumsum(hist * levels)
    mu_total = mu0_sum[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_total * w0 / total - mu0_sum) ** 2 / (w0 * w1)
    between[(w0 == 0) | (w1 == 0)] = -1.0
    return int(np.argmax(between))


def _raster_relabel(labels: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Renumber kept components 1..n in raster order of their first pixel."""
    flat = labels.ravel()
    ids, first = np.unique(flat, return_index=True)
    sel = (ids > 0) & keep[ids]
    order = ids[sel][np.argsort(first[sel], kind="stable")]
    lut = np.zeros(labels.max() + 1, dtype=np.int64)
    lut[order] = np.arange(1, len(order) + 1)
    return lut[labels]


def binarize(img: GrayImage, cfg: SegmenterConfig) -> tuple[np.ndarray, tuple]:
    if cfg.threshold == "otsu":
        u8 = to_grayscale_u8(img)
        level = otsu_threshold(u8)
        if level is None:
            logger.warning("constant image: Otsu threshold undefined, empty mask")
            return np.zeros(img.shape, dtype=bool), (DEGENERATE_HISTOGRAM,)
        bright = u8 > level
    else:
        bright = img.data > float(cfg.threshold)
    fg = bright if cfg.polarity == "bright-bubbles" else ~bright
    return fg, ()


def segment_classical(img: GrayImage, cfg: SegmenterConfig | None = None) -> LabelMask:
    """Threshold, apply polarity and label connected components."""
    cfg = cfg or SegmenterConfig()
    fg, flags = binarize(img, cfg)
    if not fg.any():
        return LabelMask(np.zeros(img.shape, dtype=np.int64), flags)
    structure = ndimage.generate_binary_structure(2, 2 if cfg.connectivity == 8 else 1)
    labels, n = ndimage.label(fg, structure=structure)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    keep = sizes >= cfg.min_instance_px
    keep[0] = False
    return LabelMask(_raster_relabel(labels, keep), flags)


def mask_path_for(frame_path, mask_dir=None) -> Path:
    frame_path = Path(frame_path)
    parent = Path(mask_dir) if mask_dir is not None else frame_path.parent
    return parent / (frame_path.stem + MASK_SUFFIX)


def load_label_mask(path, expected_shape=None) -> LabelMask:
    try:
        raw, _ = read_pgm_raw(path)
    except OSError as exc:
        raise ImageFormatError(f"{path}: cannot read label map") from exc
    if expected_shape is not None and tuple(raw.shape) != tuple(expected_shape):
        raise ImageFormatError(
            f"{path}: label map shape {raw.shape} does not match frame {tuple(expected_shape)}"
        )
    return LabelMask(raw)


def save_label_mask(mask: LabelMask, path) -> None:
    if mask.labels.max(initial=0) > 65535:
        raise ValueError("label ids above 65535 do not fit a 16-bit label map")
    write_pgm_raw(mask.labels, path, maxval=65535)


def bubble_areas(mask: LabelMask) -> BubbleAreas:
    """Per-instance pixel counts and the total of those strictly above the mean."""
    counts = np.bincount(mask.labels.ravel())
    areas = counts[1:][counts[1:] > 0]
    inherited = set(mask.flags)
    if areas.size == 0:
        return BubbleAreas((), 0.0, 0, tuple(sorted(inherited | {NO_INSTANCES})))
    mean = float(areas.mean())
    total = int(areas[areas > mean].sum())
    if total == 0:
        inherited.add(NONE_ABOVE_MEAN)
    return BubbleAreas(tuple(int(a) for a in areas), mean, total, tuple(sorted(inherited)))


def avg_vapor_area(frame_1, frame_2) -> tuple[float, tuple]:
    """Mean filtered vapor area of two frames (masks or precomputed areas)."""
    a1 = frame_1 if isinstance(frame_1, BubbleAreas) else bubble_areas(frame_1)
    a2 = frame_2 if isinstance(frame_2, BubbleAreas) else bubble_areas(frame_2)
    flags = tuple(sorted(set(a1.flags) | set(a2.flags)))
    return (a1.filtered_total + a2.filtered_total) / 2.0, flags


def physical_similarity(a_n: float, a_n1: float) -> PhysResult:
    """100 minus the percent change of vapor area relative to the lower flux.

    Not clamped: values below 0 are returned as-is with an out-of-range flag.
    """
    if a_n == 0:
        logger.warning("vapor area at the lower heat flux is zero; similarity undefined")
        return PhysResult(0.0, (ZERO_REFERENCE_AREA,))
    value = 100.0 - abs(a_n - a_n1) * 100.0 / a_n
    return PhysResult(value, (OUT_OF_RANGE,) if value < 0 else ())


def write_areas_csv(rows, dest) -> None:
    """``rows`` is an iterable of (frame_id, BubbleAreas); ``dest`` a path or text stream."""
    if hasattr(dest, "write"):
        _write_areas(rows, dest)
        return
    with open(dest, "w", newline="") as fh:
        _write_areas(rows, fh)


def _write_areas(rows, fh) -> None:
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(["frame_id", "n_instances", "mean_area", "vapor_area"])
    for frame_id, ba in rows:
        wr.writerow([frame_id, len(ba.areas), f"{ba.mean_area:.6f}", ba.filtered_total])
