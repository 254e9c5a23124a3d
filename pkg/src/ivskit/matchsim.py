"""Exhaustive kNN descriptor matching, Lowe's ratio test and match-ratio scores."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .imgcore import GrayImage
from .sift import SiftParams, descriptor_matrix, extract_features

logger = logging.getLogger(__name__)

ZERO_KEYPOINTS = "zero_keypoints"
_CHUNK = 256


@dataclass(frozen=True)
class MatchParams:
    ratio_threshold: float = 0.88
    k: int = 2

    def __post_init__(self):
        if not 0.0 < self.ratio_threshold < 1.0:
            raise ValueError("ratio_threshold must lie in (0, 1)")
        if self.k != 2:
            raise ValueError("only k=2 neighbours are supported")


class Match(NamedTuple):
    index_a: int
    best_b: int
    second_b: int  # -1 when b holds a single descriptor
    d1: float
    d2: float


@dataclass(frozen=True)
class PairScore:
    score: float
    good_matches: int
    keypoints_first: int
    flags: tuple = ()


def _as_matrix(desc) -> np.ndarray:
    if isinstance(desc, np.ndarray):
        return np.atleast_2d(np.asarray(desc, dtype=np.float64)) if desc.size else np.zeros((0, 128))
    if len(desc) and hasattr(desc[0], "descriptor"):
        return descriptor_matrix(desc)
    return np.asarray(desc, dtype=np.float64).reshape(len(desc), -1) if len(desc) else np.zeros((0, 128))


def _knn_squared(A: np.ndarray, B: np.ndarray):
    """Two smallest squared distances per row of A; ties go to lower B index."""
    n, m = len(A), len(B)
    best = np.zeros(n, dtype=np.int64)
    second = np.full(n, -1, dtype=np.int64)
    d1 = np.zeros(n)
    d2 = np.full(n, np.inf)
    rows = np.arange(n)
    for start in range(0, n, _CHUNK):
        sl = slice(start, min(start + _CHUNK, n))
        diff = A[sl, None, :] - B[None, :, :]
        dist = np.einsum("ijk,ijk->ij", diff, diff)
        b1 = np.argmin(dist, axis=1)
        r = rows[: dist.shape[0]]
        best[sl] = b1
        d1[sl] = dist[r, b1]
        if m > 1:
            dist[r, b1] = np.inf
            b2 = np.argmin(dist, axis=1)
            second[sl] = b2
            d2[sl] = dist[r, b2]
    return best, second, d1, d2


def match_knn(desc_a, desc_b, p: MatchParams | None = None) -> list[Match]:
    """For each descriptor in ``desc_a`` find its two nearest neighbours in ``desc_b``."""
    A, B = _as_matrix(desc_a), _as_matrix(desc_b)
    if len(A) == 0 or len(B) == 0:
        return []
    best, second, d1, d2 = _knn_squared(A, B)
    return [
        Match(i, int(best[i]), int(second[i]), float(np.sqrt(d1[i])), float(np.sqrt(d2[i])))
        for i in range(len(A))
    ]


def _passes_ratio(d1: float, d2: float, t: float) -> bool:
    if d1 == 0.0 and d2 == 0.0:
        return True
    if np.isinf(d2):
        return bool(np.isfinite(d1))
    return d1 * d1 < t * t * (d2 * d2)


def ratio_filter(matches, p: MatchParams | None = None) -> list[Match]:
    """Keep matches whose best distance beats ``ratio_threshold`` times the second."""
    t = (p or MatchParams()).ratio_threshold
    return [mt for mt in matches if _passes_ratio(mt.d1, mt.d2, t)]


def count_good_matches(A: np.ndarray, B: np.ndarray, p: MatchParams) -> int:
    """Vectorized ratio-test count on squared distances."""
    if len(A) == 0 or len(B) == 0:
        return 0
    _, _, d1, d2 = _knn_squared(A, B)
    t2 = p.ratio_threshold ** 2
    good = (d1 < t2 * d2) | ((d1 == 0.0) & (d2 == 0.0)) | (np.isinf(d2) & np.isfinite(d1))
    return int(np.count_nonzero(good))


def pair_score_from_descriptors(desc_first, desc_second, p: MatchParams | None = None) -> PairScore:
    """Score from precomputed descriptors; the first argument sets the denominator."""
    p = p or MatchParams()
    A, B = _as_matrix(desc_first), _as_matrix(desc_second)
    if len(A) == 0:
        logger.debug("first image has no keypoints; pair score set to 0")
        return PairScore(0.0, 0, 0, (ZERO_KEYPOINTS,))
    good = count_good_matches(A, B, p)
    return PairScore(good / len(A), good, len(A))


def pair_score(img_a: GrayImage, img_b: GrayImage, sift: SiftParams | None = None,
               match: MatchParams | None = None) -> PairScore:
    """Fraction of keypoints in ``img_a`` with a ratio-test match in ``img_b``.

    ``img_a`` should be the frame from the lower heat flux.
    """
    sift = sift or SiftParams()
    return pair_score_from_descriptors(
        descriptor_matrix(extract_features(img_a, sift)),
        descriptor_matrix(extract_features(img_b, sift)),
        match,
    )


@dataclass(frozen=True)
class MbarResult:
    value: float
    scores: tuple = field(default_factory=tuple)
    flags: tuple = ()


def mbar_from_descriptors(desc_n, desc_n1, p: MatchParams | None = None) -> MbarResult:
    """Average of the four cross pair scores, lower-flux descriptors first."""
    if len(desc_n) != 2 or len(desc_n1) != 2:
        raise ValueError("mbar needs exactly two frames per heat flux")
    scores = tuple(
        pair_score_from_descriptors(a, b, p) for a in desc_n for b in desc_n1
    )
    flags = tuple(sorted({f for s in scores for f in s.flags}))
    return MbarResult(sum(s.score for s in scores) / 4.0, scores, flags)


def mbar(frames_n, frames_n1, sift: SiftParams | None = None,
         match: MatchParams | None = None) -> MbarResult:
    sift = sift or SiftParams()
    desc_n = [descriptor_matrix(extract_features(f, sift)) for f in frames_n]
    desc_n1 = [descriptor_matrix(extract_features(f, sift)) for f in frames_n1]
    return mbar_from_descriptors(desc_n, desc_n1, match)
