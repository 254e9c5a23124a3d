"""Index of Visual Similarity between consecutive heat-flux frame sets.

Two passes. Pass 1, for every consecutive pair of frame sets and every trial,
samples two frames per set and computes the averaged match-ratio score and
the vapor-area similarity; both are averaged over trials. Pass 2 normalizes
the trial-mean match-ratio scores by their maximum over the run and blends
the two similarities 50/50.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .imgcore import FrameRef, GrayImage, load_gray
from .matchsim import ZERO_KEYPOINTS, MatchParams, mbar_from_descriptors
from .segment import (
    BubbleAreas,
    SegmenterConfig,
    avg_vapor_area,
    bubble_areas,
    load_label_mask,
    mask_path_for,
    physical_similarity,
    segment_classical,
)
from .sift import SiftParams, descriptor_matrix, extract_features

logger = logging.getLogger(__name__)

NO_REFERENCE = "no_normalization_reference"
EXCLUDED_FROM_MAX = "excluded_from_max"
REPORT_DECIMALS = 10

_STREAM_SHARED = 0
_STREAM_PHYS = 1


@dataclass(frozen=True)
class HeatFluxFrameSet:
    set_id: str
    q: float
    frames: tuple
    mask_dir: str | None = None
    thermal: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise ValueError(f"frame set {self.set_id!r} has no frames")
        if not self.q > 0:
            raise ValueError(f"frame set {self.set_id!r}: heat flux must be > 0")


@dataclass(frozen=True)
class TrialPlan:
    n_trials: int = 7
    rng_seed: int = 0
    images_per_flux: int = 2
    independent_phys_sampling: bool = False

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.images_per_flux != 2:
            raise ValueError("exactly two images per heat flux are sampled")


@dataclass(frozen=True)
class IvsRecord:
    set_n: str
    set_n1: str
    q_n: float
    q_n1: float
    q_mid: float
    delta_q: float
    morph_raw: float
    morph_norm: float
    phys: float
    ivs: float
    trial_values: tuple
    running_mean: tuple
    flags: tuple = ()


@dataclass(frozen=True)
class FrameFeatures:
    descriptors: np.ndarray
    areas: BubbleAreas


def check_run(run) -> list[HeatFluxFrameSet]:
    run = list(run)
    if len(run) < 2:
        raise ValueError("an IVS run needs at least two heat-flux frame sets")
    qs = [s.q for s in run]
    if any(b <= a for a, b in zip(qs, qs[1:])):
        raise ValueError("frame sets must be strictly increasing in heat flux")
    ids = [s.set_id for s in run]
    if len(set(ids)) != len(ids):
        raise ValueError("frame set ids must be unique")
    return run


def _id_words(set_id: str) -> list[int]:
    digest = hashlib.blake2b(set_id.encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def trial_rng(seed: int, set_id: str, trial: int, stream: int = _STREAM_SHARED) -> np.random.Generator:
    """Counter-based generator keyed by (seed, set id, trial, stream)."""
    seed &= 0xFFFFFFFFFFFFFFFF
    key = [seed & 0xFFFFFFFF, seed >> 32, *_id_words(set_id), trial, stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def sample_pairs(fset: HeatFluxFrameSet, trial: int, plan: TrialPlan,
                 stream: int = _STREAM_SHARED) -> tuple[FrameRef, FrameRef]:
    """Two distinct frames of ``fset`` for ``trial``; reproducible forever."""
    if len(fset.frames) < 2:
        raise ValueError(f"frame set {fset.set_id!r} needs at least two frames to sample a pair")
    rng = trial_rng(plan.rng_seed, fset.set_id, trial, stream)
    i, j = rng.choice(len(fset.frames), size=2, replace=False)
    return fset.frames[int(i)], fset.frames[int(j)]


def default_frame_loader(ref: FrameRef) -> GrayImage:
    return load_gray(ref.source_path)


def frame_features(ref: FrameRef, mask_dir, sift: SiftParams, seg: SegmenterConfig,
                   loader: Callable | None = None, mask_loader: Callable | None = None) -> FrameFeatures:
    img = (loader or default_frame_loader)(ref)
    desc = descriptor_matrix(extract_features(img, sift))
    if seg.mode == "external":
        if mask_loader is not None:
            mask = mask_loader(ref)
        else:
            mask = load_label_mask(mask_path_for(ref.source_path, mask_dir or seg.mask_dir),
                                   expected_shape=img.shape)
    else:
        mask = segment_classical(img, seg)
    return FrameFeatures(desc, bubble_areas(mask))


def _features_job(args):
    return frame_features(*args)


def _collect_samples(run, plan: TrialPlan):
    shared = {s.set_id: [sample_pairs(s, t, plan) for t in range(plan.n_trials)] for s in run}
    if plan.independent_phys_sampling:
        phys = {s.set_id: [sample_pairs(s, t, plan, _STREAM_PHYS) for t in range(plan.n_trials)]
                for s in run}
    else:
        phys = shared
    return shared, phys


def normalize_morphological(mbar_means, excluded=None) -> tuple[list[float], float | None]:
    """Scale trial-mean scores to percent of the run maximum.

    Entries marked in ``excluded`` do not take part in the maximum and are
    reported as 0. Returns the normalized list and the reference maximum
    (None when no usable reference exists).
    """
    means = [float(m) for m in mbar_means]
    excluded = list(excluded) if excluded is not None else [False] * len(means)
    pool = [m for m, ex in zip(means, excluded) if not ex]
    ref = max(pool) if pool else None
    if not ref:
        return [0.0] * len(means), None
    return [0.0 if ex else round(100.0 * m / ref, REPORT_DECIMALS)
            for m, ex in zip(means, excluded)], ref


def compute_pair_ivs(run, plan: TrialPlan | None = None, sift: SiftParams | None = None,
                     match: MatchParams | None = None, seg: SegmenterConfig | None = None, *,
                     loader: Callable | None = None, mask_loader: Callable | None = None,
                     jobs: int = 1, mbar_scale: float = 1.0,
                     reference_max: float | None = None) -> list[IvsRecord]:
    """IVS records for every consecutive pair of frame sets in ``run``.

    ``mbar_scale`` multiplies every raw trial-mean score before normalization
    (a test hook; the output must not depend on it). ``reference_max``, when
    given, replaces the run maximum as the normalization reference.
    """
    run = check_run(run)
    plan, sift = plan or TrialPlan(), sift or SiftParams()
    match, seg = match or MatchParams(), seg or SegmenterConfig()

    shared, phys_samples = _collect_samples(run, plan)
    wanted: dict[str, tuple] = {}
    for s in run:
        for pairs in (shared[s.set_id], phys_samples[s.set_id]):
            for pair in pairs:
                for ref in pair:
                    wanted.setdefault(ref.key, (ref, s.mask_dir))
    keys = sorted(wanted)
    args = [(wanted[k][0], wanted[k][1], sift, seg, loader, mask_loader) for k in keys]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_features_job, args, chunksize=max(1, len(args) // (4 * jobs))))
    else:
        results = [_features_job(a) for a in args]
    feats = dict(zip(keys, results))

    pending = []
    for a, b in zip(run, run[1:]):
        trials, flags = [], set()
        for t in range(plan.n_trials):
            fa, fb = shared[a.set_id][t], shared[b.set_id][t]
            mb = mbar_from_descriptors(
                [feats[r.key].descriptors for r in fa],
                [feats[r.key].descriptors for r in fb],
                match,
            )
            pa, pb = phys_samples[a.set_id][t], phys_samples[b.set_id][t]
            area_a, fl_a = avg_vapor_area(*(feats[r.key].areas for r in pa))
            area_b, fl_b = avg_vapor_area(*(feats[r.key].areas for r in pb))
            ph = physical_similarity(area_a, area_b)
            flags.update(mb.flags, ph.flags, fl_a, fl_b)
            trials.append((mb.value * mbar_scale, ph.value))
        pending.append((a, b, trials, flags))

    means = [float(np.mean([m for m, _ in tr])) for _, _, tr, _ in pending]
    excluded = [ZERO_KEYPOINTS in fl and m == 0.0 for m, (_, _, _, fl) in zip(means, pending)]
    if reference_max is not None:
        ref = reference_max * mbar_scale
        norm = [0.0 if ex else round(100.0 * m / ref, REPORT_DECIMALS) for m, ex in zip(means, excluded)]
    else:
        norm, ref = normalize_morphological(means, excluded)

    records = []
    for (a, b, trials, flags), m_raw, m_norm, ex in zip(pending, means, norm, excluded):
        flags = set(flags)
        if ex:
            flags.add(EXCLUDED_FROM_MAX)
        if ref is None:
            flags.add(NO_REFERENCE)
        phys = float(np.mean([p for _, p in trials]))
        per_trial = [
            0.5 * p + 0.5 * (100.0 * m / ref if ref and not ex else 0.0) for m, p in trials
        ]
        running = running_means(per_trial)
        records.append(IvsRecord(
            set_n=a.set_id, set_n1=b.set_id, q_n=a.q, q_n1=b.q,
            q_mid=(a.q + b.q) / 2.0, delta_q=b.q - a.q,
            morph_raw=m_raw / mbar_scale, morph_norm=m_norm, phys=phys,
            ivs=0.5 * phys + 0.5 * m_norm,
            trial_values=tuple((m / mbar_scale, p) for m, p in trials),
            running_mean=running, flags=tuple(sorted(flags)),
        ))
    for r in records:
        if r.flags:
            logger.warning("pair %s->%s (q_mid=%g) flagged: %s", r.set_n, r.set_n1, r.q_mid,
                           ", ".join(r.flags))
    return records


def running_means(values) -> tuple:
    """Prefix means of ``values``: after 1, 2, ..., n entries."""
    v = np.asarray(values, dtype=np.float64)
    return tuple(float(x) for x in np.cumsum(v) / np.arange(1, len(v) + 1))


def convergence_trace(record: IvsRecord) -> list[float]:
    """Running mean of the per-trial IVS contribution after 1..n trials."""
    return list(record.running_mean)


def convergence_gap(record: IvsRecord, k: int) -> float:
    """``|running_mean(k) - running_mean(n)|`` for a record with n trials."""
    tr = record.running_mean
    return abs(tr[min(k, len(tr)) - 1] - tr[-1])


def convergence_band(record: IvsRecord) -> float:
    """Population spread of the per-trial IVS contributions.

    The running mean after k of n trials differs from the final one by the
    mean of the remaining deviations, so the gap is bounded by
    ``sqrt(n-k) * sqrt(n) / k`` times this value (under 1 for k=5, n=7).
    """
    tr = np.asarray(record.running_mean, dtype=np.float64)
    counts = np.arange(1, len(tr) + 1)
    per_trial = np.diff(np.concatenate(([0.0], tr * counts)))
    return float(np.std(per_trial))


# -- report surface --------------------------------------------------------

CSV_COLUMNS = ("pair", "set_n", "set_n1", "q_n", "q_n1", "q_mid", "delta_q", "morph_raw",
               "morph_norm", "phys", "ivs", "n_trials", "trial_mbar", "trial_phys",
               "running_mean", "convergence_band", "flags")


def _f(v: float) -> str:
    return repr(float(v))


def records_to_csv(records) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for i, r in enumerate(records):
        wr.writerow([
            i, r.set_n, r.set_n1, _f(r.q_n), _f(r.q_n1), _f(r.q_mid), _f(r.delta_q),
            _f(r.morph_raw), _f(r.morph_norm), _f(r.phys), _f(r.ivs), len(r.trial_values),
            ";".join(_f(m) for m, _ in r.trial_values),
            ";".join(_f(p) for _, p in r.trial_values),
            ";".join(_f(v) for v in r.running_mean),
            _f(convergence_band(r)),
            ";".join(r.flags),
        ])
    return buf.getvalue()


def records_to_json(records, meta: dict | None = None) -> str:
    payload = {"meta": meta or {}, "records": [
        {**asdict(r), "convergence_band": convergence_band(r)} for r in records
    ]}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def read_ivs_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({
                "q_n": float(row["q_n"]), "q_n1": float(row["q_n1"]),
                "q_mid": float(row["q_mid"]), "ivs": float(row["ivs"]),
                "morph_norm": float(row["morph_norm"]), "phys": float(row["phys"]),
                "flags": row["flags"],
            })
    return out
