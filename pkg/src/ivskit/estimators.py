"""scikit-learn style wrappers so the pipeline stages compose with Pipelines
and parameter search."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_images, check_thermal_array
from .ivs import TrialPlan, check_run, compute_pair_ivs
from .matchsim import MatchParams
from .segment import SegmenterConfig, bubble_areas, segment_classical
from .sift import SiftParams, descriptor_matrix, extract_features
from .thermal import ThermoSample, reduce_series


class SiftDescriptorExtractor(TransformerMixin, BaseEstimator):
    """Maps each image to its (n_keypoints, 128) descriptor matrix."""

    def __init__(self, scales_per_octave=3, base_sigma=1.6, contrast_threshold=0.03,
                 edge_ratio_threshold=10.0, n_octaves=None, max_keypoints=None, upsample=False):
        self.scales_per_octave = scales_per_octave
        self.base_sigma = base_sigma
        self.contrast_threshold = contrast_threshold
        self.edge_ratio_threshold = edge_ratio_threshold
        self.n_octaves = n_octaves
        self.max_keypoints = max_keypoints
        self.upsample = upsample

    def _params(self) -> SiftParams:
        return SiftParams(**self.get_params())

    def fit(self, X, y=None):
        self.params_ = self._params()
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return [descriptor_matrix(extract_features(im, self.params_)) for im in check_images(X)]


class BubbleSegmenter(TransformerMixin, BaseEstimator):
    """Threshold + connected-component segmentation; ``transform`` returns label masks."""

    def __init__(self, threshold="otsu", polarity="dark-bubbles", min_instance_px=1,
                 connectivity=8):
        self.threshold = threshold
        self.polarity = polarity
        self.min_instance_px = min_instance_px
        self.connectivity = connectivity

    def fit(self, X=None, y=None):
        self.config_ = SegmenterConfig(mode="classical", **self.get_params())
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        return [segment_classical(im, self.config_) for im in check_images(X)]

    def vapor_areas(self, X) -> np.ndarray:
        """Filtered vapor area (pixels) per image."""
        return np.array([bubble_areas(m).filtered_total for m in self.transform(X)], dtype=float)


class VisualSimilarityIndex(BaseEstimator):
    """IVS over a run of heat-flux frame sets.

    ``fit`` computes the records of a run and stores the largest trial-mean
    match score as ``reference_max_``. ``transform`` scores another run
    against that stored reference, so ``fit_transform`` on one run is the
    usual self-normalized IVS. Output columns: morphological (%),
    physical (%), IVS (%).
    """

    def __init__(self, n_trials=7, random_state=0, ratio_threshold=0.88,
                 sift_params=None, segmenter=None, independent_phys_sampling=False, n_jobs=1):
        self.n_trials = n_trials
        self.random_state = random_state
        self.ratio_threshold = ratio_threshold
        self.sift_params = sift_params
        self.segmenter = segmenter
        self.independent_phys_sampling = independent_phys_sampling
        self.n_jobs = n_jobs

    def _configs(self):
        plan = TrialPlan(n_trials=self.n_trials, rng_seed=int(self.random_state or 0),
                         independent_phys_sampling=self.independent_phys_sampling)
        return (plan, self.sift_params or SiftParams(), MatchParams(self.ratio_threshold),
                self.segmenter or SegmenterConfig())

    def fit(self, run, y=None, *, loader=None, mask_loader=None):
        run = check_run(run)
        plan, sift, match, seg = self._configs()
        self.records_ = compute_pair_ivs(run, plan, sift, match, seg, loader=loader,
                                         mask_loader=mask_loader, jobs=self.n_jobs)
        usable = [r.morph_raw for r in self.records_ if "excluded_from_max" not in r.flags]
        self.reference_max_ = max(usable) if usable and max(usable) > 0 else None
        self.q_mid_ = np.array([r.q_mid for r in self.records_])
        return self

    def _as_array(self, records) -> np.ndarray:
        return np.array([[r.morph_norm, r.phys, r.ivs] for r in records], dtype=float)

    def transform(self, run, *, loader=None, mask_loader=None):
        check_is_fitted(self, "records_")
        plan, sift, match, seg = self._configs()
        recs = compute_pair_ivs(check_run(run), plan, sift, match, seg, loader=loader,
                                mask_loader=mask_loader, jobs=self.n_jobs,
                                reference_max=self.reference_max_)
        return self._as_array(recs)

    def fit_transform(self, run, y=None, **kw):
        return self._as_array(self.fit(run, **kw).records_)


class ThermalReducer(TransformerMixin, BaseEstimator):
    """Rows ``(q_nominal, t1, t2, t3, t_sat)`` to
    ``(q, u_q, t_w, dT_wall, u_dT, h, u_h, dh, u_dh, phi, u_phi)``; undefined entries are NaN."""

    columns = ("q", "u_q", "t_w", "dT_wall", "u_dT", "h", "u_h", "dh", "u_dh", "phi", "u_phi")

    def __init__(self, dx=None, l=None, k_cu=390.0, u_t=0.5, u_dx=0.25e-3):
        self.dx = dx
        self.l = l
        self.k_cu = k_cu
        self.u_t = u_t
        self.u_dx = u_dx

    def fit(self, X=None, y=None):
        missing = [k for k in ("dx", "l") if getattr(self, k) is None]
        if missing:
            raise ValueError(f"missing thermal geometry: {', '.join(missing)}")
        self.geometry_ = self.get_params()
        return self

    def transform(self, X):
        check_is_fitted(self, "geometry_")
        X = check_thermal_array(X)
        samples = [ThermoSample(t1=r[1], t2=r[2], t3=r[3], t_sat=r[4], q_nominal=r[0],
                                **self.geometry_) for r in X]
        return np.array([[np.nan if getattr(rec, c) is None else getattr(rec, c)
                          for c in self.columns] for rec in reduce_series(samples)], dtype=float)
