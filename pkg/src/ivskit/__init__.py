"""Index of Visual Similarity for pool-boiling frame sets, cross-checked
against thermocouple data reduction."""

__version__ = "0.1.0"

from .imgcore import FrameRef, GrayImage, load_gray, save_gray, to_grayscale_u8
from .ivs import HeatFluxFrameSet, IvsRecord, TrialPlan, compute_pair_ivs, sample_pairs
from .matchsim import MatchParams, PairScore, match_knn, mbar, pair_score, ratio_filter
from .segment import (
    BubbleAreas,
    LabelMask,
    SegmenterConfig,
    avg_vapor_area,
    bubble_areas,
    load_label_mask,
    physical_similarity,
    segment_classical,
)
from .sift import KeypointDescriptor, SiftParams, extract_features
from .thermal import ThermalRecord, ThermoSample, phi_series, propagate_uncertainty, reduce

__all__ = [
    "BubbleAreas", "FrameRef", "GrayImage", "HeatFluxFrameSet", "IvsRecord", "KeypointDescriptor",
    "LabelMask", "MatchParams", "PairScore", "SegmenterConfig", "SiftParams", "ThermalRecord",
    "ThermoSample", "TrialPlan", "avg_vapor_area", "bubble_areas", "compute_pair_ivs",
    "extract_features", "load_gray", "load_label_mask", "match_knn", "mbar", "pair_score",
    "phi_series", "physical_similarity", "propagate_uncertainty", "ratio_filter", "reduce",
    "sample_pairs", "save_gray", "segment_classical", "to_grayscale_u8",
]
