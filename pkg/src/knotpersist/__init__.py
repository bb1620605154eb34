"""Thick polygonal knots: thickness, tightening and merge persistence of near-minimizers."""
from .geometry import PolygonalKnot, ThicknessReport, is_embedded, length, ropelength, thickness, total_curvature
from .knotid import determinant_of
from .normalize import NormalizedConfig, align, normalize_scale, quotient_distance
from .optimize import TightenParams, TightenResult, sample_minimizers, tighten
from .persist import (
    CertifiedPath,
    MergeFiltration,
    MergeScaleMatrix,
    MergeTree,
    PersistParams,
    betti_check,
    connect,
    first_birth,
    merge_scales,
    merge_scan,
    rescale_path,
    validate_path,
    vr_filtration,
)

__all__ = [
    "CertifiedPath", "MergeFiltration", "MergeScaleMatrix", "MergeTree", "NormalizedConfig",
    "PersistParams", "PolygonalKnot", "ThicknessReport", "TightenParams", "TightenResult",
    "align", "betti_check", "connect", "determinant_of", "first_birth", "is_embedded", "length",
    "merge_scales", "merge_scan", "normalize_scale", "quotient_distance", "rescale_path",
    "ropelength", "sample_minimizers", "thickness", "tighten", "total_curvature",
    "validate_path", "vr_filtration",
]

__version__ = "0.1.0"
