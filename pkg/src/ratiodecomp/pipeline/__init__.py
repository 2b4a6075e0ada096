"""Segmentation, segment fitting, element transforms, and series aggregation."""

from .aggregation import (
    AggregatedFeatureSeries,
    aggregate_transformed,
    normalize_series,
    parse_weighting,
)
from .fitting import (
    FeatureOptions,
    FittedTransform,
    JointModel,
    apply_transform,
    fit_joint,
    fit_quality,
    fit_univariate,
    lagged_feature,
    link_forward,
    link_inverse,
    pava,
    screen_features,
    search_lag,
)
from .segmentation import (
    SegmentAggregates,
    SegmentTable,
    aggregate_segments,
    segment_cross,
    segment_generalized,
    segment_univariate,
    segment_values,
)

__all__ = [
    "AggregatedFeatureSeries",
    "FeatureOptions",
    "FittedTransform",
    "JointModel",
    "SegmentAggregates",
    "SegmentTable",
    "aggregate_segments",
    "aggregate_transformed",
    "apply_transform",
    "fit_joint",
    "fit_quality",
    "fit_univariate",
    "lagged_feature",
    "link_forward",
    "link_inverse",
    "normalize_series",
    "parse_weighting",
    "pava",
    "screen_features",
    "search_lag",
    "segment_cross",
    "segment_generalized",
    "segment_univariate",
    "segment_values",
]
