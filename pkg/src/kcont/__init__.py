"""Measure, certify, and regularize the loss volatility of learned representations."""

from .datamodel import (
    ActivationDataset,
    DumpError,
    KcontError,
    LayerBlock,
    MalformedHeaderError,
    MetricSpec,
    ModelMeta,
    NoAdmissiblePairsError,
    NonFiniteValueError,
    TruncatedPayloadError,
    ValidationError,
    VolatilityEstimate,
    load_dump,
    write_dump,
)
from .metrics import DistanceMatrix, distance, pairwise
from .volatility import (
    LayerProfile,
    PointVolatility,
    est_k_vol,
    expected_volatility_exact,
    layer_profile,
    point_volatility,
    subset_volatility,
)
from .certification import (
    Certificate,
    certify,
    certify_grid,
    corollary_bound_unbounded,
    corollary_bound_zero_measure,
    mcdiarmid_tail,
    theorem_bound,
    upper_conf_bound,
)
from .analysis import (
    ModelRecord,
    RegressionReport,
    attack_success_rate,
    depth_correlation,
    permutation_importance,
    ridge_regress,
    vulnerability_score,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationDataset",
    "Certificate",
    "DistanceMatrix",
    "DumpError",
    "KcontError",
    "LayerBlock",
    "LayerProfile",
    "MalformedHeaderError",
    "MetricSpec",
    "ModelMeta",
    "ModelRecord",
    "NoAdmissiblePairsError",
    "NonFiniteValueError",
    "PointVolatility",
    "RegressionReport",
    "TruncatedPayloadError",
    "ValidationError",
    "VolatilityEstimate",
    "attack_success_rate",
    "certify",
    "certify_grid",
    "corollary_bound_unbounded",
    "corollary_bound_zero_measure",
    "depth_correlation",
    "distance",
    "est_k_vol",
    "expected_volatility_exact",
    "layer_profile",
    "load_dump",
    "mcdiarmid_tail",
    "pairwise",
    "permutation_importance",
    "point_volatility",
    "ridge_regress",
    "subset_volatility",
    "theorem_bound",
    "upper_conf_bound",
    "vulnerability_score",
    "write_dump",
]
