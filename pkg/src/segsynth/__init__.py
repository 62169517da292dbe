"""segsynth: label-conditioned synthetic MRI training data plus a segmentation benchmark harness."""

__version__ = "0.1.0"

from .backend import ACTIVE as BACKEND
from .bench import (
    EvalCase,
    EvaluationPlan,
    EvaluationRecord,
    ManifestError,
    RegionMapping,
    SummaryRow,
    SummaryTable,
    emit_reports,
    evaluate_case,
    harmonize_labels,
    load_manifest,
    repeatability_report,
    summarize,
)
from .clustering import (
    ClusteringConfig,
    ClusterModelBank,
    ClusterSampler,
    ClusterTable,
    GmmModel,
    InsufficientDataError,
    assign_clusters,
    cluster_labelmap,
    fit_cluster_bank,
    fit_gmm_1d,
)
from .generator import (
    DrawnParams,
    GenerationConfig,
    TrainingPair,
    apply_bias_field,
    apply_gamma_contrast,
    apply_noise,
    generate_training_pair,
    remove_arms,
    sample_spatial_transform,
    simulate_resolution,
    synthesize_intensities,
    warp_labels,
)
from .geometry import Geometry, GeometryError
from .metrics import (
    BinaryMask,
    EmptyMaskError,
    RegionMetrics,
    dice,
    distance_transform,
    extract_surface,
    hd95,
    region_volume,
    soft_dice_loss,
)
from .nifti import (
    NiftiError,
    NiftiParseError,
    NiftiUnsupportedError,
    read_nifti,
    write_nifti,
)
from .stats import TestResult, bonferroni, friedman, wilcoxon_signed_rank
from .volume import (
    InvalidModeError,
    LabelMap,
    ScalarVolume,
    center_crop_pad,
    resample,
)

__all__ = [
    "BACKEND",
    "__version__",
    "Geometry",
    "GeometryError",
    "ScalarVolume",
    "LabelMap",
    "InvalidModeError",
    "resample",
    "center_crop_pad",
    "NiftiError",
    "NiftiParseError",
    "NiftiUnsupportedError",
    "read_nifti",
    "write_nifti",
    "GmmModel",
    "ClusteringConfig",
    "ClusterTable",
    "ClusterModelBank",
    "ClusterSampler",
    "InsufficientDataError",
    "fit_gmm_1d",
    "assign_clusters",
    "cluster_labelmap",
    "fit_cluster_bank",
    "GenerationConfig",
    "DrawnParams",
    "TrainingPair",
    "remove_arms",
    "sample_spatial_transform",
    "warp_labels",
    "synthesize_intensities",
    "apply_bias_field",
    "apply_gamma_contrast",
    "apply_noise",
    "simulate_resolution",
    "generate_training_pair",
    "BinaryMask",
    "RegionMetrics",
    "EmptyMaskError",
    "dice",
    "extract_surface",
    "distance_transform",
    "hd95",
    "soft_dice_loss",
    "region_volume",
    "TestResult",
    "wilcoxon_signed_rank",
    "bonferroni",
    "friedman",
    "ManifestError",
    "RegionMapping",
    "EvalCase",
    "EvaluationPlan",
    "EvaluationRecord",
    "SummaryRow",
    "SummaryTable",
    "load_manifest",
    "harmonize_labels",
    "evaluate_case",
    "summarize",
    "repeatability_report",
    "emit_reports",
]
