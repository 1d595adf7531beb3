"""Evaluation harness and inference-time diagnostics."""

from .cv import CVResult, FoldOutcome, cross_validate, fold_seed
from .geometry import (
    EmbeddingGeometry,
    GramDiagnostics,
    components_for_variance,
    embedding_geometry,
    gram_diagnostics,
    knn_label_agreement,
    loo_knn_accuracy,
    participation_ratio,
)
from .metrics import (
    ConfusionSummary,
    MarginTopK,
    ReliabilityBins,
    TriageResult,
    class_ranks,
    confusion_matrix,
    confusion_summary,
    coverage_margin_curve,
    entropy,
    expected_calibration_error,
    margin_topk,
    merge_bins,
    roc_curve,
    selective_prediction_curve,
    top2_margin,
    triage_metrics,
    true_class_margin,
)
from .probes import (
    SANITY_MODES,
    FeatureImportance,
    RobustnessPoint,
    SensitivityResult,
    TTAResult,
    local_sensitivity,
    majority_vote,
    nested_feature_subsets,
    ood_confidence_report,
    permutation_importance,
    robustness_sweep,
    sanity_modes,
    tta_consistency,
)
from .report import SECTIONS, DiagnosticsReport, reference_behaviour, run_diagnostics
from .turing import TuringScore, export_turing_sheet, score_turing_sheet

__all__ = [
    "CVResult", "FoldOutcome", "cross_validate", "fold_seed",
    "EmbeddingGeometry", "GramDiagnostics", "components_for_variance", "embedding_geometry",
    "gram_diagnostics", "knn_label_agreement", "loo_knn_accuracy", "participation_ratio",
    "ConfusionSummary", "MarginTopK", "ReliabilityBins", "TriageResult", "class_ranks",
    "confusion_matrix", "confusion_summary", "coverage_margin_curve", "entropy",
    "expected_calibration_error", "margin_topk", "merge_bins", "roc_curve",
    "selective_prediction_curve", "top2_margin", "triage_metrics", "true_class_margin",
    "SANITY_MODES", "FeatureImportance", "RobustnessPoint", "SensitivityResult", "TTAResult",
    "local_sensitivity", "majority_vote", "nested_feature_subsets", "ood_confidence_report",
    "permutation_importance", "robustness_sweep", "sanity_modes", "tta_consistency",
    "SECTIONS", "DiagnosticsReport", "reference_behaviour", "run_diagnostics",
    "TuringScore", "export_turing_sheet", "score_turing_sheet",
]
