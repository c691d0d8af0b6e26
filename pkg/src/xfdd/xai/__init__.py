"""Attribution methods, importance aggregation and interaction analysis."""

from .attribution import (
    BASELINE_KINDS,
    METHOD_TITLES,
    METHODS,
    Attribution,
    deeplift,
    deeplift_shap,
    explain,
    gradient_shap,
    group_sums,
    input_gradients,
    integrated_gradients,
    make_baseline,
    mask_channels,
    shapley_exact_oracle,
    target_logits,
)
from .importance import (
    FeatureSelection,
    ImportanceReport,
    InteractionMatrix,
    feature_interactions,
    gfi,
    pcfi,
    permute_report,
    select_top_k,
)
from .report import (
    attribution_timing,
    curves_svg,
    gfi_csv,
    heatmap_svg,
    interaction_csv,
    pcfi_csv,
    save_attribution,
    timing_csv,
)

__all__ = [
    "BASELINE_KINDS", "METHOD_TITLES", "METHODS", "Attribution", "FeatureSelection",
    "ImportanceReport", "InteractionMatrix", "attribution_timing", "curves_svg", "deeplift",
    "deeplift_shap", "explain", "feature_interactions", "gfi", "gfi_csv", "gradient_shap",
    "group_sums", "heatmap_svg", "input_gradients", "integrated_gradients", "interaction_csv",
    "make_baseline", "mask_channels", "pcfi", "pcfi_csv", "permute_report", "save_attribution",
    "select_top_k", "shapley_exact_oracle", "target_logits", "timing_csv",
]
