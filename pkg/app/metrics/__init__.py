from app.metrics.matching import (
    THRESHOLDS,
    MatchResult,
    evaluate_dataset,
    f1_at,
    f1_mu,
    f1_score,
    iou_matrix,
    match_instances,
    pair_predictions,
)

__all__ = [
    "THRESHOLDS",
    "MatchResult",
    "evaluate_dataset",
    "f1_at",
    "f1_mu",
    "f1_score",
    "iou_matrix",
    "match_instances",
    "pair_predictions",
]
