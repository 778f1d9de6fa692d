from .cv import SplitPlan, TuneResult, make_subject_folds, nested_tune
from .metrics import (ConfusionMatrix, balanced_accuracy, mae, mcc, mcc_with_flag, r_squared,
                      score_predictions)

__all__ = [
    "SplitPlan", "TuneResult", "make_subject_folds", "nested_tune", "ConfusionMatrix",
    "balanced_accuracy", "mae", "mcc", "mcc_with_flag", "r_squared", "score_predictions",
]
