"""Seam compatibility: stitch rendering, seam features, boosted detector,
and a groundtruth oracle stand-in."""

from .boosting import (
    DECISION_P,
    BoostEnsemble,
    DepthTwoTree,
    ImbalanceError,
    ModelFormatError,
    boost_train,
    boost_train_features,
    default_learner_factory,
    ensemble_predict,
    filter_candidates,
    load_model,
    rebalance,
    rebalance_indices,
    save_model,
    score_candidates_with_model,
    update_weights,
)
from .oracle import (
    ORACLE_ANGLE_TOL,
    ORACLE_HI,
    ORACLE_LO,
    ORACLE_TRANS_TOL,
    OracleScorer,
    candidate_is_correct,
)
from .stitch import (
    CANVAS_MAX_SIDE,
    FEATURE_NAMES,
    FEATURE_SCHEMA,
    NoSeamError,
    StitchSample,
    extract_roi_features,
    features_for_candidates,
    stitch_render,
)

__all__ = [
    "BoostEnsemble", "DepthTwoTree", "ImbalanceError", "ModelFormatError",
    "NoSeamError", "OracleScorer", "StitchSample", "boost_train",
    "boost_train_features", "candidate_is_correct", "default_learner_factory",
    "ensemble_predict", "extract_roi_features", "features_for_candidates",
    "filter_candidates", "load_model", "rebalance", "rebalance_indices",
    "save_model", "score_candidates_with_model", "stitch_render",
    "update_weights",
    "CANVAS_MAX_SIDE", "DECISION_P", "FEATURE_NAMES", "FEATURE_SCHEMA",
    "ORACLE_ANGLE_TOL", "ORACLE_HI", "ORACLE_LO", "ORACLE_TRANS_TOL",
]
