"""Toolkit for synthetic shredded-picture puzzles: shredding, pairwise
alignment extraction, seam compatibility scoring, and loop-based reassembly."""

from . import compatibility, composition, evaluation, geometry, pairwise, shredder
from .compatibility import (
    BoostEnsemble,
    OracleScorer,
    boost_train,
    candidate_is_correct,
    features_for_candidates,
    filter_candidates,
    load_model,
    save_model,
    score_candidates_with_model,
    stitch_render,
)
from .composition import (
    AssemblyGraph,
    AssemblyResult,
    ClosureTolerance,
    Loop,
    compose,
    compose_best_first,
    compose_glc,
    compose_hlm,
    find_induced_loops,
    load_result,
    merge_loops,
    refine_poses,
    save_result,
)
from .evaluation import EvalReport, format_report_table, score_detector, score_result
from .geometry import Contour, Fragment, PolygonApprox, RigidTransform2D, fit_rigid
from .pairwise import (
    AlignmentCandidate,
    PairwiseConfig,
    extract_candidates,
    extract_pair_candidates,
    icp_refine,
    matched_pixel_score,
    read_candidates,
    write_candidates,
)
from .shredder import (
    PuzzleBundle,
    ShredParams,
    make_ambiguous_image,
    make_test_image,
    read_bundle,
    shred,
    shred_to_piece_count,
    shred_voronoi,
    write_bundle,
)

__version__ = "0.1.0"

__all__ = [
    "compatibility", "composition", "evaluation", "geometry", "pairwise",
    "shredder",
    "AlignmentCandidate", "AssemblyGraph", "AssemblyResult", "BoostEnsemble",
    "ClosureTolerance", "Contour", "EvalReport", "Fragment", "Loop",
    "OracleScorer", "PairwiseConfig", "PolygonApprox", "PuzzleBundle",
    "RigidTransform2D", "ShredParams",
    "boost_train", "candidate_is_correct", "compose", "compose_best_first",
    "compose_glc", "compose_hlm", "extract_candidates",
    "extract_pair_candidates", "features_for_candidates", "filter_candidates",
    "find_induced_loops", "fit_rigid", "format_report_table", "icp_refine",
    "load_model", "load_result", "make_ambiguous_image", "make_test_image",
    "matched_pixel_score", "merge_loops", "read_bundle", "read_candidates",
    "refine_poses", "save_model", "save_result", "score_candidates_with_model",
    "score_detector", "score_result", "shred", "shred_to_piece_count",
    "shred_voronoi", "stitch_render", "write_bundle", "write_candidates",
    "__version__",
]
