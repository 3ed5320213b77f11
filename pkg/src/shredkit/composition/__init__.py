"""Global assembly: loop closure, loop merging, solvers, pose refinement."""

from .graph import (
    AssemblyGraph,
    ClosureTolerance,
    Loop,
    MalformedLoopError,
    MergeOutcome,
    NotMergeableError,
    build_loop,
    find_induced_loops,
    is_closed,
    loop_residual,
    loop_self_intersects,
    merge_loops,
    objective,
    placement_collides,
)
from .refine import RefineInfo, refine_poses
from .solvers import (
    RESULT_FORMAT,
    SOLVERS,
    AssemblyResult,
    ResultFormatError,
    compose,
    compose_best_first,
    compose_glc,
    compose_hlm,
    load_result,
    result_to_json_dict,
    save_result,
)

__all__ = [
    "AssemblyGraph", "ClosureTolerance", "Loop", "MalformedLoopError",
    "MergeOutcome", "NotMergeableError", "build_loop", "find_induced_loops",
    "is_closed", "loop_residual", "loop_self_intersects", "merge_loops",
    "objective", "placement_collides", "RefineInfo", "refine_poses",
    "RESULT_FORMAT", "SOLVERS",
    "AssemblyResult", "ResultFormatError", "compose", "compose_best_first",
    "compose_glc", "compose_hlm", "load_result", "result_to_json_dict",
    "save_result",
]
