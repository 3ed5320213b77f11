"""Groundtruth-backed candidate scorer for solver experiments.

Assigns gamma 0.9 to candidates matching the bundle's groundtruth relative
pose (5 deg / 10 px at the moved fragment's centroid) and 0.1 otherwise,
then flips each verdict with a given probability. Deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import transforms_close

ORACLE_HI = 0.9
ORACLE_LO = 0.1
ORACLE_ANGLE_TOL = math.radians(5.0)
ORACLE_TRANS_TOL = 10.0


def candidate_is_correct(bundle, cand, angle_tol: float = ORACLE_ANGLE_TOL,
                         trans_tol: float = ORACLE_TRANS_TOL) -> bool:
    gt = bundle.gt_relative(cand.i, cand.j)
    center = bundle.fragment(cand.i).centroid
    return transforms_close(cand.transform, gt, angle_tol, trans_tol, center)


@dataclass(frozen=True)
class OracleScorer:
    noise: float = 0.0
    seed: int = 0

    def score(self, bundle, cands) -> list:
        """Copies of `cands` (in (i, j, k) order) with oracle gamma filled."""
        ordered = sorted(cands, key=lambda c: c.key)
        rng = np.random.default_rng(self.seed)
        out = []
        for c in ordered:
            gamma = ORACLE_HI if candidate_is_correct(bundle, c) else ORACLE_LO
            if self.noise > 0 and rng.random() < self.noise:
                gamma = 1.0 - gamma
            out.append(type(c)(c.i, c.j, c.k, c.transform, c.raw_score,
                               gamma, c.roi))
        return out
