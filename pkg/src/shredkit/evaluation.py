"""Reassembly metrics against groundtruth.

PCR counts fragments whose pose lands within 5 deg / 100 px of groundtruth
once the global gauge freedom is removed; ACR counts selected pairwise
alignments within 5 deg / 10 px of the groundtruth relative pose (tighter,
since relative error has nowhere to accumulate); LCR is the largest
connected component's share of fragments.  Detector stats summarize a
scored candidate set as a confusion matrix at a gamma threshold.

The gauge is estimated from the largest component: each member fragment
proposes the rigid motion mapping its result pose onto its groundtruth
pose, the proposal with the smallest median reference-point displacement
wins, and a least-squares refit over the winner's inliers polishes it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .compatibility import candidate_is_correct
from .geometry import RigidTransform2D, fit_rigid, transform_distance, transforms_close

PCR_ANGLE_TOL = math.radians(5.0)
PCR_TRANS_TOL = 100.0
ALIGN_ANGLE_TOL = math.radians(5.0)
ALIGN_TRANS_TOL = 10.0


@dataclass
class EvalReport:
    pcr: float
    acr: float
    lcr: float
    pose_errors: dict           # fragment id -> (deg, px), gauge-aligned
    components: list            # vertex lists, largest first
    n_fragments: int
    n_selected: int
    edges: list = field(default_factory=list)  # per selected edge
    detector: dict | None = None
    wall_time_s: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "pcr": self.pcr,
            "acr": self.acr,
            "lcr": self.lcr,
            "pose_errors": {str(v): [float(d), float(p)]
                            for v, (d, p) in sorted(self.pose_errors.items())},
            "components": [list(c) for c in self.components],
            "n_fragments": self.n_fragments,
            "n_selected": self.n_selected,
            "edges": self.edges,
            "detector": self.detector,
            "wall_time_s": self.wall_time_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def _connected_components(ids, selected) -> list:
    parent = {v: v for v in ids}

    def find(v):
        while parent[v] != v:
            v = parent[v]
        return v

    for c in selected:
        ri, rj = find(c.i), find(c.j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for v in ids:
        groups.setdefault(find(v), []).append(v)
    comps = [sorted(g) for g in groups.values()]
    comps.sort(key=lambda g: (-len(g), g[0]))
    return comps


def align_gauge(poses: dict, gt_poses: dict, component,
                centers: dict) -> RigidTransform2D:
    """Rigid motion g with g . pose_v ~ gt_v over the component.

    Least-median-of-squares over single-fragment proposals, then a
    least-squares polish on the inliers of the winning proposal (kept only
    when it does not worsen the median displacement).
    """
    comp = sorted(component)
    pts_res = np.array([poses[v].apply(centers[v]) for v in comp])
    pts_gt = np.array([gt_poses[v].apply(centers[v]) for v in comp])

    def cost(g):
        moved = g.apply(pts_res)
        return np.hypot(*(moved - pts_gt).T)

    best, best_d = None, None
    for v in comp:
        g = gt_poses[v].compose(poses[v].invert())
        d = cost(g)
        if best is None or np.median(d) < np.median(best_d):
            best, best_d = g, d
    inliers = best_d <= PCR_TRANS_TOL
    if inliers.sum() >= 2:
        refit = fit_rigid(pts_res[inliers], pts_gt[inliers])
        if np.median(cost(refit)) <= np.median(best_d):
            best = refit
    return best


def score_assembly(poses: dict, gt_poses: dict, selected,
                   adjacency=None, centers: dict | None = None,
                   wall_time_s: float = 0.0) -> EvalReport:
    """PCR / ACR / LCR of a composed result against groundtruth poses.

    `poses` and `gt_poses` must cover the same fragment ids.  `centers`
    optionally gives a per-fragment reference point (fragment centroid when
    available) at which displacements are measured; defaults to each local
    origin.  `adjacency` (groundtruth seam pairs) only annotates the
    per-edge records.
    """
    ids = sorted(poses)
    if set(gt_poses) != set(poses):
        raise ValueError("result and groundtruth pose id sets differ")
    if centers is None:
        centers = {v: (0.0, 0.0) for v in ids}
    adjacency = {tuple(sorted(p)) for p in (adjacency or ())}

    comps = _connected_components(ids, selected)
    lcr = len(comps[0]) / len(ids) if ids else 0.0

    gauge = align_gauge(poses, gt_poses, comps[0], centers) if ids else None
    pose_errors, n_ok = {}, 0
    for v in ids:
        dtheta, dpos = transform_distance(gauge.compose(poses[v]),
                                          gt_poses[v], centers[v])
        pose_errors[v] = (math.degrees(dtheta), dpos)
        if dtheta <= PCR_ANGLE_TOL and dpos <= PCR_TRANS_TOL:
            n_ok += 1
    pcr = n_ok / len(ids) if ids else 0.0

    edges, n_edge_ok = [], 0
    for c in sorted(selected, key=lambda c: c.key):
        gt_rel = gt_poses[c.j].invert().compose(gt_poses[c.i])
        ok = transforms_close(c.transform, gt_rel, ALIGN_ANGLE_TOL,
                              ALIGN_TRANS_TOL, centers[c.i])
        n_edge_ok += ok
        edges.append({"i": c.i, "j": c.j, "k": c.k, "correct": bool(ok),
                      "adjacent": tuple(sorted((c.i, c.j))) in adjacency})
    acr = n_edge_ok / len(edges) if edges else 0.0

    return EvalReport(pcr=pcr, acr=acr, lcr=lcr, pose_errors=pose_errors,
                      components=comps, n_fragments=len(ids),
                      n_selected=len(edges), edges=edges,
                      wall_time_s=wall_time_s)


def score_result(bundle, result, wall_time_s: float | None = None) -> EvalReport:
    """score_assembly against a bundle's groundtruth, measuring displacement
    at fragment centroids.  Wall time defaults to the solver's own timing."""
    centers = {f.id: tuple(f.centroid) for f in bundle.fragments}
    if wall_time_s is None:
        wall_time_s = float(result.timings.get("solve_s", 0.0))
    return score_assembly(result.poses, bundle.poses, result.selected,
                          bundle.adjacency(), centers=centers,
                          wall_time_s=wall_time_s)


def score_detector(bundle, cands, threshold: float = 0.5) -> dict:
    """Confusion matrix of scored candidates at a gamma threshold.

    Positive means gamma >= threshold (closed); correct means the transform
    matches the groundtruth relative pose within 5 deg / 10 px.
    """
    tp = tn = fp = fn = 0
    for c in cands:
        positive = c.gamma is not None and c.gamma >= threshold
        correct = candidate_is_correct(bundle, c)
        if positive and correct:
            tp += 1
        elif positive:
            fp += 1
        elif correct:
            fn += 1
        else:
            tn += 1
    return {
        "tp": tp, "tn": tn, "fp": fp, "fn": fn,
        "precision": tp / (tp + fp) if tp + fp else 0.0,
        "recall": tp / (tp + fn) if tp + fn else 0.0,
        "threshold": float(threshold),
    }


def pr_curve(bundle, cands, thresholds) -> list:
    """Precision/recall sweep; one score_detector dict per threshold."""
    return [score_detector(bundle, cands, t) for t in thresholds]


def format_report_table(rows) -> str:
    """Aligned text table over (label, EvalReport) rows.

    Columns: name, PCR, ACR, LCR, time -- percentages with one decimal,
    seconds with two.
    """
    header = ("run", "PCR", "ACR", "LCR", "time")
    body = [(str(label),
             f"{100.0 * r.pcr:.1f}%",
             f"{100.0 * r.acr:.1f}%",
             f"{100.0 * r.lcr:.1f}%",
             f"{r.wall_time_s:.2f}s")
            for label, r in rows]
    widths = [max(len(h), *(len(row[c]) for row in body)) if body else len(h)
              for c, h in enumerate(header)]
    lines = ["  ".join(h.ljust(widths[c]) for c, h in enumerate(header))]
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(cell.ljust(widths[c])
                               for c, cell in enumerate(row)))
    return "\n".join(lines)
