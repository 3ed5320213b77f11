"""Pairwise alignment candidates between fragment pairs.

The local stage proposes rigid transforms that stitch fragment i into
fragment j's frame: polygon segments of similar length and color seed coarse
alignments (a's segment onto b's segment reversed, since mating boundaries
run in opposite directions), point-to-point ICP on the boundary contours
refines them, and candidates are scored by how many boundary pixels end up
well matched (close, similar color, opposing normals). Near-duplicates are
collapsed and the K best per pair survive.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    Fragment,
    PolygonApprox,
    RigidTransform2D,
    fit_rigid,
    pairwise_overlap_px,
    rdp_simplify,
    seam_tolerance_px,
    transforms_close,
)


class NoOverlapError(RuntimeError):
    """ICP could not find enough boundary correspondences to start."""


class CandidateFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PairwiseConfig:
    rdp_eps: float = 3.0
    color_tol: float = 32.0
    seg_len_ratio: float = 0.25
    min_seg_len: float = 8.0
    match_unit_len: float = 30.0
    icp_dist: float = 15.0
    icp_expand_dist: float = 30.0
    icp_min_corr: int = 8
    icp_max_iter: int = 50
    icp_tol: float = 1e-3
    icp_standoff: float = 2.0
    score_dist: float = 3.0
    normal_dot_max: float = -0.5
    dedup_angle: float = math.radians(3.0)
    dedup_trans: float = 5.0
    k_max: int = 10
    min_raw_score: int = 20
    workers: int = 1


@dataclass
class AlignmentCandidate:
    i: int
    j: int
    k: int
    transform: RigidTransform2D  # stitches fragment i into fragment j's frame
    raw_score: int
    gamma: float | None = None
    roi: tuple = (0, 0, 0, 0)  # (x, y, w, h) seam box in j's frame

    @property
    def key(self) -> tuple:
        return (self.i, self.j, self.k)

    def to_json_dict(self) -> dict:
        return {
            "i": self.i, "j": self.j, "k": self.k,
            "T": self.transform.as_flat(),
            "raw_score": self.raw_score,
            "gamma": self.gamma,
            "roi": [int(v) for v in self.roi],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AlignmentCandidate":
        return cls(int(d["i"]), int(d["j"]), int(d["k"]),
                   RigidTransform2D.from_matrix(np.array(d["T"], dtype=float)),
                   int(d["raw_score"]), d.get("gamma"),
                   tuple(d.get("roi", (0, 0, 0, 0))))


def _match_units(poly: PolygonApprox, cfg: PairwiseConfig) -> list:
    """(p0, p1, length, mean_color) chord spans used for coarse matching.

    Chords longer than cfg.match_unit_len are split into equal spans no
    longer than the unit. A nearly straight boundary simplifies to a handful
    of long chords, so whole-chord matching would seed only end-to-end
    alignments; splitting enumerates slide offsets at unit granularity,
    close enough for ICP to pull a partial-overlap mating onto its optimum.
    Capping span length also keeps spans from the two sides of one seam at
    comparable lengths when their chord decompositions disagree.
    """
    units = []
    for k in range(len(poly)):
        p0, p1 = poly.chord(k)
        length = poly.chord_length(k)
        if length < cfg.min_seg_len:
            continue
        color = poly.segments[k].mean_color
        n = max(1, math.ceil(length / cfg.match_unit_len))
        if n == 1:
            units.append((np.asarray(p0, float), np.asarray(p1, float),
                          length, color))
            continue
        p0 = np.asarray(p0, dtype=float)
        step = (np.asarray(p1, dtype=float) - p0) / n
        for m in range(n):
            units.append((p0 + m * step, p0 + (m + 1) * step,
                          length / n, color))
    return units


def match_segments(poly_a: PolygonApprox, poly_b: PolygonApprox,
                   cfg: PairwiseConfig = PairwiseConfig()) -> list:
    """Coarse transforms for every compatible (a-span, b-span) pair.

    Spans come from _match_units. Spans of similar length (within
    cfg.seg_len_ratio) and similar mean color (within cfg.color_tol) fit
    end-to-end: a's span onto b's reversed span (two-point rigid fit). For
    color-compatible spans of dissimilar length the seam may still run
    through both, just decomposed differently on the two sides, so the
    shorter span is fitted against each end of the longer one instead.
    """
    out = []
    units_b = _match_units(poly_b, cfg)
    for pa0, pa1, la, ca in _match_units(poly_a, cfg):
        for pb0, pb1, lb, cb in units_b:
            if np.linalg.norm(ca - cb) >= cfg.color_tol:
                continue
            if abs(la - lb) / max(la, lb) < cfg.seg_len_ratio:
                out.append(fit_rigid(np.array([pa0, pa1]),
                                     np.array([pb1, pb0])))
            elif la < lb:
                d = (pb1 - pb0) / lb
                for q0, q1 in ((pb0, pb0 + d * la), (pb1 - d * la, pb1)):
                    out.append(fit_rigid(np.array([pa0, pa1]),
                                         np.array([q1, q0])))
            else:
                d = (pa1 - pa0) / la
                for q0, q1 in ((pa0, pa0 + d * lb), (pa1 - d * lb, pa1)):
                    out.append(fit_rigid(np.array([q0, q1]),
                                         np.array([pb1, pb0])))
    return out


def icp_refine(frag_a: Fragment, frag_b: Fragment, init: RigidTransform2D,
               cfg: PairwiseConfig = PairwiseConfig(),
               tree_b: cKDTree | None = None) -> tuple:
    """Refine `init` with point-to-point ICP on the boundary contours.

    Correspondences are mutually nearest pairs within cfg.icp_dist px whose
    outward normals oppose (mating boundaries face each other; this rejects
    corner points whose swinging normals would tilt the fit). The fit targets
    points standing cfg.icp_standoff px outside b's boundary, since mating
    boundaries sit a cut-line apart and registering them to coincide would
    interpenetrate the masks.
    Raises NoOverlapError when fewer than cfg.icp_min_corr exist at the start.
    Returns (refined transform, final rms residual).
    """
    pa = frag_a.contour.points
    pb = frag_b.contour.points
    if tree_b is None:
        tree_b = cKDTree(pb)
    t = init
    rms = math.inf
    for it in range(cfg.icp_max_iter):
        qa = t.apply(pa)
        d_ab, j_of_a = tree_b.query(qa, distance_upper_bound=cfg.icp_dist)
        a_idx = np.nonzero(np.isfinite(d_ab))[0]
        if len(a_idx) == 0:
            if it == 0:
                raise NoOverlapError(
                    f"fragments {frag_a.id},{frag_b.id}: no boundary contact")
            break
        tree_a = cKDTree(qa)
        _, a_of_b = tree_a.query(pb, distance_upper_bound=cfg.icp_dist)
        b_idx = j_of_a[a_idx]
        mutual = a_of_b[b_idx] == a_idx
        a_idx, b_idx = a_idx[mutual], b_idx[mutual]
        na = t.rotate_vectors(frag_a.normals[a_idx])
        facing = np.sum(na * frag_b.normals[b_idx], axis=1) < cfg.normal_dot_max
        a_idx, b_idx = a_idx[facing], b_idx[facing]
        if len(a_idx) < cfg.icp_min_corr:
            if it == 0:
                raise NoOverlapError(
                    f"fragments {frag_a.id},{frag_b.id}: only {len(a_idx)} "
                    f"correspondences")
            break
        target = pb[b_idx] + cfg.icp_standoff * frag_b.normals[b_idx]
        t = fit_rigid(pa[a_idx], target)
        resid = t.apply(pa[a_idx]) - target
        new_rms = float(np.sqrt(np.mean(resid[:, 0] ** 2 + resid[:, 1] ** 2)))
        if rms - new_rms < cfg.icp_tol:
            rms = new_rms
            break
        rms = new_rms
    return t, rms


def matched_pixel_score(frag_a: Fragment, frag_b: Fragment,
                        t: RigidTransform2D,
                        cfg: PairwiseConfig = PairwiseConfig(),
                        tree_b: cKDTree | None = None) -> int:
    """Boundary pixels of a whose nearest b-boundary pixel under `t` is close,
    color-compatible, and has an opposing outward normal."""
    if tree_b is None:
        tree_b = cKDTree(frag_b.contour.points)
    qa = t.apply(frag_a.contour.points)
    d, j = tree_b.query(qa, distance_upper_bound=cfg.score_dist)
    near = np.isfinite(d)
    if not near.any():
        return 0
    ai = np.nonzero(near)[0]
    bj = j[ai]
    dc = np.linalg.norm(frag_a.contour.colors[ai] - frag_b.contour.colors[bj],
                        axis=1)
    na = t.rotate_vectors(frag_a.normals[ai])
    dots = np.sum(na * frag_b.normals[bj], axis=1)
    ok = (dc < cfg.color_tol) & (dots < cfg.normal_dot_max)
    return int(ok.sum())


def _seam_roi(frag_a: Fragment, frag_b: Fragment, t: RigidTransform2D,
              cfg: PairwiseConfig, tree_b: cKDTree) -> tuple | None:
    """Axis-aligned box (x, y, w, h) around the abutted seam in j's frame."""
    qa = t.apply(frag_a.contour.points)
    d, j = tree_b.query(qa, distance_upper_bound=cfg.score_dist)
    near = np.isfinite(d)
    if not near.any():
        return None
    pts = np.vstack([qa[near], frag_b.contour.points[j[near]]])
    pad = 8
    x0 = math.floor(pts[:, 0].min()) - pad
    y0 = math.floor(pts[:, 1].min()) - pad
    x1 = math.ceil(pts[:, 0].max()) + pad
    y1 = math.ceil(pts[:, 1].max()) + pad
    return (x0, y0, x1 - x0, y1 - y0)


def _dedup(trans_scores: list, center, cfg: PairwiseConfig) -> list:
    """Greedy dedup at (dedup_angle, dedup_trans); input must be presorted so
    earlier entries win."""
    kept = []
    for entry in trans_scores:
        t = entry[0]
        if any(transforms_close(t, k[0], cfg.dedup_angle, cfg.dedup_trans,
                                center) for k in kept):
            continue
        kept.append(entry)
    return kept


def extract_pair_candidates(frag_a: Fragment, frag_b: Fragment,
                            cfg: PairwiseConfig = PairwiseConfig(),
                            poly_a: PolygonApprox | None = None,
                            poly_b: PolygonApprox | None = None) -> list:
    """Ranked candidates stitching frag_a into frag_b's frame (k unassigned)."""
    if poly_a is None:
        poly_a = rdp_simplify(frag_a.contour, cfg.rdp_eps, cfg.color_tol)
    if poly_b is None:
        poly_b = rdp_simplify(frag_b.contour, cfg.rdp_eps, cfg.color_tol)
    center = frag_a.centroid
    coarse = match_segments(poly_a, poly_b, cfg)
    coarse = _dedup([(t,) for t in coarse], center, cfg)
    tree_b = cKDTree(frag_b.contour.points)

    # Second ICP pass at a wider capture radius: a partial-overlap fit on a
    # curved seam pulls the rest of the boundary into correspondence and
    # slides home, while spurious fits gain nothing.
    wide = None
    if cfg.icp_expand_dist > cfg.icp_dist:
        wide = replace(cfg, icp_dist=cfg.icp_expand_dist)

    refined = []
    for (t0,) in coarse:
        try:
            t, _ = icp_refine(frag_a, frag_b, t0, cfg, tree_b=tree_b)
            if wide is not None:
                t, _ = icp_refine(frag_a, frag_b, t, wide, tree_b=tree_b)
        except NoOverlapError:
            continue
        score = matched_pixel_score(frag_a, frag_b, t, cfg, tree_b=tree_b)
        if score < cfg.min_raw_score:
            continue
        refined.append((t, score))

    # higher score wins inside the dedup radius; ties resolved by parameters
    refined.sort(key=lambda e: (-e[1], e[0].theta, e[0].tx, e[0].ty))
    refined = _dedup(refined, center, cfg)

    out = []
    identity = RigidTransform2D.identity()
    tol = seam_tolerance_px(frag_a.area, frag_b.area)
    for t, score in refined:
        if pairwise_overlap_px(frag_a, t, frag_b, identity) > tol:
            continue
        roi = _seam_roi(frag_a, frag_b, t, cfg, tree_b)
        if roi is None:
            continue
        out.append(AlignmentCandidate(frag_a.id, frag_b.id, len(out), t,
                                      int(score), None, roi))
        if len(out) >= cfg.k_max:
            break
    return out


def _pair_task(args) -> tuple:
    frag_a, frag_b, poly_a, poly_b, cfg = args
    return (frag_a.id, frag_b.id,
            extract_pair_candidates(frag_a, frag_b, cfg, poly_a, poly_b))


def extract_candidates(bundle, cfg: PairwiseConfig = PairwiseConfig()) -> list:
    """All pairwise candidates for a bundle, ordered by (i, j, k)."""
    frags = sorted(bundle.fragments, key=lambda f: f.id)
    polys = {f.id: rdp_simplify(f.contour, cfg.rdp_eps, cfg.color_tol)
             for f in frags}
    tasks = []
    for a in range(len(frags)):
        for b in range(a + 1, len(frags)):
            fa, fb = frags[a], frags[b]
            tasks.append((fa, fb, polys[fa.id], polys[fb.id], cfg))

    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_pair_task, tasks, chunksize=1))
    else:
        results = [_pair_task(t) for t in tasks]

    results.sort(key=lambda r: (r[0], r[1]))
    out = []
    for _, _, cands in results:
        out.extend(cands)
    return out


def write_candidates(cands: list, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(c.to_json_dict(), sort_keys=True)
             for c in sorted(cands, key=lambda c: c.key)]
    p.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return p


def read_candidates(path) -> list:
    p = Path(path)
    if not p.is_file():
        raise CandidateFormatError(f"missing candidate file: {p}")
    out = []
    for ln, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(AlignmentCandidate.from_json_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise CandidateFormatError(f"{p}:{ln}: bad candidate line: {e}") from e
    return out
