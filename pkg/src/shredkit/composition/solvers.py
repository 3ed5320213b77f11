"""Global assembly strategies over the candidate multigraph.

Three solvers with a shared result type:

* best-first -- greedy edge stitching by descending score, the baseline;
* greedy loop closing (GLC) -- seeded DFS walks fix the first closed,
  intersection-free loop they find;
* hierarchical loop merging (HLM) -- bottom-up merge of induced loops into
  levels, absorption into the best loop, then leftover-edge attachment.

Results serialize to JSON with selected edges, 3x3 pose matrices, anchor id,
solver name, seed, and timings (timings live in their own field so the rest
of the file is byte-stable across reruns).
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..geometry import RigidTransform2D, transforms_close, wrap_angle
from ..pairwise import AlignmentCandidate
from .graph import (
    AssemblyGraph,
    ClosureTolerance,
    build_loop,
    find_induced_loops,
    is_closed,
    merge_loops,
    placement_collides,
)

RESULT_FORMAT = 1

SOLVERS = ("bf", "glc", "hlm")


class ResultFormatError(ValueError):
    pass


@dataclass
class AssemblyResult:
    solver: str
    poses: dict                 # fragment id -> RigidTransform2D (all ids)
    selected: list              # AlignmentCandidate
    components: list            # vertex lists, largest first
    anchor: int | None
    seed: int | None = None
    fallback: bool = False
    meta: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def largest_component(self) -> list:
        return self.components[0] if self.components else []


def _pair(i: int, j: int) -> tuple:
    return (i, j) if i < j else (j, i)


def _edges_by_gamma(graph: AssemblyGraph) -> list:
    return sorted(graph.candidates, key=lambda c: (-graph.gamma(c.key), c.key))


class _PoseForest:
    """Disjoint components with member poses kept in each root's frame."""

    def __init__(self, graph: AssemblyGraph):
        self.graph = graph
        self.parent = {v: v for v in graph.fragments}
        self.members = {v: [v] for v in graph.fragments}
        self.pose = {v: RigidTransform2D.identity() for v in graph.fragments}

    def find(self, v: int) -> int:
        while self.parent[v] != v:
            v = self.parent[v]
        return v

    def union_into(self, src_root: int, dst_root: int,
                   g: RigidTransform2D) -> None:
        """Relocate src's component by g into dst's frame and merge."""
        for u in self.members[src_root]:
            self.pose[u] = g.compose(self.pose[u])
        self.parent[src_root] = dst_root
        self.members[dst_root].extend(self.members.pop(src_root))

    def cross_intersects(self, src_root: int, dst_root: int,
                         g: RigidTransform2D, overlap_frac: float) -> bool:
        frags = self.graph.fragments
        for u in self.members[src_root]:
            pu = g.compose(self.pose[u])
            for v in self.members[dst_root]:
                if placement_collides(frags[u], pu, frags[v], self.pose[v],
                                      overlap_frac):
                    return True
        return False

    def n_components(self) -> int:
        return len(self.members)


def _components_of(selected, vertices) -> list:
    parent = {v: v for v in vertices}

    def find(v):
        while parent[v] != v:
            v = parent[v]
        return v

    for c in selected:
        ri, rj = find(c.i), find(c.j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for v in vertices:
        groups.setdefault(find(v), []).append(v)
    comps = [sorted(g) for g in groups.values()]
    comps.sort(key=lambda g: (-len(g), g[0]))
    return comps


def _result_from_forest(graph, forest, selected, solver, seed, t0,
                        meta=None) -> AssemblyResult:
    poses = {}
    for root, members in forest.members.items():
        vmin = min(members)
        g = forest.pose[vmin].invert()
        for u in members:
            poses[u] = g.compose(forest.pose[u])
    comps = _components_of(selected, sorted(graph.fragments))
    anchor = comps[0][0] if comps else None
    return AssemblyResult(
        solver=solver, poses=poses,
        selected=sorted(selected, key=lambda c: c.key),
        components=comps, anchor=anchor, seed=seed, meta=meta or {},
        timings={"solve_s": time.perf_counter() - t0})


def compose_best_first(graph: AssemblyGraph,
                       tol: ClosureTolerance | None = None) -> AssemblyResult:
    """Greedy baseline: walk edges by descending gamma (ties by (i,j,k)),
    stitch components together when the placement stays intersection-free,
    and accept intra-component edges that agree with current poses. Stops
    once the graph is connected or edges run out."""
    t0 = time.perf_counter()
    tol = tol or ClosureTolerance()
    forest = _PoseForest(graph)
    chosen = {}
    selected = []
    for c in _edges_by_gamma(graph):
        pair = _pair(c.i, c.j)
        if pair in chosen:
            continue
        ri, rj = forest.find(c.i), forest.find(c.j)
        if ri == rj:
            want = forest.pose[c.j].compose(c.transform)
            if transforms_close(forest.pose[c.i], want, tol.angle_rad,
                                tol.trans_px, graph.fragments[c.i].centroid):
                selected.append(c)
                chosen[pair] = c.k
            continue
        g = forest.pose[c.j].compose(c.transform).compose(
            forest.pose[c.i].invert())
        if forest.cross_intersects(ri, rj, g, tol.overlap_frac):
            continue
        forest.union_into(ri, rj, g)
        selected.append(c)
        chosen[pair] = c.k
    return _result_from_forest(graph, forest, selected, "bf", None, t0)


def compose_glc(graph: AssemblyGraph, tol: ClosureTolerance | None = None,
                seed: int = 0, max_steps: int | None = None) -> AssemblyResult:
    """Greedy loop closing.

    Seeded DFS walks grow from random start edges (drawn without
    replacement), pruning extensions that make fragments collide. The first
    cycle that composes to identity within tolerance, agrees with the poses
    of any component it touches, and stays intersection-free gets all its
    edges fixed; rival candidates on those pairs are discarded for good.
    Stops at full connectivity, exhausted walks, or `max_steps` edge
    considerations (default 50 per vertex). Remaining components are then
    attached greedily by descending gamma.
    """
    t0 = time.perf_counter()
    tol = tol or ClosureTolerance()
    rng = np.random.default_rng(seed)
    cap = max_steps if max_steps is not None else 50 * max(len(graph.fragments), 1)
    forest = _PoseForest(graph)
    decided = {}   # pair -> fixed k
    selected = {}  # key -> candidate
    steps = 0

    def usable(c) -> bool:
        return decided.get(_pair(c.i, c.j), c.k) == c.k

    def fix_loop(loop) -> bool:
        roots = {}
        for v in loop.poses:
            roots.setdefault(forest.find(v), []).append(v)
        base = max(roots, key=lambda r: (len(forest.members[r]), -r))
        s0 = min(roots[base])
        g = forest.pose[s0].compose(loop.poses[s0].invert())
        aligns = {}
        for r in sorted(roots):
            verts = sorted(roots[r])
            if r == base:
                h = RigidTransform2D.identity()
            else:
                v0 = verts[0]
                h = g.compose(loop.poses[v0]).compose(forest.pose[v0].invert())
            aligns[r] = h
            for v in verts:
                want = g.compose(loop.poses[v])
                if not transforms_close(h.compose(forest.pose[v]), want,
                                        tol.angle_rad, tol.trans_px,
                                        graph.fragments[v].centroid):
                    return False
        placements = []
        for r, h in aligns.items():
            for u in forest.members[r]:
                placements.append((r, u, h.compose(forest.pose[u])))
        for a in range(len(placements)):
            ra, ua, pa = placements[a]
            for b in range(a + 1, len(placements)):
                rb, ub, pb = placements[b]
                if ra == rb:
                    continue
                if placement_collides(graph.fragments[ua], pa,
                                      graph.fragments[ub], pb,
                                      tol.overlap_frac):
                    return False
        for r in sorted(aligns):
            if r != base:
                forest.union_into(r, base, aligns[r])
        for cand, _ in loop.order:
            decided[_pair(cand.i, cand.j)] = cand.k
            selected[cand.key] = cand
        return True

    def walk(start) -> bool:
        nonlocal steps
        v0, v1 = start.i, start.j
        path_v = [v0, v1]
        path_pose = {v0: RigidTransform2D.identity(),
                     v1: graph.step_transform(start, v0)}
        path_steps = [(start, v0)]
        used_pairs = {_pair(v0, v1)}

        def extend() -> bool:
            nonlocal steps
            last = path_v[-1]
            exts = [c for c in graph.edges_at(last)
                    if usable(c)
                    and _pair(last, graph.other_end(c, last)) not in used_pairs]
            for idx in rng.permutation(len(exts)):
                if steps >= cap:
                    return False
                steps += 1
                c = exts[idx]
                u = graph.other_end(c, last)
                if u in path_pose:
                    i0 = path_v.index(u)
                    sub = path_steps[i0:] + [(c, last)]
                    if len(sub) >= 3:
                        loop = build_loop(graph, sub)
                        if is_closed(graph, loop, tol) and fix_loop(loop):
                            return True
                    continue
                pu = path_pose[last].compose(graph.step_transform(c, last))
                if any(placement_collides(graph.fragments[u], pu,
                                          graph.fragments[w], path_pose[w],
                                          tol.overlap_frac)
                       for w in path_v):
                    continue
                path_v.append(u)
                path_pose[u] = pu
                path_steps.append((c, last))
                used_pairs.add(_pair(last, u))
                if extend():
                    return True
                used_pairs.discard(_pair(last, u))
                path_steps.pop()
                del path_pose[u]
                path_v.pop()
            return False

        return extend()

    keys = sorted(graph.by_key)
    for idx in rng.permutation(len(keys)):
        if steps >= cap or forest.n_components() == 1:
            break
        c = graph.by_key[keys[idx]]
        if usable(c):
            walk(c)

    changed = True
    while changed:
        changed = False
        for c in _edges_by_gamma(graph):
            pair = _pair(c.i, c.j)
            if pair in decided:
                continue
            ri, rj = forest.find(c.i), forest.find(c.j)
            if ri == rj:
                continue
            g = forest.pose[c.j].compose(c.transform).compose(
                forest.pose[c.i].invert())
            if forest.cross_intersects(ri, rj, g, tol.overlap_frac):
                continue
            forest.union_into(ri, rj, g)
            decided[pair] = c.k
            selected[c.key] = c
            changed = True
    return _result_from_forest(graph, forest, list(selected.values()),
                               "glc", seed, t0, {"steps": steps})


def compose_hlm(graph: AssemblyGraph, tol: ClosureTolerance | None = None,
                theta_m: int = 500, seed: int = 0) -> AssemblyResult:
    """Hierarchical loop merging.

    Bottom-up: start from closed induced loops of length 3-4; per level,
    rank mergeable pairs by combined score, keep the top `theta_m`, attempt
    them in seeded-random order, and collect successful merges (deduped by
    edge set, and only if the union actually grew) into the next level.
    The best loop of the last level becomes l*; a top-down sweep absorbs
    every loop that adds vertices and passes the merge conditions; leftover
    edges then attach missing vertices by descending gamma. Poses anchor at
    l*'s lowest vertex. An empty level 0 falls back to the best-first
    baseline with a warning.
    """
    t0 = time.perf_counter()
    tol = tol or ClosureTolerance()
    rng = np.random.default_rng(seed)
    level0 = find_induced_loops(graph, tol)
    if not level0:
        warnings.warn("no closed induced loops found; falling back to "
                      "best-first composition", RuntimeWarning)
        res = compose_best_first(graph, tol)
        res.solver = "hlm"
        res.seed = seed
        res.fallback = True
        res.meta = {"levels": [0]}
        return res

    levels = [level0]
    while len(levels[-1]) >= 2:
        cur = levels[-1]
        by_edge = {}
        for idx, lp in enumerate(cur):
            for key in lp.edge_keys:
                by_edge.setdefault(key, []).append(idx)
        pair_ids = sorted({(a, b) for ids in by_edge.values()
                           for a in ids for b in ids if a < b})
        pair_ids.sort(key=lambda pq: (-(cur[pq[0]].score + cur[pq[1]].score),
                                      cur[pq[0]].sort_key()[1],
                                      cur[pq[1]].sort_key()[1]))
        attempts = pair_ids[:theta_m]
        nxt, seen = [], set()
        for oi in rng.permutation(len(attempts)):
            p, q = attempts[oi]
            out = merge_loops(graph, cur[p], cur[q], tol)
            if out.loop is None:
                continue
            merged = out.loop
            if len(merged.edge_keys) <= max(len(cur[p].edge_keys),
                                            len(cur[q].edge_keys)):
                continue
            if merged.edge_keys in seen:
                continue
            seen.add(merged.edge_keys)
            nxt.append(merged)
        if not nxt:
            break
        nxt.sort(key=lambda l: l.sort_key())
        levels.append(nxt)

    lstar = min(levels[-1], key=lambda l: l.sort_key())
    for i in range(len(levels) - 1, -1, -1):
        changed = True
        while changed:
            changed = False
            for lp in levels[i]:
                if lp.vertices <= lstar.vertices:
                    continue
                if not (lp.edge_keys & lstar.edge_keys):
                    continue
                out = merge_loops(graph, lstar, lp, tol)
                if out.loop is not None:
                    lstar = out.loop
                    changed = True

    poses = dict(lstar.poses)
    selected_keys = set(lstar.edge_keys)
    decided = {_pair(i, j): k for (i, j, k) in selected_keys}
    changed = True
    while changed:
        # Restart from the top of the gamma ordering after every pickup: an
        # attachment can make a higher-gamma edge attachable, and that edge
        # must win over anything below it.
        changed = False
        for c in _edges_by_gamma(graph):
            pair = _pair(c.i, c.j)
            if decided.get(pair, c.k) != c.k or c.key in selected_keys:
                continue
            in_i, in_j = c.i in poses, c.j in poses
            if not in_i and not in_j:
                continue
            if in_i and in_j:
                # Chord between placed fragments: selecting it swaps its
                # discard penalty (gamma) for its consistency residual, so
                # take it only when that trade lowers the energy.
                rel = (c.transform.invert().compose(poses[c.j].invert())
                       .compose(poses[c.i]))
                err = np.array([rel.tx, rel.ty, wrap_angle(rel.theta)])
                if float(err @ err) >= c.gamma:
                    continue
                selected_keys.add(c.key)
                decided[pair] = c.k
                changed = True
                break
            src = c.i if in_i else c.j
            new_v = graph.other_end(c, src)
            pnew = poses[src].compose(graph.step_transform(c, src))
            if any(placement_collides(graph.fragments[new_v], pnew,
                                      graph.fragments[w], poses[w],
                                      tol.overlap_frac)
                   for w in sorted(poses)):
                continue
            poses[new_v] = pnew
            selected_keys.add(c.key)
            decided[pair] = c.k
            changed = True
            break

    selected = [graph.by_key[k] for k in sorted(selected_keys)]
    all_poses = dict(poses)
    for v in graph.fragments:
        all_poses.setdefault(v, RigidTransform2D.identity())
    comps = _components_of(selected, sorted(graph.fragments))
    return AssemblyResult(
        solver="hlm", poses=all_poses, selected=selected, components=comps,
        anchor=min(lstar.vertices), seed=seed,
        meta={"levels": [len(l) for l in levels]},
        timings={"solve_s": time.perf_counter() - t0})


def compose(graph: AssemblyGraph, solver: str,
            tol: ClosureTolerance | None = None, seed: int = 0,
            theta_m: int = 500,
            max_steps: int | None = None) -> AssemblyResult:
    if solver == "bf":
        return compose_best_first(graph, tol)
    if solver == "glc":
        return compose_glc(graph, tol, seed=seed, max_steps=max_steps)
    if solver == "hlm":
        return compose_hlm(graph, tol, theta_m=theta_m, seed=seed)
    raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")


def result_to_json_dict(res: AssemblyResult,
                        include_timings: bool = True) -> dict:
    d = {
        "format": RESULT_FORMAT,
        "solver": res.solver,
        "seed": res.seed,
        "anchor": res.anchor,
        "fallback": res.fallback,
        "components": [list(cmp) for cmp in res.components],
        "selected": [c.to_json_dict()
                     for c in sorted(res.selected, key=lambda c: c.key)],
        "poses": {str(v): [float(x) for x in res.poses[v].as_flat()]
                  for v in sorted(res.poses)},
        "meta": res.meta,
    }
    if include_timings:
        d["timings"] = res.timings
    return d


def save_result(res: AssemblyResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result_to_json_dict(res), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_result(path) -> AssemblyResult:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ResultFormatError(f"cannot read assembly result {path}: {exc}")
    if not isinstance(d, dict) or d.get("format") != RESULT_FORMAT:
        raise ResultFormatError(
            f"{path}: unsupported assembly result format {d.get('format')!r}")
    try:
        poses = {int(v): RigidTransform2D.from_matrix(
                     np.array(flat, dtype=float).reshape(3, 3))
                 for v, flat in d["poses"].items()}
        selected = [AlignmentCandidate.from_json_dict(e) for e in d["selected"]]
        return AssemblyResult(
            solver=d["solver"], poses=poses, selected=selected,
            components=[list(map(int, cmp)) for cmp in d["components"]],
            anchor=d["anchor"], seed=d.get("seed"),
            fallback=bool(d.get("fallback", False)),
            meta=d.get("meta", {}), timings=d.get("timings", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ResultFormatError(f"{path}: bad assembly result field: {exc}")
