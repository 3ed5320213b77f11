"""Assembly multigraph, loop closure tests, loop merging, and the objective.

Vertices are fragments, parallel edges are rival alignment candidates for the
same pair. A loop is closed when composing its transforms around the cycle
(reversed edges contribute their inverse) lands back at the identity within
tolerance. Level-0 loops are induced cycles of length 3 or 4: no edge of the
graph may connect two non-consecutive vertices of the cycle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import (
    DEFAULT_CHECK_SCALE,
    RigidTransform2D,
    pairwise_overlap_px,
    transform_distance,
    transforms_close,
    wrap_angle,
)


class MalformedLoopError(ValueError):
    pass


class NotMergeableError(ValueError):
    pass


@dataclass(frozen=True)
class ClosureTolerance:
    """Slack for loop closure and merge checks.

    `overlap_frac` bounds how much of the smaller fragment's area two placed
    fragments may share before the placement counts as a collision. Chained
    candidate poses carry a few pixels of registration drift, which smears
    into thin overlap bands along shared seams (roughly drift x seam length,
    a couple percent of a fragment); genuinely wrong placements stack
    fragments and overlap far more.
    """

    angle_rad: float = math.radians(3.0)
    trans_px: float = 10.0
    overlap_frac: float = 0.10

    @classmethod
    def for_bundle(cls, bundle, angle_deg: float = 3.0,
                   diag_fraction: float = 0.015,
                   overlap_frac: float = 0.10) -> "ClosureTolerance":
        return cls(math.radians(angle_deg), diag_fraction * bundle.diagonal(),
                   overlap_frac)


def placement_collides(frag_a, pose_a, frag_b, pose_b,
                       overlap_frac: float = 0.10,
                       scale: float = DEFAULT_CHECK_SCALE) -> bool:
    """Area-fraction collision test for composed placements."""
    overlap = pairwise_overlap_px(frag_a, pose_a, frag_b, pose_b, scale)
    limit = overlap_frac * min(frag_a.area, frag_b.area) * scale * scale
    return overlap > limit


class AssemblyGraph:
    """Candidate multigraph over a set of fragments."""

    def __init__(self, fragments, candidates):
        self.fragments = {f.id: f for f in fragments}
        self.candidates = list(candidates)
        self.by_key = {}
        self.by_pair = {}
        for c in self.candidates:
            if c.i == c.j:
                raise ValueError(f"self-edge on fragment {c.i}")
            if c.i not in self.fragments or c.j not in self.fragments:
                raise ValueError(f"candidate {c.key} references unknown fragment")
            if c.key in self.by_key:
                raise ValueError(f"duplicate candidate key {c.key}")
            self.by_key[c.key] = c
            self.by_pair.setdefault(self._pair(c.i, c.j), []).append(c)
        self.adj = {v: set() for v in self.fragments}
        for (a, b) in self.by_pair:
            self.adj[a].add(b)
            self.adj[b].add(a)

    @staticmethod
    def _pair(i: int, j: int) -> tuple:
        return (i, j) if i < j else (j, i)

    @property
    def vertices(self) -> list:
        return sorted(self.fragments)

    def pair_candidates(self, a: int, b: int) -> list:
        return self.by_pair.get(self._pair(a, b), [])

    def edges_at(self, v: int) -> list:
        out = []
        for u in self.adj[v]:
            out.extend(self.pair_candidates(v, u))
        return sorted(out, key=lambda c: c.key)

    def gamma(self, key: tuple) -> float:
        g = self.by_key[key].gamma
        return 0.0 if g is None else float(g)

    def step_transform(self, cand, src: int) -> RigidTransform2D:
        """Pose update when walking edge `cand` out of vertex `src`:
        X_dst = X_src @ step."""
        if src == cand.j:
            return cand.transform
        if src == cand.i:
            return cand.transform.invert()
        raise MalformedLoopError(f"vertex {src} not on edge {cand.key}")

    def other_end(self, cand, src: int) -> int:
        return cand.j if src == cand.i else cand.i


@dataclass
class Loop:
    """Set of edges with jointly consistent derived poses.

    `order` lists (candidate, source_vertex) steps around the cycle for
    simple loops and is None after merges. Poses are anchored so the lowest
    vertex id carries the identity.
    """

    edge_keys: frozenset
    poses: dict
    score: float
    order: tuple | None = None

    @property
    def vertices(self) -> frozenset:
        return frozenset(self.poses)

    def sort_key(self) -> tuple:
        return (-self.score, tuple(sorted(self.edge_keys)))


def _anchored(poses: dict) -> dict:
    v0 = min(poses)
    g = poses[v0].invert()
    return {v: g.compose(p) for v, p in poses.items()}


def build_loop(graph: AssemblyGraph, steps: list) -> Loop:
    """Loop from an ordered edge walk [(candidate, src_vertex), ...].

    Steps must chain (each edge leaves the vertex the previous one reached)
    and return to the first source vertex.
    """
    if len(steps) < 3:
        raise MalformedLoopError("a loop needs at least 3 edges")
    v = steps[0][1]
    poses = {v: RigidTransform2D.identity()}
    cur = v
    for idx, (cand, src) in enumerate(steps):
        if src != cur:
            raise MalformedLoopError(f"step {idx} starts at {src}, walk is at {cur}")
        cur = graph.other_end(cand, src)
        if idx < len(steps) - 1:
            if cur in poses:
                raise MalformedLoopError(f"vertex {cur} revisited before closing")
            poses[cur] = poses[src].compose(graph.step_transform(cand, src))
    if cur != v:
        raise MalformedLoopError(f"walk ends at {cur}, not at start {v}")
    score = sum(graph.gamma(c.key) for c, _ in steps)
    return Loop(frozenset(c.key for c, _ in steps), _anchored(poses), score,
                tuple(steps))


def loop_residual(graph: AssemblyGraph, loop: Loop) -> tuple:
    """(abs angle, translation norm) of the composed cycle vs identity."""
    if loop.order is None:
        raise MalformedLoopError("residual needs an ordered simple loop")
    prod = RigidTransform2D.identity()
    for cand, src in loop.order:
        prod = prod.compose(graph.step_transform(cand, src))
    return abs(prod.theta), math.hypot(prod.tx, prod.ty)


def is_closed(graph: AssemblyGraph, loop: Loop, tol: ClosureTolerance) -> bool:
    da, dt = loop_residual(graph, loop)
    return da <= tol.angle_rad and dt <= tol.trans_px


def loop_self_intersects(graph: AssemblyGraph, loop: Loop,
                         overlap_frac: float = 0.10) -> bool:
    vs = sorted(loop.poses)
    for a in range(len(vs)):
        for b in range(a + 1, len(vs)):
            if placement_collides(graph.fragments[vs[a]], loop.poses[vs[a]],
                                  graph.fragments[vs[b]], loop.poses[vs[b]],
                                  overlap_frac):
                return True
    return False


def _matrix_stack(graph: AssemblyGraph, cands: list, src: int) -> np.ndarray:
    return np.stack([graph.step_transform(c, src).as_matrix() for c in cands])


def _cycle_loops(graph: AssemblyGraph, cycle: list,
                 tol: ClosureTolerance) -> list:
    """All closed, internally intersection-free loops over a vertex cycle."""
    n = len(cycle)
    cand_lists, mats = [], []
    for t in range(n):
        src, dst = cycle[t], cycle[(t + 1) % n]
        cands = graph.pair_candidates(src, dst)
        if not cands:
            return []
        cand_lists.append(cands)
        mats.append(_matrix_stack(graph, cands, src))

    prod = mats[0]
    for m in mats[1:]:
        prod = np.einsum("aij,bjk->abik", prod, m).reshape(-1, 3, 3)
    ang = np.abs(np.arctan2(prod[:, 1, 0], prod[:, 0, 0]))
    trans = np.hypot(prod[:, 0, 2], prod[:, 1, 2])
    closed = np.nonzero((ang <= tol.angle_rad) & (trans <= tol.trans_px))[0]

    shape = tuple(len(cl) for cl in cand_lists)
    out = []
    for flat in closed:
        combo = np.unravel_index(int(flat), shape)
        steps = [(cand_lists[t][combo[t]], cycle[t]) for t in range(n)]
        loop = build_loop(graph, steps)
        if not loop_self_intersects(graph, loop, tol.overlap_frac):
            out.append(loop)
    return out


def find_induced_loops(graph: AssemblyGraph,
                       tol: ClosureTolerance) -> list:
    """Closed induced loops of length 3 or 4 (level-0 loop set).

    Induced: no candidate edge joins two non-consecutive vertices of the
    cycle (vertex adjacency of the full multigraph; parallel candidates on
    the cycle's own pairs are fine). Every returned loop is internally
    intersection-free.
    """
    vs = graph.vertices
    adj = graph.adj
    loops = []

    for a_idx in range(len(vs)):
        a = vs[a_idx]
        nbrs = sorted(u for u in adj[a] if u > a)
        for b_i in range(len(nbrs)):
            for c_i in range(b_i + 1, len(nbrs)):
                b, c = nbrs[b_i], nbrs[c_i]
                if c in adj[b]:
                    loops.extend(_cycle_loops(graph, [a, b, c], tol))

    for quad in _induced_quads(vs, adj):
        loops.extend(_cycle_loops(graph, quad, tol))

    loops.sort(key=lambda l: l.sort_key())
    return loops


def _induced_quads(vs: list, adj: dict):
    """Canonical 4-cycles a-b-c-d with both diagonals non-adjacent."""
    for ai in range(len(vs)):
        a = vs[ai]
        rest = [v for v in vs if v > a]
        for bi in range(len(rest)):
            b = rest[bi]
            if b not in adj[a]:
                continue
            for ci in range(len(rest)):
                c = rest[ci]
                if c == b or c not in adj[b] or c in adj[a]:
                    continue
                for di in range(ci + 1, len(rest)):
                    d = rest[di]
                    if d == b or d not in adj[c] or d not in adj[a]:
                        continue
                    if d in adj[b]:
                        continue
                    if b < d:  # canonical direction: second vertex < last
                        yield [a, b, c, d]


@dataclass
class MergeOutcome:
    loop: Loop | None
    verdict: str  # "merged" | "c1_violation" | "c2_violation"
    detail: str = ""


def merge_loops(graph: AssemblyGraph, lp: Loop, lq: Loop,
                tol: ClosureTolerance) -> MergeOutcome:
    """Merge two loops sharing at least one common edge.

    C1: derived poses must agree at every shared vertex once lq is brought
    into lp's frame via a common edge. C2: fragments exclusive to either loop
    must stay intersection-free. Rival candidates for one pair in the union
    violate C1 by definition.
    """
    common = lp.edge_keys & lq.edge_keys
    if not common:
        raise NotMergeableError("loops share no edge")

    union = lp.edge_keys | lq.edge_keys
    pairs = {}
    for (i, j, k) in union:
        pairs.setdefault((min(i, j), max(i, j)), set()).add(k)
    for pair, ks in pairs.items():
        if len(ks) > 1:
            return MergeOutcome(None, "c1_violation",
                                f"rival candidates {sorted(ks)} on pair {pair}")

    anchor_edge = min(common)
    v0 = anchor_edge[0]
    g = lp.poses[v0].compose(lq.poses[v0].invert())
    shared = sorted(lp.vertices & lq.vertices)
    for v in shared:
        center = graph.fragments[v].centroid
        if not transforms_close(lp.poses[v], g.compose(lq.poses[v]),
                                tol.angle_rad, tol.trans_px, center):
            da, dp = transform_distance(lp.poses[v], g.compose(lq.poses[v]),
                                        center)
            return MergeOutcome(None, "c1_violation",
                                f"vertex {v} disagrees by "
                                f"{math.degrees(da):.2f} deg / {dp:.2f} px")

    only_p = sorted(lp.vertices - lq.vertices)
    only_q = sorted(lq.vertices - lp.vertices)
    for vp in only_p:
        for vq in only_q:
            if placement_collides(graph.fragments[vp], lp.poses[vp],
                                  graph.fragments[vq],
                                  g.compose(lq.poses[vq]), tol.overlap_frac):
                return MergeOutcome(None, "c2_violation",
                                    f"fragments {vp} and {vq} intersect")

    poses = dict(lp.poses)
    for v in only_q:
        poses[v] = g.compose(lq.poses[v])
    score = sum(graph.gamma(k) for k in union)
    return MergeOutcome(Loop(frozenset(union), _anchored(poses), score), "merged")


def objective(graph: AssemblyGraph, poses: dict, selected,
              overlap_frac: float = 0.10,
              check_intersections: bool = True) -> float:
    """Pose-consistency energy of a selection plus penalties for rejections.

    Each selected edge contributes the squared parameter-vector norm of
    (T^-1 Xj^-1 Xi); unselected edges contribute their gamma. Returns +inf
    when the selected placement has colliding fragments.
    """
    selected = set(selected)
    total = 0.0
    touched = set()
    for key in selected:
        c = graph.by_key[key]
        if c.i not in poses or c.j not in poses:
            raise ValueError(f"selected edge {key} has unplaced endpoints")
        touched.update((c.i, c.j))
        rel = c.transform.invert().compose(poses[c.j].invert()).compose(poses[c.i])
        e = np.array([rel.tx, rel.ty, wrap_angle(rel.theta)])
        total += float(e @ e)
    for c in graph.candidates:
        if c.key not in selected:
            total += graph.gamma(c.key)
    if check_intersections and len(touched) > 1:
        placed = [(graph.fragments[v], poses[v]) for v in sorted(touched)]
        for a in range(len(placed)):
            for b in range(a + 1, len(placed)):
                if placement_collides(placed[a][0], placed[a][1],
                                      placed[b][0], placed[b][1],
                                      overlap_frac):
                    return math.inf
    return total
