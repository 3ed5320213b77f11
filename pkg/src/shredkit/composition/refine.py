"""Least-squares pose refinement over the selected alignment edges.

Minimizes the summed squared pose-consistency residuals e_T = params of
(T^-1 Xj^-1 Xi) with analytic Jacobians, per connected component, keeping
the lowest-id vertex of each component fixed as gauge anchor. Backtracking
on the Gauss-Newton step guarantees the objective never increases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import RigidTransform2D, wrap_angle


@dataclass
class RefineInfo:
    iterations: int = 0
    initial_error: float = 0.0
    final_error: float = 0.0
    history: list = field(default_factory=list)


def _components(edges, vertices):
    parent = {v: v for v in vertices}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for c in edges:
        ri, rj = find(c.i), find(c.j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    comps = {}
    for v in vertices:
        comps.setdefault(find(v), []).append(v)
    return [sorted(vs) for _, vs in sorted(comps.items())]


def _residuals_and_jacobian(edges, order, params, anchor_idx):
    """Stacked residual vector (3E,) and Jacobian (3E, 3V); anchor columns
    are zeroed so the gauge stays fixed."""
    n = len(order)
    r = np.zeros(3 * len(edges))
    jac = np.zeros((3 * len(edges), 3 * n))
    for e_idx, c in enumerate(edges):
        ii, jj = order[c.i], order[c.j]
        xi, yi, thi = params[3 * ii:3 * ii + 3]
        xj, yj, thj = params[3 * jj:3 * jj + 3]
        tT = c.transform
        cj, sj = math.cos(thj), math.sin(thj)
        # relative pose of i in j's frame
        dx, dy = xi - xj, yi - yj
        mx = cj * dx + sj * dy
        my = -sj * dx + cj * dy
        mth = thi - thj
        cT, sT = math.cos(tT.theta), math.sin(tT.theta)
        ex = cT * (mx - tT.tx) + sT * (my - tT.ty)
        ey = -sT * (mx - tT.tx) + cT * (my - tT.ty)
        eth = wrap_angle(mth - tT.theta)
        row = 3 * e_idx
        r[row:row + 3] = (ex, ey, eth)

        # R(-theta_T) @ R(-theta_j) acts on t_i; negated on t_j
        a = np.array([[cT, sT], [-sT, cT]]) @ np.array([[cj, sj], [-sj, cj]])
        jac[row:row + 2, 3 * ii:3 * ii + 2] = a
        jac[row:row + 2, 3 * jj:3 * jj + 2] = -a
        # d/dtheta_j of R(-theta_j) (t_i - t_j)
        dmx = -sj * dx + cj * dy
        dmy = -cj * dx - sj * dy
        jac[row, 3 * jj + 2] = cT * dmx + sT * dmy
        jac[row + 1, 3 * jj + 2] = -sT * dmx + cT * dmy
        jac[row + 2, 3 * ii + 2] = 1.0
        jac[row + 2, 3 * jj + 2] = -1.0
    jac[:, 3 * anchor_idx:3 * anchor_idx + 3] = 0.0
    return r, jac


def _refine_component(edges, poses, verts, max_iter, rel_tol):
    order = {v: idx for idx, v in enumerate(verts)}
    anchor_idx = 0  # verts is sorted; lowest id is the gauge
    params = np.zeros(3 * len(verts))
    for v, idx in order.items():
        p = poses[v]
        params[3 * idx:3 * idx + 3] = (p.tx, p.ty, p.theta)

    def error(p):
        r, _ = _residuals_and_jacobian(edges, order, p, anchor_idx)
        return float(r @ r)

    info = RefineInfo()
    err = error(params)
    info.initial_error = err
    info.history.append(err)
    for it in range(max_iter):
        r, jac = _residuals_and_jacobian(edges, order, params, anchor_idx)
        grad = jac.T @ r
        h = jac.T @ jac + 1e-9 * np.eye(jac.shape[1])
        try:
            step = np.linalg.solve(h, -grad)
        except np.linalg.LinAlgError:
            break
        # backtracking line search: never accept an increase
        scale, new_err, accepted = 1.0, err, False
        for _ in range(20):
            trial = params + scale * step
            trial_err = error(trial)
            if trial_err <= err:
                params, new_err, accepted = trial, trial_err, True
                break
            scale *= 0.5
        if not accepted:
            break
        info.iterations = it + 1
        info.history.append(new_err)
        if err - new_err < rel_tol * max(err, 1e-30):
            err = new_err
            break
        err = new_err
    info.final_error = err

    out = {}
    for v, idx in order.items():
        tx, ty, th = params[3 * idx:3 * idx + 3]
        out[v] = RigidTransform2D(th, tx, ty)
    return out, info


def refine_poses(candidates, poses, max_iter: int = 25,
                 rel_tol: float = 1e-8):
    """Refine `poses` against the selected `candidates`.

    Runs independently on each connected component of the selection; each
    component's lowest-id vertex keeps its input pose exactly. Vertices in
    `poses` untouched by any edge pass through unchanged. Returns
    (new_poses, RefineInfo) with a monotonically non-increasing error
    history summed over components.
    """
    edges = [c for c in candidates if c.i in poses and c.j in poses]
    refined = dict(poses)
    total = RefineInfo()
    histories = []
    for verts in _components(edges, sorted(poses)):
        vset = set(verts)
        comp_edges = [c for c in edges if c.i in vset and c.j in vset]
        if not comp_edges:
            continue
        sub, info = _refine_component(comp_edges, poses, verts, max_iter,
                                      rel_tol)
        refined.update(sub)
        total.iterations = max(total.iterations, info.iterations)
        total.initial_error += info.initial_error
        total.final_error += info.final_error
        histories.append(info.history)
    if histories:
        # elementwise sum of per-component traces, each padded with its
        # converged value, stays non-increasing
        n = max(len(h) for h in histories)
        padded = [h + [h[-1]] * (n - len(h)) for h in histories]
        total.history = [float(sum(col)) for col in zip(*padded)]
    else:
        total.history = [0.0]
    return refined, total
