"""Two-dimensional kd-tree over (theta, phi) angle pairs.

Construction is median based: at each level the points are sorted (by split
coordinate, then payload) and the lower median becomes the node. Points with a
coordinate strictly below the node go left, the rest go right, so when a run of
equal coordinates straddles the median the first point of that run is chosen.
Axes alternate starting with theta. Distances are Euclidean in degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class SearchStats(NamedTuple):
    visited: int
    result: int
    distance: float
    node: int


@dataclass(frozen=True, eq=False)
class KdTree2:
    theta: np.ndarray
    phi: np.ndarray
    payload: np.ndarray
    axis: np.ndarray
    left: np.ndarray
    right: np.ndarray
    depth: int

    def __post_init__(self):
        # plain lists make the per-node search loop several times faster than numpy scalars
        object.__setattr__(self, "_lists", (self.theta.tolist(), self.phi.tolist(),
                                            self.payload.tolist(), self.axis.tolist(),
                                            self.left.tolist(), self.right.tolist()))

    @property
    def size(self) -> int:
        return len(self.theta)

    @property
    def root(self) -> tuple[float, float]:
        return float(self.theta[0]), float(self.phi[0])


def build(theta: Sequence[float], phi: Sequence[float], payload: Sequence[int] | None = None) -> KdTree2:
    pts = np.column_stack([np.asarray(theta, float), np.asarray(phi, float)])
    n = len(pts)
    if n == 0:
        raise ValueError("cannot build a kd-tree from no points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("kd-tree points must be finite")
    pay = np.arange(n, dtype=np.int64) if payload is None else np.asarray(payload, dtype=np.int64)
    if pay.shape != (n,):
        raise ValueError("payload length must match the points")

    node_pt = np.empty(n, np.int64)
    node_axis = np.empty(n, np.int8)
    left = np.full(n, -1, np.int64)
    right = np.full(n, -1, np.int64)

    # level-synchronous build: every active segment of `perm` becomes one node per level
    perm = np.arange(n, dtype=np.int64)
    seg = np.zeros(n, np.int64)
    seg_node = np.array([0], np.int64)
    next_id = 1
    level = 0
    while perm.size:
        a = level % 2
        c = pts[perm, a]
        order = np.lexsort((pay[perm], c, seg))
        perm, c = perm[order], c[order]
        m = perm.size
        pos = np.arange(m)
        ids = np.arange(len(seg_node))
        starts = np.searchsorted(seg, ids, "left")
        ends = np.searchsorted(seg, ids, "right")
        mpos = starts + (ends - starts - 1) // 2
        boundary = np.ones(m, bool)
        boundary[1:] = (seg[1:] != seg[:-1]) | (c[1:] != c[:-1])
        run_start = np.maximum.accumulate(np.where(boundary, pos, 0))
        npos = run_start[mpos]

        node_pt[seg_node] = perm[npos]
        node_axis[seg_node] = a

        rel = pos - npos[seg]
        keep = rel != 0
        child = 2 * seg[keep] + (rel[keep] > 0)
        uniq, newseg = np.unique(child, return_inverse=True)
        child_ids = next_id + np.arange(len(uniq), dtype=np.int64)
        next_id += len(uniq)
        parent_nodes = seg_node[uniq // 2]
        is_right = (uniq % 2).astype(bool)
        left[parent_nodes[~is_right]] = child_ids[~is_right]
        right[parent_nodes[is_right]] = child_ids[is_right]

        perm = perm[keep]
        seg = newseg.astype(np.int64)
        seg_node = child_ids
        level += 1

    return KdTree2(pts[node_pt, 0].copy(), pts[node_pt, 1].copy(), pay[node_pt].copy(),
                   node_axis, left, right, level)


def nn_search(tree: KdTree2, query: tuple[float, float]) -> SearchStats:
    """Exact nearest neighbour; equal distances resolve to the smaller payload."""
    T, P, PAY, AX, L, R = tree._lists
    qt, qp = float(query[0]), float(query[1])
    best_d2 = math.inf
    best_pay = -1
    best_node = -1
    visited = 0

    def visit(node: int) -> None:
        nonlocal best_d2, best_pay, best_node, visited
        dt = qt - T[node]
        dp = qp - P[node]
        d2 = dt * dt + dp * dp
        visited += 1
        if d2 < best_d2 or (d2 == best_d2 and PAY[node] < best_pay):
            best_d2, best_pay, best_node = d2, PAY[node], node
        diff = dt if AX[node] == 0 else dp
        if diff >= 0:
            near, far = R[node], L[node]
        else:
            near, far = L[node], R[node]
        if near >= 0:
            visit(near)
        # the far side can only help when the best circle crosses the split line
        if far >= 0 and diff * diff <= best_d2:
            visit(far)

    visit(0)
    return SearchStats(visited, best_pay, math.sqrt(best_d2), best_node)


def find_exact(tree: KdTree2, query: tuple[float, float]) -> int | None:
    st = nn_search(tree, query)
    return st.result if st.distance == 0.0 else None


def linear_scan(theta: np.ndarray, phi: np.ndarray, payload: np.ndarray, query) -> tuple[int, float]:
    """Brute-force nearest neighbour with the same tie-break as :func:`nn_search`."""
    dt = float(query[0]) - np.asarray(theta, float)
    dp = float(query[1]) - np.asarray(phi, float)
    d2 = dt * dt + dp * dp
    pay = np.asarray(payload)
    best = d2.min()
    i = np.flatnonzero(d2 == best)
    return int(pay[i].min()), math.sqrt(best)


def visited_profile(tree: KdTree2, queries: Iterable[tuple[float, float]]) -> dict[str, float]:
    v = np.array([nn_search(tree, q).visited for q in queries])
    if v.size == 0:
        raise ValueError("no queries")
    return {"min": int(v.min()), "median": float(np.median(v)), "max": int(v.max()),
            "mean": float(v.mean()), "queries": int(v.size)}


def audit(tree: KdTree2) -> bool:
    """Check the split-ordering invariant at every node."""
    T, P, _, AX, L, R = tree._lists
    stack = [(0, -math.inf, math.inf, -math.inf, math.inf)]
    seen = 0
    while stack:
        node, t_lo, t_hi, p_lo, p_hi = stack.pop()
        seen += 1
        t, p = T[node], P[node]
        if not (t_lo <= t < t_hi and p_lo <= p < p_hi):
            return False
        if AX[node] == 0:
            if L[node] >= 0:
                stack.append((L[node], t_lo, min(t_hi, t), p_lo, p_hi))
            if R[node] >= 0:
                stack.append((R[node], max(t_lo, t), t_hi, p_lo, p_hi))
        else:
            if L[node] >= 0:
                stack.append((L[node], t_lo, t_hi, p_lo, min(p_hi, p)))
            if R[node] >= 0:
                stack.append((R[node], t_lo, t_hi, max(p_lo, p), p_hi))
    return seen == tree.size


def measured_depth(tree: KdTree2) -> int:
    """Depth by traversal, independent of the value recorded at build time."""
    _, _, _, _, L, R = tree._lists
    best = 0
    stack = [(0, 1)]
    while stack:
        node, d = stack.pop()
        best = max(best, d)
        for child in (L[node], R[node]):
            if child >= 0:
                stack.append((child, d + 1))
    return best
