"""Ray traversal over majorant partitions.

Three backends enumerate, front to back, the partitions a ray segment
passes through: a 3D DDA over the macrocell grid, a single-sweep kd-tree
over brick boxes, and a BVH walked with restart semantics (closest hit,
advance, re-enter). The BVH culls majorant-0 primitives at build time;
DDA and kd visit everything and leave skipping to the visitor, which is
exactly the cost difference the benchmarks measure.

All backends emit identical interval endpoints for identical primitives:
entries/exits come from the same slab clip, and restart continues exactly
at the previous exit so abutting partitions neither overlap nor leave
gaps. The python implementations here are the reference; the jit kernels
mirror them operation for operation.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .partitions import MajorantGrid


class TraversalMethod(Enum):
    GRID_DDA = "grid-dda"
    GRID_BVH = "grid-bvh"
    BRICK_KD = "brick-kd"
    BRICK_BVH = "brick-bvh"
    ABR_BVH = "abr-bvh"


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    tmin: float = 0.0
    tmax: float = math.inf

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        self.tmin = float(self.tmin)
        self.tmax = float(self.tmax)
        if not np.any(self.direction != 0.0):
            raise ValueError("ray direction must be non-zero")
        if not self.tmin <= self.tmax:
            raise ValueError("ray requires tmin <= tmax")

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class PartitionHit:
    part_id: int
    t0: float
    t1: float
    majorant: float


def slab_clip(blo, bhi, o, d, t0: float, t1: float) -> tuple[float, float]:
    """Clip [t0, t1] against a box. Hit iff returned enter < exit.

    Zero direction components reduce to an inside test on that axis.
    """
    e, x = t0, t1
    for a in range(3):
        da = d[a]
        if da != 0.0:
            ta = (blo[a] - o[a]) / da
            tb = (bhi[a] - o[a]) / da
            if ta > tb:
                ta, tb = tb, ta
            if ta > e:
                e = ta
            if tb < x:
                x = tb
        elif o[a] < blo[a] or o[a] > bhi[a]:
            return math.inf, -math.inf
    return e, x


# ---------------------------------------------------------------------------
# grid DDA


def dda_traverse(grid: MajorantGrid, ray: Ray, visitor) -> None:
    """Visit every macrocell the segment crosses, front to back.

    Majorant-0 cells are delivered too; rejecting them is the visitor's
    O(1) decision. Per-cell [t0, t1] comes from an exact slab clip so all
    backends report identical interval endpoints.
    """
    o, d = ray.origin, ray.direction
    glo, ghi = grid.world_lo, grid.world_hi
    dims = grid.dims
    h = grid.cell_size
    t0, t1 = slab_clip(glo, ghi, o, d, ray.tmin, ray.tmax)
    if not t0 < t1:
        return

    pos = o + t0 * d
    idx = np.empty(3, dtype=np.int64)
    for a in range(3):
        idx[a] = min(max(int(math.floor((pos[a] - glo[a]) / h[a])), 0),
                     int(dims[a]) - 1)

    step = np.where(d > 0, 1, -1).astype(np.int64)
    tnext = np.empty(3)

    def boundary_t(a: int) -> float:
        if d[a] == 0.0:
            return math.inf
        nxt = idx[a] + (1 if d[a] > 0 else 0)
        return (glo[a] + nxt * h[a] - o[a]) / d[a]

    for a in range(3):
        tnext[a] = boundary_t(a)

    while True:
        blo = glo + idx * h
        bhi = glo + (idx + 1) * h
        e, x = slab_clip(blo, bhi, o, d, t0, t1)
        if e < x:
            f = int(idx[0] + dims[0] * (idx[1] + dims[1] * idx[2]))
            hit = PartitionHit(f, e, x, float(grid.majorants[f]))
            if visitor(hit) is False:
                return
        a = int(np.argmin(tnext))
        if tnext[a] > t1:
            return
        idx[a] += step[a]
        if idx[a] < 0 or idx[a] >= dims[a]:
            return
        tnext[a] = boundary_t(a)


# ---------------------------------------------------------------------------
# BVH with restart semantics


@dataclass
class BVH:
    """Binary BVH with one primitive per leaf, empty primitives culled."""

    node_lo: np.ndarray    # (N,3)
    node_hi: np.ndarray    # (N,3)
    left: np.ndarray       # (N,) child index, -1 for leaf
    right: np.ndarray      # (N,)
    prim: np.ndarray       # (N,) original primitive id, -1 for interior
    prim_majorant: np.ndarray  # (N,) majorant per node's leaf prim, 0 interior

    def __len__(self) -> int:
        return len(self.node_lo)

    @property
    def n_leaves(self) -> int:
        return int((self.prim >= 0).sum())


_SAH_BINS = 16


def bvh_build(box_lo: np.ndarray, box_hi: np.ndarray,
              majorants: np.ndarray) -> BVH:
    """Binned-SAH build over primitives with majorant > 0.

    Deterministic: bins are fixed at 16, ties resolve to the lower plane,
    degenerate centroid spreads fall back to index-median splits.
    """
    box_lo = np.asarray(box_lo, dtype=np.float64).reshape(-1, 3)
    box_hi = np.asarray(box_hi, dtype=np.float64).reshape(-1, 3)
    majorants = np.asarray(majorants, dtype=np.float64).reshape(-1)
    keep = np.flatnonzero(majorants > 0.0).astype(np.int64)

    if len(keep) == 0:
        z = np.zeros((1, 3))
        return BVH(z, z.copy(), np.full(1, -1, np.int64),
                   np.full(1, -1, np.int64), np.full(1, -1, np.int64),
                   np.zeros(1))

    centroids = 0.5 * (box_lo[keep] + box_hi[keep])
    n = len(keep)
    cap = 2 * n - 1
    node_lo = np.empty((cap, 3))
    node_hi = np.empty((cap, 3))
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    prim = np.full(cap, -1, dtype=np.int64)
    count = 0

    def alloc() -> int:
        nonlocal count
        count += 1
        return count - 1

    def surface(lo, hi):
        e = np.maximum(hi - lo, 0.0)
        return 2.0 * (e[:, 0] * e[:, 1] + e[:, 1] * e[:, 2] + e[:, 2] * e[:, 0])

    def build(items: np.ndarray) -> int:
        node = alloc()
        lo = box_lo[keep[items]].min(axis=0)
        hi = box_hi[keep[items]].max(axis=0)
        node_lo[node] = lo
        node_hi[node] = hi
        if len(items) == 1:
            prim[node] = keep[items[0]]
            return node

        c = centroids[items]
        clo = c.min(axis=0)
        chi = c.max(axis=0)
        axis = int(np.argmax(chi - clo))
        lhs = None
        if chi[axis] > clo[axis]:
            scale = _SAH_BINS * (1.0 - 1e-9) / (chi[axis] - clo[axis])
            bins = np.minimum((c[:, axis] - clo[axis]) * scale,
                              _SAH_BINS - 1).astype(np.int64)
            best_cost = math.inf
            best_split = -1
            for s in range(1, _SAH_BINS):
                mask = bins < s
                nl = int(mask.sum())
                if nl == 0 or nl == len(items):
                    continue
                bl = box_lo[keep[items[mask]]]
                bh = box_hi[keep[items[mask]]]
                cl = box_lo[keep[items[~mask]]]
                ch = box_hi[keep[items[~mask]]]
                al = surface(bl.min(axis=0)[None], bh.max(axis=0)[None])[0]
                ar = surface(cl.min(axis=0)[None], ch.max(axis=0)[None])[0]
                cost = nl * al + (len(items) - nl) * ar
                if cost < best_cost:
                    best_cost = cost
                    best_split = s
            if best_split >= 0:
                mask = bins < best_split
                lhs = items[mask]
                rhs = items[~mask]
        if lhs is None:
            # degenerate spread: split stably by (centroid, primitive id)
            order = items[np.lexsort((keep[items], c[:, axis]))]
            half = len(order) // 2
            lhs, rhs = order[:half], order[half:]
        left[node] = build(lhs)
        right[node] = build(rhs)
        return node

    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 10_000 + 2 * n))
    try:
        build(np.arange(n, dtype=np.int64))
    finally:
        sys.setrecursionlimit(old)

    pm = np.zeros(count)
    leaf_mask = prim[:count] >= 0
    pm[leaf_mask] = majorants[prim[:count][leaf_mask]]
    return BVH(node_lo[:count], node_hi[:count], left[:count], right[:count],
               prim[:count], pm)


def _bvh_find_closest(bvh: BVH, o, d, cursor: float, tmax: float):
    """Closest primitive whose slab exit lies strictly beyond `cursor`.

    Returns (prim_node, enter, exit) with enter clipped to cursor, or
    None. Ties on enter resolve to the smaller primitive id.
    """
    best_e = math.inf
    best_x = math.inf
    best_node = -1
    best_pid = np.iinfo(np.int64).max
    stack = [0]
    while stack:
        node = stack.pop()
        e, x = slab_clip(bvh.node_lo[node], bvh.node_hi[node], o, d,
                         cursor, tmax)
        if not e < x or x <= cursor or e > best_e:
            continue
        p = int(bvh.prim[node])
        if p >= 0:
            if e < best_e or (e == best_e and p < best_pid):
                best_e, best_x, best_node, best_pid = e, x, node, p
        else:
            stack.append(int(bvh.right[node]))
            stack.append(int(bvh.left[node]))
    if best_node < 0:
        return None
    return best_node, best_e, best_x


def bvh_traverse_restart(bvh: BVH, ray: Ray, visitor,
                         eps: float = 0.0) -> None:
    """Front-to-back by repeated closest-hit queries.

    Each iteration finds the nearest primitive whose exit lies beyond the
    cursor, delivers it clipped to [cursor, tmax], and re-enters at its
    exit. With eps = 0 abutting primitives are covered without gaps or
    double visits; a positive eps reproduces skip-prone restart behavior
    for ablation. Progress is unconditional: the cursor strictly
    increases every iteration, so at most one visit per primitive.
    """
    if bvh.n_leaves == 0:
        return
    o, d = ray.origin, ray.direction
    cursor = ray.tmin
    while cursor < ray.tmax:
        found = _bvh_find_closest(bvh, o, d, cursor, ray.tmax)
        if found is None:
            return
        node, e, x = found
        hit = PartitionHit(int(bvh.prim[node]), e, x,
                           float(bvh.prim_majorant[node]))
        if visitor(hit) is False:
            return
        nxt = x + eps
        if nxt <= cursor:
            nxt = math.nextafter(cursor, math.inf)
        cursor = nxt


def bvh_traverse_ordered(bvh: BVH, ray: Ray, visitor) -> None:
    """Single-sweep alternative to restart: gather hits once, emit sorted.

    Ablation mode only; restart is the benchmarked configuration.
    """
    if bvh.n_leaves == 0:
        return
    o, d = ray.origin, ray.direction
    hits = []
    stack = [0]
    while stack:
        node = stack.pop()
        e, x = slab_clip(bvh.node_lo[node], bvh.node_hi[node], o, d,
                         ray.tmin, ray.tmax)
        if not e < x:
            continue
        p = int(bvh.prim[node])
        if p >= 0:
            hits.append((e, p, x, node))
        else:
            stack.append(int(bvh.right[node]))
            stack.append(int(bvh.left[node]))
    hits.sort()
    for e, p, x, node in hits:
        if visitor(PartitionHit(p, e, x, float(bvh.prim_majorant[node]))) is False:
            return


# ---------------------------------------------------------------------------
# kd-tree, single-sweep front-to-back

KD_MAX_DEPTH = 32


@dataclass
class KdTree:
    axis: np.ndarray     # (K,) split axis, -1 for leaf
    plane: np.ndarray    # (K,)
    left: np.ndarray     # (K,)
    right: np.ndarray    # (K,)
    leaf_off: np.ndarray  # (K,)
    leaf_cnt: np.ndarray  # (K,)
    prims: np.ndarray    # (L,) primitive ids, duplicated across straddled leaves
    world_lo: np.ndarray
    world_hi: np.ndarray
    box_lo: np.ndarray   # (B,3) primitive boxes
    box_hi: np.ndarray


def kd_build(box_lo: np.ndarray, box_hi: np.ndarray, max_leaf: int = 4,
             max_depth: int = KD_MAX_DEPTH) -> KdTree:
    """Median-split kd-tree over primitive boxes.

    Straddling primitives are referenced from both children; traversal
    deduplicates by entry point. Depth is capped so the traversal stack
    stays within its static bound.
    """
    box_lo = np.asarray(box_lo, dtype=np.float64).reshape(-1, 3)
    box_hi = np.asarray(box_hi, dtype=np.float64).reshape(-1, 3)
    world_lo = box_lo.min(axis=0)
    world_hi = box_hi.max(axis=0)

    axis: list[int] = []
    plane: list[float] = []
    left: list[int] = []
    right: list[int] = []
    leaf_off: list[int] = []
    leaf_cnt: list[int] = []
    prims: list[int] = []

    def alloc() -> int:
        axis.append(-1)
        plane.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf_off.append(0)
        leaf_cnt.append(0)
        return len(axis) - 1

    def make_leaf(node: int, items: np.ndarray):
        leaf_off[node] = len(prims)
        leaf_cnt[node] = len(items)
        prims.extend(int(i) for i in np.sort(items))

    def build(node: int, items: np.ndarray, lo, hi, depth: int):
        if len(items) <= max_leaf or depth >= max_depth:
            make_leaf(node, items)
            return
        centers = 0.5 * (box_lo[items] + box_hi[items])
        for a in np.argsort(-(hi - lo), kind="stable"):
            cs = np.sort(centers[:, a])
            p = float(cs[len(cs) // 2])
            if not lo[a] < p < hi[a]:
                continue
            li = items[box_lo[items, a] < p]
            ri = items[box_hi[items, a] > p]
            if len(li) == len(items) and len(ri) == len(items):
                continue  # every primitive straddles: no progress
            if len(li) == 0 or len(ri) == 0:
                continue
            axis[node] = int(a)
            plane[node] = p
            l, r = alloc(), alloc()
            left[node], right[node] = l, r
            llo, lhi = lo.copy(), hi.copy()
            lhi[a] = p
            rlo, rhi = lo.copy(), hi.copy()
            rlo[a] = p
            build(l, li, llo, lhi, depth + 1)
            build(r, ri, rlo, rhi, depth + 1)
            return
        make_leaf(node, items)

    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, 10_000))
    try:
        build(alloc(), np.arange(len(box_lo), dtype=np.int64),
              world_lo.copy(), world_hi.copy(), 0)
    finally:
        sys.setrecursionlimit(old)

    return KdTree(np.asarray(axis, np.int64), np.asarray(plane, np.float64),
                  np.asarray(left, np.int64), np.asarray(right, np.int64),
                  np.asarray(leaf_off, np.int64), np.asarray(leaf_cnt, np.int64),
                  np.asarray(prims, np.int64), world_lo, world_hi,
                  box_lo, box_hi)


def kdtree_traverse(kd: KdTree, ray: Ray, visitor,
                    majorants: np.ndarray) -> None:
    """Single sweep, front to back, no restarts.

    Leaf intervals partition the clipped segment; a straddling primitive
    is emitted only from the leaf interval containing its entry point, so
    every primitive is delivered at most once. Majorants are looked up
    live, which is why the kd-tree never needs a rebuild after
    reclassification.
    """
    o, d = ray.origin, ray.direction
    t0, t1 = slab_clip(kd.world_lo, kd.world_hi, o, d, ray.tmin, ray.tmax)
    if not t0 < t1:
        return

    stack: list[tuple[int, float, float]] = []
    node, tn0, tn1 = 0, t0, t1
    while True:
        a = int(kd.axis[node])
        if a >= 0:
            p = float(kd.plane[node])
            pa = o[a] + tn0 * d[a]
            if pa < p or (pa == p and d[a] < 0.0):
                near, far = int(kd.left[node]), int(kd.right[node])
            else:
                near, far = int(kd.right[node]), int(kd.left[node])
            if d[a] == 0.0:
                node = near
                continue
            ts = (p - o[a]) / d[a]
            # near is the side of ray(tn0): crossings at or before tn0 are
            # already behind the segment, so both degenerate cases stay near
            if ts <= tn0 or ts >= tn1:
                node = near
            else:
                stack.append((far, ts, tn1))
                node, tn1 = near, ts
            continue

        off, cnt = int(kd.leaf_off[node]), int(kd.leaf_cnt[node])
        leaf_hits = []
        for k in range(off, off + cnt):
            pid = int(kd.prims[k])
            e, x = slab_clip(kd.box_lo[pid], kd.box_hi[pid], o, d, t0, t1)
            if e < x and tn0 <= e < tn1:
                leaf_hits.append((e, pid, x))
        leaf_hits.sort()
        for e, pid, x in leaf_hits:
            if visitor(PartitionHit(pid, e, x, float(majorants[pid]))) is False:
                return
        if not stack:
            return
        node, tn0, tn1 = stack.pop()


# ---------------------------------------------------------------------------
# dispatch


def traverse_spatial_partitions(structures, method: TraversalMethod,
                                ray: Ray, visitor) -> None:
    """Route a ray through the structure selected by `method`.

    `structures` carries the built artifacts (see engine.Scene): the
    majorant grid, the traversal BVH per method, the brick kd-tree and
    the brick partition majorants.
    """
    if method == TraversalMethod.GRID_DDA:
        dda_traverse(structures.grid, ray, visitor)
    elif method == TraversalMethod.BRICK_KD:
        kdtree_traverse(structures.brick_kd, ray, visitor,
                        structures.brick_partition.majorants)
    elif method in (TraversalMethod.GRID_BVH, TraversalMethod.BRICK_BVH,
                    TraversalMethod.ABR_BVH):
        bvh_traverse_restart(structures.traversal_bvh(method), ray, visitor)
    else:
        raise ValueError(f"unknown traversal method: {method}")
