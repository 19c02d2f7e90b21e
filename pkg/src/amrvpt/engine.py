"""Scene assembly: builds every majorant structure over one dataset.

A Scene owns the brick decomposition, the three partition structures
(ABRs, brick partition, macrocell grid), the sampling index, and the
per-method traversal BVHs. Setting a transfer function reclassifies the
partition majorants in place; only BVHs must be rebuilt afterwards
because they bake majorants in for empty-space culling, and that rebuild
is lazy and counted separately from partition construction.
"""

from __future__ import annotations

import numpy as np

from .model import Brick, CellSet, build_bricks
from .partitions import (ABRSet, BrickPartition, MajorantGrid,
                         TransferFunction, build_abrs, build_majorant_grid,
                         compute_brick_ranges, reclassify_all)
from .sampling import SamplerKind, build_ext_brick_bvh
from .traversal import BVH, KdTree, TraversalMethod, bvh_build, kd_build

# kernel capacity bounds; builds exceeding them are rejected up front
MAX_BVH_DEPTH = 120
MAX_KD_LEAF = 64

_METHOD_CODE = {
    TraversalMethod.GRID_DDA: 0,
    TraversalMethod.GRID_BVH: 1,
    TraversalMethod.BRICK_KD: 2,
    TraversalMethod.BRICK_BVH: 3,
    TraversalMethod.ABR_BVH: 4,
}
_SAMPLER_CODE = {
    SamplerKind.ABR_QUERY: 0,
    SamplerKind.ABR_DIRECT: 1,
    SamplerKind.EXT_BRICK_QUERY: 2,
}


def bvh_depth(bvh: BVH) -> int:
    depth = 0
    stack = [(0, 1)]
    while stack:
        node, d = stack.pop()
        depth = max(depth, d)
        if int(bvh.prim[node]) < 0 and int(bvh.left[node]) >= 0:
            stack.append((int(bvh.left[node]), d + 1))
            stack.append((int(bvh.right[node]), d + 1))
    return depth


def _check_combo(method: TraversalMethod, sampler: SamplerKind) -> None:
    if (sampler == SamplerKind.ABR_DIRECT
            and method != TraversalMethod.ABR_BVH):
        raise ValueError(
            "sampler 'abr-direct' needs the ABR id supplied by traversal "
            "'abr-bvh'; use 'abr' or 'ext-brick' with other methods")


class Scene:
    """All structures for one dataset plus the active transfer function."""

    def __init__(self, cells: CellSet, tf: TransferFunction,
                 grid_dims=(32, 32, 32), name: str = "scene"):
        self.name = name
        self.cells = cells
        self.bricks: list[Brick] = build_bricks(cells)
        self.abrs: ABRSet = build_abrs(self.bricks)
        self.brick_partition: BrickPartition = compute_brick_ranges(self.bricks)
        self.grid: MajorantGrid = build_majorant_grid(cells, grid_dims)
        self.brick_kd: KdTree = kd_build(self.brick_partition.box_lo,
                                         self.brick_partition.box_hi)
        if int(self.brick_kd.leaf_cnt.max(initial=0)) > MAX_KD_LEAF:
            raise ValueError("kd leaf exceeds kernel capacity "
                             f"({MAX_KD_LEAF} primitives)")
        self.ext_bvh: BVH = build_ext_brick_bvh(self.bricks)
        self._assert_depth(self.ext_bvh)

        self.partition_builds = 3  # abrs, brick partition, grid
        self.bvh_rebuilds = 0
        self.generation = 0
        self._tbvh: dict[TraversalMethod, tuple[int, BVH]] = {}
        self._bricks_pack = self._pack_bricks()

        self.tf: TransferFunction = tf
        self.set_transfer_function(tf)

    # -- transfer function lifecycle ------------------------------------

    def set_transfer_function(self, tf: TransferFunction) -> None:
        """Reclassify every partition structure in place; O(#partitions)."""
        self.tf = tf
        reclassify_all(self.abrs, tf)
        reclassify_all(self.brick_partition, tf)
        reclassify_all(self.grid, tf)
        self.generation += 1

    def set_grid_dims(self, dims) -> None:
        """Rebuild only the macrocell grid; every other structure stays.

        Bumps the generation so accumulators restart: images stay
        reproducible per (seed, structure) rather than mixing majorant
        layouts mid-accumulation.
        """
        self.grid = build_majorant_grid(self.cells, dims)
        reclassify_all(self.grid, self.tf)
        self.partition_builds += 1
        self._tbvh.pop(TraversalMethod.GRID_BVH, None)
        self.generation += 1

    def traversal_bvh(self, method: TraversalMethod) -> BVH:
        """The culling BVH for a method, rebuilt lazily per generation."""
        cached = self._tbvh.get(method)
        if cached is not None and cached[0] == self.generation:
            return cached[1]
        if method == TraversalMethod.GRID_BVH:
            lo, hi = self._grid_cell_boxes()
            bvh = bvh_build(lo, hi, self.grid.majorants)
        elif method == TraversalMethod.BRICK_BVH:
            bp = self.brick_partition
            bvh = bvh_build(bp.box_lo, bp.box_hi, bp.majorants)
        elif method == TraversalMethod.ABR_BVH:
            bvh = bvh_build(self.abrs.domain_lo, self.abrs.domain_hi,
                            self.abrs.majorants)
        else:
            raise ValueError(f"no traversal BVH for method {method}")
        self._assert_depth(bvh)
        self._tbvh[method] = (self.generation, bvh)
        self.bvh_rebuilds += 1
        return bvh

    def _assert_depth(self, bvh: BVH) -> None:
        if bvh_depth(bvh) > MAX_BVH_DEPTH:
            raise ValueError("BVH deeper than kernel stack bound")

    def _grid_cell_boxes(self) -> tuple[np.ndarray, np.ndarray]:
        """Macrocell boxes with the same floats the DDA derives."""
        g = self.grid
        d = g.dims
        h = g.cell_size
        ii = np.arange(d[0] * d[1] * d[2], dtype=np.int64)
        ix = ii % d[0]
        iy = (ii // d[0]) % d[1]
        iz = ii // (d[0] * d[1])
        idx = np.stack([ix, iy, iz], axis=1).astype(np.float64)
        lo = g.world_lo + idx * h
        hi = g.world_lo + (idx + 1.0) * h
        return lo, hi

    # -- kernel packs ----------------------------------------------------

    def _pack_bricks(self):
        n = len(self.bricks)
        blo = np.empty((n, 3))
        bsize = np.empty((n, 3), dtype=np.int64)
        bwidth = np.empty(n)
        bvoff = np.empty(n, dtype=np.int64)
        chunks = []
        off = 0
        for i, b in enumerate(self.bricks):
            blo[i] = b.lower.astype(np.float64)
            bsize[i] = b.size
            bwidth[i] = float(1 << b.level)
            bvoff[i] = off
            flat = np.ascontiguousarray(b.values.ravel(order="F"),
                                        dtype=np.float64)
            chunks.append(flat)
            off += flat.size
        values = (np.concatenate(chunks) if chunks else np.empty(0))
        return (blo, bsize, bwidth, bvoff, values)

    @staticmethod
    def _pack_bvh(bvh: BVH):
        return (np.ascontiguousarray(bvh.node_lo),
                np.ascontiguousarray(bvh.node_hi),
                np.ascontiguousarray(bvh.left),
                np.ascontiguousarray(bvh.right),
                np.ascontiguousarray(bvh.prim),
                np.ascontiguousarray(bvh.prim_majorant))

    _EMPTY_BVH: BVH | None = None

    @classmethod
    def _empty_bvh(cls) -> BVH:
        if cls._EMPTY_BVH is None:
            cls._EMPTY_BVH = bvh_build(np.empty((0, 3)), np.empty((0, 3)),
                                       np.empty(0))
        return cls._EMPTY_BVH

    def kernel_args(self, method: TraversalMethod, sampler: SamplerKind):
        """Nested tuple of flat arrays consumed by every kernel.

        Assembled fresh per call: reclassification swaps majorant arrays,
        so caching the tuple would pin stale majorants.
        """
        _check_combo(method, sampler)
        a = self.abrs
        abr_pack = (a.domain_lo, a.domain_hi, a.brick_off, a.brick_cnt,
                    a.brick_ids, a.majorants)
        akd_pack = (a.kd_axis, a.kd_plane, a.kd_left, a.kd_right, a.kd_leaf,
                    np.asarray(a.world_lo, dtype=np.float64),
                    np.asarray(a.world_hi, dtype=np.float64))
        g = self.grid
        grid_pack = (g.dims, g.world_lo, g.world_hi, g.cell_size, g.majorants)
        k = self.brick_kd
        kd_pack = (k.axis, k.plane, k.left, k.right, k.leaf_off, k.leaf_cnt,
                   k.prims, k.world_lo, k.world_hi)
        bp = self.brick_partition
        bp_pack = (bp.box_lo, bp.box_hi, bp.majorants)
        if method in (TraversalMethod.GRID_BVH, TraversalMethod.BRICK_BVH,
                      TraversalMethod.ABR_BVH):
            tbvh = self.traversal_bvh(method)
        else:
            tbvh = self._empty_bvh()
        ebv = self.ext_bvh
        ext_pack = (ebv.node_lo, ebv.node_hi, ebv.left, ebv.right, ebv.prim)
        tf = self.tf
        tf_pack = (tf.domain_lo, tf.domain_hi,
                   np.ascontiguousarray(tf.rgba), tf.unit_extinction)
        return (self._bricks_pack, abr_pack, akd_pack, grid_pack, kd_pack,
                bp_pack, self._pack_bvh(tbvh), ext_pack, tf_pack)

    @staticmethod
    def method_code(method: TraversalMethod) -> int:
        return _METHOD_CODE[method]

    @staticmethod
    def sampler_code(sampler: SamplerKind) -> int:
        return _SAMPLER_CODE[sampler]

    # -- accounting -------------------------------------------------------

    def structure_bytes(self, method: TraversalMethod,
                        sampler: SamplerKind) -> int:
        """Resident bytes of the structures this configuration touches."""
        total = 0

        def arrays(*arrs):
            nonlocal total
            for x in arrs:
                total += x.nbytes

        if method == TraversalMethod.GRID_DDA or \
                method == TraversalMethod.GRID_BVH:
            g = self.grid
            arrays(g.range_lo, g.range_hi, g.majorants)
        elif method in (TraversalMethod.BRICK_KD, TraversalMethod.BRICK_BVH):
            bp = self.brick_partition
            arrays(bp.box_lo, bp.box_hi, bp.range_lo, bp.range_hi,
                   bp.majorants)
        else:
            a = self.abrs
            arrays(a.domain_lo, a.domain_hi, a.brick_off, a.brick_cnt,
                   a.brick_ids, a.range_lo, a.range_hi, a.majorants,
                   a.kd_axis, a.kd_plane, a.kd_left, a.kd_right, a.kd_leaf)
        if method == TraversalMethod.BRICK_KD:
            k = self.brick_kd
            arrays(k.axis, k.plane, k.left, k.right, k.leaf_off, k.leaf_cnt,
                   k.prims)
        if method in (TraversalMethod.GRID_BVH, TraversalMethod.BRICK_BVH,
                      TraversalMethod.ABR_BVH):
            b = self.traversal_bvh(method)
            arrays(b.node_lo, b.node_hi, b.left, b.right, b.prim,
                   b.prim_majorant)
        if sampler == SamplerKind.EXT_BRICK_QUERY:
            b = self.ext_bvh
            arrays(b.node_lo, b.node_hi, b.left, b.right, b.prim)
        elif sampler == SamplerKind.ABR_QUERY \
                and method not in (TraversalMethod.ABR_BVH,):
            a = self.abrs
            arrays(a.kd_axis, a.kd_plane, a.kd_left, a.kd_right, a.kd_leaf,
                   a.domain_lo, a.domain_hi, a.brick_off, a.brick_cnt,
                   a.brick_ids)
        return total
