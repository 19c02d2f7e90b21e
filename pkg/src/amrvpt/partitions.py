"""Majorant spatial partitions over AMR bricks.

Three decoupled subdivisions of space, each carrying per-partition scalar
value ranges that classify into majorant extinctions under the active
transfer function:

  * ABRSet: leaves of a kd-tree over the union of extended brick domains
    (brick bounds padded by half a cell width). Within an ABR the set of
    overlapping bricks is constant, so it doubles as a sampling structure.
  * BrickPartition: the unextended brick boxes themselves, with ranges
    widened by whatever neighbor basis functions reach into each box.
  * MajorantGrid: a uniform macrocell grid, ranges from conservative
    rasterization of every cell's filter support.

Ranges are immutable after build; reclassification only rewrites the
majorant arrays, which is what makes transfer-function edits cheap.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from .model import Brick, CellSet

# Float-soundness margins. Reconstruction sums and the piecewise-linear
# alpha lerp can overshoot their exact values by a few ulps; classification
# widens the queried range and pads the alpha max so that the classified
# majorant bounds every float-evaluated extinction with zero test tolerance.
RANGE_WIDEN_REL = 1e-12
ALPHA_GUARD = 1e-14

EMPTY_LO = np.inf
EMPTY_HI = -np.inf


@dataclass(frozen=True)
class ValueRange:
    lo: float = EMPTY_LO
    hi: float = EMPTY_HI

    def is_empty(self) -> bool:
        return self.lo > self.hi

    def extended(self, v: float) -> "ValueRange":
        return ValueRange(min(self.lo, v), max(self.hi, v))


class TransferFunction:
    """Piecewise-linear RGBA lookup over a scalar domain.

    alpha drives extinction: mu(x) = unitExtinction * alpha(f(x)).
    Values outside the domain clamp to the nearest table entry.
    """

    def __init__(self, domain: tuple[float, float], rgba, unit_extinction: float):
        self.domain_lo = float(domain[0])
        self.domain_hi = float(domain[1])
        self.rgba = np.ascontiguousarray(rgba, dtype=np.float64)
        self.unit_extinction = float(unit_extinction)
        if self.rgba.ndim != 2 or self.rgba.shape[1] != 4 or self.rgba.shape[0] < 2:
            raise ValueError("rgba table must be (E>=2, 4)")
        if not np.all(np.isfinite(self.rgba)):
            raise ValueError("rgba entries must be finite")
        if self.rgba.min() < 0.0 or self.rgba.max() > 1.0:
            raise ValueError("rgba components must lie in [0,1]")
        if not (np.isfinite(self.domain_lo) and np.isfinite(self.domain_hi)
                and self.domain_lo < self.domain_hi):
            raise ValueError("tf domain must satisfy lo < hi")
        if not (np.isfinite(self.unit_extinction) and self.unit_extinction > 0):
            raise ValueError("unitExtinction must be > 0")
        self._segmax = None

    @property
    def n_entries(self) -> int:
        return self.rgba.shape[0]

    def entry_positions(self) -> np.ndarray:
        e = self.n_entries
        return self.domain_lo + np.arange(e) * (self.domain_hi - self.domain_lo) / (e - 1)

    def _lookup(self, v, col0: int, col1: int) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        e = self.n_entries
        u = (v - self.domain_lo) / (self.domain_hi - self.domain_lo)
        u = np.clip(u, 0.0, 1.0)
        s = u * (e - 1)
        i = np.minimum(s.astype(np.int64), e - 2)
        t = s - i
        a = self.rgba[:, col0:col1]
        out = (1.0 - t)[..., None] * a[i] + t[..., None] * a[i + 1]
        return out

    def alpha(self, v):
        out = self._lookup(v, 3, 4)[..., 0]
        return float(out) if np.ndim(v) == 0 else out

    def rgb(self, v):
        # scalar input yields shape (3,), batched input (n, 3)
        return self._lookup(v, 0, 3)

    def extinction(self, v):
        return self.unit_extinction * self.alpha(v)

    def _alpha_segmax(self) -> np.ndarray:
        # (E,E) table of max alpha over entry index ranges, for vectorized
        # interior-entry maxima. E stays small so this is cheap.
        if self._segmax is None:
            a = self.rgba[:, 3]
            e = len(a)
            m = np.empty((e, e), dtype=np.float64)
            for i in range(e):
                m[i, i:] = np.maximum.accumulate(a[i:])
                m[i, :i] = 0.0
            self._segmax = m
        return self._segmax


def range_max_alpha(tf: TransferFunction, r: ValueRange) -> float:
    """Exact maximum of the piecewise-linear alpha over [r.lo, r.hi].

    Max of the interpolated alphas at the clamped endpoints and of every
    table entry whose sample position lies strictly inside the interval.
    """
    if r.lo > r.hi:
        return 0.0
    return float(_range_max_alpha_arrays(
        tf, np.asarray([r.lo]), np.asarray([r.hi]))[0])


def _range_max_alpha_arrays(tf: TransferFunction, lo: np.ndarray,
                            hi: np.ndarray) -> np.ndarray:
    e = tf.n_entries
    span = tf.domain_hi - tf.domain_lo
    s0 = np.clip((lo - tf.domain_lo) / span, 0.0, 1.0) * (e - 1)
    s1 = np.clip((hi - tf.domain_lo) / span, 0.0, 1.0) * (e - 1)
    a_lo = tf.alpha(np.clip(lo, tf.domain_lo, tf.domain_hi))
    a_hi = tf.alpha(np.clip(hi, tf.domain_lo, tf.domain_hi))
    k0 = np.floor(s0).astype(np.int64) + 1
    k1 = np.ceil(s1).astype(np.int64) - 1
    k0c = np.clip(k0, 0, e - 1)
    k1c = np.clip(k1, 0, e - 1)
    seg = tf._alpha_segmax()[k0c, k1c]
    interior = np.where(k0c <= k1c, seg, 0.0)
    return np.maximum(np.maximum(a_lo, a_hi), interior)


def classify_ranges(tf: TransferFunction, range_lo: np.ndarray,
                    range_hi: np.ndarray) -> np.ndarray:
    """Vectorized majorant classification of stored value ranges."""
    out = np.zeros(len(range_lo), dtype=np.float64)
    ok = range_lo <= range_hi
    if not ok.any():
        return out
    lo = range_lo[ok]
    hi = range_hi[ok]
    wlo = lo - RANGE_WIDEN_REL * (1.0 + np.abs(lo))
    whi = hi + RANGE_WIDEN_REL * (1.0 + np.abs(hi))
    amax = _range_max_alpha_arrays(tf, wlo, whi)
    maj = np.where(amax > 0.0,
                   tf.unit_extinction * np.minimum(1.0, amax + ALPHA_GUARD),
                   0.0)
    out[ok] = maj
    return out


def classify(r: ValueRange, tf: TransferFunction) -> float:
    """Majorant extinction for one value range: unitExtinction times the
    guarded alpha maximum. Empty ranges and all-zero alpha regions map to
    exactly 0, the empty-space marker traversal culls on."""
    return float(classify_ranges(tf, np.asarray([r.lo]), np.asarray([r.hi]))[0])


def _brick_ext_boxes(bricks: list[Brick]) -> tuple[np.ndarray, np.ndarray]:
    lo = np.empty((len(bricks), 3), dtype=np.float64)
    hi = np.empty((len(bricks), 3), dtype=np.float64)
    for i, b in enumerate(bricks):
        fd = b.filter_domain()
        lo[i] = fd.lo
        hi[i] = fd.hi
    return lo, hi


def _brick_boxes(bricks: list[Brick]) -> tuple[np.ndarray, np.ndarray]:
    lo = np.empty((len(bricks), 3), dtype=np.float64)
    hi = np.empty((len(bricks), 3), dtype=np.float64)
    for i, b in enumerate(bricks):
        bb = b.bounds()
        lo[i] = bb.lo
        hi[i] = bb.hi
    return lo, hi


def _support_overlap_minmax(brick: Brick, dlo: np.ndarray, dhi: np.ndarray):
    """(min, max) of brick values whose tent supports intersect the closed
    box [dlo, dhi], or None when no support reaches it."""
    w = brick.width
    blo = brick.lower.astype(np.float64)
    j0 = np.ceil((dlo - blo) / w - 1.5).astype(np.int64)
    j1 = np.floor((dhi - blo) / w + 0.5).astype(np.int64)
    j0 = np.maximum(j0, 0)
    j1 = np.minimum(j1, brick.size - 1)
    if np.any(j0 > j1):
        return None
    sub = brick.values[j0[0]:j1[0] + 1, j0[1]:j1[1] + 1, j0[2]:j1[2] + 1]
    return float(sub.min()), float(sub.max())


class ABRSet:
    """Active brick regions: kd-tree leaves over the union of extended
    brick domains, each with the exact list of bricks reaching into it."""

    def __init__(self, domain_lo, domain_hi, brick_off, brick_cnt, brick_ids,
                 finest_level, range_lo, range_hi,
                 kd_axis, kd_plane, kd_left, kd_right, kd_leaf,
                 world_lo, world_hi):
        self.domain_lo = domain_lo
        self.domain_hi = domain_hi
        self.brick_off = brick_off
        self.brick_cnt = brick_cnt
        self.brick_ids = brick_ids
        self.finest_level = finest_level
        self.range_lo = range_lo
        self.range_hi = range_hi
        self.majorants = np.zeros(len(domain_lo), dtype=np.float64)
        self.tf_generation = -1
        self.kd_axis = kd_axis
        self.kd_plane = kd_plane
        self.kd_left = kd_left
        self.kd_right = kd_right
        self.kd_leaf = kd_leaf
        self.world_lo = world_lo
        self.world_hi = world_hi

    def __len__(self) -> int:
        return len(self.domain_lo)

    def bricks_of(self, i: int) -> np.ndarray:
        o, c = int(self.brick_off[i]), int(self.brick_cnt[i])
        return self.brick_ids[o:o + c]

    def range_of(self, i: int) -> ValueRange:
        return ValueRange(float(self.range_lo[i]), float(self.range_hi[i]))

    def find(self, x) -> int:
        """ABR index containing x, or -1. Points on a split plane resolve
        to the upper side, matching kernel point queries."""
        x = np.asarray(x, dtype=np.float64)
        if np.any(x < self.world_lo) or np.any(x > self.world_hi):
            return -1
        node = 0
        while self.kd_axis[node] >= 0:
            if x[self.kd_axis[node]] < self.kd_plane[node]:
                node = int(self.kd_left[node])
            else:
                node = int(self.kd_right[node])
        return int(self.kd_leaf[node])


def build_abrs(bricks: list[Brick]) -> ABRSet:
    """Partition the union of extended brick domains with a kd-tree.

    Split planes come from extended-brick face coordinates (widest axis
    first, face nearest the median of interior candidates), so descent
    ends exactly when every surviving brick covers the whole node box.
    Leaves overlapped by at least one brick become ABRs.
    """
    if not bricks:
        raise ValueError("build_abrs requires at least one brick")
    ext_lo, ext_hi = _brick_ext_boxes(bricks)
    root_lo = ext_lo.min(axis=0)
    root_hi = ext_hi.max(axis=0)

    kd_axis: list[int] = []
    kd_plane: list[float] = []
    kd_left: list[int] = []
    kd_right: list[int] = []
    kd_leaf: list[int] = []
    abr_lo: list[np.ndarray] = []
    abr_hi: list[np.ndarray] = []
    abr_ids: list[np.ndarray] = []

    def new_node() -> int:
        kd_axis.append(-1)
        kd_plane.append(0.0)
        kd_left.append(-1)
        kd_right.append(-1)
        kd_leaf.append(-1)
        return len(kd_axis) - 1

    def build(node: int, idxs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
        for axis in np.argsort(-(hi - lo), kind="stable"):
            faces = np.concatenate([ext_lo[idxs, axis], ext_hi[idxs, axis]])
            faces = np.unique(faces[(faces > lo[axis]) & (faces < hi[axis])])
            if len(faces) == 0:
                continue
            mid = 0.5 * (faces[(len(faces) - 1) // 2] + faces[len(faces) // 2])
            plane = float(faces[np.argmin(np.abs(faces - mid))])
            left = idxs[ext_lo[idxs, axis] < plane]
            right = idxs[ext_hi[idxs, axis] > plane]
            kd_axis[node] = int(axis)
            kd_plane[node] = plane
            l, r = new_node(), new_node()
            kd_left[node], kd_right[node] = l, r
            llo, lhi = lo.copy(), hi.copy()
            lhi[axis] = plane
            rlo, rhi = lo.copy(), hi.copy()
            rlo[axis] = plane
            build(l, left, llo, lhi)
            build(r, right, rlo, rhi)
            return
        if len(idxs):
            kd_leaf[node] = len(abr_lo)
            abr_lo.append(lo.copy())
            abr_hi.append(hi.copy())
            abr_ids.append(np.sort(idxs).astype(np.int64))

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 100_000))
    try:
        build(new_node(), np.arange(len(bricks), dtype=np.int64),
              root_lo.copy(), root_hi.copy())
    finally:
        sys.setrecursionlimit(old_limit)

    n = len(abr_lo)
    dom_lo = np.asarray(abr_lo).reshape(n, 3)
    dom_hi = np.asarray(abr_hi).reshape(n, 3)
    cnt = np.array([len(a) for a in abr_ids], dtype=np.int64)
    off = np.zeros(n, dtype=np.int64)
    if n:
        off[1:] = np.cumsum(cnt)[:-1]
    ids = (np.concatenate(abr_ids) if n else np.empty(0)).astype(np.int64)
    levels = np.array([b.level for b in bricks], dtype=np.int64)
    finest = np.array([levels[a].min() for a in abr_ids], dtype=np.int64)

    range_lo = np.full(n, EMPTY_LO)
    range_hi = np.full(n, EMPTY_HI)
    for i in range(n):
        for bid in abr_ids[i]:
            mm = _support_overlap_minmax(bricks[int(bid)], dom_lo[i], dom_hi[i])
            if mm is not None:
                range_lo[i] = min(range_lo[i], mm[0])
                range_hi[i] = max(range_hi[i], mm[1])

    return ABRSet(dom_lo, dom_hi, off, cnt, ids, finest, range_lo, range_hi,
                  np.asarray(kd_axis, dtype=np.int64),
                  np.asarray(kd_plane, dtype=np.float64),
                  np.asarray(kd_left, dtype=np.int64),
                  np.asarray(kd_right, dtype=np.int64),
                  np.asarray(kd_leaf, dtype=np.int64),
                  root_lo, root_hi)


class BrickPartition:
    """Unextended brick boxes with neighbor-aware value ranges."""

    def __init__(self, box_lo, box_hi, range_lo, range_hi):
        self.box_lo = box_lo
        self.box_hi = box_hi
        self.range_lo = range_lo
        self.range_hi = range_hi
        self.majorants = np.zeros(len(box_lo), dtype=np.float64)
        self.tf_generation = -1

    def __len__(self) -> int:
        return len(self.box_lo)

    def range_of(self, i: int) -> ValueRange:
        return ValueRange(float(self.range_lo[i]), float(self.range_hi[i]))

    @property
    def world_lo(self):
        return self.box_lo.min(axis=0)

    @property
    def world_hi(self):
        return self.box_hi.max(axis=0)


def compute_brick_ranges(bricks: list[Brick]) -> BrickPartition:
    """Project every cell's filter support onto the unextended brick boxes.

    A brick's range covers its own cells plus any neighbor cell whose tent
    support reaches across the shared boundary (touching counts).
    """
    box_lo, box_hi = _brick_boxes(bricks)
    ext_lo, ext_hi = _brick_ext_boxes(bricks)
    n = len(bricks)
    range_lo = np.full(n, EMPTY_LO)
    range_hi = np.full(n, EMPTY_HI)
    for j, src in enumerate(bricks):
        # Bricks whose box the source's filter domain reaches (closed test).
        hit = np.flatnonzero(np.all(ext_lo[j] <= box_hi, axis=1)
                             & np.all(box_lo <= ext_hi[j], axis=1))
        for i in hit:
            mm = _support_overlap_minmax(src, box_lo[i], box_hi[i])
            if mm is not None:
                range_lo[i] = min(range_lo[i], mm[0])
                range_hi[i] = max(range_hi[i], mm[1])
    return BrickPartition(box_lo, box_hi, range_lo, range_hi)


class MajorantGrid:
    """Uniform macrocell grid over the world bounds.

    Flat storage, x fastest: index = ix + dims[0]*(iy + dims[1]*iz).
    """

    def __init__(self, dims, world_lo, world_hi, range_lo, range_hi):
        self.dims = np.asarray(dims, dtype=np.int64).reshape(3)
        self.world_lo = np.asarray(world_lo, dtype=np.float64).reshape(3)
        self.world_hi = np.asarray(world_hi, dtype=np.float64).reshape(3)
        self.range_lo = range_lo
        self.range_hi = range_hi
        self.majorants = np.zeros(len(range_lo), dtype=np.float64)
        self.tf_generation = -1

    def __len__(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_size(self) -> np.ndarray:
        return (self.world_hi - self.world_lo) / self.dims

    def flat_index(self, ix: int, iy: int, iz: int) -> int:
        d = self.dims
        return int(ix + d[0] * (iy + d[1] * iz))

    def range_of(self, ix: int, iy: int, iz: int) -> ValueRange:
        f = self.flat_index(ix, iy, iz)
        return ValueRange(float(self.range_lo[f]), float(self.range_hi[f]))


def build_majorant_grid(cells: CellSet, dims) -> MajorantGrid:
    """Rasterize every cell's filter support into macrocell value ranges.

    Conservative on boundaries: a support face landing exactly on a
    macrocell plane extends the macrocells on both sides.
    """
    dims = np.asarray(dims, dtype=np.int64).reshape(3)
    if np.any(dims < 1):
        raise ValueError("grid dims must be >= 1 per axis")
    glo = cells.world_lo.astype(np.float64)
    ghi = cells.world_hi.astype(np.float64)
    h = (ghi - glo) / dims
    ncell = int(np.prod(dims))
    range_lo = np.full(ncell, EMPTY_LO)
    range_hi = np.full(ncell, EMPTY_HI)

    w = (np.int64(1) << cells.level).astype(np.float64)[:, None]
    slo = cells.lower.astype(np.float64) - 0.5 * w
    shi = cells.lower.astype(np.float64) + 1.5 * w
    f0 = (slo - glo) / h
    f1 = (shi - glo) / h
    i0 = np.floor(f0).astype(np.int64)
    i0 -= (f0 == i0)  # exact touch extends the lower neighbor too
    i1 = np.floor(f1).astype(np.int64)
    np.clip(i0, 0, dims - 1, out=i0)
    np.clip(i1, 0, dims - 1, out=i1)

    dx, dy = int(dims[0]), int(dims[1])
    vals = cells.scalar
    for c in range(len(cells)):
        v = vals[c]
        for iz in range(i0[c, 2], i1[c, 2] + 1):
            base_z = dy * iz
            for iy in range(i0[c, 1], i1[c, 1] + 1):
                row = dx * (iy + base_z)
                for ix in range(i0[c, 0], i1[c, 0] + 1):
                    f = row + ix
                    if v < range_lo[f]:
                        range_lo[f] = v
                    if v > range_hi[f]:
                        range_hi[f] = v
    return MajorantGrid(dims, glo, ghi, range_lo, range_hi)


def reclassify_all(structure, tf: TransferFunction):
    """Recompute the majorant array from stored ranges under `tf`.

    Geometry and ranges are untouched; the majorant array is replaced as a
    whole and the structure's generation counter advances.
    """
    structure.majorants = classify_ranges(tf, structure.range_lo,
                                          structure.range_hi)
    structure.tf_generation += 1
    return structure
