"""Cell-centric AMR data model.

Cells live on an integer lattice measured in units of the finest level.
A cell at level L has width 2**L and its lower corner is a multiple of
2**L on every axis, so cells of one level tile space and coarser cells
contain whole finer cells. The scalar value sits at the cell center.

Bricks are dense, axis-aligned, same-level groups of cells. They are the
storage unit everything downstream (partitions, sampling, traversal)
works with.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def cell_width(level: int) -> float:
    """Edge length of a cell at `level`, in finest-level units."""
    return float(1 << int(level))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with float64 corners, lo <= hi per axis."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=np.float64))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def intersects(self, other: "Box") -> bool:
        # Closed-box test: touching faces count as intersecting.
        return bool(np.all(self.lo <= other.hi) and np.all(other.lo <= self.hi))

    def expand(self, margin: float) -> "Box":
        return Box(self.lo - margin, self.hi + margin)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def volume(self) -> float:
        return float(np.prod(np.maximum(self.extent, 0.0)))


@dataclass(frozen=True)
class Cell:
    """A single AMR cell: integer lower corner, level, centered scalar."""

    lower: tuple[int, int, int]
    level: int
    scalar: float


def cell_bounds(lower, level: int) -> Box:
    lo = np.asarray(lower, dtype=np.float64)
    return Box(lo, lo + cell_width(level))


def cell_center(lower, level: int) -> np.ndarray:
    return np.asarray(lower, dtype=np.float64) + 0.5 * cell_width(level)


def filter_support(lower, level: int) -> Box:
    """Support of the cell's tent basis function: center +- one cell width."""
    h = cell_width(level)
    c = cell_center(lower, level)
    return Box(c - h, c + h)


class CellSet:
    """Validated collection of cells, stored as flat arrays.

    Validation enforces the lattice contract: levels within [0, numLevels),
    lower corners aligned to the cell's own width, no overlapping cells,
    and all cells inside worldBounds.
    """

    def __init__(self, lower: np.ndarray, level: np.ndarray, scalar: np.ndarray,
                 world_lo=None, world_hi=None, num_levels: int | None = None):
        self.lower = np.ascontiguousarray(lower, dtype=np.int64).reshape(-1, 3)
        self.level = np.ascontiguousarray(level, dtype=np.int64).reshape(-1)
        self.scalar = np.ascontiguousarray(scalar, dtype=np.float64).reshape(-1)
        n = len(self.lower)
        if len(self.level) != n or len(self.scalar) != n:
            raise ValueError("lower/level/scalar lengths disagree")
        if n == 0:
            # empty sets are loadable; worldBounds degenerate to a point
            self.num_levels = int(num_levels) if num_levels is not None else 1
            zero = np.zeros(3, dtype=np.int64)
            self.world_lo = (zero if world_lo is None
                             else np.asarray(world_lo, np.int64).reshape(3))
            self.world_hi = (self.world_lo.copy() if world_hi is None
                             else np.asarray(world_hi, np.int64).reshape(3))
            return
        if num_levels is None:
            num_levels = int(self.level.max()) + 1
        self.num_levels = int(num_levels)
        if self.num_levels < 1:
            raise ValueError("numLevels must be >= 1")
        if self.level.min() < 0 or self.level.max() >= self.num_levels:
            raise ValueError("cell level outside [0, numLevels)")
        if not np.all(np.isfinite(self.scalar)):
            raise ValueError("cell scalars must be finite")

        widths = np.int64(1) << self.level
        if np.any(self.lower % widths[:, None] != 0):
            raise ValueError("cell lower corner not aligned to its level width")

        upper = self.lower + widths[:, None]
        if world_lo is None:
            world_lo = self.lower.min(axis=0)
        if world_hi is None:
            world_hi = upper.max(axis=0)
        self.world_lo = np.asarray(world_lo, dtype=np.int64).reshape(3)
        self.world_hi = np.asarray(world_hi, dtype=np.int64).reshape(3)
        if np.any(self.world_hi <= self.world_lo):
            raise ValueError("worldBounds must have positive extent")
        if np.any(self.lower < self.world_lo) or np.any(upper > self.world_hi):
            raise ValueError("cell outside worldBounds")

        self._check_no_overlap()

    def __len__(self) -> int:
        return len(self.lower)

    def cell(self, i: int) -> Cell:
        return Cell(tuple(int(v) for v in self.lower[i]), int(self.level[i]),
                    float(self.scalar[i]))

    @classmethod
    def from_cells(cls, cells: list[Cell], world_lo=None, world_hi=None,
                   num_levels: int | None = None) -> "CellSet":
        lower = np.array([c.lower for c in cells], dtype=np.int64)
        level = np.array([c.level for c in cells], dtype=np.int64)
        scalar = np.array([c.scalar for c in cells], dtype=np.float64)
        return cls(lower, level, scalar, world_lo, world_hi, num_levels)

    @property
    def world_bounds(self) -> Box:
        return Box(self.world_lo.astype(np.float64), self.world_hi.astype(np.float64))

    def value_range(self) -> tuple[float, float]:
        if len(self.scalar) == 0:
            return 0.0, 0.0
        return float(self.scalar.min()), float(self.scalar.max())

    def _check_no_overlap(self):
        # Alignment means every cell either fits inside one block of the
        # chosen block level t, or covers whole blocks. Fine cells get an
        # owner map per block; coarse cells claim blocks outright.
        t = min(self.num_levels - 1, 6)
        w = np.int64(1) << np.int64(t)
        blocks = self.lower >> t  # arithmetic shift floors negatives too
        fine = self.level < t
        partial_owner: dict[tuple[int, int, int], int] = {}
        for idx in np.flatnonzero(fine):
            partial_owner.setdefault(
                (int(blocks[idx, 0]), int(blocks[idx, 1]),
                 int(blocks[idx, 2])), int(idx))

        full_owner: dict[tuple[int, int, int], int] = {}
        for idx in np.flatnonzero(~fine):
            k = 1 << (int(self.level[idx]) - t)
            b = blocks[idx]
            for bz in range(k):
                for by in range(k):
                    for bx in range(k):
                        key = (int(b[0]) + bx, int(b[1]) + by, int(b[2]) + bz)
                        other = full_owner.get(key, partial_owner.get(key))
                        if other is not None:
                            self._overlap_error(int(idx), other)
                        full_owner[key] = int(idx)

        side = int(w)
        owner = np.full((side, side, side), -1, dtype=np.int64)
        order = np.flatnonzero(fine)
        if len(order):
            keys = blocks[order]
            sub = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
            order = order[sub]
        prev_key = None
        for idx in order:
            key = (int(blocks[idx, 0]), int(blocks[idx, 1]), int(blocks[idx, 2]))
            if key in full_owner:
                self._overlap_error(int(idx), full_owner[key])
            if key != prev_key:
                owner[:] = -1
                prev_key = key
            rel = self.lower[idx] - np.asarray(key, dtype=np.int64) * w
            cw = 1 << int(self.level[idx])
            sl = tuple(slice(int(rel[a]), int(rel[a]) + cw) for a in range(3))
            hit = owner[sl]
            if (hit >= 0).any():
                self._overlap_error(int(idx), int(hit[hit >= 0].flat[0]))
            owner[sl] = int(idx)

    def _overlap_error(self, idx: int, other: int):
        raise ValueError(
            f"overlapping cells: index {other} "
            f"(lower={tuple(int(v) for v in self.lower[other])}, "
            f"level={int(self.level[other])}) and index {idx} "
            f"(lower={tuple(int(v) for v in self.lower[idx])}, "
            f"level={int(self.level[idx])})")

    def covered_volume(self) -> int:
        """Total finest-unit volume covered by the cells."""
        widths = (np.int64(1) << self.level).astype(np.int64)
        return int(np.sum(widths ** 3))


@dataclass
class Brick:
    """Dense same-level block of cells.

    `values[ix, iy, iz]` is the scalar of the cell with lower corner
    `lower + (ix, iy, iz) * 2**level`.
    """

    lower: np.ndarray        # (3,) int64, finest units
    size: np.ndarray         # (3,) int64, counts in cells
    level: int
    values: np.ndarray       # (nx, ny, nz) float64

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.int64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.int64).reshape(3)
        self.values = np.asarray(self.values, dtype=np.float64)
        assert self.values.shape == tuple(self.size)

    @property
    def width(self) -> float:
        return cell_width(self.level)

    def bounds(self) -> Box:
        lo = self.lower.astype(np.float64)
        return Box(lo, lo + self.size.astype(np.float64) * self.width)

    def filter_domain(self) -> Box:
        """Brick bounds padded by half a cell width: the region where this
        brick's basis functions are nonzero."""
        return self.bounds().expand(0.5 * self.width)

    def cell_count(self) -> int:
        return int(np.prod(self.size))


def filter_domain(brick: Brick) -> Box:
    return brick.filter_domain()


def _split_dense(coords: np.ndarray, values: np.ndarray, level: int,
                 out: list[Brick]) -> None:
    """Recursively split lattice coords of one level into dense boxes.

    coords are cell positions divided by the level width. Splits the
    widest axis at the median coordinate until count == box volume.
    """
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    size = hi - lo + 1
    vol = int(size[0]) * int(size[1]) * int(size[2])
    n = len(coords)
    if n == vol:
        vals = np.empty(tuple(int(s) for s in size), dtype=np.float64)
        rel = coords - lo
        vals[rel[:, 0], rel[:, 1], rel[:, 2]] = values
        w = np.int64(1) << np.int64(level)
        out.append(Brick(lower=lo * w, size=size, level=level, values=vals))
        return
    axis = int(np.argmax(size))
    med = int(np.median(coords[:, axis]))
    if med <= int(lo[axis]):
        med = int(lo[axis]) + 1
    mask = coords[:, axis] < med
    _split_dense(coords[mask], values[mask], level, out)
    _split_dense(coords[~mask], values[~mask], level, out)


def build_bricks(cells: CellSet) -> list[Brick]:
    """Cluster cells into dense same-level bricks.

    Every cell lands in exactly one brick. Bricks are emitted in
    deterministic order: by level ascending, then recursive split order.
    """
    bricks: list[Brick] = []
    for lvl in range(cells.num_levels):
        mask = cells.level == lvl
        if not mask.any():
            continue
        coords = cells.lower[mask] >> lvl
        values = cells.scalar[mask]
        _split_dense(coords, values, lvl, bricks)
    return bricks


@dataclass
class BasisSample:
    """Running weighted accumulation of tent basis contributions."""

    wsum: float = 0.0
    vsum: float = 0.0
    in_domain: bool = False

    def value(self) -> float:
        """Normalized reconstruction. Zero where no basis reaches."""
        if not self.in_domain or self.wsum <= 0.0:
            return 0.0
        return self.vsum / self.wsum


def basis_contribution(brick: Brick, x, sample: BasisSample) -> BasisSample:
    """Accumulate the tent-weighted contribution of `brick` at point `x`.

    Per axis at most two cell centers are within one cell width of x, so
    at most 8 cells of the brick contribute. Iteration order is fixed
    (z outer, y, x inner) so accumulation order is reproducible.
    """
    x = np.asarray(x, dtype=np.float64)
    h = brick.width
    lo = brick.lower.astype(np.float64)
    # Index of the first candidate cell per axis: center c_j = lo + (j+0.5)h,
    # |x - c_j| < h  <=>  j in ((x-lo)/h - 1.5, (x-lo)/h + 0.5).
    rel = (x - lo) / h
    j0 = np.floor(rel - 0.5).astype(np.int64)
    if _in_half_open(x, brick.bounds()):
        sample.in_domain = True
    for dz in range(2):
        jz = int(j0[2]) + dz
        if jz < 0 or jz >= int(brick.size[2]):
            continue
        wz = 1.0 - abs(rel[2] - (jz + 0.5))
        if wz <= 0.0:
            continue
        for dy in range(2):
            jy = int(j0[1]) + dy
            if jy < 0 or jy >= int(brick.size[1]):
                continue
            wy = 1.0 - abs(rel[1] - (jy + 0.5))
            if wy <= 0.0:
                continue
            for dx in range(2):
                jx = int(j0[0]) + dx
                if jx < 0 or jx >= int(brick.size[0]):
                    continue
                wx = 1.0 - abs(rel[0] - (jx + 0.5))
                if wx <= 0.0:
                    continue
                w = wx * wy * wz
                sample.wsum += w
                sample.vsum += w * brick.values[jx, jy, jz]
    return sample


def _in_half_open(x: np.ndarray, box: Box) -> bool:
    return bool(np.all(x >= box.lo) and np.all(x < box.hi))
