"""Point sampling of the reconstructed field.

Two production backends answer Sample(x) = (value, albedo, extinction):
an ABR point query (kd descent, then accumulate that ABR's brick list)
and an extended-brick point query (BVH descent over filter domains,
which may overlap). Both accumulate bricks in ascending id order so they
agree bit-for-bit wherever they see the same contributing cells.

Extinction is vacuum (exactly 0) outside the union of unextended cell
bounds. Tent supports overhang that union by half a cell, but the brick
partition and the macrocell grid do not cover the overhang, so giving it
extinction would make transmittance depend on the traversal structure.
Value and albedo still map through the transfer function everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import BasisSample, Brick, basis_contribution
from .partitions import ABRSet, TransferFunction
from .traversal import BVH, bvh_build


class SamplerKind(Enum):
    ABR_QUERY = "abr"
    ABR_DIRECT = "abr-direct"
    EXT_BRICK_QUERY = "ext-brick"


@dataclass(frozen=True)
class Sample:
    value: float
    albedo: np.ndarray
    extinction: float


def _finish(acc: BasisSample, tf: TransferFunction) -> Sample:
    value = acc.value()
    albedo = tf.rgb(value)
    ext = tf.unit_extinction * tf.alpha(value) if acc.in_domain else 0.0
    return Sample(value, albedo, ext)


def vacuum_sample(tf: TransferFunction) -> Sample:
    return _finish(BasisSample(), tf)


def abr_point_query(abrs: ABRSet, x) -> int | None:
    """The unique ABR whose domain contains x, or None outside the union.

    Points on split planes resolve to the upper side.
    """
    idx = abrs.find(x)
    return None if idx < 0 else idx


def sample_abr_direct(abrs: ABRSet, bricks: list[Brick], abr_id: int, x,
                      tf: TransferFunction) -> Sample:
    """Accumulate exactly the listed bricks of a known ABR.

    The fast path used while traversing ABRs: partition identity is known,
    so no point location is needed.
    """
    x = np.asarray(x, dtype=np.float64)
    if __debug__:
        assert np.all(x >= abrs.domain_lo[abr_id] - 1e-9) and \
            np.all(x <= abrs.domain_hi[abr_id] + 1e-9), \
            "sample_abr_direct: x outside the ABR domain"
    acc = BasisSample()
    for bid in abrs.bricks_of(abr_id):
        basis_contribution(bricks[int(bid)], x, acc)
    return _finish(acc, tf)


def sample_abr_query(abrs: ABRSet, bricks: list[Brick], x,
                     tf: TransferFunction) -> Sample:
    idx = abrs.find(np.asarray(x, dtype=np.float64))
    if idx < 0:
        return vacuum_sample(tf)
    return sample_abr_direct(abrs, bricks, idx, x, tf)


def build_ext_brick_bvh(bricks: list[Brick]) -> BVH:
    """BVH over the overlapping extended brick boxes.

    Sampling only; never culled (it must find data wherever any basis
    reaches, independent of the transfer function), and never handed to
    traversal, which requires disjoint partitions.
    """
    lo = np.empty((len(bricks), 3))
    hi = np.empty((len(bricks), 3))
    for i, b in enumerate(bricks):
        fd = b.filter_domain()
        lo[i] = fd.lo
        hi[i] = fd.hi
    return bvh_build(lo, hi, np.ones(len(bricks)))


def ext_bricks_containing(ext_bvh: BVH, x) -> list[int]:
    """Ids of all extended brick boxes containing x, ascending."""
    x = np.asarray(x, dtype=np.float64)
    out: list[int] = []
    stack = [0]
    while stack:
        node = stack.pop()
        if np.any(x < ext_bvh.node_lo[node]) or np.any(x > ext_bvh.node_hi[node]):
            continue
        p = int(ext_bvh.prim[node])
        if p >= 0:
            out.append(p)
        else:
            stack.append(int(ext_bvh.right[node]))
            stack.append(int(ext_bvh.left[node]))
    out.sort()
    return out


def ext_brick_point_query(ext_bvh: BVH, bricks: list[Brick], x,
                          tf: TransferFunction) -> Sample:
    """Accumulate every brick whose filter domain contains x."""
    x = np.asarray(x, dtype=np.float64)
    acc = BasisSample()
    for bid in ext_bricks_containing(ext_bvh, x):
        basis_contribution(bricks[bid], x, acc)
    return _finish(acc, tf)


def sample_field(kind: SamplerKind, ctx, x, tf: TransferFunction,
                 abr_id: int | None = None) -> Sample:
    """Dispatch a point sample through the selected backend.

    `ctx` provides `abrs`, `bricks` and `ext_bvh` (see engine.Scene).
    ABR_DIRECT requires the current partition id from traversal.
    """
    if kind == SamplerKind.ABR_QUERY:
        return sample_abr_query(ctx.abrs, ctx.bricks, x, tf)
    if kind == SamplerKind.ABR_DIRECT:
        if abr_id is None:
            raise ValueError("ABR_DIRECT requires the current ABR id "
                             "(only valid under ABR traversal)")
        return sample_abr_direct(ctx.abrs, ctx.bricks, abr_id, x, tf)
    if kind == SamplerKind.EXT_BRICK_QUERY:
        return ext_brick_point_query(ctx.ext_bvh, ctx.bricks, x, tf)
    raise ValueError(f"unknown sampler kind: {kind}")
