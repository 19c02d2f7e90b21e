import numpy as np
import pytest

from amrvpt.bench import brute_extinction, brute_reconstruct_many
from amrvpt.model import Brick, Cell, CellSet, build_bricks
from amrvpt.partitions import (ABRSet, BrickPartition, MajorantGrid,
                               TransferFunction, ValueRange, build_abrs,
                               build_majorant_grid, classify,
                               classify_ranges, compute_brick_ranges,
                               range_max_alpha, reclassify_all)
from conftest import rng_cells


def ramp_tf(unit=1.0, lo=0.0, hi=1.0, alphas=(0.0, 1.0)):
    rgba = np.zeros((len(alphas), 4))
    rgba[:, 0] = np.linspace(0.1, 0.9, len(alphas))
    rgba[:, 3] = alphas
    return TransferFunction((lo, hi), rgba, unit)


def random_tf(rng, lo, hi):
    e = int(rng.integers(2, 9))
    rgba = rng.random((e, 4))
    if rng.random() < 0.3:
        rgba[rng.integers(0, e), 3] = 0.0
    return TransferFunction((lo, hi), rgba, float(rng.uniform(0.5, 50)))


# ---------------------------------------------------------------------------
# transfer function lookups


def test_tf_validation():
    with pytest.raises(ValueError, match=r"\(E>=2"):
        TransferFunction((0, 1), np.zeros((1, 4)), 1.0)
    with pytest.raises(ValueError, match="lo < hi"):
        TransferFunction((1, 1), np.zeros((2, 4)), 1.0)
    with pytest.raises(ValueError, match=r"\[0,1\]"):
        TransferFunction((0, 1), np.full((2, 4), 1.5), 1.0)
    with pytest.raises(ValueError, match="unitExtinction"):
        TransferFunction((0, 1), np.zeros((2, 4)), 0.0)


def test_tf_lookup_entries_and_midpoints():
    tf = TransferFunction((0.0, 3.0),
                          [[0, 0, 0, 0.0], [1, 1, 1, 1.0],
                           [0, 0, 0, 0.0], [0.5, 0.5, 0.5, 0.0]], 2.0)
    assert tf.alpha(0.0) == 0.0
    assert tf.alpha(1.0) == 1.0
    assert tf.alpha(0.5) == pytest.approx(0.5)
    assert tf.alpha(2.5) == 0.0
    # clamping outside the domain
    assert tf.alpha(-5.0) == 0.0
    assert tf.alpha(99.0) == 0.0
    assert np.allclose(tf.rgb(3.0), [0.5, 0.5, 0.5])
    assert tf.extinction(1.0) == 2.0
    # vectorized agrees with scalars
    vs = np.array([0.0, 0.4, 1.7, 3.0])
    assert np.allclose(tf.alpha(vs), [tf.alpha(float(v)) for v in vs])


def dense_scan_max(tf, lo, hi, n=20001):
    vs = np.linspace(lo, hi, n)
    return float(tf.alpha(vs).max())


def test_range_max_alpha_interior_entry():
    tf = TransferFunction((0.0, 3.0), [[0, 0, 0, 0.0], [0, 0, 0, 1.0],
                                       [0, 0, 0, 0.0], [0, 0, 0, 0.0]], 1.0)
    assert range_max_alpha(tf, ValueRange(0.5, 1.5)) == 1.0


def test_range_max_alpha_constant():
    tf = TransferFunction((0.0, 1.0), [[0, 0, 0, 0.3], [0, 0, 0, 0.3]], 1.0)
    for r in [ValueRange(0.0, 1.0), ValueRange(0.2, 0.4), ValueRange(-5, 9)]:
        assert range_max_alpha(tf, r) == pytest.approx(0.3)


def test_range_max_alpha_endpoint_interpolant():
    # ramp alpha(2)=0 -> alpha(3)=0.4, range inside the segment
    tf = TransferFunction((0.0, 3.0), [[0, 0, 0, 0.0], [0, 0, 0, 0.0],
                                       [0, 0, 0, 0.0], [0, 0, 0, 0.4]], 1.0)
    got = range_max_alpha(tf, ValueRange(2.25, 2.75))
    assert got == pytest.approx(0.3)
    assert got >= dense_scan_max(tf, 2.25, 2.75) - 1e-12


def test_range_max_alpha_empty_and_degenerate():
    tf = ramp_tf()
    assert range_max_alpha(tf, ValueRange()) == 0.0
    assert range_max_alpha(tf, ValueRange(0.5, 0.5)) == pytest.approx(0.5)


def test_range_max_alpha_matches_dense_scan_randomized():
    rng = np.random.default_rng(7)
    for _ in range(200):
        tf = random_tf(rng, 0.0, 1.0)
        a, b = np.sort(rng.uniform(-0.2, 1.2, size=2))
        got = range_max_alpha(tf, ValueRange(float(a), float(b)))
        scan = dense_scan_max(tf, max(a, 0.0), min(max(b, 0.0), 1.0))
        # exact max dominates any sampled value; tightness within one
        # scan-step of slope
        assert got >= scan - 1e-12
        assert got <= scan + 0.05


def test_classify_examples():
    tf = ramp_tf(unit=50.0, alphas=(0.0, 1.0))
    assert classify(ValueRange(), tf) == 0.0
    assert classify(ValueRange(0.9, 1.0), tf) == 50.0  # alpha hits 1 exactly
    zero = ramp_tf(unit=50.0, alphas=(0.0, 0.0))
    assert classify(ValueRange(0.2, 0.8), zero) == 0.0


def test_classify_dominates_dense_scan_zero_tolerance():
    rng = np.random.default_rng(11)
    for _ in range(100):
        tf = random_tf(rng, 0.0, 1.0)
        a, b = np.sort(rng.uniform(0.0, 1.0, size=2))
        maj = classify(ValueRange(float(a), float(b)), tf)
        vs = np.linspace(a, b, 4001)
        mus = tf.unit_extinction * tf.alpha(vs)
        assert np.all(mus <= maj)


# ---------------------------------------------------------------------------
# ABR construction


def hand_bricks_two_adjacent():
    a = Brick(lower=(0, 0, 0), size=(2, 1, 1), level=0,
              values=np.array([[[1.0]], [[2.0]]]))
    b = Brick(lower=(2, 0, 0), size=(2, 1, 1), level=0,
              values=np.array([[[3.0]], [[4.0]]]))
    return [a, b]


def test_build_abrs_single_brick():
    bricks = [Brick(lower=(0, 0, 0), size=(2, 2, 1), level=0,
                    values=np.arange(4.0).reshape(2, 2, 1))]
    abrs = build_abrs(bricks)
    assert len(abrs) == 1
    assert np.allclose(abrs.domain_lo[0], [-0.5, -0.5, -0.5])
    assert np.allclose(abrs.domain_hi[0], [2.5, 2.5, 1.5])
    assert list(abrs.bricks_of(0)) == [0]
    assert abrs.range_of(0).lo == 0.0
    assert abrs.range_of(0).hi == 3.0


def test_build_abrs_two_adjacent_bricks_three_regions():
    abrs = build_abrs(hand_bricks_two_adjacent())
    assert len(abrs) == 3
    order = np.argsort(abrs.domain_lo[:, 0])
    left, mid, right = (int(i) for i in order)
    assert list(abrs.bricks_of(left)) == [0]
    assert list(abrs.bricks_of(mid)) == [0, 1]
    assert list(abrs.bricks_of(right)) == [1]
    # overlap slab is the intersection of the two extended boxes
    assert abrs.domain_lo[mid, 0] == pytest.approx(1.5)
    assert abrs.domain_hi[mid, 0] == pytest.approx(2.5)
    assert abrs.finest_level[mid] == 0


def test_abrs_partition_union_and_cover_bricks(two_level_mixed):
    bricks = build_bricks(two_level_mixed)
    abrs = build_abrs(bricks)
    ext = [b.filter_domain() for b in bricks]
    rng = np.random.default_rng(3)
    pts = rng.uniform(abrs.world_lo, abrs.world_hi, size=(10_000, 3))
    in_union = np.zeros(len(pts), dtype=bool)
    for fd in ext:
        in_union |= np.all(pts > fd.lo, axis=1) & np.all(pts < fd.hi, axis=1)
    contained = np.zeros(len(pts), dtype=np.int64)
    for i in range(len(abrs)):
        inside = np.all(pts > abrs.domain_lo[i], axis=1) \
            & np.all(pts < abrs.domain_hi[i], axis=1)
        contained += inside
    # strictly interior points of the union land in exactly one ABR
    assert np.all(contained[in_union] == 1)
    assert not np.any(contained > 1)
    for p in pts[in_union][:500]:
        idx = abrs.find(p)
        assert idx >= 0
        listed = set(int(b) for b in abrs.bricks_of(idx))
        for bi, fd in enumerate(ext):
            if np.all(p > fd.lo) and np.all(p < fd.hi):
                assert bi in listed


def test_abr_find_outside_returns_minus_one():
    abrs = build_abrs(hand_bricks_two_adjacent())
    assert abrs.find((99.0, 0.0, 0.0)) == -1


# ---------------------------------------------------------------------------
# brick partition ranges


def test_brick_ranges_isolated():
    b = Brick(lower=(0, 0, 0), size=(2, 1, 1), level=0,
              values=np.array([[[2.0]], [[5.0]]]))
    part = compute_brick_ranges([b])
    assert part.range_of(0).lo == 2.0
    assert part.range_of(0).hi == 5.0


def test_brick_ranges_neighbor_overhang():
    a = Brick(lower=(0, 0, 0), size=(2, 1, 1), level=0,
              values=np.array([[[2.0]], [[5.0]]]))
    b = Brick(lower=(2, 0, 0), size=(1, 1, 1), level=0,
              values=np.array([[[9.0]]]))
    part = compute_brick_ranges([a, b])
    # b's cell support [1.5,3.5] overhangs into a's box [0,2]
    assert part.range_of(0).hi == 9.0
    assert part.range_of(0).lo == 2.0
    # a's cell at x=1 has support [0.5,2.5] reaching into b's box
    assert part.range_of(1).lo == 5.0
    assert part.range_of(1).hi == 9.0


def test_brick_ranges_far_apart_unchanged():
    a = Brick(lower=(0, 0, 0), size=(1, 1, 1), level=0,
              values=np.array([[[1.0]]]))
    b = Brick(lower=(16, 0, 0), size=(1, 1, 1), level=0,
              values=np.array([[[9.0]]]))
    part = compute_brick_ranges([a, b])
    assert part.range_of(0) == ValueRange(1.0, 1.0)
    assert part.range_of(1) == ValueRange(9.0, 9.0)


# ---------------------------------------------------------------------------
# majorant grid


def test_grid_single_macrocell_global_range(uniform8):
    g = build_majorant_grid(uniform8, (1, 1, 1))
    lo, hi = uniform8.value_range()
    assert g.range_of(0, 0, 0) == ValueRange(lo, hi)


def test_grid_straddling_support_touches_all_eight():
    cs = CellSet(np.array([[1, 1, 1]]), np.array([0]), np.array([7.0]),
                 world_lo=(0, 0, 0), world_hi=(4, 4, 4))
    g = build_majorant_grid(cs, (2, 2, 2))
    for iz in range(2):
        for iy in range(2):
            for ix in range(2):
                assert g.range_of(ix, iy, iz) == ValueRange(7.0, 7.0)


def test_grid_exact_touch_extends_both_neighbors():
    # level-1 cell at x=2: support [1,5] on x, exactly on unit planes
    cs = CellSet(np.array([[2, 0, 0]]), np.array([1]), np.array([3.0]),
                 world_lo=(0, 0, 0), world_hi=(8, 2, 2))
    g = build_majorant_grid(cs, (8, 1, 1))
    touched = [ix for ix in range(8)
               if not g.range_of(ix, 0, 0).is_empty()]
    assert touched == [0, 1, 2, 3, 4, 5]


def test_grid_untouched_macrocell_is_empty_and_culled():
    cs = CellSet(np.array([[0, 0, 0]]), np.array([0]), np.array([1.0]),
                 world_lo=(0, 0, 0), world_hi=(8, 8, 8))
    g = build_majorant_grid(cs, (4, 4, 4))
    assert g.range_of(3, 3, 3).is_empty()
    reclassify_all(g, ramp_tf())
    assert g.majorants[g.flat_index(3, 3, 3)] == 0.0
    assert g.majorants[g.flat_index(0, 0, 0)] > 0.0


def test_grid_rejects_zero_dims(uniform8):
    with pytest.raises(ValueError, match="dims"):
        build_majorant_grid(uniform8, (0, 4, 4))


def test_grid_monotone_under_refinement():
    cells = rng_cells(5)
    tf = ramp_tf(unit=10.0, lo=0.0, hi=1.0, alphas=(0.1, 0.9, 0.2, 0.6))
    coarse = reclassify_all(build_majorant_grid(cells, (4, 4, 4)), tf)
    fine = reclassify_all(build_majorant_grid(cells, (8, 8, 8)), tf)
    for iz in range(8):
        for iy in range(8):
            for ix in range(8):
                mf = fine.majorants[fine.flat_index(ix, iy, iz)]
                mc = coarse.majorants[coarse.flat_index(ix // 2, iy // 2, iz // 2)]
                assert mf <= mc + 1e-12


# ---------------------------------------------------------------------------
# reclassification


def test_reclassify_matches_elementwise_oracle():
    cells = rng_cells(9)
    bricks = build_bricks(cells)
    part = compute_brick_ranges(bricks)
    tf = ramp_tf(unit=7.0, alphas=(0.0, 0.5, 1.0))
    reclassify_all(part, tf)
    for i in range(len(part)):
        assert part.majorants[i] == classify(part.range_of(i), tf)


def test_reclassify_idempotent_and_bumps_generation():
    cells = rng_cells(2)
    g = build_majorant_grid(cells, (4, 4, 4))
    tf = ramp_tf()
    g0 = g.tf_generation
    reclassify_all(g, tf)
    first = g.majorants.copy()
    rlo = g.range_lo.copy()
    reclassify_all(g, tf)
    assert np.array_equal(first, g.majorants)
    assert np.array_equal(rlo, g.range_lo)  # ranges untouched
    assert g.tf_generation == g0 + 2


def test_reclassify_zero_alpha_zeroes_everything():
    cells = rng_cells(4)
    abrs = build_abrs(build_bricks(cells))
    reclassify_all(abrs, ramp_tf(alphas=(0.0, 0.0)))
    assert np.all(abrs.majorants == 0.0)


# ---------------------------------------------------------------------------
# majorant soundness: mu(x) <= majorant(partition containing x), exactly


def _soundness_points(rng, lo, hi, n):
    return rng.uniform(lo, hi, size=(n, 3))


def _check_sound(mu, maj, label):
    bad = mu > maj
    assert not bad.any(), (
        f"{label}: {bad.sum()} probes exceed majorant, worst "
        f"excess {float((mu - maj)[bad].max())}")


@pytest.mark.parametrize("seed", [0, 1])
def test_majorant_soundness_all_structures(seed):
    rng = np.random.default_rng(seed)
    cells = rng_cells(seed + 20)
    bricks = build_bricks(cells)
    abrs = build_abrs(bricks)
    part = compute_brick_ranges(bricks)
    grid = build_majorant_grid(cells, (5, 6, 7))
    vlo, vhi = cells.value_range()

    n = 60_000
    for tf_i in range(3):
        tf = random_tf(rng, vlo - 0.1 * (tf_i > 0), vhi + 0.05 * tf_i)
        for s in (abrs, part, grid):
            reclassify_all(s, tf)

        pts = _soundness_points(rng, cells.world_lo, cells.world_hi, n)
        mu = brute_extinction(cells, tf, pts)

        # grid: direct index lookup
        h = grid.cell_size
        idx = np.floor((pts - grid.world_lo) / h).astype(np.int64)
        np.clip(idx, 0, grid.dims - 1, out=idx)
        flat = idx[:, 0] + grid.dims[0] * (idx[:, 1] + grid.dims[1] * idx[:, 2])
        _check_sound(mu, grid.majorants[flat], "grid")

        # bricks: points inside each box
        for i in range(len(part)):
            inside = np.all(pts >= part.box_lo[i], axis=1) \
                & np.all(pts <= part.box_hi[i], axis=1)
            _check_sound(mu[inside], part.majorants[i], f"brick {i}")

        # abrs: kd point location
        found = np.fromiter((abrs.find(p) for p in pts), dtype=np.int64,
                            count=n)
        ok = found >= 0
        # domain-masked field is vacuum outside every ABR
        assert np.all(mu[~ok] == 0.0)
        _check_sound(mu[ok], abrs.majorants[found[ok]], "abr")
