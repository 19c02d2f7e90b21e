"""Benchmark lab and independent oracles.

The oracle half of this module deliberately avoids the production data
structures: reconstruction loops over every cell, transmittance is
numerical quadrature, and segment enumeration is per-box slab clipping.
Production code is validated against these, never the other way around.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import Scene
from .model import CellSet
from .partitions import TransferFunction
from .sampling import SamplerKind
from .transport import (CameraModel, RenderConfig, frame_camera, frame_light,
                        render)
from .traversal import TraversalMethod

# ---------------------------------------------------------------------------
# brute-force field oracle


def brute_reconstruct_many(cells: CellSet, pts: np.ndarray,
                           chunk_floats: int = 4_000_000):
    """Tent reconstruction at `pts` by summing over every cell.

    Returns (value, wsum, in_domain). in_domain marks points inside the
    union of half-open cell bounds; outside it the field is vacuum and
    value is 0 regardless of any overhanging tent support.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    n = len(cells)
    w = (np.int64(1) << cells.level).astype(np.float64)
    lo = cells.lower.astype(np.float64)
    centers = lo + 0.5 * w[:, None]
    vals = cells.scalar
    p = len(pts)
    value = np.zeros(p)
    wsum = np.zeros(p)
    in_dom = np.zeros(p, dtype=bool)
    step = max(1, chunk_floats // max(n, 1))
    for s in range(0, p, step):
        x = pts[s:s + step]
        t = 1.0 - np.abs(x[:, None, :] - centers[None, :, :]) / w[None, :, None]
        np.maximum(t, 0.0, out=t)
        wts = t[:, :, 0] * t[:, :, 1] * t[:, :, 2]
        ws = wts.sum(axis=1)
        vs = wts @ vals
        inside = np.all(x[:, None, :] >= lo[None, :, :], axis=2) \
            & np.all(x[:, None, :] < (lo + w[:, None])[None, :, :], axis=2)
        dom = inside.any(axis=1)
        wsum[s:s + step] = ws
        in_dom[s:s + step] = dom
        ok = dom & (ws > 0)
        value[s:s + step][ok] = vs[ok] / ws[ok]
    return value, wsum, in_dom


def brute_reconstruct(cells: CellSet, x):
    v, ws, dom = brute_reconstruct_many(cells, np.asarray(x)[None, :])
    return float(v[0]), float(ws[0]), bool(dom[0])


def brute_extinction(cells: CellSet, tf: TransferFunction,
                     pts: np.ndarray) -> np.ndarray:
    """Oracle extinction field: unitExtinction * alpha(f(x)), vacuum 0."""
    value, _, dom = brute_reconstruct_many(cells, pts)
    mu = tf.unit_extinction * tf.alpha(value)
    mu[~dom] = 0.0
    return mu


def brute_albedo(cells: CellSet, tf: TransferFunction,
                 pts: np.ndarray) -> np.ndarray:
    value, _, dom = brute_reconstruct_many(cells, pts)
    rgb = tf.rgb(value)
    rgb[~dom] = 0.0
    return rgb


# ---------------------------------------------------------------------------
# quadrature transmittance oracle


def quadrature_transmittance(cells: CellSet, tf: TransferFunction,
                             origin, direction, t0: float, t1: float,
                             step: float = 1e-3) -> float:
    """Composite midpoint estimate of exp(-integral of mu along the ray).

    Pure quadrature against the brute-force field; used as the reference
    for tracking-based transmittance estimators. Halve `step` until the
    result moves less than the tolerance you plan to test at.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    if t1 <= t0:
        return 1.0
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    n = max(1, int(math.ceil((t1 - t0) / step)))
    h = (t1 - t0) / n
    ts = t0 + (np.arange(n) + 0.5) * h
    pts = o[None, :] + ts[:, None] * d[None, :]
    mu = brute_extinction(cells, tf, pts)
    return float(np.exp(-h * mu.sum()))


# ---------------------------------------------------------------------------
# segment enumeration oracle


def slab_clip_many(box_lo: np.ndarray, box_hi: np.ndarray, origin, direction,
                   t0: float, t1: float):
    """Clip one ray against many boxes. Returns (enter, exit) arrays over
    [t0, t1]; a box is hit when enter < exit."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    enter = np.full(len(box_lo), t0)
    exit_ = np.full(len(box_lo), t1)
    for a in range(3):
        if d[a] != 0.0:
            ta = (box_lo[:, a] - o[a]) / d[a]
            tb = (box_hi[:, a] - o[a]) / d[a]
            lo = np.minimum(ta, tb)
            hi = np.maximum(ta, tb)
            np.maximum(enter, lo, out=enter)
            np.minimum(exit_, hi, out=exit_)
        else:
            outside = (o[a] < box_lo[:, a]) | (o[a] > box_hi[:, a])
            enter[outside] = np.inf
            exit_[outside] = -np.inf
    return enter, exit_


def segment_boxes_brute(box_lo: np.ndarray, box_hi: np.ndarray, origin,
                        direction, t0: float, t1: float):
    """All boxes a segment passes through, sorted by (entry, index).

    Returns a list of (index, enter, exit) with strictly positive overlap
    length, the reference answer for every traversal backend.
    """
    enter, exit_ = slab_clip_many(box_lo, box_hi, origin, direction, t0, t1)
    hits = [(int(i), float(enter[i]), float(exit_[i]))
            for i in np.flatnonzero(enter < exit_)]
    hits.sort(key=lambda h: (h[1], h[0]))
    return hits


def segment_cells_brute(cells: CellSet, origin, direction,
                        t0: float, t1: float):
    """Cells (by index) a segment passes through, using cell bounds."""
    w = (np.int64(1) << cells.level).astype(np.float64)
    lo = cells.lower.astype(np.float64)
    return segment_boxes_brute(lo, lo + w[:, None], origin, direction, t0, t1)


# ---------------------------------------------------------------------------
# histograms and image comparison

N_HIST_BINS = 24


def hist_bin_index(n: int) -> int:
    """Log-2 bin: 0 holds zero, bin k >= 1 holds counts in [2^(k-1), 2^k)."""
    if n <= 0:
        return 0
    return min(int(n).bit_length(), N_HIST_BINS - 1)


def hist_bin_labels() -> list[str]:
    labels = ["0"]
    for k in range(1, N_HIST_BINS):
        lo = 1 << (k - 1)
        hi = (1 << k) - 1
        labels.append(str(lo) if lo == hi else f"{lo}-{hi}")
    return labels


@dataclass
class HistogramPair:
    """Log-binned distributions of work per ray and per partition hit."""

    partitions_per_ray: np.ndarray = field(
        default_factory=lambda: np.zeros(N_HIST_BINS, dtype=np.int64))
    samples_per_partition: np.ndarray = field(
        default_factory=lambda: np.zeros(N_HIST_BINS, dtype=np.int64))

    def add_ray(self, n_partitions: int):
        self.partitions_per_ray[hist_bin_index(n_partitions)] += 1

    def add_partition(self, n_samples: int):
        # Mass counts only partition hits that produced samples.
        if n_samples >= 1:
            self.samples_per_partition[hist_bin_index(n_samples)] += 1


def image_compare(a: np.ndarray, b: np.ndarray):
    """(MAE, RMSE, maxAbs) over per-pixel channel means of linear images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    ma = a.mean(axis=-1) if a.ndim == 3 else a
    mb = b.mean(axis=-1) if b.ndim == 3 else b
    d = np.abs(ma - mb)
    return float(d.mean()), float(np.sqrt((d * d).mean())), float(d.max())


# ---------------------------------------------------------------------------
# image output


def tonemap(img: np.ndarray) -> np.ndarray:
    """Linear [0,1]-clamped RGB to 8-bit with gamma 2.2."""
    u = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return (u ** (1.0 / 2.2) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    u8 = tonemap(img)
    h, w = u8.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(u8.tobytes())


def png_bytes(img: np.ndarray) -> bytes:
    import io

    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(tonemap(img), "RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_image(path, img: np.ndarray) -> None:
    """PNG or PPM by extension (defaults to PNG)."""
    p = str(path)
    if p.lower().endswith(".ppm"):
        write_ppm(p, img)
    else:
        with open(p, "wb") as f:
            f.write(png_bytes(img))


# ---------------------------------------------------------------------------
# benchmark matrix


@dataclass
class BenchReport:
    """One benchmark configuration's counters and throughput."""

    dataset: str
    method: str
    sampler: str
    mode: str
    spp: int
    width: int
    height: int
    rays: int = 0
    volume_samples: int = 0
    null_collisions: int = 0
    real_collisions: int = 0
    partitions_traversed: int = 0
    structure_bytes: int = 0
    seconds: float = 0.0
    rays_per_second: float = 0.0
    histograms: HistogramPair = field(default_factory=HistogramPair)
    skip_reason: str | None = None

    @property
    def mean_null_collisions(self) -> float:
        return self.null_collisions / self.rays if self.rays else 0.0

    @property
    def mean_partitions_per_ray(self) -> float:
        return self.partitions_traversed / self.rays if self.rays else 0.0

    @property
    def mean_samples_per_ray(self) -> float:
        return self.volume_samples / self.rays if self.rays else 0.0


# the default matrix: grid and brick traversals pair with both point
# samplers; the ABR traversal keeps the sampler that consumes its own
# partition id. 5 x 2 x 2 cells minus the redundant ABR pairings leaves
# 18 rows, matching the evaluation layout this lab reproduces.
def _default_samplers(method: TraversalMethod) -> list[SamplerKind]:
    if method == TraversalMethod.ABR_BVH:
        return [SamplerKind.ABR_DIRECT]
    return [SamplerKind.ABR_QUERY, SamplerKind.EXT_BRICK_QUERY]


def _as_scene(dataset, tf, grid_dims) -> Scene:
    if isinstance(dataset, Scene):
        return dataset
    if tf is None:
        raise ValueError("a transfer function is required with a raw CellSet")
    return Scene(dataset, tf, grid_dims=grid_dims)


def run_matrix(dataset, tf: TransferFunction | None = None,
               camera: CameraModel | None = None,
               methods=None, samplers=None, modes=("dl", "ms"), *,
               grid_dims=(32, 32, 32), spp: int = 8, width: int = 64,
               height: int = 64, seed: int = 0, out_csv=None,
               timing_columns: bool = True) -> list[BenchReport]:
    """Render every requested combination with identical seeds.

    `dataset` is a CellSet (paired with `tf`) or a prebuilt Scene. With
    `samplers=None` each traversal gets its default pairing; an explicit
    sampler list is crossed with every method and invalid combinations
    become skipped rows with the reason recorded. Pass
    `timing_columns=False` for a CSV that is bit-identical across runs.
    """
    scene = _as_scene(dataset, tf, grid_dims)
    if camera is None:
        camera = frame_camera(scene.cells)
    light = frame_light(scene.cells)
    methods = [TraversalMethod(m) for m in
               (methods or list(TraversalMethod))]
    modes = list(modes)

    combos: list[tuple[TraversalMethod, SamplerKind, str]] = []
    for mode in modes:
        for method in methods:
            pairing = ([SamplerKind(s) for s in samplers]
                       if samplers is not None
                       else _default_samplers(method))
            combos.extend((method, s, mode) for s in pairing)

    # warm the kernel so the first row's timing has no compile cost
    warm = RenderConfig(traversal=methods[0],
                        sampler=_default_samplers(methods[0])[0],
                        mode="dl", spp=1, width=4, height=4, seed=seed,
                        camera=camera, light=light)
    render(scene, warm)

    reports: list[BenchReport] = []
    for method, sampler, mode in combos:
        rep = BenchReport(dataset=scene.name, method=method.value,
                          sampler=sampler.value, mode=mode, spp=spp,
                          width=width, height=height)
        if sampler == SamplerKind.ABR_DIRECT and \
                method != TraversalMethod.ABR_BVH:
            rep.skip_reason = ("sampler 'abr-direct' needs the ABR id "
                               "supplied by traversal 'abr-bvh'")
            reports.append(rep)
            continue
        cfg = RenderConfig(traversal=method, sampler=sampler, mode=mode,
                           spp=spp, width=width, height=height, seed=seed,
                           camera=camera, light=light)
        # structure builds (lazy culling BVHs) are memory-accounted, not
        # part of render throughput; force them before the clock starts
        scene.kernel_args(method, sampler)
        t0 = time.perf_counter()
        _, stats, accum = render(scene, cfg)
        dt = time.perf_counter() - t0
        hp, hs = accum.histograms()
        rep.rays = stats.rays
        rep.volume_samples = stats.volume_samples
        rep.null_collisions = stats.null_collisions
        rep.real_collisions = stats.real_collisions
        rep.partitions_traversed = stats.partitions_traversed
        rep.structure_bytes = scene.structure_bytes(method, sampler)
        rep.seconds = dt
        rep.rays_per_second = stats.rays / dt if dt > 0 else 0.0
        rep.histograms = HistogramPair(hp, hs)
        reports.append(rep)

    if out_csv is not None:
        write_matrix_csv(reports, out_csv, timing_columns=timing_columns)
    return reports


_MATRIX_COLUMNS = ["dataset", "method", "sampler", "mode", "spp", "width",
                   "height", "rays", "volumeSamples", "nullCollisions",
                   "realCollisions", "partitionsTraversed",
                   "meanPartitionsPerRay", "meanNullCollisions",
                   "structureBytes", "status"]


def write_matrix_csv(reports: list[BenchReport], path,
                     timing_columns: bool = True) -> None:
    cols = _MATRIX_COLUMNS + (["seconds", "raysPerSecond"]
                              if timing_columns else [])
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for r in reports:
            row = [r.dataset, r.method, r.sampler, r.mode, r.spp, r.width,
                   r.height, r.rays, r.volume_samples, r.null_collisions,
                   r.real_collisions, r.partitions_traversed,
                   f"{r.mean_partitions_per_ray:.9g}",
                   f"{r.mean_null_collisions:.9g}",
                   r.structure_bytes, r.skip_reason or "ok"]
            if timing_columns:
                row += [f"{r.seconds:.6f}", f"{r.rays_per_second:.6g}"]
            w.writerow(row)


# ---------------------------------------------------------------------------
# grid-resolution sweep


@dataclass
class SweepPoint:
    dims: tuple[int, int, int]
    majorant_entries: int
    structure_bytes: int
    rays: int
    seconds: float
    rays_per_second: float


def grid_sweep(dataset, tf: TransferFunction | None = None,
               dims_list=((1, 1, 1), (8, 8, 8), (16, 16, 16), (32, 32, 32),
                          (64, 64, 64)),
               camera: CameraModel | None = None, *,
               method=TraversalMethod.GRID_DDA,
               sampler=SamplerKind.ABR_QUERY, mode: str = "dl",
               spp: int = 4, width: int = 64, height: int = 64,
               seed: int = 0, out_csv=None, out_plot=None
               ) -> list[SweepPoint]:
    """Throughput versus macrocell-grid resolution, in input order.

    Only the grid is rebuilt between points; bricks, ABRs and the
    sampling index persist. A caller-supplied Scene gets its original
    grid restored afterwards.
    """
    method = TraversalMethod(method)
    if method not in (TraversalMethod.GRID_DDA, TraversalMethod.GRID_BVH):
        raise ValueError("grid_sweep needs a grid traversal method")
    scene = _as_scene(dataset, tf, tuple(dims_list[0]))
    if camera is None:
        camera = frame_camera(scene.cells)
    light = frame_light(scene.cells)
    original_dims = tuple(int(d) for d in scene.grid.dims)

    cfg = RenderConfig(traversal=method, sampler=SamplerKind(sampler),
                       mode=mode, spp=spp, width=width, height=height,
                       seed=seed, camera=camera, light=light)
    warm = cfg.model_copy(update={"spp": 1, "width": 4, "height": 4})
    points: list[SweepPoint] = []
    try:
        render(scene, warm)
        for dims in dims_list:
            dims = tuple(int(d) for d in dims)
            scene.set_grid_dims(dims)
            scene.kernel_args(method, SamplerKind(sampler))
            t0 = time.perf_counter()
            _, stats, _ = render(scene, cfg)
            dt = time.perf_counter() - t0
            points.append(SweepPoint(
                dims=dims,
                majorant_entries=dims[0] * dims[1] * dims[2],
                structure_bytes=scene.structure_bytes(method,
                                                      SamplerKind(sampler)),
                rays=stats.rays,
                seconds=dt,
                rays_per_second=stats.rays / dt if dt > 0 else 0.0))
    finally:
        if isinstance(dataset, Scene):
            scene.set_grid_dims(original_dims)

    if out_csv is not None:
        with open(out_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["dims", "majorantEntries", "structureBytes", "rays",
                        "seconds", "raysPerSecond"])
            for p in points:
                w.writerow(["x".join(map(str, p.dims)), p.majorant_entries,
                            p.structure_bytes, p.rays, f"{p.seconds:.6f}",
                            f"{p.rays_per_second:.6g}"])
    if out_plot is not None:
        plot_sweep(points, out_plot)
    return points


def plot_sweep(points: list[SweepPoint], path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = [p.majorant_entries for p in points]
    y = [p.rays_per_second for p in points]
    labels = ["x".join(map(str, p.dims)) for p in points]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(x, y, marker="o")
    ax.set_xscale("log")
    ax.set_xticks(x, labels=labels, rotation=30)
    ax.set_xlabel("macrocell grid size")
    ax.set_ylabel("rays / second")
    ax.set_title("throughput vs. majorant grid resolution")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
