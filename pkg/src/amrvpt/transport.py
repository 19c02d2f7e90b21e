"""Delta tracking, shading modes, and the frame accumulator.

Two implementations live side by side. The pure-python functions here
are the readable reference: they consume the same counter-based RNG
draws in the same order and perform the same float operations as the
compiled kernels in _kernels.py, so tests can demand bit equality
between the two. Production rendering goes through the kernels.

All randomness is keyed by (seed, frame, pixel) plus a per-purpose
context and draw index, which makes every estimate independent of
scheduling, thread count, and traversal restarts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from . import _kernels as K
from .engine import Scene, _check_combo
from .partitions import TransferFunction
from .sampling import Sample, SamplerKind, sample_field, vacuum_sample
from .traversal import Ray, TraversalMethod, traverse_spatial_partitions

_M64 = (1 << 64) - 1
XI_CAP = 1.0 - 2.0 ** -33
INV_4PI = 1.0 / (4.0 * math.pi)


# ---------------------------------------------------------------------------
# counter-based RNG (mirrors _kernels exactly)


def mix64(x: int) -> int:
    x &= _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def pixel_key(seed: int, frame: int, pixel: int) -> int:
    return mix64(mix64(seed) ^ mix64(frame)
                 ^ ((pixel * 0x9E3779B97F4A7C15) & _M64))


def u01(key: int, ctx: int, idx: int) -> float:
    h = mix64(key ^ mix64((ctx * 0xD1B54A32D192ED03
                           + idx * 0x9E3779B97F4A7C15) & _M64))
    return (h >> 11) * 2.0 ** -53


CTX_CAMERA = 0


def ctx_track(bounce: int) -> int:
    return 1 + 4 * bounce


def ctx_shadow(bounce: int) -> int:
    return 2 + 4 * bounce


def ctx_phase(bounce: int) -> int:
    return 3 + 4 * bounce


def ctx_rr(bounce: int) -> int:
    return 4 + 4 * bounce


@dataclass
class RngStream:
    """Stateless draws keyed by (pixel, frame, bounce-context, index)."""

    seed: int
    frame: int = 0
    pixel: int = 0

    def key(self) -> int:
        return pixel_key(self.seed, self.frame, self.pixel)

    def uniform(self, ctx: int, idx: int) -> float:
        return u01(self.key(), ctx, idx)


# ---------------------------------------------------------------------------
# events and counters


class EventKind(Enum):
    SCATTER = "scatter"
    ESCAPED = "escaped"


@dataclass(frozen=True)
class TrackingEvent:
    kind: EventKind
    t: float
    sample: Sample


@dataclass
class RayStats:
    """Work counters; volume_samples = null + real collisions always."""

    partitions_traversed: int = 0
    volume_samples: int = 0
    null_collisions: int = 0
    real_collisions: int = 0
    rays: int = 0

    def merge(self, other: "RayStats") -> None:
        self.partitions_traversed += other.partitions_traversed
        self.volume_samples += other.volume_samples
        self.null_collisions += other.null_collisions
        self.real_collisions += other.real_collisions
        self.rays += other.rays

    def as_dict(self) -> dict:
        return {
            "partitionsTraversed": self.partitions_traversed,
            "volumeSamples": self.volume_samples,
            "nullCollisions": self.null_collisions,
            "realCollisions": self.real_collisions,
            "rays": self.rays,
        }


# ---------------------------------------------------------------------------
# scene description models


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    return a


class PointLight(BaseModel):
    model_config = ConfigDict(extra="forbid")
    position: tuple[float, float, float]
    intensity: tuple[float, float, float] = (1.0, 1.0, 1.0)


class CameraModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True, extra="forbid")
    position: tuple[float, float, float] = (2.0, 1.5, 2.0)
    look_at: tuple[float, float, float] = Field((0.5, 0.5, 0.5),
                                                alias="lookAt")
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    fov_y: float = Field(45.0, alias="fovY", gt=0.0, lt=180.0)

    def basis(self, width: int, height: int):
        """Orthonormal frame plus half-tangents; kernels get these floats."""
        eye = _vec3(self.position)
        fwd = _vec3(self.look_at) - eye
        n = float(np.linalg.norm(fwd))
        if n == 0.0:
            raise ValueError("camera position and lookAt coincide")
        fwd = fwd / n
        right = np.cross(fwd, _vec3(self.up))
        rn = float(np.linalg.norm(right))
        if rn == 0.0:
            raise ValueError("camera up is parallel to the view direction")
        right = right / rn
        upv = np.cross(right, fwd)
        tany = math.tan(math.radians(self.fov_y) * 0.5)
        tanx = tany * width / height
        return eye, right, upv, fwd, tanx, tany

    def ray(self, ix: int, iy: int, width: int, height: int,
            jx: float, jy: float) -> Ray:
        """Reference ray generation; mirrors the render kernel per-op."""
        eye, right, upv, fwd, tanx, tany = self.basis(width, height)
        px = 2.0 * ((ix + jx) / width) - 1.0
        py = 1.0 - 2.0 * ((iy + jy) / height)
        d = np.empty(3)
        for a in range(3):
            d[a] = fwd[a] + px * tanx * right[a] + py * tany * upv[a]
        il = 1.0 / math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        d *= il
        return Ray(eye.copy(), d, 0.0, math.inf)


class SceneLighting(BaseModel):
    model_config = ConfigDict(populate_by_name=True, extra="forbid")
    point_light: PointLight = Field(
        PointLight(position=(4.0, 4.0, 4.0), intensity=(60.0, 60.0, 60.0)),
        alias="pointLight")
    ambient: tuple[float, float, float] = (0.25, 0.25, 0.25)


def _parse_traversal(v):
    if isinstance(v, str):
        # CLI spelling "abr" selects the ABR traversal
        return TraversalMethod("abr-bvh" if v == "abr" else v)
    return v


def frame_camera(cells, fov_y: float = 45.0) -> CameraModel:
    """Deterministic camera that frames the dataset's world bounds."""
    lo = cells.world_lo.astype(np.float64)
    hi = cells.world_hi.astype(np.float64)
    center = 0.5 * (lo + hi)
    radius = 0.5 * float(np.linalg.norm(hi - lo))
    if radius == 0.0:
        radius = 1.0
    dist = radius * (1.0 + 1.1 / math.tan(math.radians(fov_y) / 2.0))
    d = np.array([0.55, -0.35, 0.76])
    d = d / np.linalg.norm(d)
    eye = center + dist * d
    return CameraModel(position=tuple(eye), look_at=tuple(center),
                       fov_y=fov_y)


def frame_light(cells, scale: float = 1.0) -> PointLight:
    """Point light above the dataset whose inverse-square falloff cancels
    at the domain center, so direct lighting lands near `scale`."""
    lo = cells.world_lo.astype(np.float64)
    hi = cells.world_hi.astype(np.float64)
    center = 0.5 * (lo + hi)
    radius = max(0.5 * float(np.linalg.norm(hi - lo)), 1.0)
    pos = center + radius * np.array([1.2, 2.6, 0.9])
    d2 = float(((pos - center) ** 2).sum())
    val = scale * 4.0 * math.pi * d2
    return PointLight(position=tuple(pos), intensity=(val, val, val))


class RenderConfig(BaseModel):
    """One render configuration; the YAML config document maps onto this."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")
    traversal: TraversalMethod = TraversalMethod.ABR_BVH
    sampler: SamplerKind = SamplerKind.ABR_DIRECT
    mode: Literal["dl", "ms"] = "dl"
    spp: int = Field(1, ge=1)
    max_bounces: int = Field(8, ge=1, alias="maxBounces")
    rr_start: int = Field(3, ge=1, alias="rrStart")
    seed: int = Field(0, ge=0)
    width: int = Field(128, ge=1)
    height: int = Field(128, ge=1)
    camera: CameraModel = CameraModel()
    light: PointLight = PointLight(position=(4.0, 4.0, 4.0),
                                   intensity=(60.0, 60.0, 60.0))
    ambient: tuple[float, float, float] = (0.25, 0.25, 0.25)

    @field_validator("traversal", mode="before")
    @classmethod
    def _traversal_alias(cls, v):
        return _parse_traversal(v)

    def lighting(self) -> SceneLighting:
        return SceneLighting(point_light=self.light, ambient=self.ambient)


# ---------------------------------------------------------------------------
# reference tracking (python mirror of _kernels._track)


class _SpanState:
    __slots__ = ("idx", "event", "error", "parts")

    def __init__(self):
        self.idx = 0
        self.event: Optional[TrackingEvent] = None
        self.error: Optional[str] = None
        self.parts = 0


def _span(scene: Scene, sampler: SamplerKind, hint, maj: float,
          t0: float, t1: float, o, d, key: int, ctx: int, idx: int,
          stats: RayStats, tf: TransferFunction):
    """Free-flight steps under one majorant. Mirrors _kernels._track_span."""
    t = t0
    ns = 0
    while True:
        xi = u01(key, ctx, idx)
        idx += 1
        if xi > XI_CAP:
            xi = XI_CAP
        t = t - math.log(1.0 - xi) / maj
        if t > t1:
            return None, idx, ns
        x = np.empty(3)
        for a in range(3):
            x[a] = o[a] + t * d[a]
        s = sample_field(sampler, scene, x, tf, abr_id=hint)
        ns += 1
        stats.volume_samples += 1
        if s.extinction > maj:
            raise RuntimeError(
                "majorant soundness violation: extinction "
                f"{s.extinction} exceeds partition majorant {maj}")
        xi2 = u01(key, ctx, idx)
        idx += 1
        if xi2 * maj < s.extinction:
            stats.real_collisions += 1
            return TrackingEvent(EventKind.SCATTER, t, s), idx, ns
        stats.null_collisions += 1


def woodcock_track(scene: Scene, method: TraversalMethod,
                   sampler: SamplerKind, ray: Ray, rng: RngStream,
                   stats: Optional[RayStats] = None, ctx: Optional[int] = None,
                   hist=None) -> TrackingEvent:
    """Reference tracker: traverse partitions front to back, sampling
    free flights against each partition's majorant.

    `hist` is an optional bench.HistogramPair fed with this ray's
    partition count and per-partition sample counts.
    """
    _check_combo(method, sampler)
    if stats is None:
        stats = RayStats()
    if ctx is None:
        ctx = ctx_track(0)
    key = rng.key()
    st = _SpanState()
    tf = scene.tf

    def visit(hit) -> bool | None:
        st.parts += 1
        stats.partitions_traversed += 1
        if hit.majorant > 0.0:
            hint = hit.part_id if method == TraversalMethod.ABR_BVH else None
            ev, st.idx, ns = _span(scene, sampler, hint, hit.majorant,
                                   hit.t0, hit.t1, ray.origin, ray.direction,
                                   key, ctx, st.idx, stats, tf)
            if hist is not None and ns >= 1:
                hist.add_partition(ns)
            if ev is not None:
                st.event = ev
                return False
        return None

    traverse_spatial_partitions(scene, method, ray, visit)
    stats.rays += 1
    if hist is not None:
        hist.add_ray(st.parts)
    if st.event is not None:
        return st.event
    return TrackingEvent(EventKind.ESCAPED, ray.tmax, vacuum_sample(tf))


def transmittance(scene: Scene, method: TraversalMethod,
                  sampler: SamplerKind, ray: Ray, rng: RngStream,
                  stats: Optional[RayStats] = None,
                  ctx: Optional[int] = None) -> float:
    """Binary estimator: 1 if the tracker escapes the segment, else 0.

    Unbiased for exp(-integral of extinction) and cheap per ray; variance
    is traded for never evaluating an integral.
    """
    if ctx is None:
        ctx = ctx_shadow(0)
    ev = woodcock_track(scene, method, sampler, ray, rng, stats, ctx)
    return 1.0 if ev.kind == EventKind.ESCAPED else 0.0


# ---------------------------------------------------------------------------
# reference shading modes (python mirrors of _kernels traces)


def trace_dl(scene: Scene, config: RenderConfig, lighting: SceneLighting,
             ray: Ray, rng: RngStream,
             stats: Optional[RayStats] = None) -> np.ndarray:
    """Single scatter plus next-event estimation toward the point light."""
    if stats is None:
        stats = RayStats()
    ambient = np.asarray(lighting.ambient, dtype=np.float64)
    ev = woodcock_track(scene, config.traversal, config.sampler, ray, rng,
                        stats, ctx_track(0))
    if ev.kind == EventKind.ESCAPED:
        return ambient.copy()
    sx = np.empty(3)
    for a in range(3):
        sx[a] = ray.origin[a] + ev.t * ray.direction[a]
    lp = np.asarray(lighting.point_light.position, dtype=np.float64)
    w = lp - sx
    dist = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    if dist <= 0.0:
        return np.zeros(3)
    wn = w * (1.0 / dist)
    tr = transmittance(scene, config.traversal, config.sampler,
                       Ray(sx, wn, 0.0, dist), rng, stats, ctx_shadow(0))
    if tr == 0.0:
        return np.zeros(3)
    intensity = np.asarray(lighting.point_light.intensity, dtype=np.float64)
    scale = INV_4PI / (dist * dist)
    out = np.empty(3)
    for a in range(3):
        out[a] = ev.sample.albedo[a] * intensity[a] * scale
    return out


def trace_ms(scene: Scene, config: RenderConfig, lighting: SceneLighting,
             ray: Ray, rng: RngStream,
             stats: Optional[RayStats] = None) -> np.ndarray:
    """Isotropic multiple scattering with Russian roulette termination."""
    if stats is None:
        stats = RayStats()
    ambient = np.asarray(lighting.ambient, dtype=np.float64)
    thr = np.ones(3)
    cur = ray
    bounce = 0
    while True:
        ev = woodcock_track(scene, config.traversal, config.sampler, cur,
                            rng, stats, ctx_track(bounce))
        if ev.kind == EventKind.ESCAPED:
            out = np.empty(3)
            for a in range(3):
                out[a] = thr[a] * ambient[a]
            return out
        for a in range(3):
            thr[a] = thr[a] * ev.sample.albedo[a]
        scatters = bounce + 1
        if scatters >= config.max_bounces:
            return np.zeros(3)
        if scatters >= config.rr_start:
            p = thr[0]
            if thr[1] > p:
                p = thr[1]
            if thr[2] > p:
                p = thr[2]
            if p < 0.05:
                p = 0.05
            elif p > 0.95:
                p = 0.95
            if rng.uniform(ctx_rr(bounce), 0) > p:
                return np.zeros(3)
            for a in range(3):
                thr[a] = thr[a] / p
        u1 = rng.uniform(ctx_phase(bounce), 0)
        u2 = rng.uniform(ctx_phase(bounce), 1)
        zz = 1.0 - 2.0 * u1
        rr = math.sqrt(max(0.0, 1.0 - zz * zz))
        phi = 2.0 * math.pi * u2
        nxt_o = np.empty(3)
        for a in range(3):
            nxt_o[a] = cur.origin[a] + ev.t * cur.direction[a]
        nxt_d = np.array([rr * math.cos(phi), rr * math.sin(phi), zz])
        cur = Ray(nxt_o, nxt_d, 0.0, math.inf)
        bounce += 1


def trace_pixel(scene: Scene, config: RenderConfig, lighting: SceneLighting,
                ix: int, iy: int, frame: int,
                stats: Optional[RayStats] = None) -> np.ndarray:
    """Reference per-pixel sample: jittered camera ray plus one trace."""
    pix = iy * config.width + ix
    rng = RngStream(config.seed, frame, pix)
    jx = rng.uniform(CTX_CAMERA, 0)
    jy = rng.uniform(CTX_CAMERA, 1)
    ray = config.camera.ray(ix, iy, config.width, config.height, jx, jy)
    if config.mode == "dl":
        return trace_dl(scene, config, lighting, ray, rng, stats)
    return trace_ms(scene, config, lighting, ray, rng, stats)


# ---------------------------------------------------------------------------
# production rendering through the kernels


class Accumulator:
    """Running per-pixel mean/variance plus work counters and histograms.

    Restarts from zero whenever the scene generation moves (TF edits);
    within a generation, frame f draws from RNG stream f, so resuming an
    accumulation is bit-identical to having rendered all frames at once.
    """

    def __init__(self, width: int, height: int, generation: int):
        self.width = width
        self.height = height
        self.generation = generation
        npix = width * height
        self.acc = np.zeros((npix, 3))
        self.accsq = np.zeros((npix, 3))
        self.stats_rows = np.zeros((npix, K.N_STATS), dtype=np.int64)
        self.hist_part = np.zeros((npix, K.N_HIST_BINS), dtype=np.int64)
        self.hist_samp = np.zeros((npix, K.N_HIST_BINS), dtype=np.int64)
        self.err_flags = np.zeros(npix, dtype=np.int64)
        self.frames = 0

    def reset(self, generation: int) -> None:
        self.generation = generation
        self.acc[:] = 0.0
        self.accsq[:] = 0.0
        self.stats_rows[:] = 0
        self.hist_part[:] = 0
        self.hist_samp[:] = 0
        self.err_flags[:] = 0
        self.frames = 0

    @property
    def spp(self) -> int:
        return self.frames

    def image(self) -> np.ndarray:
        if self.frames == 0:
            return np.zeros((self.height, self.width, 3))
        return (self.acc / self.frames).reshape(self.height, self.width, 3)

    def se(self) -> np.ndarray:
        """Per-pixel standard error of the accumulated mean, per channel."""
        n = self.frames
        if n < 2:
            return np.full((self.height, self.width, 3), np.inf)
        mean = self.acc / n
        var = np.maximum(self.accsq / n - mean * mean, 0.0) * (n / (n - 1))
        return np.sqrt(var / n).reshape(self.height, self.width, 3)

    def stats(self) -> RayStats:
        tot = self.stats_rows.sum(axis=0)
        return RayStats(int(tot[K.ST_PARTITIONS]), int(tot[K.ST_SAMPLES]),
                        int(tot[K.ST_NULLS]), int(tot[K.ST_REALS]),
                        int(tot[K.ST_RAYS]))

    def histograms(self) -> tuple[np.ndarray, np.ndarray]:
        return (self.hist_part.sum(axis=0), self.hist_samp.sum(axis=0))


def _raise_kernel_errors(err_flags: np.ndarray) -> None:
    if np.any(err_flags < 0):
        if np.any(err_flags == K.T_ERR_SOUNDNESS):
            raise RuntimeError("majorant soundness violation: sampled "
                               "extinction exceeded the partition majorant")
        raise RuntimeError("kernel capacity exceeded (traversal stack or "
                           "leaf buffer)")


def render_frame(scene: Scene, config: RenderConfig,
                 lighting: Optional[SceneLighting] = None,
                 accum: Optional[Accumulator] = None,
                 frames: int = 1) -> Accumulator:
    """Add `frames` one-sample-per-pixel passes to the accumulator.

    Accumulating k frames one call at a time or in a single call yields
    bit-identical buffers, and results do not depend on the numba thread
    count.
    """
    _check_combo(config.traversal, config.sampler)
    if lighting is None:
        lighting = config.lighting()
    if accum is None:
        accum = Accumulator(config.width, config.height, scene.generation)
    if accum.generation != scene.generation:
        accum.reset(scene.generation)
    if accum.width != config.width or accum.height != config.height:
        raise ValueError("accumulator size does not match config")

    packs = scene.kernel_args(config.traversal, config.sampler)
    eye, right, upv, fwd, tanx, tany = config.camera.basis(config.width,
                                                           config.height)
    lp = lighting.point_light.position
    li = lighting.point_light.intensity
    am = lighting.ambient
    K.render_pass(
        *packs,
        Scene.method_code(config.traversal),
        Scene.sampler_code(config.sampler),
        K.MODE_DL if config.mode == "dl" else K.MODE_MS,
        config.width, config.height,
        eye[0], eye[1], eye[2], right[0], right[1], right[2],
        upv[0], upv[1], upv[2], fwd[0], fwd[1], fwd[2], tanx, tany,
        lp[0], lp[1], lp[2], li[0], li[1], li[2], am[0], am[1], am[2],
        config.max_bounces, config.rr_start, config.seed,
        accum.frames, frames,
        accum.acc, accum.accsq, accum.stats_rows, accum.hist_part,
        accum.hist_samp, accum.err_flags)
    accum.frames += frames
    _raise_kernel_errors(accum.err_flags)
    return accum


def render(scene: Scene, config: RenderConfig,
           lighting: Optional[SceneLighting] = None
           ) -> tuple[np.ndarray, RayStats, Accumulator]:
    """Render config.spp samples per pixel in one kernel pass."""
    accum = render_frame(scene, config, lighting, None, frames=config.spp)
    return accum.image(), accum.stats(), accum


def estimate_transmittance(scene: Scene, method: TraversalMethod,
                           sampler: SamplerKind, origin, direction,
                           t0: float, t1: float, n: int, seed: int = 0
                           ) -> tuple[float, RayStats, np.ndarray, np.ndarray]:
    """Mean of n independent binary transmittance estimates (kernel path).

    Returns (mean, stats, partition histogram, sample histogram).
    """
    _check_combo(method, sampler)
    packs = scene.kernel_args(method, sampler)
    o = np.asarray(origin, dtype=np.float64).reshape(3)
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    out = np.zeros(n)
    stats_rows = np.zeros((n, K.N_STATS), dtype=np.int64)
    hist_part = np.zeros((n, K.N_HIST_BINS), dtype=np.int64)
    hist_samp = np.zeros((n, K.N_HIST_BINS), dtype=np.int64)
    err = np.zeros(n, dtype=np.int64)
    K.transmittance_batch(
        *packs, Scene.method_code(method), Scene.sampler_code(sampler),
        o[0], o[1], o[2], d[0], d[1], d[2], float(t0), float(t1),
        seed, out, stats_rows, hist_part, hist_samp, err)
    _raise_kernel_errors(err)
    tot = stats_rows.sum(axis=0)
    stats = RayStats(int(tot[0]), int(tot[1]), int(tot[2]), int(tot[3]),
                     int(tot[4]))
    return (float(out.mean()), stats, hist_part.sum(axis=0),
            hist_samp.sum(axis=0))
