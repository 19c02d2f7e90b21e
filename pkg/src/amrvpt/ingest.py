"""File formats and synthetic dataset generators.

Cells travel as two files: a fixed 24-byte header plus int32 records
(x, y, z, level), and a separate raw little-endian float32 scalar file.
Keeping geometry and scalars apart lets one geometry carry several
fields. TF and render configs are YAML documents validated strictly
(unknown fields are errors, with the offending path in the message).

Generators evaluate an analytic scalar on a coarse root grid and refine
any cell whose locally sampled value range exceeds the threshold, so the
output is a pure function of the spec. Scalars are quantized to float32
at generation time, which makes save/load round trips exact.
"""

from __future__ import annotations

import math
import struct
from enum import Enum
from pathlib import Path

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .model import CellSet
from .partitions import TransferFunction
from .transport import RenderConfig

MAGIC = b"AMRC"
VERSION = 1
_HEADER = struct.Struct("<4sIQ8x")  # magic, version, cellCount, reserved
_ROOT = 8  # root cells per axis; world extent = _ROOT * 2^refineLevels


# ---------------------------------------------------------------------------
# binary cell + scalar files


def save_cells(cells: CellSet, cells_path, scalars_path) -> None:
    rec = np.empty((len(cells), 4), dtype="<i4")
    if len(cells):
        rec[:, :3] = cells.lower
        rec[:, 3] = cells.level
    with open(cells_path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(cells)))
        f.write(rec.tobytes())
    with open(scalars_path, "wb") as f:
        f.write(cells.scalar.astype("<f4").tobytes())


def load_cells(cells_path, scalars_path) -> CellSet:
    raw = Path(cells_path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{cells_path}: truncated header "
                         f"({len(raw)} bytes, need {_HEADER.size})")
    magic, version, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{cells_path}: bad magic {magic!r}, want {MAGIC!r}")
    if version != VERSION:
        raise ValueError(f"{cells_path}: unsupported version {version}, "
                         f"want {VERSION}")
    want = _HEADER.size + count * 16
    if len(raw) != want:
        raise ValueError(f"{cells_path}: file is {len(raw)} bytes, header "
                         f"promises {want} ({count} cells)")
    rec = np.frombuffer(raw, dtype="<i4", offset=_HEADER.size).reshape(-1, 4)

    sraw = Path(scalars_path).read_bytes()
    if len(sraw) != count * 4:
        raise ValueError(f"{scalars_path}: {len(sraw)} bytes for {count} "
                         "cells; scalars must be one float32 per cell")
    scal = np.frombuffer(sraw, dtype="<f4").astype(np.float64)
    return CellSet(rec[:, :3].astype(np.int64), rec[:, 3].astype(np.int64),
                   scal)


# ---------------------------------------------------------------------------
# YAML documents


class TFDocument(BaseModel):
    model_config = ConfigDict(populate_by_name=True, extra="forbid")
    domain: tuple[float, float]
    rgba: list[tuple[float, float, float, float]] = Field(min_length=2)
    unit_extinction: float = Field(alias="unitExtinction")

    def build(self) -> TransferFunction:
        return TransferFunction(self.domain, np.asarray(self.rgba),
                                self.unit_extinction)


def _load_yaml(path) -> dict:
    with open(path, "r") as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a mapping at top level")
    return doc


def _format_validation_error(path, err: ValidationError) -> ValueError:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return ValueError(f"{path}: " + "; ".join(lines))


def load_tf(path) -> TransferFunction:
    doc = _load_yaml(path)
    try:
        parsed = TFDocument.model_validate(doc)
    except ValidationError as err:
        raise _format_validation_error(path, err) from None
    return parsed.build()


def save_tf(tf: TransferFunction, path) -> None:
    doc = {
        "domain": [tf.domain_lo, tf.domain_hi],
        "rgba": [[float(v) for v in row] for row in tf.rgba],
        "unitExtinction": tf.unit_extinction,
    }
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def load_config(path) -> RenderConfig:
    doc = _load_yaml(path)
    try:
        return RenderConfig.model_validate(doc)
    except ValidationError as err:
        raise _format_validation_error(path, err) from None


def save_config(config: RenderConfig, path) -> None:
    doc = config.model_dump(mode="json", by_alias=True)
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def default_unit_extinction(cells: CellSet) -> float:
    """100 per unit of normalized world space: optical depth O(1-10)
    across typical scenes regardless of lattice extent."""
    extent = float((cells.world_hi - cells.world_lo).max())
    if extent <= 0:
        return 100.0
    return 100.0 / extent


# ---------------------------------------------------------------------------
# synthetic datasets


class SyntheticKind(Enum):
    SPHERE_SHELLS = "sphere-shells"
    TURBULENCE = "turbulence"
    TEAPOT_IN_STADIUM = "teapot-in-stadium"


class SyntheticSpec(BaseModel):
    model_config = ConfigDict(populate_by_name=True, extra="forbid")
    kind: SyntheticKind
    seed: int = 0
    refine_levels: int = Field(3, ge=1, le=6, alias="refineLevels")
    gradient_threshold: float = Field(0.1, gt=0.0, alias="gradientThreshold")


def _hash01(ix, iy, iz, seed: int):
    """Lattice hash to [0,1): integer mixing, stable across platforms."""
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
         ^ np.uint64((seed * 0xD1B54A32D192ED03) & 0xFFFFFFFFFFFFFFFF))
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    h = h ^ (h >> np.uint64(31))
    return (h >> np.uint64(11)) * (1.0 / 9007199254740992.0)


def _value_noise(p: np.ndarray, freq: float, seed: int) -> np.ndarray:
    """Trilinear lattice value noise in [0,1), p normalized (N,3)."""
    q = p * freq
    i0 = np.floor(q).astype(np.int64)
    f = q - i0
    # quintic fade keeps gradients continuous across lattice planes
    w = f * f * f * (f * (f * 6.0 - 15.0) + 10.0)
    out = np.zeros(len(p))
    for dx in range(2):
        for dy in range(2):
            for dz in range(2):
                c = _hash01(i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz, seed)
                wgt = ((w[:, 0] if dx else 1.0 - w[:, 0])
                       * (w[:, 1] if dy else 1.0 - w[:, 1])
                       * (w[:, 2] if dz else 1.0 - w[:, 2]))
                out += c * wgt
    return out


def _field_sphere_shells(p: np.ndarray, seed: int) -> np.ndarray:
    d = np.linalg.norm(p - 0.5, axis=1)
    return 0.5 + 0.5 * np.sin(8.0 * math.pi * d)


def _field_turbulence(p: np.ndarray, seed: int) -> np.ndarray:
    out = np.zeros(len(p))
    amp = 1.0
    norm = 0.0
    for octave in range(3):
        out += amp * _value_noise(p, 4.0 * (1 << octave), seed + octave)
        norm += amp
        amp *= 0.5
    return out / norm


_TEAPOT_CENTER = np.array([0.35, 0.45, 0.55])
_TEAPOT_R = 0.11

# every level-0 cell lands inside this ball (normalized coords); its
# volume is 0.92% of the domain, so the dataset is deliberately
# degenerate: nearly all cells concentrated in under 1% of space
TEAPOT_FOCUS_CENTER = _TEAPOT_CENTER
TEAPOT_FOCUS_RADIUS = 0.13


def _field_teapot(p: np.ndarray, seed: int) -> np.ndarray:
    # smooth stadium: one gentle ramp, never enough range to refine
    background = 0.3 + 0.2 * p[:, 0]
    d = np.linalg.norm(p - _TEAPOT_CENTER, axis=1)
    # window fades over [0.7r, 1.1r] so all detail sits well inside
    # the focus ball even after refinement spills one cell outward
    t = np.clip((1.1 * _TEAPOT_R - d) / (0.4 * _TEAPOT_R), 0.0, 1.0)
    window = t * t * (3.0 - 2.0 * t)
    detail = 0.5 * np.sin(60.0 * math.pi * d + seed % 97)
    return background + window * detail


_FIELDS = {
    SyntheticKind.SPHERE_SHELLS: _field_sphere_shells,
    SyntheticKind.TURBULENCE: _field_turbulence,
    SyntheticKind.TEAPOT_IN_STADIUM: _field_teapot,
}

# per-axis sample offsets for the local range estimate
_PROBE_1D = np.array([0.0, 0.5, 1.0])
_PROBE = np.stack(np.meshgrid(_PROBE_1D, _PROBE_1D, _PROBE_1D,
                              indexing="ij"), axis=-1).reshape(-1, 3)


def generate(spec: SyntheticSpec) -> CellSet:
    """Refine a coarse root grid wherever the field varies too much.

    Returns a validated CellSet covering [0, 8·2^L)^3 in finest units.
    """
    level = spec.refine_levels
    extent = _ROOT << level
    field = _FIELDS[spec.kind]

    ax = np.arange(_ROOT, dtype=np.int64) << level
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
    lowers = g.reshape(-1, 3)

    out_lower = []
    out_level = []
    out_value = []
    for lvl in range(level, -1, -1):
        if len(lowers) == 0:
            break
        width = 1 << lvl
        if lvl == 0:
            refine = np.zeros(len(lowers), dtype=bool)
        else:
            probes = (lowers[:, None, :] + _PROBE[None, :, :] * width)
            vals = field(probes.reshape(-1, 3) / extent, spec.seed)
            vals = vals.reshape(len(lowers), -1)
            local_range = vals.max(axis=1) - vals.min(axis=1)
            refine = local_range > spec.gradient_threshold
        keep = lowers[~refine]
        if len(keep):
            centers = (keep + 0.5 * width) / extent
            v = field(centers, spec.seed).astype(np.float32)
            out_lower.append(keep)
            out_level.append(np.full(len(keep), lvl, dtype=np.int64))
            out_value.append(v.astype(np.float64))
        split = lowers[refine]
        if len(split) == 0:
            lowers = np.empty((0, 3), dtype=np.int64)
            continue
        half = width >> 1
        offs = np.stack(np.meshgrid([0, half], [0, half], [0, half],
                                    indexing="ij"), axis=-1).reshape(-1, 3)
        lowers = (split[:, None, :] + offs[None, :, :]).reshape(-1, 3)

    lower = np.concatenate(out_lower)
    lev = np.concatenate(out_level)
    val = np.concatenate(out_value)
    return CellSet(lower, lev, val,
                   world_lo=(0, 0, 0), world_hi=(extent,) * 3,
                   num_levels=level + 1)
