"""Binary cell files, YAML documents, and synthetic generators."""

import math
import struct

import numpy as np
import pytest

from amrvpt.ingest import (
    TEAPOT_FOCUS_CENTER,
    TEAPOT_FOCUS_RADIUS,
    SyntheticKind,
    SyntheticSpec,
    default_unit_extinction,
    generate,
    load_cells,
    load_config,
    load_tf,
    save_cells,
    save_config,
    save_tf,
)
from amrvpt.model import CellSet
from amrvpt.partitions import TransferFunction
from amrvpt.transport import RenderConfig


def _tiny_cells() -> CellSet:
    lower = np.array([[0, 0, 0], [2, 0, 0], [2, 2, 0], [0, 2, 0],
                      [0, 0, 2], [2, 0, 2], [2, 2, 2], [0, 2, 2]])
    level = np.full(8, 1)
    scalar = np.arange(8, dtype=np.float64) / 8.0
    return CellSet(lower, level, scalar)


# ---------------------------------------------------------------------------
# binary format


def test_header_layout(tmp_path):
    cs = _tiny_cells()
    cp, sp = tmp_path / "c.bin", tmp_path / "s.bin"
    save_cells(cs, cp, sp)
    raw = cp.read_bytes()
    assert raw[:4] == b"AMRC"
    version, = struct.unpack_from("<I", raw, 4)
    count, = struct.unpack_from("<Q", raw, 8)
    assert version == 1
    assert count == 8
    assert raw[16:24] == b"\x00" * 8
    assert len(raw) == 24 + 16 * 8
    # first record: x, y, z, level as little-endian int32
    assert struct.unpack_from("<4i", raw, 24) == (0, 0, 0, 1)
    assert len(sp.read_bytes()) == 4 * 8


def test_round_trip_identity(tmp_path):
    cs = generate(SyntheticSpec(kind=SyntheticKind.TURBULENCE, seed=3,
                                refineLevels=2))
    cp, sp = tmp_path / "c.bin", tmp_path / "s.bin"
    save_cells(cs, cp, sp)
    back = load_cells(cp, sp)
    assert np.array_equal(back.lower, cs.lower)
    assert np.array_equal(back.level, cs.level)
    # generators quantize to float32, so scalars survive bit-exactly
    assert np.array_equal(back.scalar, cs.scalar)


def test_empty_file_round_trip(tmp_path):
    cs = CellSet(np.empty((0, 3), np.int64), np.empty(0, np.int64),
                 np.empty(0))
    cp, sp = tmp_path / "c.bin", tmp_path / "s.bin"
    save_cells(cs, cp, sp)
    assert cp.stat().st_size == 24
    back = load_cells(cp, sp)
    assert len(back) == 0


def test_rejects_bad_magic(tmp_path):
    cp, sp = tmp_path / "c.bin", tmp_path / "s.bin"
    cp.write_bytes(b"NOPE" + b"\x00" * 20)
    sp.write_bytes(b"")
    with pytest.raises(ValueError, match="magic"):
        load_cells(cp, sp)


def test_rejects_bad_version(tmp_path):
    cp, sp = tmp_path / "c.bin", tmp_path / "s.bin"
    cp.write_bytes(struct.pack("<4sIQ8x", b"AMRC", 2, 0))
    sp.write_bytes(b"")
    with pytest.raises(ValueError, match="version"):
        load_cells(cp, sp)


def test_rejects_length_mismatch(tmp_path):
    cp, sp = tmp_path / "c.bin", tmp_path / "s.bin"
    # header promises 3 cells but carries 2 records
    cp.write_bytes(struct.pack("<4sIQ8x", b"AMRC", 1, 3) + b"\x00" * 32)
    sp.write_bytes(b"\x00" * 12)
    with pytest.raises(ValueError, match="3 cells"):
        load_cells(cp, sp)


def test_rejects_scalar_count_mismatch(tmp_path):
    cs = _tiny_cells()
    cp, sp = tmp_path / "c.bin", tmp_path / "s.bin"
    save_cells(cs, cp, sp)
    sp.write_bytes(sp.read_bytes()[:-4])
    with pytest.raises(ValueError, match="one float32 per cell"):
        load_cells(cp, sp)


def test_rejects_overlap_naming_both_cells(tmp_path):
    cp, sp = tmp_path / "c.bin", tmp_path / "s.bin"
    rec = struct.pack("<4i", 0, 0, 0, 0) * 2
    cp.write_bytes(struct.pack("<4sIQ8x", b"AMRC", 1, 2) + rec)
    sp.write_bytes(struct.pack("<2f", 0.5, 0.5))
    with pytest.raises(ValueError) as exc:
        load_cells(cp, sp)
    assert "index 0" in str(exc.value) and "index 1" in str(exc.value)


# ---------------------------------------------------------------------------
# YAML documents


def test_tf_round_trip(tmp_path):
    tf = TransferFunction((0.0, 1.0),
                          [[0, 0, 0, 0], [0.2, 0.5, 0.9, 0.25],
                           [1, 1, 1, 1]], 40.0)
    p = tmp_path / "tf.yaml"
    save_tf(tf, p)
    back = load_tf(p)
    assert back.domain_lo == tf.domain_lo and back.domain_hi == tf.domain_hi
    assert np.array_equal(back.rgba, tf.rgba)
    assert back.unit_extinction == tf.unit_extinction


def test_tf_rejects_unknown_field(tmp_path):
    p = tmp_path / "tf.yaml"
    p.write_text("domain: [0, 1]\nrgba: [[0,0,0,0],[1,1,1,1]]\n"
                 "unitExtinction: 10\nsmoothing: 3\n")
    with pytest.raises(ValueError, match="smoothing"):
        load_tf(p)


def test_tf_rejects_alpha_out_of_range(tmp_path):
    p = tmp_path / "tf.yaml"
    p.write_text("domain: [0, 1]\nrgba: [[0,0,0,0],[1,1,1,1.5]]\n"
                 "unitExtinction: 10\n")
    with pytest.raises(ValueError):
        load_tf(p)


def test_tf_requires_unit_extinction(tmp_path):
    p = tmp_path / "tf.yaml"
    p.write_text("domain: [0, 1]\nrgba: [[0,0,0,0],[1,1,1,1]]\n")
    with pytest.raises(ValueError, match="unitExtinction"):
        load_tf(p)


def test_config_round_trip(tmp_path):
    cfg = RenderConfig(traversal="grid-bvh", sampler="ext-brick", mode="ms",
                       spp=16, maxBounces=5, seed=9, width=32, height=24)
    p = tmp_path / "render.yaml"
    save_config(cfg, p)
    assert load_config(p) == cfg


def test_config_normalizes_abr_spelling(tmp_path):
    p = tmp_path / "render.yaml"
    p.write_text("traversal: abr\nsampler: abr-direct\nmode: dl\nspp: 4\n")
    cfg = load_config(p)
    assert cfg.traversal.value == "abr-bvh"


def test_config_rejects_unknown_field_with_path(tmp_path):
    p = tmp_path / "render.yaml"
    p.write_text("traversal: grid-dda\nsampler: abr\nmode: dl\nspp: 1\n"
                 "camera:\n  position: [0, 0, -5]\n  twist: 3\n")
    with pytest.raises(ValueError, match=r"camera\.twist"):
        load_config(p)


# ---------------------------------------------------------------------------
# generators


@pytest.mark.parametrize("kind", list(SyntheticKind))
def test_generate_is_deterministic(kind):
    spec = SyntheticSpec(kind=kind, seed=11, refineLevels=2)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.lower, b.lower)
    assert np.array_equal(a.level, b.level)
    assert np.array_equal(a.scalar, b.scalar)


@pytest.mark.parametrize("kind", [SyntheticKind.TURBULENCE,
                                  SyntheticKind.TEAPOT_IN_STADIUM])
def test_seed_changes_output(kind):
    a = generate(SyntheticSpec(kind=kind, seed=1, refineLevels=2))
    b = generate(SyntheticSpec(kind=kind, seed=2, refineLevels=2))
    same = (len(a) == len(b) and np.array_equal(a.lower, b.lower)
            and np.array_equal(a.scalar, b.scalar))
    assert not same


@pytest.mark.parametrize("kind", list(SyntheticKind))
def test_cells_tile_domain_exactly(kind):
    cs = generate(SyntheticSpec(kind=kind, seed=5, refineLevels=2))
    extent = int(cs.world_hi[0])
    vol = int(((1 << cs.level).astype(np.int64) ** 3).sum())
    assert vol == extent ** 3  # overlap-freedom is enforced by CellSet


def test_infinite_threshold_keeps_root_grid():
    spec = SyntheticSpec(kind=SyntheticKind.TURBULENCE, seed=0,
                         refineLevels=3, gradientThreshold=float("inf"))
    cs = generate(spec)
    assert len(cs) == 8 ** 3
    assert np.all(cs.level == 3)


def test_refine_levels_bounds():
    with pytest.raises(ValueError):
        SyntheticSpec(kind=SyntheticKind.TURBULENCE, refineLevels=7)
    with pytest.raises(ValueError):
        SyntheticSpec(kind=SyntheticKind.TURBULENCE, refineLevels=0)


def test_sphere_shells_scalar_matches_formula():
    spec = SyntheticSpec(kind=SyntheticKind.SPHERE_SHELLS, seed=0,
                         refineLevels=2)
    cs = generate(spec)
    extent = float(cs.world_hi[0])
    for idx in (0, len(cs) // 2, len(cs) - 1):
        c = (cs.lower[idx] + 0.5 * (1 << cs.level[idx])) / extent
        d = math.sqrt(((c - 0.5) ** 2).sum())
        want = np.float32(0.5 + 0.5 * math.sin(8.0 * math.pi * d))
        assert cs.scalar[idx] == want


def test_teapot_concentrates_fine_cells():
    cs = generate(SyntheticSpec(kind=SyntheticKind.TEAPOT_IN_STADIUM,
                                seed=7, refineLevels=4))
    extent = float(cs.world_hi[0])
    centers = (cs.lower + 0.5 * (1 << cs.level)[:, None]) / extent
    d = np.linalg.norm(centers - TEAPOT_FOCUS_CENTER, axis=1)
    in_focus = (cs.level == 0) & (d <= TEAPOT_FOCUS_RADIUS)
    assert in_focus.sum() / len(cs) >= 0.9
    assert 4.0 / 3.0 * math.pi * TEAPOT_FOCUS_RADIUS ** 3 <= 0.01
    # the focus ball really holds every level-0 cell
    assert np.all(d[cs.level == 0] <= TEAPOT_FOCUS_RADIUS)


def test_default_unit_extinction_scales_with_extent():
    cs = generate(SyntheticSpec(kind=SyntheticKind.TURBULENCE, seed=0,
                                refineLevels=2, gradientThreshold=math.inf))
    assert default_unit_extinction(cs) == 100.0 / 32.0
    empty = CellSet(np.empty((0, 3), np.int64), np.empty(0, np.int64),
                    np.empty(0))
    assert default_unit_extinction(empty) == 100.0
