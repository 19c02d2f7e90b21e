"""Streaming service: bootstrap endpoint, steering messages, sessions."""

import numpy as np
import pytest
from starlette.testclient import TestClient
from starlette.websockets import WebSocketDisconnect

from amrvpt.model import CellSet
from amrvpt.partitions import TransferFunction
from amrvpt.service import (
    DatasetRegistry,
    Session,
    create_app,
    default_registry,
)
from amrvpt.transport import RenderConfig


def _full_cube(n, value):
    ax = np.arange(n)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    return CellSet(g, np.zeros(len(g), np.int64),
                   np.full(len(g), float(value)))


def _registry() -> DatasetRegistry:
    reg = DatasetRegistry()
    tf = TransferFunction((0.0, 1.0), [[0.8, 0.4, 0.2, 0.0],
                                       [0.9, 0.9, 0.9, 0.6]], 0.5)
    reg.register("cube", _full_cube(4, 0.5), tf, grid_dims=(4, 4, 4))
    return reg


@pytest.fixture(scope="module")
def client():
    app = create_app(registry=_registry(),
                     default_config=RenderConfig(width=12, height=12,
                                                 traversal="grid-dda",
                                                 sampler="abr"),
                     target_spp=64)
    with TestClient(app) as c:
        yield c


def _drain_until(ws, pred, limit=400):
    """Receive until pred(msg) is true; returns (match, all seen)."""
    seen = []
    for _ in range(limit):
        msg = ws.receive_json()
        seen.append(msg)
        if pred(msg):
            return msg, seen
    raise AssertionError(f"no matching message in {limit}; last: {seen[-3:]}")


# ---------------------------------------------------------------------------
# bootstrap


def test_datasets_endpoint(client):
    r = client.get("/datasets")
    assert r.status_code == 200
    body = r.json()
    assert body["v"] == 1
    (d,) = body["datasets"]
    assert d["name"] == "cube"
    assert d["cells"] == 64
    assert d["worldBounds"] == {"lo": [0, 0, 0], "hi": [4, 4, 4]}
    assert d["defaultTf"]["unitExtinction"] == 0.5


def test_default_registry_contents():
    names = default_registry().names()
    assert names == ["teapot-in-stadium", "sphere-shells", "turbulence"]


def test_unknown_dataset_is_refused(client):
    with client.websocket_connect("/stream?session=s1&dataset=nope") as ws:
        msg = ws.receive_json()
        assert msg["type"] == "error" and "nope" in msg["message"]


def test_missing_session_param_rejects_handshake(client):
    with pytest.raises(WebSocketDisconnect):
        with client.websocket_connect("/stream"):
            pass


# ---------------------------------------------------------------------------
# streaming


def test_frames_progress_and_stats_account(client):
    with client.websocket_connect("/stream?session=s2") as ws:
        frames, stats = [], []
        while len(frames) < 4:
            msg = ws.receive_json()
            if msg["type"] == "frame":
                frames.append(msg)
            elif msg["type"] == "stats":
                stats.append(msg)
        spps = [f["spp"] for f in frames]
        assert spps == sorted(spps) and len(set(spps)) == len(spps)
        assert all(f["generation"] == 1 for f in frames)
        assert all(f["encoding"] == "png" for f in frames)
        assert all(f["width"] == 12 and f["height"] == 12 for f in frames)
        import base64
        assert base64.b64decode(frames[0]["data"])[:8] == \
            b"\x89PNG\r\n\x1a\n"
        for s in stats:
            mass = sum(s["histograms"]["partitionsPerRay"])
            assert mass == s["rays"]


def test_frame_and_stats_share_generation(client):
    with client.websocket_connect("/stream?session=s3") as ws:
        msgs = [ws.receive_json() for _ in range(6)]
        frames = [m for m in msgs if m["type"] == "frame"]
        stats = [m for m in msgs if m["type"] == "stats"]
        for f, s in zip(frames, stats):
            assert f["generation"] == s["generation"]
            assert f["spp"] == s["spp"]


def test_camera_edit_restarts_accumulation(client):
    with client.websocket_connect("/stream?session=s4") as ws:
        first, _ = _drain_until(ws, lambda m: m["type"] == "frame")
        assert first["generation"] == 1
        ws.send_json({"v": 1, "type": "camera",
                      "payload": {"position": [8, 6, 8],
                                  "lookAt": [2, 2, 2]}})
        ack, _ = _drain_until(ws, lambda m: m["type"] == "ack")
        assert ack["applied"] == "camera" and ack["generation"] == 2
        nxt, _ = _drain_until(
            ws, lambda m: m["type"] == "frame" and m["generation"] == 2)
        assert nxt["spp"] == 1


def test_mode_and_method_switch(client):
    with client.websocket_connect("/stream?session=s5") as ws:
        ws.send_json({"type": "mode", "payload": {"mode": "ms"}})
        ack, _ = _drain_until(ws, lambda m: m["type"] == "ack")
        g = ack["generation"]
        ws.send_json({"type": "method",
                      "payload": {"traversal": "abr",
                                  "sampler": "abr-direct"}})
        ack2, _ = _drain_until(ws, lambda m: m["type"] == "ack")
        assert ack2["generation"] == g + 1
        f, _ = _drain_until(
            ws, lambda m: m["type"] == "frame"
            and m["generation"] == g + 1)
        assert f["spp"] == 1


def test_unknown_type_errors_but_session_survives(client):
    with client.websocket_connect("/stream?session=s6") as ws:
        ws.send_json({"type": "warp", "payload": {}})
        err, _ = _drain_until(ws, lambda m: m["type"] == "error")
        assert "warp" in err["message"]
        ws.send_json({"type": "mode", "payload": {"mode": "dl"}})
        ack, _ = _drain_until(ws, lambda m: m["type"] == "ack")
        assert ack["applied"] == "mode"


def test_malformed_payload_names_field(client):
    with client.websocket_connect("/stream?session=s7") as ws:
        ws.send_json({"type": "camera", "payload": {"fovY": -10}})
        err, _ = _drain_until(ws, lambda m: m["type"] == "error")
        assert "camera.fovY" in err["message"]
        ws.send_json({"type": "method",
                      "payload": {"traversal": "grid-dda",
                                  "sampler": "abr-direct"}})
        err2, _ = _drain_until(ws, lambda m: m["type"] == "error")
        assert "abr-bvh" in err2["message"]


def test_wrong_protocol_version_rejected(client):
    with client.websocket_connect("/stream?session=s8") as ws:
        ws.send_json({"v": 2, "type": "mode", "payload": {"mode": "dl"}})
        err, _ = _drain_until(ws, lambda m: m["type"] == "error")
        assert "version" in err["message"]


# ---------------------------------------------------------------------------
# session white-box invariants


def _session(**kw) -> Session:
    entry = _registry().get("cube")
    cfg = RenderConfig(width=8, height=8, traversal="grid-dda",
                       sampler="abr")
    return Session(entry, cfg, **kw)


def test_tf_message_reclassifies_without_rebuilds():
    s = _session()
    s.render_pass()
    builds = s.scene.partition_builds
    table = {"domain": [0.0, 1.0],
             "rgba": [[0.8, 0.4, 0.2, 0.0], [0.9, 0.9, 0.9, 0.6]],
             "unitExtinction": 0.5}
    before = s.scene.grid.majorants.copy()
    reply = s.handle_message({"type": "tf", "payload": table})
    assert reply["type"] == "ack"
    assert reply["generation"] == 2
    # identical table: same majorants, but restart semantics still apply
    assert np.array_equal(s.scene.grid.majorants, before)
    assert s.scene.partition_builds == builds
    assert s.accum is None
    frame, _ = s.render_pass()
    assert frame["spp"] == 1 and frame["generation"] == 2


def test_grid_dims_message_rebuilds_only_grid():
    s = _session()
    kd = s.scene.brick_kd
    bricks = s.scene.bricks
    builds = s.scene.partition_builds
    reply = s.handle_message({"type": "gridDims", "payload": {"dims":
                                                              [2, 2, 2]}})
    assert reply["type"] == "ack"
    assert s.scene.partition_builds == builds + 1
    assert s.scene.brick_kd is kd and s.scene.bricks is bricks
    assert tuple(s.scene.grid.dims) == (2, 2, 2)


def test_grid_dims_bounds_checked():
    s = _session()
    reply = s.handle_message({"type": "gridDims",
                              "payload": {"dims": [0, 4, 4]}})
    assert reply["type"] == "error" and "dims" in reply["message"]


def test_finer_grid_reduces_null_rate():
    from amrvpt.ingest import SyntheticKind, SyntheticSpec, generate
    from amrvpt.service import DatasetEntry, _ramp_tf

    cells = generate(SyntheticSpec(kind=SyntheticKind.TEAPOT_IN_STADIUM,
                                   seed=7, refineLevels=2))
    entry = DatasetEntry("teapot2", cells, _ramp_tf(cells),
                         grid_dims=(1, 1, 1))
    cfg = RenderConfig(width=16, height=16, traversal="grid-dda",
                       sampler="abr", spp=1)
    s = Session(entry, cfg)
    _, coarse = s.render_pass()
    s.handle_message({"type": "gridDims", "payload": {"dims": [32, 32, 32]}})
    _, fine = s.render_pass()
    assert fine["meanNullCollisions"] <= coarse["meanNullCollisions"]
    assert fine["meanNullCollisions"] < coarse["meanNullCollisions"]


def test_target_spp_caps_rendering():
    s = _session(target_spp=3)
    while not s.done():
        frame, _ = s.render_pass()
    assert s.spp == 3  # pass sizing clamps to the target exactly
