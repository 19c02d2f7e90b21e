"""Frame-streaming service: datasets over HTTP, steering over a socket.

One websocket connection owns one session: its own Scene, config, and
accumulator. Inbound edits are queued by a reader task and applied by
the render loop between passes, so every pass reflects exactly one
configuration and every applied message bumps the generation exactly
once. Outbound frames go through a latest-wins slot: a slow client
skips intermediate frames but never sees them reordered.
"""

from __future__ import annotations

import asyncio
import base64
import threading
import time
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, Query, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, ConfigDict, Field, ValidationError, \
    field_validator

from . import _kernels as K
from .bench import png_bytes
from .engine import Scene, _check_combo
from .ingest import SyntheticKind, SyntheticSpec, TFDocument, \
    default_unit_extinction, generate
from .model import CellSet
from .partitions import TransferFunction
from .sampling import SamplerKind
from .transport import CameraModel, RenderConfig, _parse_traversal, \
    render_frame
from .traversal import TraversalMethod

PROTOCOL_VERSION = 1
_MAX_PASS_FRAMES = 32


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetEntry:
    name: str
    cells: CellSet
    tf: TransferFunction
    grid_dims: tuple[int, int, int] = (32, 32, 32)

    def descriptor(self) -> dict:
        vr = self.cells.value_range()
        return {
            "name": self.name,
            "cells": len(self.cells),
            "levels": self.cells.num_levels,
            "worldBounds": {"lo": [int(v) for v in self.cells.world_lo],
                            "hi": [int(v) for v in self.cells.world_hi]},
            "valueRange": [float(vr[0]), float(vr[1])],
            "defaultTf": {
                "domain": [self.tf.domain_lo, self.tf.domain_hi],
                "rgba": [[float(v) for v in row] for row in self.tf.rgba],
                "unitExtinction": self.tf.unit_extinction,
            },
        }


class DatasetRegistry:
    def __init__(self):
        self._entries: dict[str, DatasetEntry] = {}

    def register(self, name: str, cells: CellSet, tf: TransferFunction,
                 grid_dims=(32, 32, 32)) -> None:
        self._entries[name] = DatasetEntry(name, cells, tf,
                                           tuple(grid_dims))

    def names(self) -> list[str]:
        return list(self._entries)

    def get(self, name: str) -> DatasetEntry:
        if name not in self._entries:
            known = ", ".join(self._entries) or "<none>"
            raise KeyError(f"unknown dataset {name!r} (have: {known})")
        return self._entries[name]

    def descriptors(self) -> list[dict]:
        return [e.descriptor() for e in self._entries.values()]


def _ramp_tf(cells: CellSet) -> TransferFunction:
    lo, hi = cells.value_range()
    if hi <= lo:
        lo, hi = lo - 0.5, lo + 0.5
    pad = 0.05 * (hi - lo)
    return TransferFunction((lo - pad, hi + pad),
                            [[0.1, 0.2, 0.9, 0.0],
                             [0.9, 0.6, 0.2, 0.35],
                             [1.0, 1.0, 1.0, 0.9]],
                            default_unit_extinction(cells))


def default_registry() -> DatasetRegistry:
    reg = DatasetRegistry()
    for name, kind, levels in (
            ("teapot-in-stadium", SyntheticKind.TEAPOT_IN_STADIUM, 3),
            ("sphere-shells", SyntheticKind.SPHERE_SHELLS, 2),
            ("turbulence", SyntheticKind.TURBULENCE, 2)):
        cells = generate(SyntheticSpec(kind=kind, seed=7,
                                       refineLevels=levels))
        reg.register(name, cells, _ramp_tf(cells))
    return reg


# ---------------------------------------------------------------------------
# wire schemas


class MethodPayload(BaseModel):
    model_config = ConfigDict(populate_by_name=True, extra="forbid")
    traversal: TraversalMethod
    sampler: SamplerKind

    @field_validator("traversal", mode="before")
    @classmethod
    def _traversal_alias(cls, v):
        return _parse_traversal(v)


class ModePayload(BaseModel):
    model_config = ConfigDict(extra="forbid")
    mode: Literal["dl", "ms"]


class GridDimsPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")
    dims: tuple[int, int, int]


class Envelope(BaseModel):
    model_config = ConfigDict(extra="forbid")
    v: int = PROTOCOL_VERSION
    type: str
    payload: dict = Field(default_factory=dict)


def _validation_reply(kind: str, err: ValidationError) -> dict:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"])
        parts.append(f"{kind}.{loc}: {e['msg']}" if loc
                     else f"{kind}: {e['msg']}")
    return _error("; ".join(parts))


def _error(message: str) -> dict:
    return {"v": PROTOCOL_VERSION, "type": "error", "message": message}


# ---------------------------------------------------------------------------
# session


class Session:
    """One steered renderer: scene + config + progressive accumulator."""

    def __init__(self, entry: DatasetEntry, config: RenderConfig,
                 target_spp: int = 1024):
        self.scene = Scene(entry.cells, entry.tf,
                           grid_dims=entry.grid_dims, name=entry.name)
        self.config = config.model_copy(deep=True)
        self.target_spp = target_spp
        self.generation = 1
        self.accum = None
        self._prev_rows = None
        self._prev_hist = None

    # -- message handling (called between render passes) ----------------

    def handle_message(self, raw) -> dict:
        """Apply one envelope; returns the ack or error reply."""
        if not isinstance(raw, dict):
            return _error("message must be a JSON object")
        try:
            env = Envelope.model_validate(raw)
        except ValidationError as err:
            return _validation_reply("message", err)
        if env.v != PROTOCOL_VERSION:
            return _error(f"unsupported protocol version {env.v}")
        handler = getattr(self, f"_apply_{env.type}", None)
        if handler is None:
            return _error(f"unknown message type {env.type!r}")
        try:
            handler(env.payload)
        except ValidationError as err:
            return _validation_reply(env.type, err)
        except ValueError as err:
            return _error(f"{env.type}: {err}")
        self.generation += 1
        self._reset_accumulation()
        return {"v": PROTOCOL_VERSION, "type": "ack", "applied": env.type,
                "generation": self.generation}

    def _reset_accumulation(self) -> None:
        self.accum = None
        self._prev_rows = None
        self._prev_hist = None

    def _apply_camera(self, payload: dict) -> None:
        self.config.camera = CameraModel.model_validate(payload)

    def _apply_tf(self, payload: dict) -> None:
        tf = TFDocument.model_validate(payload).build()
        # classification only: build counters stay put, geometry persists
        self.scene.set_transfer_function(tf)

    def _apply_method(self, payload: dict) -> None:
        msg = MethodPayload.model_validate(payload)
        _check_combo(msg.traversal, msg.sampler)
        self.config.traversal = msg.traversal
        self.config.sampler = msg.sampler

    def _apply_mode(self, payload: dict) -> None:
        self.config.mode = ModePayload.model_validate(payload).mode

    def _apply_gridDims(self, payload: dict) -> None:
        dims = GridDimsPayload.model_validate(payload).dims
        if min(dims) < 1 or max(dims) > 512:
            raise ValueError("dims: each axis must be in [1, 512]")
        self.scene.set_grid_dims(dims)

    # -- rendering -------------------------------------------------------

    @property
    def spp(self) -> int:
        return self.accum.spp if self.accum is not None else 0

    def done(self) -> bool:
        return self.spp >= self.target_spp

    def render_pass(self) -> tuple[dict, dict]:
        """One accumulation pass; returns (frame message, stats message)."""
        gen = self.generation
        frames = 1 if self.accum is None else min(self.accum.frames,
                                                  _MAX_PASS_FRAMES,
                                                  self.target_spp - self.spp)
        t0 = time.perf_counter()
        self.accum = render_frame(self.scene, self.config, None, self.accum,
                                  frames=frames)
        dt = time.perf_counter() - t0

        rows = self.accum.stats_rows.sum(axis=0)
        hp, hs = self.accum.histograms()
        if self._prev_rows is not None:
            d_rows = rows - self._prev_rows
            d_hp = hp - self._prev_hist[0]
            d_hs = hs - self._prev_hist[1]
        else:
            d_rows, d_hp, d_hs = rows, hp, hs
        self._prev_rows = rows
        self._prev_hist = (hp.copy(), hs.copy())

        rays = int(d_rows[K.ST_RAYS])
        parts = int(d_rows[K.ST_PARTITIONS])
        nulls = int(d_rows[K.ST_NULLS])
        frame_msg = {
            "v": PROTOCOL_VERSION,
            "type": "frame",
            "generation": gen,
            "spp": self.accum.spp,
            "width": self.config.width,
            "height": self.config.height,
            "encoding": "png",
            "data": base64.b64encode(png_bytes(self.accum.image())).decode(),
        }
        stats_msg = {
            "v": PROTOCOL_VERSION,
            "type": "stats",
            "generation": gen,
            "spp": self.accum.spp,
            "rays": rays,
            "raysPerSecond": rays / dt if dt > 0 else 0.0,
            "meanPartitionsPerRay": parts / rays if rays else 0.0,
            "meanNullCollisions": nulls / rays if rays else 0.0,
            "histograms": {
                "partitionsPerRay": [int(x) for x in d_hp],
                "samplesPerPartition": [int(x) for x in d_hs],
            },
        }
        return frame_msg, stats_msg


# ---------------------------------------------------------------------------
# outbound slot: latest frame wins, order preserved


class _FrameSlot:
    def __init__(self):
        self._latest: Optional[tuple[dict, dict]] = None
        self._event = asyncio.Event()
        self.dropped = 0

    def put(self, item: tuple[dict, dict]) -> None:
        if self._latest is not None:
            self.dropped += 1
        self._latest = item
        self._event.set()

    async def take(self) -> tuple[dict, dict]:
        await self._event.wait()
        item = self._latest
        self._latest = None
        self._event.clear()
        return item


# ---------------------------------------------------------------------------
# app


def create_app(registry: DatasetRegistry | None = None,
               default_config: RenderConfig | None = None,
               target_spp: int = 1024) -> FastAPI:
    app = FastAPI(title="amrvpt")
    app.state.registry = registry
    app.state.default_config = default_config or RenderConfig(
        width=128, height=128)
    app.state.target_spp = target_spp
    app.state.registry_lock = threading.Lock()

    def _registry() -> DatasetRegistry:
        with app.state.registry_lock:
            if app.state.registry is None:
                app.state.registry = default_registry()
            return app.state.registry

    @app.get("/datasets")
    def datasets():
        return {"v": PROTOCOL_VERSION, "datasets": _registry().descriptors()}

    @app.websocket("/stream")
    async def stream(ws: WebSocket, session: str = Query(...),
                     dataset: str | None = Query(None)):
        reg = _registry()
        names = reg.names()
        if not names:
            await ws.close(code=1008, reason="no datasets registered")
            return
        try:
            entry = reg.get(dataset or names[0])
        except KeyError as err:
            await ws.accept()
            await ws.send_json(_error(str(err)))
            await ws.close(code=1008)
            return
        await ws.accept()
        sess = Session(entry, app.state.default_config, app.state.target_spp)
        await _serve_session(ws, sess)

    return app


async def _reader(ws: WebSocket, queue: asyncio.Queue) -> None:
    try:
        while True:
            try:
                msg = await ws.receive_json()
            except ValueError:
                msg = "<invalid json>"
            await queue.put(msg)
    except WebSocketDisconnect:
        await queue.put(None)
    except RuntimeError:
        await queue.put(None)


async def _sender(ws: WebSocket, slot: _FrameSlot) -> None:
    try:
        while True:
            frame_msg, stats_msg = await slot.take()
            await ws.send_json(frame_msg)
            await ws.send_json(stats_msg)
    except (WebSocketDisconnect, RuntimeError):
        return


async def _serve_session(ws: WebSocket, sess: Session) -> None:
    queue: asyncio.Queue = asyncio.Queue()
    slot = _FrameSlot()
    reader = asyncio.create_task(_reader(ws, queue))
    sender = asyncio.create_task(_sender(ws, slot))
    try:
        while True:
            if sess.done():
                msg = await queue.get()  # idle: wait for steering
                if msg is None:
                    return
                await ws.send_json(sess.handle_message(msg))
            # apply any queued edits between passes, in arrival order
            while not queue.empty():
                msg = queue.get_nowait()
                if msg is None:
                    return
                await ws.send_json(sess.handle_message(msg))
            if sess.done():
                continue
            item = await asyncio.to_thread(sess.render_pass)
            slot.put(item)
            # let the sender flush before the next pass when idle
            await asyncio.sleep(0)
    except (WebSocketDisconnect, RuntimeError):
        pass
    finally:
        reader.cancel()
        sender.cancel()


app = create_app()
