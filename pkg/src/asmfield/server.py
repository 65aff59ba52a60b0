"""WebSocket session server plus static mesh endpoint for the browser client.

Handshake: the client's first message is a session_config object; the server
answers with state_frame tick 0 and then either

  * lockstep mode: one step and one state_frame per received proxy_update
    (deterministic; scripted clients reproduce trace runs exactly), or
  * paced mode (default): a fixed-rate loop in a worker thread that always
    consumes the freshest proxy_update and drops frames when a tick overruns.

Malformed messages produce an error frame and the session continues.
"""

from __future__ import annotations

import asyncio
import threading
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from .affinity import AffinityGrid
from .session import (PacedLoop, ProtocolError, Session, SessionConfig,
                      config_from_wire, decode_message, encode_message,
                      pose_from_wire)

__all__ = ["ServerBundle", "build_app", "serve"]


@dataclass
class ServerBundle:
    grid_a: AffinityGrid
    grid_b: AffinityGrid
    mesh_a_obj: str | None = None
    mesh_b_obj: str | None = None
    base_config: SessionConfig | None = None
    ui_dir: str | None = None


class _Mailbox:
    """Latest-wins slot shared between the socket reader and the tick loop."""

    def __init__(self):
        self._lock = threading.Lock()
        self._item = None

    def put(self, item) -> None:
        with self._lock:
            self._item = item

    def take(self):
        with self._lock:
            item, self._item = self._item, None
            return item


def _error_frame(code: str, text: str) -> str:
    return encode_message({"type": "error", "code": code, "text": text})


async def _run_lockstep(ws: WebSocket, session: Session) -> None:
    while True:
        raw = await ws.receive_text()
        try:
            msg = decode_message(raw)
        except ProtocolError as exc:
            await ws.send_text(_error_frame("bad_message", str(exc)))
            continue
        if msg["type"] != "proxy_update":
            await ws.send_text(_error_frame("unexpected", f"got {msg['type']}"))
            continue
        session.set_proxy(pose_from_wire(msg["pose"]))
        session.step()
        await ws.send_text(encode_message(session.frame()))


async def _run_paced(ws: WebSocket, session: Session) -> None:
    loop = asyncio.get_running_loop()
    mailbox = _Mailbox()
    outbound = _Mailbox()
    frame_ready = asyncio.Event()
    stop = threading.Event()

    def frame_sink(frame: dict) -> None:
        outbound.put(frame)
        loop.call_soon_threadsafe(frame_ready.set)

    runner = PacedLoop(session, proxy_source=mailbox.take, frame_sink=frame_sink)
    worker = threading.Thread(
        target=lambda: runner.run(should_stop=stop.is_set), daemon=True)
    worker.start()

    async def reader() -> None:
        while True:
            raw = await ws.receive_text()
            try:
                msg = decode_message(raw)
            except ProtocolError as exc:
                await ws.send_text(_error_frame("bad_message", str(exc)))
                continue
            if msg["type"] == "proxy_update":
                mailbox.put((int(msg["tick"]), pose_from_wire(msg["pose"])))

    reader_task = asyncio.create_task(reader())
    try:
        while True:
            await frame_ready.wait()
            frame_ready.clear()
            frame = outbound.take()
            if frame is not None:
                await ws.send_text(encode_message(frame))
            if reader_task.done():
                reader_task.result()
    finally:
        stop.set()
        reader_task.cancel()
        worker.join(timeout=2.0)


def build_app(bundle: ServerBundle) -> FastAPI:
    app = FastAPI(title="asmfield session server")

    @app.get("/info")
    def info():
        return JSONResponse({
            "grid_a": {"dims": list(bundle.grid_a.dims),
                       "spacing": bundle.grid_a.spacing},
            "grid_b": {"dims": list(bundle.grid_b.dims),
                       "spacing": bundle.grid_b.spacing},
            "tick_rate": (bundle.base_config or SessionConfig()).tick_rate,
        })

    @app.get("/meshes/{which}.obj")
    def mesh(which: str):
        text = {"a": bundle.mesh_a_obj, "b": bundle.mesh_b_obj}.get(which)
        if text is None:
            return PlainTextResponse("no such mesh", status_code=404)
        return PlainTextResponse(text, media_type="text/plain")

    @app.websocket("/session")
    async def session_ws(ws: WebSocket):
        await ws.accept()
        config = None
        while config is None:
            raw = await ws.receive_text()
            try:
                msg = decode_message(raw)
                if msg["type"] != "session_config":
                    raise ProtocolError("handshake requires a session_config first")
                config = config_from_wire(msg, bundle.base_config)
            except ProtocolError as exc:
                await ws.send_text(_error_frame("bad_handshake", str(exc)))
        session = Session(bundle.grid_a, bundle.grid_b, config)
        await ws.send_text(encode_message(session.frame()))  # tick 0 reply
        try:
            if config.lockstep:
                await _run_lockstep(ws, session)
            else:
                await _run_paced(ws, session)
        except WebSocketDisconnect:
            pass

    if bundle.ui_dir:
        app.mount("/ui", StaticFiles(directory=bundle.ui_dir, html=True), name="ui")
    return app


def serve(bundle: ServerBundle, host: str = "127.0.0.1", port: int = 8787) -> None:
    import uvicorn

    uvicorn.run(build_app(bundle), host=host, port=port, log_level="warning")
