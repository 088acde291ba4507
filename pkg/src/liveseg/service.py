"""HTTP + WebSocket front for the annotation engine.

One-shot JSON endpoints (/open, /click, /undo, /close, /health) and an
equivalent persistent bidirectional channel at /ws carrying the same
messages tagged with an "op" field.  Masks travel run-length encoded:
alternating run lengths starting with background, row-major over original
image dims.

Sessions serialize their own requests (the engine locks per session);
distinct sessions run concurrently.  A static frontend directory, when
configured, is served under /ui.
"""

from __future__ import annotations

import os
from typing import Optional

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel
from starlette.concurrency import run_in_threadpool
from starlette.staticfiles import StaticFiles

import liveseg
from liveseg.cachefile import CacheFormatError
from liveseg.clickstate import Click
from liveseg.model import configs_to_meta
from liveseg.session import Engine, SessionNotFound


class OpenRequest(BaseModel):
    image_id: str


class ClickRequest(BaseModel):
    session_id: str
    x: int
    y: int
    positive: bool
    token: Optional[str] = None


class UndoRequest(BaseModel):
    session_id: str


class CloseRequest(BaseModel):
    session_id: str


def _click_response(result) -> dict:
    return {
        "mask_rle": result.mask_rle,
        "latency_ms": result.latency_ms,
        "click_count": result.click_count,
        "cold": result.cold,
    }


def build_app(engine: Engine, frontend_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="liveseg", version=liveseg.__version__)

    def do_open(image_id: str) -> dict:
        s = engine.open_session(image_id)
        oh, ow = s.original_dims
        return {"session_id": s.session_id, "width": ow, "height": oh}

    def do_click(req: ClickRequest) -> dict:
        s = engine.get_session(req.session_id)
        result = engine.handle_click(s, Click(req.x, req.y, req.positive), token=req.token)
        return _click_response(result)

    def do_undo(session_id: str) -> dict:
        s = engine.get_session(session_id)
        return _click_response(engine.undo(s))

    def do_close(session_id: str) -> dict:
        engine.get_session(session_id)
        engine.close_session(session_id)
        return {"ok": True}

    def do_health() -> dict:
        cfg = configs_to_meta(engine.bundle.enc_cfg, engine.bundle.dec_cfg)
        cfg["zoom"] = str(engine.zoom)
        cfg["cache_dir"] = engine.cache_dir or ""
        return {"version": liveseg.__version__, "config": cfg}

    @app.post("/open")
    def open_endpoint(req: OpenRequest):
        try:
            return do_open(req.image_id)
        except (SessionNotFound, CacheFormatError) as e:
            raise HTTPException(status_code=404, detail=str(e))

    @app.post("/click")
    def click_endpoint(req: ClickRequest):
        try:
            return do_click(req)
        except SessionNotFound as e:
            raise HTTPException(status_code=404, detail=str(e))
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e))

    @app.post("/undo")
    def undo_endpoint(req: UndoRequest):
        try:
            return do_undo(req.session_id)
        except SessionNotFound as e:
            raise HTTPException(status_code=404, detail=str(e))
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e))

    @app.post("/close")
    def close_endpoint(req: CloseRequest):
        try:
            return do_close(req.session_id)
        except SessionNotFound as e:
            raise HTTPException(status_code=404, detail=str(e))

    @app.get("/health")
    def health_endpoint():
        return do_health()

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        try:
            while True:
                msg = await ws.receive_json()
                op = msg.get("op")
                try:
                    if op == "open":
                        out = await run_in_threadpool(do_open, msg["image_id"])
                    elif op == "click":
                        req = ClickRequest(**{k: v for k, v in msg.items() if k != "op"})
                        out = await run_in_threadpool(do_click, req)
                    elif op == "undo":
                        out = await run_in_threadpool(do_undo, msg["session_id"])
                    elif op == "close":
                        out = await run_in_threadpool(do_close, msg["session_id"])
                    elif op == "health":
                        out = do_health()
                    else:
                        out = {"error": f"unknown op {op!r}"}
                except (SessionNotFound, CacheFormatError, ValueError, KeyError) as e:
                    out = {"error": str(e)}
                out["op"] = op
                await ws.send_json(out)
        except WebSocketDisconnect:
            pass

    if frontend_dir and os.path.isdir(frontend_dir):
        app.mount("/ui", StaticFiles(directory=frontend_dir, html=True), name="ui")

    return app


def serve(engine: Engine, host: str = "127.0.0.1", port: int = 8000,
          frontend_dir: str | None = None) -> None:
    """Run the service; uvicorn's graceful shutdown drains in-flight clicks."""
    import uvicorn

    app = build_app(engine, frontend_dir=frontend_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
