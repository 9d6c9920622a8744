"""HTTP surface of the engine.

JSON API over one engine instance: batch event ingestion, per-user stage
timelines, a server-sent-events stream of decisions (resumable by last seen
decision id), and analyst acknowledgments that can override the recommended
action.  A static token guards everything except the health probe when
configured.
"""

from __future__ import annotations

import asyncio
import json
from typing import Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Query, Request
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .engine import AdmissionError, Decision, Engine
from .events import ParseError, Vocabulary, VocabularyError, parse_event_line
from .rewards import ACTIONS

STREAM_POLL_S = 0.05


class AckBody(BaseModel):
    action: str
    analyst: str


def _decision_doc(d: Decision) -> dict:
    doc = d.to_json()
    doc["ack"] = (
        {"action": d.ack_action, "analyst": d.ack_analyst, "override": d.ack_action != d.action}
        if d.ack_action is not None
        else None
    )
    return doc


def create_app(
    engine: Engine,
    vocab: Vocabulary | None = None,
    map_unknown: bool = False,
) -> FastAPI:
    vocab = vocab or Vocabulary.default()
    app = FastAPI(title="stagewatch", version="0.1.0")

    def check_token(x_auth_token: Optional[str] = Header(default=None)):
        token = engine.config.api_token
        if token and x_auth_token != token:
            raise HTTPException(status_code=401, detail="invalid or missing token")

    guarded = [Depends(check_token)]

    @app.post("/events", status_code=202, dependencies=guarded)
    async def post_events(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError as e:
            raise HTTPException(status_code=400, detail=f"invalid JSON body: {e.msg}")
        if not isinstance(body, list):
            raise HTTPException(status_code=400, detail="body must be an array of event records")
        events = []
        for i, rec in enumerate(body):
            try:
                events.append(
                    parse_event_line(json.dumps(rec), vocab, map_unknown=map_unknown, offset=i)
                )
            except (ParseError, VocabularyError) as e:
                raise HTTPException(status_code=400, detail=str(e))
        decisions = 0
        with engine.lock:
            for e in events:
                try:
                    if engine.ingest(e.without_annotations()) is not None:
                        decisions += 1
                except AdmissionError as e:
                    raise HTTPException(status_code=503, detail=str(e))
        return {"accepted": len(events), "decisions": decisions}

    @app.get("/users/{user}/timeline", dependencies=guarded)
    def get_timeline(user: str):
        with engine.lock:
            timeline = [
                {
                    "decision_id": d.decision_id,
                    "time": d.time,
                    "stage_estimate": d.stage_estimate,
                    "confidence": d.confidence,
                    "action": d.action,
                }
                for d in engine.timeline(user)
            ]
        return {"user": user, "timeline": timeline}

    @app.get("/decisions/stream", dependencies=guarded)
    async def stream_decisions(
        request: Request,
        after: Optional[str] = Query(default=None),
        limit: Optional[int] = Query(default=None, ge=1),
        idle_timeout: Optional[float] = Query(default=None, gt=0),
        last_event_id: Optional[str] = Header(default=None),
    ):
        """SSE decision feed.  `after` (or Last-Event-ID) resumes past the
        given decision; `limit`/`idle_timeout` let one-shot consumers get a
        finite response instead of an open-ended stream."""
        resume_from = after or last_event_id

        async def generate():
            pos = 0
            if resume_from is not None:
                with engine.lock:
                    for i, d in enumerate(engine.decision_history):
                        if d.decision_id == resume_from:
                            pos = i + 1
                            break
            sent = 0
            idle = 0.0
            while True:
                with engine.lock:
                    pending = engine.decision_history[pos:]
                for d in pending:
                    payload = json.dumps(_decision_doc(d), sort_keys=True)
                    yield f"id: {d.decision_id}\ndata: {payload}\n\n"
                    sent += 1
                    if limit is not None and sent >= limit:
                        return
                pos += len(pending)
                idle = 0.0 if pending else idle + STREAM_POLL_S
                if idle_timeout is not None and idle >= idle_timeout:
                    return
                if await request.is_disconnected():
                    return
                await asyncio.sleep(STREAM_POLL_S)

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.get("/decisions/{decision_id}", dependencies=guarded)
    def get_decision(decision_id: str):
        with engine.lock:
            d = engine.get_decision(decision_id)
        if d is None:
            raise HTTPException(status_code=404, detail=f"no decision {decision_id}")
        return _decision_doc(d)

    @app.post("/decisions/{decision_id}/ack", dependencies=guarded)
    def ack_decision(decision_id: str, body: AckBody):
        if body.action not in ACTIONS:
            raise HTTPException(status_code=400, detail=f"unknown action {body.action!r}")
        with engine.lock:
            try:
                d = engine.ack(decision_id, body.action, body.analyst)
            except KeyError:
                raise HTTPException(status_code=404, detail=f"no decision {decision_id}")
        return _decision_doc(d)

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "users": len(engine.channels),
            "events": engine.metrics["events"],
            "decisions": engine.metrics["decisions"],
        }

    @app.exception_handler(Exception)
    async def on_error(request: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    return app


def serve(engine: Engine, host: str = "127.0.0.1", port: int = 8321) -> None:
    """Run the API server until interrupted."""
    import uvicorn

    app = create_app(engine)
    uvicorn.run(app, host=host, port=port, log_level="warning")
