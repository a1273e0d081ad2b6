import asyncio
import logging
import os
import time
import uuid
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List

from fastapi import Depends, FastAPI, File, Form, HTTPException, Request, UploadFile
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from src.app.reports import render_dot
from src.engine.codec import database_digest, load_database
from src.engine.database import HybridDb
from src.engine.scanner import Engine, MatchEvent, StreamState, initial_state, scan_bytes, scan_stream
from src.errors import DatabaseError, StreamMismatchError

logger = logging.getLogger(__name__)

DB_ENV = "SHUFFLESCAN_DB"
MAX_STREAMS = int(os.environ.get("SHUFFLESCAN_MAX_STREAMS", "1024"))
STREAM_IDLE_SECONDS = float(os.environ.get("SHUFFLESCAN_STREAM_IDLE_SECONDS", "600"))

app = FastAPI(
    title="shufflescan",
    description="Multi-pattern byte scanning over a compiled hybrid database",
    version="0.3.0",
)


@dataclass
class OpenStream:
    state: StreamState
    touched: float = field(default_factory=time.monotonic)
    # chunks of one stream are applied one at a time, in arrival order
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)


# open streams: stream id -> state after the last chunk
streams: Dict[str, OpenStream] = {}


def _expire_idle_streams() -> None:
    now = time.monotonic()
    idle = [
        stream_id for stream_id, entry in streams.items()
        if now - entry.touched >= STREAM_IDLE_SECONDS and not entry.lock.locked()
    ]
    for stream_id in idle:
        del streams[stream_id]
    if idle:
        logger.info(f"expired {len(idle)} idle streams")


class Event(BaseModel):
    pattern: int
    offset: int


class ScanResult(BaseModel):
    events: List[Event]
    bytes: int


class StreamResult(ScanResult):
    stream_id: str
    consumed: int


@lru_cache(maxsize=1)
def _load_configured_database(path: str) -> HybridDb:
    return load_database(path)


def get_database() -> HybridDb:
    """Database named by SHUFFLESCAN_DB, loaded once."""
    path = os.environ.get(DB_ENV)
    if not path:
        raise HTTPException(status_code=503, detail=f"{DB_ENV} is not set")
    try:
        return _load_configured_database(path)
    except (OSError, DatabaseError) as e:
        logger.error(f"Error loading database {path}: {e}")
        raise HTTPException(status_code=503, detail=f"database unavailable: {e}")


def _parse_engine(name: str) -> Engine:
    try:
        return Engine(name)
    except ValueError:
        raise HTTPException(status_code=422, detail=f"unknown engine {name!r}")


def _events(events: List[MatchEvent]) -> List[Event]:
    return [Event(pattern=e.pattern, offset=e.offset) for e in events]


# Routes

@app.get("/health")
async def health(db: HybridDb = Depends(get_database)):
    """Liveness plus whether the loaded database batches a region"""
    return {"status": "ok", "region": db.has_region}


@app.get("/database")
async def database_summary(db: HybridDb = Depends(get_database)):
    """Summary of the loaded database"""
    return {
        "states": db.state_count,
        "rows": int(db.outer.shape[0]),
        "region_size": db.region_size if db.has_region else 0,
        "s_limit": db.s_limit,
        "start": db.start,
        "accept_states": len(db.accepts),
        "patterns": db.pattern_count,
        "params": db.params.model_dump(),
        "digest": database_digest(db),
    }


@app.get("/region.dot", response_class=PlainTextResponse)
async def region_dot(db: HybridDb = Depends(get_database)):
    """Graphviz export with the hyper region highlighted"""
    region = db.renumbering.members if db.has_region else ()
    return PlainTextResponse(render_dot(db.to_dfa(), region), media_type="text/vnd.graphviz")


@app.post("/scan", response_model=ScanResult)
async def scan(
    file: UploadFile = File(...),
    engine: str = Form(Engine.HYBRID.value),
    db: HybridDb = Depends(get_database),
):
    """Scan one uploaded buffer from the start state"""
    selected = _parse_engine(engine)
    data = await file.read()
    _, events = await asyncio.to_thread(scan_bytes, db, data, selected)
    return ScanResult(events=_events(events), bytes=len(data))


@app.post("/streams")
async def open_stream(db: HybridDb = Depends(get_database)):
    """Open a stream positioned at the start state"""
    _expire_idle_streams()
    if len(streams) >= MAX_STREAMS:
        logger.warning(f"refusing new stream: {len(streams)} streams open")
        raise HTTPException(status_code=429, detail=f"too many open streams (limit {MAX_STREAMS})")
    stream_id = uuid.uuid4().hex
    streams[stream_id] = OpenStream(state=initial_state(db))
    return {"stream_id": stream_id}


@app.post("/streams/{stream_id}", response_model=StreamResult)
async def feed_stream(
    stream_id: str,
    request: Request,
    engine: str = Engine.HYBRID.value,
    db: HybridDb = Depends(get_database),
):
    """Feed the raw request body as the next chunk; offsets are absolute"""
    entry = streams.get(stream_id)
    if entry is None:
        raise HTTPException(status_code=404, detail=f"unknown stream {stream_id}")
    selected = _parse_engine(engine)
    chunk = await request.body()
    events: List[MatchEvent] = []
    async with entry.lock:
        try:
            state = await asyncio.to_thread(scan_stream, db, entry.state, chunk, events.append, selected)
        except StreamMismatchError as e:
            raise HTTPException(status_code=404, detail=str(e))
        entry.state = state
        entry.touched = time.monotonic()
    return StreamResult(stream_id=stream_id, events=_events(events), bytes=len(chunk), consumed=state.consumed)


@app.delete("/streams/{stream_id}")
async def close_stream(stream_id: str):
    """Forget a stream"""
    if streams.pop(stream_id, None) is None:
        raise HTTPException(status_code=404, detail=f"unknown stream {stream_id}")
    return {"stream_id": stream_id, "closed": True}


# For local development
if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="127.0.0.1", port=8000)
