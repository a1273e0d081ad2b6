"""Scalar and hybrid scan loops over a ``HybridDb``.

The scalar engine is the table walk ``s = T[s][c]`` and doubles as the
oracle: the hybrid engine must produce the same final state and the same
ordered match events on every input.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np

from src.engine.database import HybridDb
from src.engine.shuffle import Completed, batch_step, chain2_window, chain_split
from src.errors import StreamMismatchError

logger = logging.getLogger(__name__)

# Chain-2 products are precomputed for a window of batch-aligned offsets; the
# window doubles while batches stay aligned and shrinks back after a replay
MIN_WINDOW_BATCHES = 8
MAX_WINDOW_BATCHES = 2048


class Engine(str, Enum):
    HYBRID = "hybrid"
    SCALAR = "scalar"


@dataclass(frozen=True)
class StreamState:
    state: int
    consumed: int = 0


class MatchEvent(NamedTuple):
    pattern: int
    offset: int  # bytes consumed when the accept state was entered


MatchSink = Callable[[MatchEvent], None]


def initial_state(db: HybridDb) -> StreamState:
    return StreamState(state=db.start, consumed=0)


def scalar_step(db: HybridDb, state: int, byte: int) -> int:
    return db.rows[state][byte]


def scalar_scan(db: HybridDb, state: StreamState, data: bytes, emit: MatchSink) -> StreamState:
    """Per-byte table walk; emits every pattern of each accept state entered."""
    rows = db.rows
    accepts = db.accept_lists
    current = state.state
    for offset, byte in enumerate(data, start=state.consumed + 1):
        current = rows[current][byte]
        matched = accepts.get(current)
        if matched:
            for pattern in matched:
                emit(MatchEvent(pattern, offset))
    return StreamState(state=current, consumed=state.consumed + len(data))


def hybrid_scan(db: HybridDb, state: StreamState, data: bytes, emit: MatchSink,
                *, gutter: bool = True) -> StreamState:
    """Batch inside the hyper region, walk the table outside it.

    After an escape the bytes from the escape position on are replayed with
    the full table, starting at the last in-region state, until the walk has
    left the region; batching resumes once it comes back.
    """
    if not db.has_region:
        return scalar_scan(db, state, data, emit)
    data = bytes(data)
    rows = db.rows
    accepts = db.accept_lists
    limit = db.s_limit
    length = db.batch_length
    head = chain_split(length)
    size = len(data)
    base = state.consumed

    current = state.state
    pos = 0
    replay_end = -1
    window_start = 0
    window_batches = MIN_WINDOW_BATCHES // 2
    products = np.empty((0, 0), dtype=np.uint8)
    while pos < size:
        if current > limit or size - pos < length or pos < replay_end:
            current = rows[current][data[pos]]
            pos += 1
            if current > limit:
                replay_end = -1
                matched = accepts.get(current)
                if matched:
                    for pattern in matched:
                        emit(MatchEvent(pattern, base + pos))
            continue

        tail_at = pos + head
        slot, misaligned = divmod(tail_at - window_start, length)
        if misaligned or not 0 <= slot < len(products):
            if misaligned:
                window_batches = MIN_WINDOW_BATCHES
            else:
                window_batches = min(window_batches * 2, MAX_WINDOW_BATCHES)
            window_start, slot = tail_at, 0
            products = chain2_window(db, data[tail_at:tail_at + window_batches * length], gutter, stride=length)
        outcome = batch_step(db, current, data[pos:pos + length], gutter=gutter,
                             tail_product=products[slot])
        if isinstance(outcome, Completed):
            current = outcome.state
            pos += length
        else:
            replay_end = pos + length
            pos += outcome.index - 1
            current = outcome.replay_state
    return StreamState(state=current, consumed=base + size)


def run_engine(db: HybridDb, state: StreamState, data: bytes, emit: MatchSink,
               engine: Engine = Engine.HYBRID, gutter: bool = True) -> StreamState:
    if Engine(engine) == Engine.SCALAR:
        return scalar_scan(db, state, data, emit)
    return hybrid_scan(db, state, data, emit, gutter=gutter)


def scan_stream(db: HybridDb, prior: StreamState, chunk: bytes, emit: MatchSink,
                engine: Engine = Engine.HYBRID, gutter: bool = True) -> StreamState:
    """Continue a stream with the next chunk; offsets stay absolute."""
    if not db.is_live(prior.state):
        raise StreamMismatchError(f"state {prior.state} does not belong to this database")
    return run_engine(db, prior, chunk, emit, engine, gutter)


def scan_bytes(db: HybridDb, data: bytes, engine: Engine = Engine.HYBRID,
               gutter: bool = True,
               state: Optional[StreamState] = None) -> Tuple[StreamState, List[MatchEvent]]:
    """Scan one buffer and collect its events."""
    events: List[MatchEvent] = []
    final = run_engine(db, state or initial_state(db), data, events.append, engine, gutter)
    return final, events
