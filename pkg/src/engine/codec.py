"""Binary ``.hfxd`` database format (all integers little-endian).

    magic "HFXD" | version u32 | flags u8 (bit0: region present)
    k u16 | s_limit i16 | start u32 | state count u32
    accept pair count u32 | (runtime id u32, pattern id u32) * count
    outer table: rows x 256 u32, rows = state count, or 64 + state count - k with a region
    region only: k member original ids u32 | stickiness sum u32 | leakiness f64
                 | T_s 256 x 64 u8 | T_g 256 x 64 u8
    parameters: batch length u32 | sigma u32 | leak threshold f64 | leak depth u32
"""
import hashlib
import logging
import struct
from pathlib import Path
from typing import Dict, Set, Union

import numpy as np
from pydantic import ValidationError

from src.engine.database import (
    FORMAT_VERSION,
    GUTTER_STATE,
    LANES,
    NO_REGION,
    OUTER_BASE,
    EngineParams,
    HybridDb,
    StateRenumbering,
)
from src.errors import (
    BadMagicError,
    CorruptDatabaseError,
    TruncatedDatabaseError,
    UnsupportedVersionError,
)
from src.region.detector import REGION_CAPACITY

logger = logging.getLogger(__name__)

MAGIC = b"HFXD"
FILE_SUFFIX = ".hfxd"
FLAG_REGION = 0x01

_HEADER = struct.Struct("<4sIBHhII")
_U32 = struct.Struct("<I")
_PAIR = struct.Struct("<II")
_PARAMS = struct.Struct("<IIdI")
_REGION_STATS = struct.Struct("<Id")


def serialize(db: HybridDb) -> bytes:
    k = db.region_size if db.has_region else 0
    parts = [
        _HEADER.pack(
            MAGIC,
            db.version,
            FLAG_REGION if db.has_region else 0,
            k,
            db.s_limit,
            db.start,
            db.state_count,
        )
    ]
    pairs = [(state, pid) for state in sorted(db.accepts) for pid in sorted(db.accepts[state])]
    parts.append(_U32.pack(len(pairs)))
    parts.extend(_PAIR.pack(state, pid) for state, pid in pairs)
    parts.append(db.outer.astype("<u4").tobytes())
    if db.has_region:
        parts.append(np.asarray(db.renumbering.members, dtype="<u4").tobytes())
        parts.append(_REGION_STATS.pack(int(db.metadata.get("stickiness_sum", 0)),
                                        float(db.metadata.get("leakiness", 0.0))))
        parts.append(db.shuffle.astype(np.uint8).tobytes())
        parts.append(db.gutter.astype(np.uint8).tobytes())
    params = db.params
    parts.append(_PARAMS.pack(params.batch_length, params.sigma, params.leak_threshold, params.leak_depth))
    return b"".join(parts)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise TruncatedDatabaseError(
                f"database truncated: need {size} bytes at offset {self.offset}, "
                f"have {len(self.payload) - self.offset}"
            )
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, layout: struct.Struct):
        return layout.unpack(self.take(layout.size))


def deserialize(payload: bytes) -> HybridDb:
    reader = _Reader(bytes(payload))
    if len(payload) >= 4 and payload[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(payload[:4])!r}, expected {MAGIC!r}")
    magic, version, flags, k, s_limit, start, state_count = reader.unpack(_HEADER)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported database version {version}")
    if flags & ~FLAG_REGION:
        raise CorruptDatabaseError(f"unknown flag bits {flags:#x}")
    has_region = bool(flags & FLAG_REGION)

    (pair_count,) = reader.unpack(_U32)
    accepts: Dict[int, Set[int]] = {}
    for _ in range(pair_count):
        state, pid = reader.unpack(_PAIR)
        accepts.setdefault(state, set()).add(pid)

    if has_region and not 2 <= k <= REGION_CAPACITY:
        raise CorruptDatabaseError(f"region size {k} out of range")
    if has_region and k > state_count:
        raise CorruptDatabaseError("region larger than the DFA")
    rows = OUTER_BASE + state_count - k if has_region else state_count
    if rows == 0:
        raise CorruptDatabaseError("database has no states")
    outer = np.frombuffer(reader.take(rows * 256 * 4), dtype="<u4").reshape(rows, 256).astype(np.int32)

    renumbering = shuffle = gutter = None
    metadata: Dict[str, float] = {}
    if has_region:
        members = np.frombuffer(reader.take(k * 4), dtype="<u4").astype(np.int64)
        stickiness_sum, leakiness = reader.unpack(_REGION_STATS)
        if not 0.0 <= leakiness <= 1.0:
            raise CorruptDatabaseError(f"region leakiness {leakiness} out of range")
        metadata = {"stickiness_sum": stickiness_sum, "leakiness": leakiness}
        shuffle = np.frombuffer(reader.take(256 * LANES), dtype=np.uint8).reshape(256, LANES).copy()
        gutter = np.frombuffer(reader.take(256 * LANES), dtype=np.uint8).reshape(256, LANES).copy()
        renumbering = _rebuild_renumbering(members, state_count)

    batch_length, sigma, leak_threshold, leak_depth = reader.unpack(_PARAMS)
    if reader.offset != len(reader.payload):
        raise CorruptDatabaseError(f"{len(reader.payload) - reader.offset} trailing bytes")
    try:
        params = EngineParams(batch_length=batch_length, sigma=sigma,
                              leak_threshold=leak_threshold, leak_depth=leak_depth)
    except ValidationError as err:
        raise CorruptDatabaseError(f"invalid parameter block: {err}") from err

    db = HybridDb(
        outer=outer,
        start=start,
        accepts={state: frozenset(ids) for state, ids in accepts.items()},
        params=params,
        renumbering=renumbering,
        shuffle=shuffle,
        gutter=gutter,
        s_limit=s_limit,
        version=version,
        pattern_count=max((max(ids) for ids in accepts.values()), default=-1) + 1,
        metadata=metadata,
    )
    _validate(db, k)
    return db


def _rebuild_renumbering(members: np.ndarray, state_count: int) -> StateRenumbering:
    if len(set(members.tolist())) != len(members) or (members >= state_count).any():
        raise CorruptDatabaseError("region member list is invalid")
    to_runtime = {int(original): runtime for runtime, original in enumerate(members)}
    next_id = OUTER_BASE
    for original in range(state_count):
        if original not in to_runtime:
            to_runtime[original] = next_id
            next_id += 1
    to_original = {runtime: original for original, runtime in to_runtime.items()}
    return StateRenumbering(to_runtime=to_runtime, to_original=to_original, region_size=len(members))


def _validate(db: HybridDb, k: int) -> None:
    rows = db.outer.shape[0]
    if db.has_region != (db.renumbering is not None):
        raise CorruptDatabaseError("region flag does not match s_limit")
    expected_limit = k - 1 if db.renumbering is not None else NO_REGION
    if db.s_limit != expected_limit:
        raise CorruptDatabaseError(f"s_limit {db.s_limit} does not match region size {k}")
    if not db.is_live(db.start):
        raise CorruptDatabaseError(f"start state {db.start} is not a live state")
    for state in db.accepts:
        if not db.is_live(state) or state <= db.s_limit:
            raise CorruptDatabaseError(f"accept state {state} is invalid")
    live_rows = np.array(db.live_states(), dtype=np.int64)
    values = db.outer[live_rows]
    if db.has_region:
        valid = (values <= db.s_limit) | ((values >= OUTER_BASE) & (values < rows))
        if not (db.outer[GUTTER_STATE] == GUTTER_STATE).all():
            raise CorruptDatabaseError("row 63 must be the self-looping sink")
        if not (db.gutter[:, GUTTER_STATE] == GUTTER_STATE).all():
            raise CorruptDatabaseError("gutter lane 63 must hold 63")
        gutter_ok = (db.gutter <= db.s_limit) | (db.gutter == GUTTER_STATE)
        if not gutter_ok.all() or not (db.gutter[:, k:] == GUTTER_STATE).all():
            raise CorruptDatabaseError("gutter table holds out-of-range lanes")
        _validate_lanes(db, k)
    else:
        valid = (values >= 0) & (values < rows)
    if not valid.all():
        raise CorruptDatabaseError("outer table references an invalid state")


def _validate_lanes(db: HybridDb, k: int) -> None:
    """Lane ``s < k`` of T_g and T_s under byte ``b`` must follow outer row ``s``."""
    successors = db.outer[:k].T.astype(np.int64)  # 256 x k
    inside = successors <= db.s_limit
    expected_gutter = np.where(inside, successors, GUTTER_STATE)
    mismatch = np.argwhere(db.gutter[:, :k] != expected_gutter)
    if len(mismatch):
        byte, lane = (int(v) for v in mismatch[0])
        raise CorruptDatabaseError(
            f"gutter table disagrees with the outer table at byte {byte:#04x}, lane {lane}"
        )
    expected_shuffle = np.where(inside, successors, successors & (LANES - 1))
    mismatch = np.argwhere(db.shuffle[:, :k] != expected_shuffle)
    if len(mismatch):
        byte, lane = (int(v) for v in mismatch[0])
        raise CorruptDatabaseError(
            f"shuffle table disagrees with the outer table at byte {byte:#04x}, lane {lane}"
        )


def database_digest(db: HybridDb) -> str:
    return hashlib.sha256(serialize(db)).hexdigest()


def save_database(db: HybridDb, path: Union[str, Path]) -> Path:
    path = Path(path)
    payload = serialize(db)
    path.write_bytes(payload)
    logger.info(f"wrote database {path} ({len(payload)} bytes)")
    return path


def load_database(path: Union[str, Path]) -> HybridDb:
    path = Path(path)
    db = deserialize(path.read_bytes())
    logger.info(f"loaded database {path}: {db.state_count} states, region size {max(db.region_size, 0)}")
    return db
