"""64-lane permutation primitives and the two-chain batch transition.

``permute64(table, idx)[i] == table[idx[i] % 64]``, the semantics of a
VPERMB-style byte shuffle. A batch of ``l`` bytes is split in two chains:
Chain 1 walks the first ``l // 2`` bytes one state at a time, Chain 2
composes the remaining per-byte gutter vectors into a single vector
without looking at any state, so both can run at once.
"""
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Sequence, Union

import numpy as np

from src.engine.database import GUTTER_STATE, LANES, HybridDb
from src.errors import BatchContractError

Vector64 = np.ndarray

# index of the lowest set bit of every byte value; 8 when no bit is set
_LOWEST_SET_BIT = np.array(
    [(value & -value).bit_length() - 1 if value else 8 for value in range(256)], dtype=np.uint8
)


def permute64(table: Vector64, idx: Vector64) -> Vector64:
    """Vectorized byte shuffle (numpy take with mod-64 index hashing)."""
    return np.asarray(table, dtype=np.uint8)[np.asarray(idx, dtype=np.uint8) & (LANES - 1)]


def permute64_portable(table: Sequence[int], idx: Sequence[int]) -> Vector64:
    """Plain-Python reference for ``permute64``."""
    return np.array([table[i % LANES] for i in idx], dtype=np.uint8)


def identity_vector() -> Vector64:
    return np.arange(LANES, dtype=np.uint8)


def compose_chain(tables: Sequence[Vector64]) -> Vector64:
    """Product of per-byte vectors: ``result[s]`` applies the tables to ``s`` in order."""
    if not len(tables):
        raise ValueError("compose_chain needs at least one table")
    return reduce(lambda acc, table: permute64(table, acc), tables[1:], np.asarray(tables[0], dtype=np.uint8))


def find_earliest_escape(states: Sequence[int], limit: int) -> Optional[int]:
    """1-based index of the first state above ``limit``, or None (linear scan)."""
    for index, state in enumerate(states, start=1):
        if state > limit:
            return index
    return None


def pack_chain_states(s1: int, s2: int, s3: int, s4: int) -> int:
    """Merge four 8-bit lane values into one word, S1 in the lowest byte."""
    return (s1 & 0xFF) ^ ((s2 & 0xFF) << 8) ^ ((s3 & 0xFF) << 16) ^ ((s4 & 0xFF) << 24)


def escape_masks(packed: Union[int, np.ndarray], limit: int) -> np.ndarray:
    """Per-word 8-bit masks flagging the byte lanes whose value exceeds ``limit``.

    Each lane is saturated with min(v, limit + 1) and subtracted from limit;
    the sign bit of the difference is set exactly when v > limit.
    """
    words = np.atleast_1d(np.asarray(packed, dtype="<u4"))
    lanes = words.view(np.uint8).reshape(-1, 4).astype(np.int16)
    saturated = np.minimum(lanes, limit + 1)
    difference = np.int16(limit) - saturated
    flags = (difference.view(np.uint16) >> 15).astype(np.uint8)
    weights = np.array([1, 2, 4, 8], dtype=np.uint8)
    return (flags * weights).sum(axis=1).astype(np.uint8)


def earliest_escape_packed(packed: Union[int, np.ndarray], limit: int) -> np.ndarray:
    """Vectorized earliest escape: 1-based lane index per word, 0 when none escaped."""
    lowest = _LOWEST_SET_BIT[escape_masks(packed, limit)].astype(np.int64) + 1
    return np.where(lowest > 4, 0, lowest)


def find_earliest_escape_vectorized(s1: int, s2: int, s3: int, s4: int, limit: int) -> Optional[int]:
    index = int(earliest_escape_packed(pack_chain_states(s1, s2, s3, s4), limit)[0])
    return index or None


@dataclass(frozen=True)
class Completed:
    state: int


@dataclass(frozen=True)
class Escaped:
    index: int         # 1-based position of the first escaping byte (or the Chain-2 start)
    replay_state: int  # in-region state right before ``index``


BatchOutcome = Union[Completed, Escaped]


def chain_split(batch_length: int) -> int:
    """Number of positions handled by Chain 1."""
    return batch_length // 2


def chain2_product(db: HybridDb, tail: bytes, gutter: bool = True) -> Vector64:
    table = db.gutter if gutter else db.shuffle
    return compose_chain([table[b] for b in tail])


def batch_step(db: HybridDb, s0: int, chunk: bytes, *, gutter: bool = True,
               tail_product: Optional[Vector64] = None) -> BatchOutcome:
    """Advance ``l`` bytes inside the hyper region in one batch.

    With ``gutter=False`` the untrusted T_s vectors are used instead of T_g:
    an escape inside Chain 2 then wraps around modulo 64 and goes unnoticed.
    """
    if not db.has_region:
        raise BatchContractError("database has no hyper region")
    if not 0 <= s0 <= db.s_limit:
        raise BatchContractError(f"batch start state {s0} is outside the region")
    length = db.batch_length
    if len(chunk) != length:
        raise BatchContractError(f"batch needs exactly {length} bytes, got {len(chunk)}")
    limit = db.s_limit
    rows = db.gutter_rows if gutter else db.shuffle_rows
    head = chain_split(length)

    # Chain 1: serial state applications
    chain1 = []
    state = s0
    for byte in chunk[:head]:
        state = rows[byte][state % LANES]
        chain1.append(state)

    # Chain 2: state-independent product of the remaining vectors
    if tail_product is None:
        tail_product = chain2_product(db, chunk[head:], gutter)
    final = int(tail_product[state % LANES])

    if final <= limit and state <= limit:
        return Completed(final)
    escape = _earliest(chain1, limit)
    if escape is not None:
        replay = s0 if escape == 1 else chain1[escape - 2]
        return Escaped(index=escape, replay_state=replay)
    return Escaped(index=head + 1, replay_state=state)


def _earliest(chain1: Sequence[int], limit: int) -> Optional[int]:
    if len(chain1) == 4:
        return find_earliest_escape_vectorized(*chain1, limit)
    return find_earliest_escape(chain1, limit)


def chain2_window(db: HybridDb, data: bytes, gutter: bool = True, stride: int = 1) -> np.ndarray:
    """Chain-2 products for the offsets ``0, stride, 2 * stride, ...`` of ``data``.

    Row ``j`` composes the vectors of ``data[j * stride : j * stride + m]`` with
    ``m`` the Chain-2 length; rows exist for every offset with a full window.
    """
    length = db.batch_length
    m = length - chain_split(length)
    if len(data) < m:
        return np.empty((0, LANES), dtype=np.uint8)
    table = db.gutter if gutter else db.shuffle
    codes = np.frombuffer(bytes(data), dtype=np.uint8)
    offsets = np.arange(0, len(data) - m + 1, stride)
    product = table[codes[offsets]]
    for k in range(1, m):
        nxt = table[codes[offsets + k]]
        product = np.take_along_axis(nxt, product.astype(np.intp) & (LANES - 1), axis=1)
    return product


def gutter_latched(db: HybridDb) -> bool:
    """True when lane 63 maps to 63 under every byte."""
    return bool((db.gutter[:, GUTTER_STATE] == GUTTER_STATE).all())
