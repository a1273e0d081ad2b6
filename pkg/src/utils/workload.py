"""Synthetic inputs, rule sets and input shrinking for benches and difftests."""
import logging
from enum import Enum
from typing import Callable, Iterator, List

import numpy as np

from src.engine.database import GUTTER_STATE, HybridDb

logger = logging.getLogger(__name__)

DEFAULT_MEAN_LENGTH = 512
MAX_CASE_LENGTH = 1 << 16
REGION_BIAS = 0.5


class WorkloadKind(str, Enum):
    UNIFORM = "uniform"
    REGION = "region"
    MIXED = "mixed"


def region_alphabet(db: HybridDb) -> bytes:
    """One byte per distinct gutter column over the live hyper lanes."""
    if not db.has_region:
        return b""
    columns = db.gutter[:, : db.region_size]
    _, first = np.unique(columns, axis=0, return_index=True)
    return bytes(sorted(int(b) for b in first))


def circulating_alphabet(db: HybridDb) -> bytes:
    """Bytes under which no hyper state leaves the region."""
    if not db.has_region:
        return b""
    stays = (db.gutter[:, : db.region_size] != GUTTER_STATE).all(axis=1)
    return bytes(int(b) for b in np.flatnonzero(stays))


def random_bytes(rng: np.random.Generator, length: int, alphabet: bytes = b"",
                 bias: float = 0.0) -> bytes:
    """Uniform bytes, each replaced by a draw from ``alphabet`` with probability ``bias``."""
    data = rng.integers(0, 256, size=length, dtype=np.uint8)
    if alphabet and bias > 0:
        picks = rng.random(length) < bias
        choices = np.frombuffer(alphabet, dtype=np.uint8)
        data[picks] = rng.choice(choices, size=int(picks.sum()))
    return data.tobytes()


def synthetic_workload(db: HybridDb, size: int, kind: WorkloadKind = WorkloadKind.MIXED,
                       seed: int = 0) -> bytes:
    """Reproducible stress input of ``size`` bytes."""
    rng = np.random.default_rng(seed)
    kind = WorkloadKind(kind)
    if kind == WorkloadKind.UNIFORM:
        return random_bytes(rng, size)
    if kind == WorkloadKind.REGION:
        alphabet = circulating_alphabet(db) or region_alphabet(db)
        return random_bytes(rng, size, alphabet, bias=1.0) if alphabet else random_bytes(rng, size)
    return random_bytes(rng, size, region_alphabet(db), bias=REGION_BIAS)


def difftest_cases(db: HybridDb, seed: int, cases: int,
                   mean_length: int = DEFAULT_MEAN_LENGTH) -> Iterator[bytes]:
    """Geometric lengths (mean ``mean_length``), half the bytes biased to the region."""
    rng = np.random.default_rng(seed)
    alphabet = region_alphabet(db)
    for _ in range(cases):
        length = min(int(rng.geometric(1.0 / mean_length)), MAX_CASE_LENGTH)
        yield random_bytes(rng, length, alphabet, bias=REGION_BIAS)


def shrink(data: bytes, fails: Callable[[bytes], bool]) -> bytes:
    """Binary-search shrinking: drop halves, then quarters, ... while ``fails`` holds."""
    if not fails(data):
        return data
    chunk = max(len(data) // 2, 1)
    while chunk >= 1 and data:
        start = 0
        while start < len(data):
            candidate = data[:start] + data[start + chunk:]
            if candidate and fails(candidate):
                data = candidate
            else:
                start += chunk
        if chunk == 1:
            break
        chunk //= 2
    return data


_WORD_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def synthetic_ruleset(count: int, seed: int = 0) -> List[str]:
    """Literal-heavy patterns with a few classes and repeats, DPI-signature style."""
    rng = np.random.default_rng(seed)
    patterns: List[str] = []
    while len(patterns) < count:
        length = int(rng.integers(4, 9))
        word = "".join(rng.choice(list(_WORD_LETTERS), size=length))
        shape = int(rng.integers(0, 5))
        if shape == 1:
            pattern = f"{word[:2]}[0-9]+{word[2:]}"
        elif shape == 2:
            pattern = f"{word[:-1]}{word[-1]}+"
        elif shape == 3:
            pattern = f"{word[:3]}(x|yz){word[3:]}"
        elif shape == 4:
            pattern = f"{word[:2]}\\s{word[2:]}"
        else:
            pattern = word
        if pattern not in patterns:
            patterns.append(pattern)
    return patterns
