"""Runtime database: renumbered outer table plus the 64-lane shuffle and gutter tables.

Runtime ids: hyper-region members get 0..k-1 in order of addition, id 63 is
the gutter sink, outer states get 64, 65, ... in ascending original id. An id
is outside the region iff it is greater than ``s_limit`` (= k - 1).
A database without a region keeps the original DFA numbering and sets
``s_limit`` to -1.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.automata.dfa import Dfa
from src.errors import RegionCapacityError
from src.region.detector import (
    DEFAULT_LEAK_DEPTH,
    DEFAULT_LEAK_THRESHOLD,
    DEFAULT_SIGMA,
    REGION_CAPACITY,
    DetectorConfig,
    RegionPlan,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 2
LANES = 64
GUTTER_STATE = 63
OUTER_BASE = 64
NO_REGION = -1
DEFAULT_BATCH_LENGTH = 9


class EngineParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    batch_length: int = Field(DEFAULT_BATCH_LENGTH, ge=1, le=64)
    sigma: int = Field(DEFAULT_SIGMA, ge=0)
    leak_threshold: float = Field(DEFAULT_LEAK_THRESHOLD, ge=0.0, le=1.0)
    leak_depth: int = Field(DEFAULT_LEAK_DEPTH, ge=1)

    @classmethod
    def from_detector(cls, cfg: DetectorConfig, batch_length: int = DEFAULT_BATCH_LENGTH) -> "EngineParams":
        return cls(batch_length=batch_length, sigma=cfg.sigma,
                   leak_threshold=cfg.leak_threshold, leak_depth=cfg.leak_depth)


@dataclass(frozen=True)
class StateRenumbering:
    to_runtime: Mapping[int, int]
    to_original: Mapping[int, int]
    region_size: int

    @property
    def members(self) -> Tuple[int, ...]:
        return tuple(self.to_original[i] for i in range(self.region_size))

    def __call__(self, original: int) -> int:
        return self.to_runtime[original]


@dataclass(frozen=True, eq=False)
class HybridDb:
    outer: np.ndarray                     # rows x 256, runtime ids (int32)
    start: int
    accepts: Mapping[int, FrozenSet[int]]  # runtime id -> pattern ids
    params: EngineParams
    renumbering: Optional[StateRenumbering] = None
    shuffle: Optional[np.ndarray] = None  # 256 x 64 uint8
    gutter: Optional[np.ndarray] = None   # 256 x 64 uint8
    s_limit: int = NO_REGION
    version: int = FORMAT_VERSION
    pattern_count: int = 0
    metadata: Dict[str, float] = field(default_factory=dict)

    @property
    def has_region(self) -> bool:
        return self.s_limit >= 0

    @property
    def region_size(self) -> int:
        return self.s_limit + 1

    @property
    def batch_length(self) -> int:
        return self.params.batch_length

    @property
    def state_count(self) -> int:
        """Number of live (original) DFA states."""
        if self.renumbering is None:
            return self.outer.shape[0]
        return len(self.renumbering.to_runtime)

    def is_live(self, state: int) -> bool:
        if self.has_region:
            return 0 <= state <= self.s_limit or OUTER_BASE <= state < self.outer.shape[0]
        return 0 <= state < self.outer.shape[0]

    def live_states(self) -> List[int]:
        if self.renumbering is None:
            return list(range(self.outer.shape[0]))
        return sorted(self.renumbering.to_original)

    @cached_property
    def rows(self) -> List[List[int]]:
        """Outer table as nested lists for per-byte walking."""
        return self.outer.tolist()

    @cached_property
    def gutter_rows(self) -> List[List[int]]:
        return self.gutter.tolist() if self.gutter is not None else []

    @cached_property
    def shuffle_rows(self) -> List[List[int]]:
        return self.shuffle.tolist() if self.shuffle is not None else []

    @cached_property
    def accept_lists(self) -> Dict[int, Tuple[int, ...]]:
        return {state: tuple(sorted(ids)) for state, ids in self.accepts.items()}

    def to_dfa(self) -> Dfa:
        """Rebuild the DFA in its original numbering."""
        if self.renumbering is None:
            return Dfa(table=self.outer.copy(), start=self.start, accepts=dict(self.accepts),
                       pattern_count=self.pattern_count)
        to_original = self.renumbering.to_original
        n = len(to_original)
        table = np.zeros((n, 256), dtype=np.int32)
        lookup = np.zeros(self.outer.shape[0], dtype=np.int32)
        for runtime, original in to_original.items():
            lookup[runtime] = original
        for runtime, original in to_original.items():
            table[original] = lookup[self.outer[runtime]]
        return Dfa(
            table=table,
            start=to_original[self.start],
            accepts={to_original[s]: ids for s, ids in self.accepts.items()},
            pattern_count=self.pattern_count,
        )


def renumber(dfa: Dfa, plan: RegionPlan) -> StateRenumbering:
    """Region members -> 0..k-1, everything else -> 64.. in ascending original id."""
    if plan.size > REGION_CAPACITY:
        raise RegionCapacityError(f"region of {plan.size} states exceeds {REGION_CAPACITY}")
    to_runtime: Dict[int, int] = {}
    for runtime, original in enumerate(plan.members):
        to_runtime[original] = runtime
    next_id = OUTER_BASE
    for original in range(dfa.state_count):
        if original not in to_runtime:
            to_runtime[original] = next_id
            next_id += 1
    to_original = {runtime: original for original, runtime in to_runtime.items()}
    return StateRenumbering(to_runtime=to_runtime, to_original=to_original, region_size=plan.size)


def build_outer_table(dfa: Dfa, mapping: StateRenumbering) -> np.ndarray:
    """T_t: every live row, hyper rows included; row 63 is the self-looping sink."""
    rows = OUTER_BASE + dfa.state_count - mapping.region_size
    lookup = np.array([mapping(s) for s in range(dfa.state_count)], dtype=np.int32)
    start_id = mapping(dfa.start)
    outer = np.full((rows, 256), start_id, dtype=np.int32)
    for original in range(dfa.state_count):
        outer[mapping(original)] = lookup[dfa.table[original]]
    outer[GUTTER_STATE] = GUTTER_STATE
    return outer


def build_shuffle_tables(dfa: Dfa, mapping: StateRenumbering) -> Tuple[np.ndarray, np.ndarray]:
    """T_s and T_g as 256 x 64 uint8 arrays, one 64-lane vector per byte value.

    T_s lanes for successors outside the region hold the runtime id truncated
    to 6 bits and must not be trusted; T_g sends them to the sink 63.
    """
    k = mapping.region_size
    if k < 2:
        raise ValueError("shuffle tables need a region of at least 2 states")
    limit = k - 1
    shuffle = np.full((256, LANES), GUTTER_STATE, dtype=np.uint8)
    gutter = np.full((256, LANES), GUTTER_STATE, dtype=np.uint8)
    lookup = np.array([mapping(s) for s in range(dfa.state_count)], dtype=np.int64)
    for lane in range(k):
        successors = lookup[dfa.table[mapping.to_original[lane]]]
        inside = successors <= limit
        shuffle[:, lane] = np.where(inside, successors, successors & 0x3F)
        gutter[:, lane] = np.where(inside, successors, GUTTER_STATE)
    return shuffle, gutter


def assemble(dfa: Dfa, plan: Optional[RegionPlan], params: Optional[EngineParams] = None) -> HybridDb:
    """Build the runtime database; without a plan the original table is used as is."""
    params = params or EngineParams()
    metadata = dict(dfa.stats)
    if plan is None:
        logger.info(f"assembling scalar-only database with {dfa.state_count} states")
        return HybridDb(
            outer=dfa.table.astype(np.int32, copy=True),
            start=dfa.start,
            accepts={s: frozenset(ids) for s, ids in dfa.accepts.items()},
            params=params,
            pattern_count=dfa.pattern_count,
            metadata=metadata,
        )
    if any(dfa.is_accepting(m) for m in plan.members):
        raise ValueError("accept states cannot be part of the hyper region")
    mapping = renumber(dfa, plan)
    outer = build_outer_table(dfa, mapping)
    shuffle, gutter = build_shuffle_tables(dfa, mapping)
    metadata["leakiness"] = plan.leakiness
    metadata["stickiness_sum"] = plan.stickiness_sum
    logger.info(
        f"assembling hybrid database: {plan.size} hyper states, "
        f"{dfa.state_count - plan.size} outer states, S_limit {plan.size - 1}"
    )
    return HybridDb(
        outer=outer,
        start=mapping(dfa.start),
        accepts={mapping(s): frozenset(ids) for s, ids in dfa.accepts.items()},
        params=params,
        renumbering=mapping,
        shuffle=shuffle,
        gutter=gutter,
        s_limit=plan.size - 1,
        pattern_count=dfa.pattern_count,
        metadata=metadata,
    )
