"""Hyper-region detection: pick a sticky SCC near the start, grow it, score its leakiness.

A region is a set of at most 63 non-accepting states that the batch engine
runs with permutation-based transitions. Leakiness is the probability that a
walk from the region start under uniformly random bytes leaves the region
within ``leak_depth`` steps.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.automata.dfa import Dfa
from src.region.graph import (
    EdgeBundle,
    SccInfo,
    bfs_distances,
    compute_sccs,
    edge_bundles,
    stickiness_all,
    successor_lists,
)

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = 30
DEFAULT_LEAK_THRESHOLD = 0.05
DEFAULT_LEAK_DEPTH = 9
REGION_CAPACITY = 63
RANDOM_START_RADIUS = 2


class RegionMode(str, Enum):
    HYPER = "hyper"
    RANDOM = "random"
    NONE = "none"


class DetectorConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma: int = Field(DEFAULT_SIGMA, ge=0)
    leak_threshold: float = Field(DEFAULT_LEAK_THRESHOLD, ge=0.0, le=1.0)
    leak_depth: int = Field(DEFAULT_LEAK_DEPTH, ge=1)
    capacity: int = Field(REGION_CAPACITY, ge=1, le=REGION_CAPACITY)
    mode: RegionMode = RegionMode.HYPER
    seed: int = 0


@dataclass(frozen=True)
class RegionPlan:
    members: Tuple[int, ...]  # order of addition; members[0] is the start
    start: int
    stickiness_sum: int
    leakiness: float

    def __post_init__(self):
        if not self.members or self.members[0] != self.start:
            raise ValueError("region start must be its first member")
        if len(set(self.members)) != len(self.members):
            raise ValueError("region members must be unique")
        if len(self.members) > REGION_CAPACITY:
            raise ValueError(f"region holds at most {REGION_CAPACITY} states")

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class CandidateEvaluation:
    scc: SccInfo
    eligible_stickiness: int
    plan: RegionPlan
    accepted: bool
    reason: str


@dataclass
class RegionReport:
    """Everything the detector looked at, for inspect/compile summaries."""

    mode: RegionMode
    config: DetectorConfig
    sccs: List[SccInfo] = field(default_factory=list)
    candidates: List[CandidateEvaluation] = field(default_factory=list)
    plan: Optional[RegionPlan] = None
    reason: str = ""

    @property
    def accepted(self) -> bool:
        return self.plan is not None


def transit_probability(bundle: EdgeBundle) -> float:
    """Probability of taking ``bundle`` under uniformly distributed bytes."""
    return bundle.width / 256


def region_leakiness(dfa: Dfa, region: Set[int], start: int, depth: int) -> float:
    """Depth-bounded leak probability of ``region`` seen from ``start``.

    L0(u) = 1 outside the region, 0 inside; Lk(u) = sum over out-bundles e of
    P_transit(e) * L(k-1)(dest(e)) for u inside. Returns Ld(start).
    """
    if start not in region:
        raise ValueError(f"start state {start} is not in the region")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    bundles = {state: edge_bundles(dfa, state) for state in region}
    previous = {state: 0.0 for state in region}
    for _ in range(depth):
        previous = {
            state: sum(
                transit_probability(bundle) * previous.get(bundle.destination, 1.0)
                for bundle in bundles[state]
            )
            for state in region
        }
    return previous[start]


def eligible_stickiness(dfa: Dfa, scc: SccInfo, stickiness: Optional[np.ndarray] = None) -> int:
    """Stickiness sum over the SCC members that are not accept states."""
    if stickiness is None:
        stickiness = stickiness_all(dfa)
    return int(sum(stickiness[m] for m in scc.members if not dfa.is_accepting(m)))


def qualifying_sccs(dfa: Dfa, cfg: DetectorConfig,
                    sccs: Optional[Sequence[SccInfo]] = None) -> Iterator[Tuple[SccInfo, int]]:
    """SCCs whose eligible stickiness exceeds sigma, nearest to the start first."""
    sccs = compute_sccs(dfa) if sccs is None else sccs
    stickiness = stickiness_all(dfa)
    for scc in sorted(sccs, key=lambda s: (s.distance, s.members[0])):
        total = eligible_stickiness(dfa, scc, stickiness)
        logger.debug(f"SCC at distance {scc.distance} with {len(scc.members)} states: stickiness {total}")
        if total > cfg.sigma:
            yield scc, total


def select_start_scc(dfa: Dfa, cfg: DetectorConfig) -> Optional[SccInfo]:
    """The nearest SCC whose stickiness sum exceeds sigma, or None."""
    for scc, _ in qualifying_sccs(dfa, cfg):
        return scc
    return None


def _bfs_expand(dfa: Dfa, start: int, preferred: Set[int], capacity: int) -> List[int]:
    """Level-by-level BFS that skips accept states and stops at ``capacity``.

    Within a level, states in ``preferred`` are added first, then by id.
    """
    successors = successor_lists(dfa)
    members = [start]
    seen = {start}
    frontier = [start]
    while frontier and len(members) < capacity:
        level = {
            succ
            for state in frontier
            for succ in successors[state]
            if succ not in seen and not dfa.is_accepting(succ)
        }
        ordered = sorted(level, key=lambda s: (s not in preferred, s))
        room = capacity - len(members)
        ordered = ordered[:room]
        members.extend(ordered)
        seen.update(ordered)
        frontier = ordered
    return members


def expand_region(dfa: Dfa, scc: SccInfo, cfg: DetectorConfig) -> RegionPlan:
    """Grow a region from the SCC member closest to the start state."""
    distances = bfs_distances(dfa)
    candidates = [m for m in scc.members if not dfa.is_accepting(m)] or list(scc.members)
    start = min(candidates, key=lambda m: (distances[m], m))
    members = _bfs_expand(dfa, start, set(scc.members), cfg.capacity)
    stickiness = stickiness_all(dfa)
    return RegionPlan(
        members=tuple(members),
        start=start,
        stickiness_sum=eligible_stickiness(dfa, scc, stickiness),
        leakiness=region_leakiness(dfa, set(members), start, cfg.leak_depth),
    )


def random_region(dfa: Dfa, cfg: DetectorConfig) -> Optional[RegionPlan]:
    """Baseline region: seeded random start near s0, BFS growth, no scoring gates."""
    distances = bfs_distances(dfa)
    eligible = [
        s for s in range(dfa.state_count)
        if 0 <= distances[s] <= RANDOM_START_RADIUS and not dfa.is_accepting(s)
    ]
    if not eligible:
        return None
    rng = np.random.default_rng(cfg.seed)
    start = eligible[int(rng.integers(len(eligible)))]
    members = _bfs_expand(dfa, start, set(), cfg.capacity)
    stickiness = stickiness_all(dfa)
    return RegionPlan(
        members=tuple(members),
        start=start,
        stickiness_sum=int(stickiness[members].sum()),
        leakiness=region_leakiness(dfa, set(members), start, cfg.leak_depth),
    )


def detect_report(dfa: Dfa, cfg: Optional[DetectorConfig] = None) -> RegionReport:
    """Run region detection and keep the reasoning for every candidate."""
    cfg = cfg or DetectorConfig()
    report = RegionReport(mode=cfg.mode, config=cfg, sccs=compute_sccs(dfa))

    if cfg.mode == RegionMode.NONE:
        report.reason = "region mode is none"
    elif cfg.mode == RegionMode.RANDOM:
        plan = random_region(dfa, cfg)
        if plan is None:
            report.reason = f"no non-accepting state within distance {RANDOM_START_RADIUS}"
        elif plan.size < 2:
            report.reason = "random region has fewer than 2 states"
        else:
            report.plan = plan
            report.reason = "random region"
    else:
        for scc, total in qualifying_sccs(dfa, cfg, report.sccs):
            plan = expand_region(dfa, scc, cfg)
            if plan.size < 2:
                accepted, reason = False, "region has fewer than 2 states"
            elif not plan.leakiness < cfg.leak_threshold:
                accepted, reason = False, (
                    f"leakiness {plan.leakiness:.6g} is not below {cfg.leak_threshold}"
                )
            else:
                accepted, reason = True, (
                    f"leakiness {plan.leakiness:.6g} is below {cfg.leak_threshold}"
                )
            report.candidates.append(CandidateEvaluation(scc, total, plan, accepted, reason))
            if accepted:
                report.plan = plan
                report.reason = reason
                break
            logger.warning(f"candidate region at SCC distance {scc.distance} rejected: {reason}")
        else:
            if not report.candidates:
                report.reason = f"no SCC has a stickiness sum above {cfg.sigma}"
            else:
                report.reason = "every qualifying SCC was rejected"

    if report.plan is not None:
        logger.info(
            f"hyper region accepted: {report.plan.size} states, "
            f"leakiness {report.plan.leakiness:.6g}, start {report.plan.start}"
        )
    else:
        logger.info(f"no hyper region: {report.reason}")
    return report


def detect(dfa: Dfa, cfg: Optional[DetectorConfig] = None) -> Optional[RegionPlan]:
    """The accepted region plan, or None when the DFA should run scalar only."""
    return detect_report(dfa, cfg).plan
