"""Pattern-set compilation: union NFA -> unanchored search DFA -> minimized DFA.

Tables are dense ``n x 256`` int32 arrays indexed ``table[state, byte]``.
Determinization runs over byte equivalence classes and only expands to the
full byte alphabet at the end.
"""
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.automata.nfa import DEFAULT_MAX_NFA_STATES, Nfa, build_nfa, union_nfa
from src.automata.syntax import nullable, parse_pattern
from src.errors import (
    DeterminizationError,
    PatternError,
    PatternSetError,
    UnsupportedFeatureError,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_DFA_STATES = 200_000


class CompileConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_nfa_states: int = Field(DEFAULT_MAX_NFA_STATES, ge=1)
    max_dfa_states: int = Field(DEFAULT_MAX_DFA_STATES, ge=1)
    minimize: bool = True


@dataclass(frozen=True, eq=False)
class Dfa:
    """Total byte DFA. ``accepts`` maps accept states to their pattern ids."""

    table: np.ndarray
    start: int
    accepts: Mapping[int, FrozenSet[int]]
    pattern_count: int = 0
    stats: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        table = self.table
        if table.ndim != 2 or table.shape[1] != 256 or table.shape[0] == 0:
            raise ValueError(f"transition table must be n x 256, got {table.shape}")
        n = table.shape[0]
        if table.min() < 0 or table.max() >= n:
            raise ValueError("transition table references an invalid state")
        if not 0 <= self.start < n:
            raise ValueError(f"start state {self.start} out of range")
        for state, patterns in self.accepts.items():
            if not 0 <= state < n or not patterns:
                raise ValueError(f"bad accept entry {state} -> {patterns}")
        if len(self.reachable_from(self.start)) != n:
            raise ValueError("every state must be reachable from the start state")

    @property
    def state_count(self) -> int:
        return self.table.shape[0]

    def step(self, state: int, byte: int) -> int:
        return int(self.table[state, byte])

    def is_accepting(self, state: int) -> bool:
        return state in self.accepts

    def successors(self, state: int) -> List[int]:
        return [int(s) for s in np.unique(self.table[state])]

    def reachable_from(self, state: int) -> Set[int]:
        seen = {state}
        stack = [state]
        while stack:
            for nxt in np.unique(self.table[stack.pop()]):
                nxt = int(nxt)
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen

    def scan(self, data: bytes) -> List[Tuple[int, int]]:
        """Plain table walk from the start state; ``(pattern, end_offset)`` pairs."""
        rows = self.table.tolist()
        state = self.start
        found = []
        for offset, byte in enumerate(data, start=1):
            state = rows[state][byte]
            for pattern in sorted(self.accepts.get(state, ())):
                found.append((pattern, offset))
        return found


def byte_classes(nfa: Nfa) -> np.ndarray:
    """Partition 0..255 so that bytes of one class label exactly the same edges."""
    edge_sets = {chars for out in nfa.edges for chars, _ in out}
    if not edge_sets:
        return np.zeros(256, dtype=np.int64)
    membership = np.zeros((len(edge_sets), 256), dtype=bool)
    for row, chars in enumerate(edge_sets):
        membership[row, list(chars)] = True
    _, inverse = np.unique(membership.T, axis=0, return_inverse=True)
    return inverse.reshape(-1)


def determinize(nfa: Nfa, classes: np.ndarray,
                max_states: int = DEFAULT_MAX_DFA_STATES) -> Tuple[np.ndarray, List[FrozenSet[int]]]:
    """Unanchored subset construction over byte classes.

    The start closure is merged into every successor subset, which is the same
    as an implicit leading ``.*``. Returns the ``n x classes`` table and the
    pattern-id set of each subset.
    """
    class_count = int(classes.max()) + 1
    class_cache: Dict[FrozenSet[int], Set[int]] = {}
    moves: List[Dict[int, List[int]]] = []
    for out in nfa.edges:
        by_class: Dict[int, List[int]] = defaultdict(list)
        for chars, target in out:
            if chars not in class_cache:
                class_cache[chars] = {int(classes[b]) for b in chars}
            for cls in class_cache[chars]:
                by_class[cls].append(target)
        moves.append(by_class)

    start = nfa.closure([nfa.start])
    index = {start: 0}
    subsets = [start]
    rows: List[List[int]] = []
    while len(rows) < len(subsets):
        subset = subsets[len(rows)]
        targets: Dict[int, Set[int]] = defaultdict(set)
        for state in subset:
            for cls, dests in moves[state].items():
                targets[cls].update(dests)
        row = [0] * class_count
        for cls, dests in targets.items():
            successor = nfa.closure(dests) | start
            found = index.get(successor)
            if found is None:
                if len(subsets) >= max_states:
                    raise DeterminizationError(f"DFA exceeds {max_states} states")
                found = index[successor] = len(subsets)
                subsets.append(successor)
            row[cls] = found
        rows.append(row)

    accepts = [frozenset(nfa.accepts[s] for s in subset if s in nfa.accepts) for subset in subsets]
    return np.array(rows, dtype=np.int64).reshape(len(rows), class_count), accepts


def minimize(table: np.ndarray, start: int,
             accepts: Sequence[FrozenSet[int]]) -> Tuple[np.ndarray, int, List[FrozenSet[int]]]:
    """Partition refinement; accept states start out split by pattern-id set."""
    labels: Dict[FrozenSet[int], int] = {}
    block = np.array([labels.setdefault(a, len(labels)) for a in accepts], dtype=np.int64)
    count = len(labels)
    while True:
        signature = np.column_stack([block, block[table]])
        _, refined = np.unique(signature, axis=0, return_inverse=True)
        refined = refined.reshape(-1)
        refined_count = int(refined.max()) + 1
        block = refined
        if refined_count == count:
            break
        count = refined_count
    _, representatives = np.unique(block, return_index=True)
    minimized = block[table[representatives]]
    return minimized, int(block[start]), [accepts[r] for r in representatives]


def canonical_order(table: np.ndarray, start: int) -> np.ndarray:
    """BFS numbering from ``start``, successors taken in ascending byte order."""
    order = [start]
    position = {start: 0}
    for state in order:
        dests, first_seen = np.unique(table[state], return_index=True)
        for dest in dests[np.argsort(first_seen)]:
            dest = int(dest)
            if dest not in position:
                position[dest] = len(order)
                order.append(dest)
    mapping = np.full(table.shape[0], -1, dtype=np.int64)
    for new, old in enumerate(order):
        mapping[old] = new
    return mapping


def compile_nfas(patterns: Sequence[str], max_states: int = DEFAULT_MAX_NFA_STATES) -> List[Nfa]:
    """Parse and Thompson-build every pattern; errors are aggregated per pattern."""
    if not patterns:
        raise PatternSetError([])
    nfas: List[Nfa] = []
    errors: List[Tuple[int, PatternError]] = []
    budget = max_states - 1  # the union start state
    for pattern_id, pattern in enumerate(patterns):
        try:
            tree = parse_pattern(pattern)
            if nullable(tree):
                raise UnsupportedFeatureError("pattern matches the empty string", pattern, 0)
            nfa = build_nfa(tree, pattern_id, max_states=max(budget, 1))
        except PatternError as err:
            errors.append((pattern_id, err))
            continue
        budget -= nfa.state_count
        nfas.append(nfa)
    if errors:
        raise PatternSetError(errors)
    return nfas


def compile_pattern_set(patterns: Sequence[str], config: Optional[CompileConfig] = None) -> Dfa:
    """Compile a pattern set into one minimized, unanchored byte DFA."""
    config = config or CompileConfig()
    started = time.perf_counter()
    nfas = compile_nfas(patterns, config.max_nfa_states)
    nfa = union_nfa(nfas, config.max_nfa_states)
    classes = byte_classes(nfa)
    table, accepts = determinize(nfa, classes, config.max_dfa_states)
    subset_states = table.shape[0]
    start = 0
    if config.minimize:
        table, start, accepts = minimize(table, start, accepts)
    full = table[:, classes]
    mapping = canonical_order(full, start)
    order = np.argsort(mapping)
    canonical = mapping[full[order]].astype(np.int32)
    accept_map = {
        int(mapping[old]): ids for old, ids in enumerate(accepts) if ids
    }
    elapsed = time.perf_counter() - started
    logger.info(
        f"compiled {len(patterns)} patterns: NFA {nfa.state_count} states, "
        f"{int(classes.max()) + 1} byte classes, DFA {subset_states} -> {canonical.shape[0]} states "
        f"in {elapsed:.3f}s"
    )
    return Dfa(
        table=canonical,
        start=int(mapping[start]),
        accepts=accept_map,
        pattern_count=len(patterns),
        stats={
            "nfa_states": nfa.state_count,
            "byte_classes": int(classes.max()) + 1,
            "subset_states": subset_states,
            "compile_seconds": elapsed,
        },
    )
