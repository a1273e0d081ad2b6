"""Thompson construction and a set-based NFA simulator.

The simulator does not share code with the DFA path; it is the reference
oracle the DFA and the scan engines are checked against.
"""
import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Sequence, Set, Tuple

from src.automata.syntax import (
    Alternation,
    ByteClass,
    Concat,
    Group,
    Literal,
    Node,
    Repeat,
    SyntaxTree,
)
from src.errors import NfaCapacityError

logger = logging.getLogger(__name__)

DEFAULT_MAX_NFA_STATES = 1_000_000

PatternId = int


@dataclass(frozen=True)
class Nfa:
    state_count: int
    epsilon: Tuple[Tuple[int, ...], ...]
    edges: Tuple[Tuple[Tuple[FrozenSet[int], int], ...], ...]
    start: int
    accepts: Dict[int, PatternId]

    def __post_init__(self):
        if len(self.epsilon) != self.state_count or len(self.edges) != self.state_count:
            raise ValueError("edge lists must have one entry per state")
        if not 0 <= self.start < self.state_count:
            raise ValueError(f"start state {self.start} out of range")
        for targets in self.epsilon:
            for target in targets:
                if not 0 <= target < self.state_count:
                    raise ValueError(f"epsilon edge to invalid state {target}")
        for out in self.edges:
            for _, target in out:
                if not 0 <= target < self.state_count:
                    raise ValueError(f"byte edge to invalid state {target}")

    def closure(self, states: Iterable[int]) -> FrozenSet[int]:
        """Epsilon closure of a set of states."""
        seen: Set[int] = set(states)
        stack = list(seen)
        while stack:
            state = stack.pop()
            for target in self.epsilon[state]:
                if target not in seen:
                    seen.add(target)
                    stack.append(target)
        return frozenset(seen)

    def step(self, states: Iterable[int], byte: int) -> FrozenSet[int]:
        moved = {
            target
            for state in states
            for chars, target in self.edges[state]
            if byte in chars
        }
        return self.closure(moved)

    def accepts_bytes(self, data: bytes) -> bool:
        """Anchored whole-input acceptance."""
        current = self.closure([self.start])
        for byte in data:
            current = self.step(current, byte)
            if not current:
                return False
        return any(state in self.accepts for state in current)

    def match_ends(self, data: bytes, begin: int = 0) -> List[int]:
        """End offsets (exclusive) of every non-empty match anchored at ``begin``."""
        ends = []
        current = self.closure([self.start])
        for position in range(begin, len(data)):
            current = self.step(current, data[position])
            if not current:
                break
            if any(state in self.accepts for state in current):
                ends.append(position + 1)
        return ends


class _Builder:
    def __init__(self, max_states: int):
        self.max_states = max_states
        self.epsilon: List[List[int]] = []
        self.edges: List[List[Tuple[FrozenSet[int], int]]] = []

    def new_state(self) -> int:
        if len(self.epsilon) >= self.max_states:
            raise NfaCapacityError(f"NFA exceeds {self.max_states} states")
        self.epsilon.append([])
        self.edges.append([])
        return len(self.epsilon) - 1

    def fragment(self, node: Node) -> Tuple[int, int]:
        """Build a sub-automaton for ``node``; returns its (entry, exit) states."""
        if isinstance(node, (Literal, ByteClass)):
            chars = frozenset([node.byte]) if isinstance(node, Literal) else node.chars
            entry, exit_ = self.new_state(), self.new_state()
            self.edges[entry].append((chars, exit_))
            return entry, exit_
        if isinstance(node, Group):
            return self.fragment(node.child)
        if isinstance(node, Concat):
            if not node.items:
                state = self.new_state()
                return state, state
            entry, exit_ = self.fragment(node.items[0])
            for item in node.items[1:]:
                item_entry, item_exit = self.fragment(item)
                self.epsilon[exit_].append(item_entry)
                exit_ = item_exit
            return entry, exit_
        if isinstance(node, Alternation):
            entry, exit_ = self.new_state(), self.new_state()
            for option in node.options:
                option_entry, option_exit = self.fragment(option)
                self.epsilon[entry].append(option_entry)
                self.epsilon[option_exit].append(exit_)
            return entry, exit_
        if isinstance(node, Repeat):
            return self.repeat(node)
        raise TypeError(f"unknown node {node!r}")

    def repeat(self, node: Repeat) -> Tuple[int, int]:
        entry = exit_ = self.new_state()
        for _ in range(node.min):
            copy_entry, copy_exit = self.fragment(node.child)
            self.epsilon[exit_].append(copy_entry)
            exit_ = copy_exit
        if node.max is None:
            # Kleene star on one more copy
            loop_entry, loop_exit = self.fragment(node.child)
            end = self.new_state()
            self.epsilon[exit_].extend([loop_entry, end])
            self.epsilon[loop_exit].extend([loop_entry, end])
            return entry, end
        end = self.new_state()
        for _ in range(node.max - node.min):
            copy_entry, copy_exit = self.fragment(node.child)
            self.epsilon[exit_].extend([copy_entry, end])
            exit_ = copy_exit
        self.epsilon[exit_].append(end)
        return entry, end

    def freeze(self, start: int, accepts: Dict[int, PatternId]) -> Nfa:
        return Nfa(
            state_count=len(self.epsilon),
            epsilon=tuple(tuple(targets) for targets in self.epsilon),
            edges=tuple(tuple(out) for out in self.edges),
            start=start,
            accepts=accepts,
        )


def build_nfa(tree: SyntaxTree, pattern_id: PatternId,
              max_states: int = DEFAULT_MAX_NFA_STATES) -> Nfa:
    """Thompson construction with a single accept state tagged ``pattern_id``."""
    builder = _Builder(max_states)
    entry, exit_ = builder.fragment(tree)
    return builder.freeze(entry, {exit_: pattern_id})


def union_nfa(nfas: Sequence[Nfa], max_states: int = DEFAULT_MAX_NFA_STATES) -> Nfa:
    """Join pattern NFAs under a fresh start state with epsilon edges."""
    total = 1 + sum(nfa.state_count for nfa in nfas)
    if total > max_states:
        raise NfaCapacityError(f"union NFA needs {total} states, limit is {max_states}")
    epsilon: List[Tuple[int, ...]] = [()]
    edges: List[Tuple[Tuple[FrozenSet[int], int], ...]] = [()]
    accepts: Dict[int, PatternId] = {}
    starts = []
    base = 1
    for nfa in nfas:
        starts.append(nfa.start + base)
        epsilon.extend(tuple(t + base for t in targets) for targets in nfa.epsilon)
        edges.extend(tuple((chars, t + base) for chars, t in out) for out in nfa.edges)
        accepts.update({state + base: pid for state, pid in nfa.accepts.items()})
        base += nfa.state_count
    epsilon[0] = tuple(starts)
    logger.debug(f"union NFA: {len(nfas)} patterns, {total} states")
    return Nfa(state_count=total, epsilon=tuple(epsilon), edges=tuple(edges),
               start=0, accepts=accepts)


def reference_matches(nfas: Sequence[Nfa], data: bytes) -> List[Tuple[PatternId, int]]:
    """Naive oracle: every pattern tried at every start offset.

    Returns sorted, de-duplicated ``(pattern_id, end_offset)`` pairs ordered by
    offset then pattern id, the order the scan engines emit them in.
    """
    found = set()
    for nfa in nfas:
        (pattern_id,) = set(nfa.accepts.values())
        for begin in range(len(data)):
            for end in nfa.match_ends(data, begin):
                found.add((pattern_id, end))
    return sorted(found, key=lambda pair: (pair[1], pair[0]))
