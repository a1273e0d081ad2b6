"""Graph views of a DFA: SCCs, BFS distances, stickiness and edge bundles."""
import itertools
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence

import numpy as np

from src.automata.dfa import Dfa

UNREACHED = -1


@dataclass(frozen=True)
class EdgeBundle:
    """All bytes leading from ``source`` to ``destination``."""

    source: int
    destination: int
    chars: FrozenSet[int]

    @property
    def width(self) -> int:
        return len(self.chars)


@dataclass(frozen=True)
class SccInfo:
    members: tuple
    stickiness_sum: int
    distance: int

    def __contains__(self, state: int) -> bool:
        return state in self.members


def successor_lists(dfa: Dfa) -> List[List[int]]:
    """Distinct successors of each state, ascending; byte multiplicity ignored."""
    return [[int(s) for s in np.unique(row)] for row in dfa.table]


def tarjan(successors: Sequence[Sequence[int]]) -> List[List[int]]:
    """Iterative Tarjan; components come out in reverse topological order."""
    counter = itertools.count()
    index: Dict[int, int] = {}
    lowlink: Dict[int, int] = {}
    on_stack = set()
    stack: List[int] = []
    components: List[List[int]] = []

    for root in range(len(successors)):
        if root in index:
            continue
        work = [(root, iter(successors[root]))]
        index[root] = lowlink[root] = next(counter)
        stack.append(root)
        on_stack.add(root)
        while work:
            node, children = work[-1]
            descended = False
            for child in children:
                if child not in index:
                    index[child] = lowlink[child] = next(counter)
                    stack.append(child)
                    on_stack.add(child)
                    work.append((child, iter(successors[child])))
                    descended = True
                    break
                if child in on_stack:
                    lowlink[node] = min(lowlink[node], index[child])
            if descended:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
            if lowlink[node] == index[node]:
                component = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component.append(member)
                    if member == node:
                        break
                components.append(sorted(component))
    return components


def bfs_distances(dfa: Dfa, source: Optional[int] = None) -> np.ndarray:
    """Unweighted BFS distance of every state from ``source`` (default: start)."""
    source = dfa.start if source is None else source
    successors = successor_lists(dfa)
    distances = np.full(dfa.state_count, UNREACHED, dtype=np.int64)
    distances[source] = 0
    frontier = [source]
    while frontier:
        nxt = []
        for state in frontier:
            for succ in successors[state]:
                if distances[succ] == UNREACHED:
                    distances[succ] = distances[state] + 1
                    nxt.append(succ)
        frontier = nxt
    return distances


def stickiness_all(dfa: Dfa) -> np.ndarray:
    """Number of distinct bytes on the in-edges of every state."""
    counts = np.zeros(dfa.state_count, dtype=np.int64)
    for byte in range(256):
        counts[np.unique(dfa.table[:, byte])] += 1
    return counts


def state_stickiness(dfa: Dfa, state: int) -> int:
    """|{b : T[b][u] = state for some u}|, in 0..256."""
    return int(np.any(dfa.table == state, axis=0).sum())


def scc_distance(dfa: Dfa, scc: SccInfo, distances: Optional[np.ndarray] = None) -> int:
    """Minimum BFS distance from the start state to any SCC member."""
    if distances is None:
        distances = bfs_distances(dfa)
    return int(min(distances[m] for m in scc.members))


def compute_sccs(dfa: Dfa) -> List[SccInfo]:
    """SCC partition of the transition graph, ordered by distance then smallest member."""
    distances = bfs_distances(dfa)
    stickiness = stickiness_all(dfa)
    sccs = [
        SccInfo(
            members=tuple(component),
            stickiness_sum=int(stickiness[component].sum()),
            distance=int(distances[component].min()),
        )
        for component in tarjan(successor_lists(dfa))
    ]
    sccs.sort(key=lambda scc: (scc.distance, scc.members[0]))
    return sccs


def edge_bundles(dfa: Dfa, state: int) -> List[EdgeBundle]:
    """Out-edges of ``state`` grouped by destination; widths sum to 256."""
    row = dfa.table[state]
    bundles = []
    for dest in np.unique(row):
        chars = frozenset(int(b) for b in np.flatnonzero(row == dest))
        bundles.append(EdgeBundle(source=state, destination=int(dest), chars=chars))
    return bundles
