import itertools

import numpy as np
import pytest

from src.automata.dfa import CompileConfig, Dfa, compile_nfas, compile_pattern_set
from src.automata.nfa import reference_matches
from src.errors import DeterminizationError, PatternSetError, UnsupportedFeatureError


@pytest.fixture
def mode_dfa():
    """DFA for the running example pattern"""
    return compile_pattern_set(["mode+l"])


def _expected_row(*moves):
    row = np.zeros(256, dtype=np.int32)
    row[ord("m")] = 1
    for char, dest in moves:
        row[ord(char)] = dest
    return row


def test_golden_table_shape(mode_dfa):
    """Test the example compiles to six states with state 5 accepting pattern 0"""
    assert mode_dfa.state_count == 6
    assert mode_dfa.start == 0
    assert dict(mode_dfa.accepts) == {5: frozenset({0})}


@pytest.mark.parametrize(
    "state, moves",
    [
        (0, []),
        (1, [("o", 2)]),
        (2, [("d", 3)]),
        (3, [("e", 4)]),
        (4, [("e", 4), ("l", 5)]),
        (5, []),
    ],
)
def test_golden_table_rows(mode_dfa, state, moves):
    """Test every row restarts on 'm' and falls back to state 0 elsewhere"""
    np.testing.assert_array_equal(mode_dfa.table[state], _expected_row(*moves))


def test_unanchored_single_byte():
    """Test a one-byte pattern matches at every position"""
    dfa = compile_pattern_set(["a"])
    assert dfa.scan(b"aaa") == [(0, 1), (0, 2), (0, 3)]


def test_two_patterns_attribution():
    """Test matches carry the id of the pattern that produced them"""
    dfa = compile_pattern_set(["ab", "bc"])
    assert dfa.scan(b"abc") == [(0, 2), (1, 3)]


def test_shared_accept_state_reports_both_patterns():
    """Test patterns ending together are both reported in id order"""
    dfa = compile_pattern_set(["xab", "ab"])
    assert dfa.scan(b"xab") == [(0, 3), (1, 3)]


def test_totality(mode_dfa):
    """Test every (state, byte) lookup lands on a valid state"""
    dfa = compile_pattern_set(["a[0-9]+b", "x.y", r"\w+@"])
    for compiled in (mode_dfa, dfa):
        assert compiled.table.shape == (compiled.state_count, 256)
        assert compiled.table.min() >= 0
        assert compiled.table.max() < compiled.state_count


def test_exhaustive_equivalence_small_alphabet():
    """Test the DFA agrees with the NFA oracle on every short input over {a, b}"""
    patterns = ["ab", "b+a", "a.b", "(ab|ba)a"]
    dfa = compile_pattern_set(patterns)
    nfas = compile_nfas(patterns)
    for length in range(9):
        for letters in itertools.product(b"ab", repeat=length):
            data = bytes(letters)
            assert dfa.scan(data) == reference_matches(nfas, data), data


def test_random_equivalence_small_alphabet():
    """Test the DFA agrees with the NFA oracle on random inputs up to 64 bytes"""
    patterns = ["aab", "b{2,3}a", "a[ab]b+"]
    dfa = compile_pattern_set(patterns)
    nfas = compile_nfas(patterns)
    rng = np.random.default_rng(7)
    for _ in range(150):
        data = bytes(rng.choice(list(b"ab"), size=int(rng.integers(0, 65))).tolist())
        assert dfa.scan(data) == reference_matches(nfas, data), data


def test_minimization_soundness():
    """Test minimizing keeps the match set and never adds states"""
    patterns = ["(a|b)*abb", "ba+b", "bab"]
    minimized = compile_pattern_set(patterns)
    raw = compile_pattern_set(patterns, CompileConfig(minimize=False))
    assert minimized.state_count <= raw.state_count
    rng = np.random.default_rng(3)
    for _ in range(200):
        data = bytes(rng.choice(list(b"abc"), size=int(rng.integers(0, 40))).tolist())
        assert minimized.scan(data) == raw.scan(data)


def test_compile_is_deterministic():
    """Test two compilations give identical tables"""
    first = compile_pattern_set(["mode+l", "a[bc]d"])
    second = compile_pattern_set(["mode+l", "a[bc]d"])
    np.testing.assert_array_equal(first.table, second.table)
    assert dict(first.accepts) == dict(second.accepts)


def test_compile_stats():
    """Test compile statistics are recorded"""
    dfa = compile_pattern_set(["mode+l"])
    assert set(dfa.stats) >= {"nfa_states", "byte_classes", "subset_states", "compile_seconds"}
    assert dfa.stats["byte_classes"] == 6  # m o d e l and everything else


def test_empty_pattern_list():
    """Test an empty pattern set is refused"""
    with pytest.raises(PatternSetError, match="no patterns"):
        compile_pattern_set([])


def test_errors_are_aggregated():
    """Test every bad pattern is reported, not just the first"""
    with pytest.raises(PatternSetError) as excinfo:
        compile_pattern_set(["ab", "(", "^x", "cd"])
    assert [index for index, _ in excinfo.value.errors] == [1, 2]


def test_empty_match_patterns_rejected():
    """Test patterns that match the empty string are refused"""
    with pytest.raises(PatternSetError) as excinfo:
        compile_pattern_set(["a*"])
    (_, error), = excinfo.value.errors
    assert isinstance(error, UnsupportedFeatureError)


def test_determinization_limit():
    """Test subset construction stops at the configured state limit"""
    with pytest.raises(DeterminizationError):
        compile_pattern_set(["a[ab]{8}"], CompileConfig(max_dfa_states=64))


def test_dfa_rejects_unreachable_states():
    """Test a hand-built table with unreachable states is refused"""
    table = np.zeros((2, 256), dtype=np.int32)
    with pytest.raises(ValueError):
        Dfa(table=table, start=0, accepts={})
