import itertools

import numpy as np
import pytest

from src.automata.dfa import compile_pattern_set
from src.engine.database import GUTTER_STATE, EngineParams, assemble
from src.engine.scanner import (
    Engine,
    MatchEvent,
    StreamState,
    hybrid_scan,
    initial_state,
    scalar_scan,
    scalar_step,
    scan_bytes,
    scan_stream,
)
from src.errors import StreamMismatchError
from src.region.detector import DetectorConfig, detect
from src.utils.workload import difftest_cases, synthetic_ruleset

PERMISSIVE = DetectorConfig(sigma=0, leak_threshold=1.0)

ABC_PATTERN_SETS = [
    ["abc", "ca+b", "bb", "c[ab]c"],
    ["a(b|c)*a"],
    ["aa", "bab", "cc+"],
    ["[ab]{3}c", "ccc"],
    ["b", "acb", "c.a"],
]


def _build(patterns, batch_length=9, cfg=PERMISSIVE):
    dfa = compile_pattern_set(patterns)
    return assemble(dfa, detect(dfa, cfg), EngineParams(batch_length=batch_length))


@pytest.fixture
def mode_db():
    """Hybrid database for the running example"""
    return _build(["mode+l"])


@pytest.fixture
def small_alphabet_dbs():
    """Databases over {a, b, c} with short and default batches"""
    return [_build(ABC_PATTERN_SETS[0], batch_length=length) for length in (2, 3, 4, 9)]


def _assert_equivalent(db, data, gutter=True):
    hybrid = scan_bytes(db, data, Engine.HYBRID, gutter)
    scalar = scan_bytes(db, data, Engine.SCALAR)
    assert hybrid == scalar, data


def _collect(scan, db, state, data, **kwargs):
    events = []
    final = scan(db, state, data, events.append, **kwargs)
    return final, events


def test_scalar_step(mode_db):
    """Test single lookups in the runtime table"""
    assert scalar_step(mode_db, 0, ord("m")) == 1
    assert scalar_step(mode_db, 4, ord("e")) == 4
    assert scalar_step(mode_db, 4, ord("l")) == 64


@pytest.mark.parametrize("data, events", [(b"hmodel", [(0, 6)]), (b"modeel", [(0, 6)]), (b"", [])])
def test_scalar_scan_examples(mode_db, data, events):
    """Test the scalar walk on the example inputs"""
    final, found = _collect(scalar_scan, mode_db, initial_state(mode_db), data)
    assert found == [MatchEvent(*e) for e in events]
    assert final.consumed == len(data)


def test_empty_input_keeps_state(mode_db):
    """Test an empty input leaves the stream state as it was"""
    state = StreamState(state=3, consumed=17)
    assert _collect(scalar_scan, mode_db, state, b"")[0] == state
    assert _collect(hybrid_scan, mode_db, state, b"")[0] == state


def test_hybrid_example(mode_db):
    """Test the hybrid engine reports the example match"""
    final, events = _collect(hybrid_scan, mode_db, initial_state(mode_db), b"hmodel")
    assert events == [MatchEvent(0, 6)]
    assert final.state == 64


def test_hybrid_batches_then_replays(mode_db):
    """Test a batch hitting the accept edge replays and reports the match"""
    data = b"xxxxxxxxxmodelmodexxxxxxxxxx"
    _assert_equivalent(mode_db, data)
    assert scan_bytes(mode_db, data)[1] == [MatchEvent(0, 14)]


def test_hybrid_without_region_is_scalar():
    """Test a scalar-only database scans identically with both engines"""
    dfa = compile_pattern_set(["mode+l"])
    db = assemble(dfa, None)
    for data in (b"hmodel", b"mode" * 50 + b"l", b""):
        _assert_equivalent(db, data)


def test_long_circulation_then_escape(mode_db):
    """Test 10,000 region-circulating bytes followed by one escape"""
    rng = np.random.default_rng(21)
    circulating = [b for b in range(256) if b != ord("l")]
    data = bytes(rng.choice(circulating, size=10_000).tolist()) + b"model"
    hybrid = scan_bytes(mode_db, data, Engine.HYBRID)
    assert hybrid == scan_bytes(mode_db, data, Engine.SCALAR)
    assert hybrid[1][-1] == MatchEvent(0, len(data))


@pytest.mark.parametrize("gap", [37, 1000, 40_000])
def test_escapes_across_growing_windows(mode_db, gap):
    """Test escapes at irregular spacing, including runs longer than the largest window"""
    rng = np.random.default_rng(gap)
    circulating = [b for b in range(256) if b != ord("l")]
    parts = []
    for _ in range(5):
        run = int(rng.integers(gap // 2, gap + 1))
        parts.append(bytes(rng.choice(circulating, size=run).tolist()))
        parts.append(b"model")
    data = b"".join(parts)
    hybrid = scan_bytes(mode_db, data, Engine.HYBRID)
    assert hybrid == scan_bytes(mode_db, data, Engine.SCALAR)
    assert len(hybrid[1]) >= 5


def test_stream_across_chunks(mode_db):
    """Test a match split over two chunks keeps its absolute offset"""
    events = []
    state = scan_stream(mode_db, initial_state(mode_db), b"hmo", events.append)
    state = scan_stream(mode_db, state, b"del", events.append)
    assert events == [MatchEvent(0, 6)]
    assert state.consumed == 6


def test_stream_empty_chunk_is_identity(mode_db):
    """Test an empty chunk changes nothing"""
    events = []
    prior = StreamState(state=2, consumed=5)
    assert scan_stream(mode_db, prior, b"", events.append) == prior
    assert events == []


@pytest.mark.parametrize("engine", [Engine.HYBRID, Engine.SCALAR])
def test_stream_one_byte_chunks(mode_db, engine):
    """Test byte-at-a-time streaming equals one-shot scanning"""
    data = b"xmodelmodeeeeelmodel" * 3
    events = []
    state = initial_state(mode_db)
    for byte in data:
        state = scan_stream(mode_db, state, bytes([byte]), events.append, engine)
    assert (state, events) == scan_bytes(mode_db, data, engine)


def test_stream_random_chunking(small_alphabet_dbs):
    """Test arbitrary chunk boundaries never change the result"""
    rng = np.random.default_rng(8)
    for db in small_alphabet_dbs:
        data = bytes(rng.choice(list(b"abc"), size=300).tolist())
        expected = scan_bytes(db, data, Engine.SCALAR)
        cuts = sorted(set(rng.integers(0, len(data), size=12).tolist()))
        events = []
        state = initial_state(db)
        for begin, end in zip([0] + cuts, cuts + [len(data)]):
            state = scan_stream(db, state, data[begin:end], events.append)
        assert (state, events) == expected


def test_stream_mismatch(mode_db):
    """Test a stream state foreign to the database is refused"""
    with pytest.raises(StreamMismatchError):
        scan_stream(mode_db, StreamState(state=GUTTER_STATE), b"a", lambda event: None)
    with pytest.raises(StreamMismatchError):
        scan_stream(mode_db, StreamState(state=500), b"a", lambda event: None)


def test_gutter_prevents_out_region_error():
    """Test an escape hidden in Chain 2 is caught with the gutter and missed without it"""
    db = _build(["ax"])
    data = b"bbbbaxbbb"
    assert scan_bytes(db, data, Engine.SCALAR)[1] == [MatchEvent(0, 6)]
    assert scan_bytes(db, data, Engine.HYBRID)[1] == [MatchEvent(0, 6)]
    assert scan_bytes(db, data, Engine.HYBRID, gutter=False)[1] == []


def test_exhaustive_small_alphabet(small_alphabet_dbs):
    """Test engine equivalence on every input up to length 7 over {a, b, c}"""
    for db in small_alphabet_dbs:
        assert db.has_region
        for length in range(8):
            for letters in itertools.product(b"abc", repeat=length):
                _assert_equivalent(db, bytes(letters))


@pytest.mark.parametrize("patterns", ABC_PATTERN_SETS)
def test_exhaustive_pattern_sets(patterns):
    """Test engine equivalence for each pattern set on every input up to length 6"""
    db = _build(patterns, batch_length=3)
    for length in range(7):
        for letters in itertools.product(b"abc", repeat=length):
            _assert_equivalent(db, bytes(letters))


@pytest.mark.slow
def test_exhaustive_small_alphabet_length_12(small_alphabet_dbs):
    """Test engine equivalence on every input up to length 12 over {a, b, c}"""
    dbs = small_alphabet_dbs + [_build(patterns) for patterns in ABC_PATTERN_SETS[1:]]
    for db in dbs:
        for length in range(8, 13):
            for letters in itertools.product(b"abc", repeat=length):
                _assert_equivalent(db, bytes(letters))


def test_random_equivalence_generated_rules():
    """Test engine equivalence on region-biased random inputs"""
    for seed in range(3):
        db = _build(synthetic_ruleset(12, seed=seed), batch_length=9)
        for data in difftest_cases(db, seed=seed, cases=60, mean_length=256):
            _assert_equivalent(db, data[:4096])


@pytest.mark.slow
def test_random_equivalence_ten_thousand_cases():
    """Test engine equivalence on 10,000 inputs of up to 4096 bytes"""
    db = _build(synthetic_ruleset(50, seed=99), cfg=DetectorConfig())
    rng = np.random.default_rng(99)
    biased = list(difftest_cases(db, seed=99, cases=5_000))
    for data in biased:
        _assert_equivalent(db, data[:4096])
    for _ in range(5_000):
        data = rng.integers(0, 256, size=int(rng.integers(0, 4097)), dtype=np.uint8).tobytes()
        _assert_equivalent(db, data)


def test_concurrent_scans_share_a_database(mode_db):
    """Test independent streams over one database do not interfere"""
    from concurrent.futures import ThreadPoolExecutor

    inputs = [b"hmodel" * n for n in range(1, 9)]
    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(lambda data: scan_bytes(mode_db, data), inputs))
    assert results == [scan_bytes(mode_db, data, Engine.SCALAR) for data in inputs]
