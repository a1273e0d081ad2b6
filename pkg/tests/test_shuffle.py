import itertools

import numpy as np
import pytest

from src.automata.dfa import Dfa, compile_pattern_set
from src.engine.database import GUTTER_STATE, LANES, EngineParams, assemble
from src.engine.shuffle import (
    Completed,
    Escaped,
    batch_step,
    chain2_product,
    chain2_window,
    compose_chain,
    earliest_escape_packed,
    escape_masks,
    find_earliest_escape,
    find_earliest_escape_vectorized,
    gutter_latched,
    identity_vector,
    pack_chain_states,
    permute64,
    permute64_portable,
)
from src.errors import BatchContractError
from src.region.detector import DetectorConfig, RegionPlan, detect


@pytest.fixture
def mode_db():
    """Hybrid database for the running example, batch length 9"""
    dfa = compile_pattern_set(["mode+l"])
    return assemble(dfa, detect(dfa))


@pytest.fixture
def three_state_db():
    """Region {0, 1, 2} cycling on 'a', 'b' and escaping to 3 on 'x'"""
    table = np.zeros((4, 256), dtype=np.int32)
    table[:, ord("a")] = [1, 2, 0, 0]
    table[:, ord("b")] = [0, 0, 1, 0]
    table[:3, ord("x")] = 3
    dfa = Dfa(table=table, start=0, accepts={3: frozenset({0})})
    plan = RegionPlan(members=(0, 1, 2), start=0, stickiness_sum=0, leakiness=0.0)
    return assemble(dfa, plan)


def _gutter_walk(db, state, chunk):
    states = []
    for byte in chunk:
        state = int(db.gutter[byte, state])
        states.append(state)
    return states


def test_permute_identity_and_broadcast():
    """Test identity indices copy the table and zero indices broadcast lane 0"""
    table = np.arange(100, 164, dtype=np.uint8)
    np.testing.assert_array_equal(permute64(table, identity_vector()), table)
    np.testing.assert_array_equal(permute64(table, np.zeros(LANES, dtype=np.uint8)), np.full(LANES, 100))


def test_permute_wraps_indices_mod_64():
    """Test an index of 70 selects lane 6"""
    table = np.arange(LANES, dtype=np.uint8) * 2
    idx = np.zeros(LANES, dtype=np.uint8)
    idx[0] = 70
    assert permute64(table, idx)[0] == table[6]


def test_permute_backends_agree():
    """Test the numpy and portable shuffles are identical"""
    rng = np.random.default_rng(1)
    for _ in range(50):
        table = rng.integers(0, 256, LANES, dtype=np.uint8)
        idx = rng.integers(0, 256, LANES, dtype=np.uint8)
        np.testing.assert_array_equal(permute64(table, idx), permute64_portable(table, idx))


def test_compose_with_identity():
    """Test composing after the identity leaves a vector unchanged"""
    vector = np.random.default_rng(2).integers(0, LANES, LANES, dtype=np.uint8)
    np.testing.assert_array_equal(compose_chain([identity_vector(), vector]), vector)


def test_compose_example_vectors(mode_db):
    """Test 'd' then 'e' takes lane 2 to state 4"""
    product = compose_chain([mode_db.gutter[ord("d")], mode_db.gutter[ord("e")]])
    assert product[2] == 4


def test_compose_equals_sequential_steps(mode_db):
    """Test a composed chain applied to a state equals stepping byte by byte"""
    rng = np.random.default_rng(4)
    alphabet = list(b"model") + [0, 255]
    for _ in range(200):
        chunk = bytes(rng.choice(alphabet, size=int(rng.integers(1, 9))).tolist())
        product = compose_chain([mode_db.gutter[b] for b in chunk])
        for lane in range(LANES):
            walked = _gutter_walk(mode_db, lane, chunk)[-1]
            assert product[lane] == walked


def test_compose_needs_a_table():
    """Test an empty chain is refused"""
    with pytest.raises(ValueError):
        compose_chain([])


def test_gutter_latch(mode_db):
    """Test lane 63 stays 63 under every byte"""
    assert gutter_latched(mode_db)
    assert all(mode_db.gutter[b, GUTTER_STATE] == GUTTER_STATE for b in range(256))


def test_find_earliest_escape_examples():
    """Test the linear escape scan"""
    assert find_earliest_escape((3, 12, 1, 11), 10) == 2
    assert find_earliest_escape((0, 1, 2, 3), 10) is None
    assert find_earliest_escape((4, 4, 4, 4), 4) is None


def test_earliest_escape_second_lane_first():
    """Test S2 is found first when S2 > S4 > limit > S1 > S3"""
    assert find_earliest_escape_vectorized(2, 9, 1, 7, 5) == 2


@pytest.mark.parametrize("limit", [0, 5])
def test_vectorized_escape_matches_linear(limit):
    """Test packed escape detection agrees with the scan on every tuple"""
    values = range(limit + 4)
    for tuple4 in itertools.product(values, repeat=4):
        assert find_earliest_escape_vectorized(*tuple4, limit) == find_earliest_escape(tuple4, limit)


@pytest.mark.slow
def test_vectorized_escape_matches_linear_full_lane_range():
    """Test the packed path at limit 62 over all tuples of 0..65"""
    limit = 62
    values = np.arange(limit + 4, dtype=np.uint32)
    rest = np.stack(np.meshgrid(values, values, values, indexing="ij"), axis=-1).reshape(-1, 3)
    for first in values:
        grid = np.column_stack([np.full(len(rest), first, dtype=np.uint32), rest])
        packed = grid[:, 0] ^ (grid[:, 1] << 8) ^ (grid[:, 2] << 16) ^ (grid[:, 3] << 24)
        above = grid > limit
        expected = np.where(above.any(axis=1), above.argmax(axis=1) + 1, 0)
        np.testing.assert_array_equal(earliest_escape_packed(packed, limit), expected)


def test_vectorized_escape_sampled_at_limit_62():
    """Test the packed path at limit 62 on the boundary values"""
    limit = 62
    values = [0, 1, 61, 62, 63, 64, 65]
    for tuple4 in itertools.product(values, repeat=4):
        assert find_earliest_escape_vectorized(*tuple4, limit) == find_earliest_escape(tuple4, limit)


def test_escape_masks_flag_strictly_greater():
    """Test the boundary value itself is not flagged"""
    packed = pack_chain_states(4, 5, 3, 63)
    assert escape_masks(packed, 4)[0] == 0b1010


def test_pack_chain_states_layout():
    """Test S1 lands in the lowest byte"""
    assert pack_chain_states(1, 2, 3, 4) == 0x04030201


def test_batch_completes_inside_region(mode_db):
    """Test a batch that never leaves the region equals nine scalar steps"""
    chunk = b"momomodem"
    outcome = batch_step(mode_db, 0, chunk)
    state = 0
    for byte in chunk:
        state = int(mode_db.outer[state, byte])
    assert outcome == Completed(state)


def test_batch_escape_in_chain_two(mode_db):
    """Test an escape at position 5 is reported from the Chain 1 end state"""
    assert batch_step(mode_db, 0, b"modelmode") == Escaped(index=5, replay_state=4)


def test_batch_escape_in_chain_one(three_state_db):
    """Test an escape at position 2 latches and replays from S1"""
    chunk = b"axaaaaaaa"
    states = _gutter_walk(three_state_db, 0, chunk[:4])
    assert states == [1, GUTTER_STATE, GUTTER_STATE, GUTTER_STATE]
    assert batch_step(three_state_db, 0, chunk) == Escaped(index=2, replay_state=1)


def test_batch_escape_at_first_byte(three_state_db):
    """Test an escape on the first byte replays from the batch start"""
    assert batch_step(three_state_db, 2, b"xaaaaaaaa") == Escaped(index=1, replay_state=2)


def test_batch_never_completes_after_escape(three_state_db):
    """Test every escaping chunk over {a, b, x} is reported as escaped"""
    db = three_state_db
    for letters, start in itertools.product(itertools.product(b"abx", repeat=9), range(3)):
        chunk = bytes(letters)
        walk = _gutter_walk(db, start, chunk)
        outcome = batch_step(db, start, chunk)
        if any(s > db.s_limit for s in walk):
            assert isinstance(outcome, Escaped)
            first = next(i for i, s in enumerate(walk, start=1) if s > db.s_limit)
            assert outcome.index <= first
        else:
            assert outcome == Completed(walk[-1])


def _random_escape_chunk(rng, length):
    """Random bytes where roughly one in ten is one of the escaping bytes 0..2."""
    chunk = rng.integers(3, 256, size=length)
    escapes = rng.random(length) < 0.1
    chunk[escapes] = rng.integers(0, 3, size=int(escapes.sum()))
    return bytes(chunk.astype(np.uint8).tolist())


@pytest.mark.parametrize("regions", [100, pytest.param(500, marks=pytest.mark.slow)])
def test_chain_decomposition_random_gutters(regions):
    """Test batch outcomes equal sequential gutter steps on random regions"""
    rng = np.random.default_rng(12)
    outcomes = {Completed: 0, Escaped: 0}
    for _ in range(regions):
        k = int(rng.integers(2, 10))
        n = k + 2
        table = rng.integers(0, k, size=(n, 256)).astype(np.int32)
        table[:k, :3] = rng.integers(k, n, size=(k, 3))  # bytes 0..2 escape
        table[np.arange(n - 1), 3] = np.arange(1, n)  # keep everything reachable
        dfa = Dfa(table=table, start=0, accepts={})
        plan = RegionPlan(members=tuple(range(k)), start=0, stickiness_sum=0, leakiness=0.0)
        length = int(rng.integers(2, 13))
        head = length // 2
        db = assemble(dfa, plan, EngineParams(batch_length=length))
        for _ in range(20):
            chunk = _random_escape_chunk(rng, length)
            start = int(rng.integers(0, k))
            walk = _gutter_walk(db, start, chunk)
            outcome = batch_step(db, start, chunk)
            outcomes[type(outcome)] += 1
            escaped_at = [i for i, s in enumerate(walk, start=1) if s > db.s_limit]
            if not escaped_at:
                assert outcome == Completed(walk[-1])
            elif escaped_at[0] <= head:
                first = escaped_at[0]
                assert outcome == Escaped(index=first, replay_state=start if first == 1 else walk[first - 2])
            else:
                assert outcome == Escaped(index=head + 1, replay_state=walk[head - 1])
    assert sum(outcomes.values()) == regions * 20
    assert outcomes[Completed] > 0 and outcomes[Escaped] > 0


def test_batch_contract_errors(mode_db):
    """Test batch preconditions are enforced"""
    with pytest.raises(BatchContractError):
        batch_step(mode_db, 64, b"modelmode")
    with pytest.raises(BatchContractError):
        batch_step(mode_db, 0, b"mode")
    scalar_db = assemble(compile_pattern_set(["mode+l"]), None)
    with pytest.raises(BatchContractError):
        batch_step(scalar_db, 0, b"modelmode")


def test_chain2_window_rows_match_products(mode_db):
    """Test windowed Chain 2 products equal per-offset compositions"""
    data = b"xxmodeeelmodmode" * 3
    window = chain2_window(mode_db, data)
    m = mode_db.batch_length - mode_db.batch_length // 2
    assert window.shape == (len(data) - m + 1, LANES)
    for offset in range(len(window)):
        np.testing.assert_array_equal(window[offset], chain2_product(mode_db, data[offset:offset + m]))


@pytest.mark.parametrize("stride", [1, 4, 9])
def test_chain2_window_strided_rows(mode_db, stride):
    """Test a strided window keeps only the rows at multiples of the stride"""
    data = b"xxmodeeelmodmode" * 5
    full = chain2_window(mode_db, data)
    strided = chain2_window(mode_db, data, stride=stride)
    np.testing.assert_array_equal(strided, full[::stride])


def test_chain2_window_too_short(mode_db):
    """Test data shorter than Chain 2 gives no rows"""
    assert chain2_window(mode_db, b"mod", stride=9).shape == (0, LANES)


def test_no_gutter_misses_chain_two_escape():
    """Test the untrusted T_s vectors wrap an escape back into the region"""
    dfa = compile_pattern_set(["ax"])
    db = assemble(dfa, detect(dfa, DetectorConfig(sigma=0, leak_threshold=1.0)))
    assert db.renumbering.members == (0, 1)
    chunk = b"bbbbaxbbb"
    assert isinstance(batch_step(db, 0, chunk), Escaped)
    assert isinstance(batch_step(db, 0, chunk, gutter=False), Completed)
