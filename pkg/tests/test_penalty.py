import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dorl_lab.data import LogTable
from dorl_lab.penalty import (EntropyIndex, PenaltyConfig, build_entropy_index, entropy_penalty,
                              kl_to_uniform, load_index, modified_reward, normalized_entropy,
                              save_index)

from oracles import brute_force_index, entropy_by_hand


def _logs(sequences):
    users, items, ts = [], [], []
    for u, seq in enumerate(sequences):
        users += [u] * len(seq)
        items += list(seq)
        ts += list(range(len(seq)))
    n = len(users)
    return LogTable.from_columns(users, items, ts, np.full(n, 0.5), np.zeros(n, dtype=int),
                                 n_items=max(items) + 1 if items else 1)


def _as_plain(index: EntropyIndex) -> dict:
    return {k: {key: dict(c) for key, c in index.tables[k].items()} for k in index.orders}


# --------------------------------------------------------------------------- index


def test_sorted_set_key_covers_orderings():
    idx = build_entropy_index(_logs([[8, 3, 7, 5], [7, 3, 8, 9]]), orders=(3,))
    assert dict(idx.lookup(3, [3, 7, 8])) == {5: 1, 9: 1}
    assert idx.lookup(3, [8, 7, 3]) == idx.lookup(3, [3, 7, 8])


def test_sequence_of_length_k_has_no_pattern():
    idx = build_entropy_index(_logs([[1, 2, 3]]), orders=(3,))
    assert idx.lookup(3, [1, 2, 3]) is None


def test_first_order_sliding_counts():
    a, b = 4, 9
    idx = build_entropy_index(_logs([[a, b, a, b]]), orders=(1,))
    assert dict(idx.lookup(1, [a])) == {b: 2}
    assert dict(idx.lookup(1, [b])) == {a: 1}


def test_windows_do_not_cross_users():
    idx = build_entropy_index(_logs([[1, 2], [3, 4]]), orders=(1, 2))
    assert idx.lookup(1, [2]) is None
    assert idx.lookup(2, [1, 2]) is None
    assert dict(idx.lookup(1, [3])) == {4: 1}


def test_keys_sorted_length_k_counts_positive():
    rng = np.random.default_rng(0)
    idx = build_entropy_index(_logs([rng.integers(6, size=30) for _ in range(4)]))
    for k in idx.orders:
        for key, nxt in idx.tables[k].items():
            assert len(key) == k and list(key) == sorted(key)
            assert all(c >= 1 for c in nxt.values())


def test_invalid_orders():
    with pytest.raises(ValueError):
        build_entropy_index(_logs([[1, 2]]), orders=(0,))
    with pytest.raises(ValueError):
        build_entropy_index(_logs([[1, 2]]), orders=())


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 7), max_size=25), min_size=1, max_size=6))
def test_index_matches_brute_force(seqs):
    logs = _logs(seqs)
    idx = build_entropy_index(logs, (1, 2, 3))
    assert _as_plain(idx) == brute_force_index(logs.user_id, logs.item_id, logs.timestamp,
                                               (1, 2, 3))


def test_index_json_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    idx = build_entropy_index(_logs([rng.integers(10, size=40) for _ in range(3)]))
    save_index(idx, tmp_path / "i.json", config_hash="h")
    back = load_index(tmp_path / "i.json")
    assert back.orders == idx.orders and back.n_items == idx.n_items
    assert _as_plain(back) == _as_plain(idx)


def test_index_dump_key_format():
    d = build_entropy_index(_logs([[3, 1, 2]]), orders=(2,)).to_json()
    assert d["counts"] == {"2/1,3/2": 1}
    with pytest.raises(ValueError):
        EntropyIndex.from_json({**d, "version": 99})


# --------------------------------------------------------------------------- entropy


@pytest.mark.parametrize("counts,expected", [
    ({5: 2, 9: 2}, 1.0),
    ({5: 4}, 0.0),
    ({1: 3, 2: 1}, (-0.75 * math.log(0.75) - 0.25 * math.log(0.25)) / math.log(2)),
])
def test_normalized_entropy_examples(counts, expected):
    assert normalized_entropy(counts) == pytest.approx(expected, abs=1e-12)


def test_normalized_entropy_example_value():
    assert normalized_entropy({1: 3, 2: 1}) == pytest.approx(0.8113, abs=1e-4)


def test_normalized_entropy_empty_errors():
    with pytest.raises(ValueError):
        normalized_entropy({})


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=10), st.integers(1, 20))
def test_normalized_entropy_range_scale_invariance(counts, factor):
    cm = dict(enumerate(counts))
    h = normalized_entropy(cm)
    assert -1e-12 <= h <= 1 + 1e-12
    assert h == pytest.approx(entropy_by_hand(counts), abs=1e-12)
    assert normalized_entropy({k: v * factor for k, v in cm.items()}) == pytest.approx(h,
                                                                                       abs=1e-12)


def test_penalty_examples():
    idx = EntropyIndex((3,), {3: {(3, 7, 8): Counter({5: 2, 9: 2})}}, 10)
    assert entropy_penalty(idx, [1, 8, 3, 7]) == pytest.approx(1.0)
    assert entropy_penalty(idx, [1, 2, 3]) == 0.0
    assert entropy_penalty(idx, [3, 7]) == 0.0
    det = EntropyIndex((1, 2), {1: {(1,): Counter({2: 3})}, 2: {(1, 2): Counter({4: 1})}}, 5)
    assert entropy_penalty(det, [2, 1]) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 5), max_size=20), min_size=1, max_size=4),
       st.lists(st.integers(0, 5), max_size=6))
def test_penalty_bounded_by_order_count(seqs, recent):
    idx = build_entropy_index(_logs(seqs))
    pe = entropy_penalty(idx, recent)
    assert 0.0 <= pe <= len(idx.orders) + 1e-12


# --------------------------------------------------------------------------- modified reward and KL


def test_modified_reward_examples():
    assert modified_reward(0.7, 0.3, 0.9, PenaltyConfig(0, 0)) == 0.7
    assert modified_reward(0.5, 0.2, 0.4, PenaltyConfig(0.05, 5)) == pytest.approx(2.49)
    assert modified_reward(0.3, 0.3, 0.5, PenaltyConfig(1, 0)) == 0.0


def test_penalty_config_rejects_negative():
    with pytest.raises(ValueError):
        PenaltyConfig(-0.1, 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 5), st.floats(0, 3), st.floats(0.01, 10),
       st.floats(0.01, 10), st.floats(0.01, 1))
def test_modified_reward_monotone(r, pu, pe, l1, l2, delta):
    cfg = PenaltyConfig(l1, l2)
    base = modified_reward(r, pu, pe, cfg)
    assert modified_reward(r, pu, pe + delta, cfg) > base
    assert modified_reward(r, pu + delta, pe, cfg) < base


def test_kl_examples():
    assert kl_to_uniform([0.25] * 4) == pytest.approx(0.0, abs=1e-15)
    assert kl_to_uniform([1, 0, 0, 0]) == pytest.approx(math.log(4))
    assert kl_to_uniform([0.5, 0.5]) == pytest.approx(0.0, abs=1e-15)


def test_kl_rejects_bad_input():
    with pytest.raises(ValueError):
        kl_to_uniform([0.5, 0.6])
    with pytest.raises(ValueError):
        kl_to_uniform([-0.1, 1.1])
    with pytest.raises(ValueError):
        kl_to_uniform([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=20).filter(lambda v: sum(v) > 0))
def test_kl_identity(weights):
    p = np.array(weights) / sum(weights)
    p = p / p.sum()
    nz = p[p > 0]
    h = -float(np.sum(nz * np.log(nz)))
    assert kl_to_uniform(p) + h == pytest.approx(math.log(len(p)), abs=1e-9)
