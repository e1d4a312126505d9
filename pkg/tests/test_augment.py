import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sas.augment import (
    AugmentError,
    AugmentedBatch,
    ReplacementCache,
    apply_augmentation,
    cold_start_sample,
    cold_start_table,
    num_selected,
    read_spill,
    sample_from_log_probs,
    select_positions,
)
from sas.corpus import CLS_ID, NUM_SPECIALS, PAD_ID, TokenSequence


def _seq(k_eff, k=None, iid=0):
    k = k or k_eff + 1
    ids = np.full(k, PAD_ID, dtype=np.int32)
    ids[0] = CLS_ID
    ids[1 : k_eff + 1] = 10
    mask = ids != PAD_ID
    return TokenSequence(iid, ids, mask)


@pytest.mark.parametrize("k_eff,n", [(128, 20), (10, 2), (7, 2), (1, 1), (20, 3), (31, 5)])
def test_num_selected(k_eff, n):
    assert num_selected(k_eff) == n
    assert len(select_positions(_seq(k_eff), 0, 0).indices) == n


def test_single_selectable_position():
    assert select_positions(_seq(1, k=4), 0, 0).indices.tolist() == [1]


def test_no_selectable_positions():
    with pytest.raises(AugmentError):
        select_positions(_seq(0, k=3), 0, 0)


def test_selection_frequency_uniform():
    seq = _seq(20)
    counts = np.zeros(21)
    draws = 100_000 // 3
    for e in range(draws):
        counts[select_positions(seq, e, 1).indices] += 1
    freq = counts[1:] / draws
    assert counts[0] == 0
    assert np.all(np.abs(freq - 0.15) < 0.01)


def test_selection_deterministic_and_dynamic():
    seq = _seq(40)
    a, b = select_positions(seq, 2, 5), select_positions(seq, 2, 5)
    assert np.array_equal(a.indices, b.indices)
    assert any(not np.array_equal(a.indices, select_positions(seq, e, 5).indices) for e in range(3, 8))


def test_cold_start_single_token():
    t = np.zeros(10)
    t[6] = 1.0
    assert set(cold_start_sample(t, 500, 0).tolist()) == {6}


def test_cold_start_uniform_eight():
    t = np.zeros(12)
    t[4:] = 1.0
    draws = cold_start_sample(t / t.sum(), 80_000, 3)
    freq = np.bincount(draws, minlength=12)[4:] / 80_000
    assert np.all(np.abs(freq - 0.125) < 0.01)


def test_cold_start_unigram_tv():
    p = np.array([0.0, 0.0, 0.0, 0.0, 0.5, 0.3, 0.2])
    draws = cold_start_sample(p, 100_000, 4)
    emp = np.bincount(draws, minlength=len(p)) / len(draws)
    assert 0.5 * np.abs(emp - p).sum() < 0.01


def test_cold_start_zero_table():
    with pytest.raises(AugmentError):
        cold_start_sample(np.zeros(5), 3, 0)


def test_cold_start_tables(small_data):
    _, vocab, _ = small_data
    u = cold_start_table(vocab, "uniform")
    assert u[:NUM_SPECIALS].sum() == 0 and np.allclose(u[NUM_SPECIALS:], 1 / (len(vocab) - NUM_SPECIALS))
    assert cold_start_table(vocab, "unigram").sum() == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(AugmentError):
        cold_start_table(vocab, "zipf")


def test_sample_one_hot():
    lp = np.full((50, 8), -np.inf)
    lp[:, 5] = 0.0
    assert set(sample_from_log_probs(lp, 0).tolist()) == {5}


def test_sample_frequency():
    lp = np.log(np.array([[1e-300, 1e-300, 1e-300, 1e-300, 0.9, 0.1]] * 10_000))
    draws = sample_from_log_probs(lp, 1)
    assert abs((draws == 4).mean() - 0.9) < 0.02


def test_sample_never_special():
    lp = np.log(np.full((2000, 9), 1 / 9))
    assert sample_from_log_probs(lp, 2).min() >= NUM_SPECIALS


def test_coinciding_replacement_keeps_label_one():
    seq = TokenSequence(0, np.array([CLS_ID, 5, 7, 9]), np.ones(4, dtype=bool))
    a = apply_augmentation(seq, np.array([2]), [7])
    assert np.array_equal(a.x_aug, seq.ids)
    assert a.labels.tolist() == [1, 1, 1, 1]


def test_direct_application():
    seq = TokenSequence(0, np.array([CLS_ID, 5, 7, 9]), np.ones(4, dtype=bool))
    a = apply_augmentation(seq, np.array([1, 3]), [6, 2])
    assert a.x_aug.tolist() == [CLS_ID, 6, 7, 2]
    assert a.labels.tolist() == [1, 0, 1, 0]


def test_empty_selection_identity():
    seq = TokenSequence(0, np.array([CLS_ID, 5, 7, 9]), np.ones(4, dtype=bool))
    a = apply_augmentation(seq, np.array([], dtype=int), [])
    assert np.array_equal(a.x_aug, seq.ids) and a.labels.all()
    b = AugmentedBatch.stack([a])
    assert len(b.rows) == 0


def test_apply_errors():
    seq = TokenSequence(0, np.array([CLS_ID, 5, 7, 9]), np.ones(4, dtype=bool))
    with pytest.raises(AugmentError):
        apply_augmentation(seq, np.array([1]), [3, 4])
    with pytest.raises(AugmentError):
        apply_augmentation(seq, np.array([1]), [12], vocab_size=12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(0, 5), st.integers(0, 1000), st.integers(0, 3))
def test_label_soundness_and_support(k_eff, pad, seed, epoch):
    rng = np.random.default_rng(seed)
    k = k_eff + 1 + pad
    ids = np.full(k, PAD_ID, dtype=np.int32)
    ids[0] = CLS_ID
    ids[1 : k_eff + 1] = rng.integers(NUM_SPECIALS, 12, size=k_eff)
    seq = TokenSequence(seed, ids, ids != PAD_ID)
    pos = select_positions(seq, epoch, seed)
    reps = rng.integers(NUM_SPECIALS, 12, size=len(pos.indices))
    a = apply_augmentation(seq, pos, reps, 12)
    assert len(pos.indices) == num_selected(k_eff)
    assert len(set(pos.indices.tolist())) == len(pos.indices)
    assert set(pos.indices.tolist()) <= set(range(1, k_eff + 1))
    off = np.setdiff1d(np.arange(k), pos.indices)
    assert np.array_equal(a.x_aug[off], ids[off])
    assert np.array_equal(a.labels, (a.x_aug == ids).astype(np.int8))
    assert CLS_ID not in a.x_aug[1:] and PAD_ID not in a.x_aug[pos.indices]


def test_cache_round_trip_and_errors(tmp_path):
    c = ReplacementCache()
    c.store(7, 2, [1, 4], [9, 11])
    with pytest.raises(AugmentError, match="double write"):
        c.store(7, 2, [1], [3])
    e = c.fetch(7, 2)
    assert e.positions.tolist() == [1, 4] and e.token_ids.tolist() == [9, 11]
    with pytest.raises(AugmentError):
        c.fetch(7, 2)
    with pytest.raises(KeyError, match="cache miss"):
        c.fetch(8, 2)
    c.store(3, 2, [2], [5])
    c.spill(2, tmp_path / "s.bin")
    recs = {i: (p.tolist(), t.tolist()) for i, p, t in read_spill(tmp_path / "s.bin")}
    assert recs == {3: ([2], [5]), 7: ([1, 4], [9, 11])}
    raw = (tmp_path / "s.bin").read_bytes()
    assert raw[:8] == np.array([3, 1], dtype="<i4").tobytes()
    (tmp_path / "t.bin").write_bytes(raw[:-2])
    with pytest.raises(AugmentError):
        list(read_spill(tmp_path / "t.bin"))
    d = ReplacementCache()
    d.load_spill(2, tmp_path / "s.bin")
    assert d.fetch(7, 2).token_ids.tolist() == [9, 11]
    c.drop_before(3)
    assert len(c) == 0
