import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sas.corpus import (
    CLS_ID,
    MASK_ID,
    NUM_SPECIALS,
    PAD_ID,
    SPECIALS,
    UNK,
    CorpusError,
    EncodedCorpus,
    MarkovOracle,
    Vocab,
    batch_iter,
    build_vocab,
    decode,
    encode,
    epoch_order,
    gen_markov_corpus,
    read_lines,
    tokenize,
)

ROOT = Path(__file__).resolve().parents[1]
TEXT = ROOT / "data" / "founding_documents.txt"


def test_build_vocab_counts():
    v = build_vocab(["a a b"], max_size=10)
    assert v.tokens == SPECIALS + ("a", "b")
    assert v.counts[v.ids["a"]] == 2 and v.counts[v.ids["b"]] == 1
    u = v.unigram()
    assert u[v.ids["a"]] == pytest.approx(2 / 3) and u[v.ids["b"]] == pytest.approx(1 / 3)
    assert u[:NUM_SPECIALS].sum() == 0


def test_build_vocab_empty():
    with pytest.raises(CorpusError, match="empty corpus"):
        build_vocab([], max_size=10)


def test_build_vocab_truncates_to_max_size():
    v = build_vocab(["c c c b b a d"], max_size=6)
    assert v.tokens[NUM_SPECIALS:] == ("c", "b")
    assert v.id_of("a") == v.ids[UNK]
    with pytest.raises(CorpusError):
        build_vocab(["a"], max_size=4)


def test_shipped_text_most_frequent_token():
    # Frozen from scripts/count_tokens.py (standalone one-pass counter): "the" occurs 198 times
    # among the first 10 000 whitespace tokens (the file holds 2909).
    words = " ".join(read_lines(TEXT)).split()[:10_000]
    v = build_vocab([" ".join(words)], max_size=100_000)
    assert v.tokens[NUM_SPECIALS] == "the"
    assert v.counts[NUM_SPECIALS] == 198


def test_count_script_agrees():
    out = subprocess.run([sys.executable, str(ROOT / "scripts" / "count_tokens.py"), str(TEXT)],
                         capture_output=True, text=True, check=True).stdout.split()
    assert out[:2] == ["the", "198"]


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab(["x y y z z z"], 20)
    v.save(tmp_path / "v.txt")
    lines = (tmp_path / "v.txt").read_text().splitlines()
    assert [ln.split("\t")[0] for ln in lines[:4]] == list(SPECIALS)
    assert Vocab.load(tmp_path / "v.txt") == v


def test_encode_pads():
    v = build_vocab(["a b"], 10)
    s = encode("a b", v, 5)
    assert s.ids.tolist() == [CLS_ID, v.ids["a"], v.ids["b"], PAD_ID, PAD_ID]
    assert s.pad_mask.tolist() == [True, True, True, False, False]


def test_encode_empty_text():
    v = build_vocab(["a"], 10)
    s = encode("", v, 3)
    assert s.ids.tolist() == [CLS_ID, PAD_ID, PAD_ID]
    assert s.pad_mask.tolist() == [True, False, False]


def test_encode_truncates():
    words = [f"w{i}" for i in range(200)]
    v = build_vocab([" ".join(words)], 1000)
    s = encode(" ".join(words), v, 64)
    assert len(s.ids) == 64 and s.pad_mask.all()
    assert s.ids[-1] == v.ids["w62"]  # the 63rd word


@settings(max_examples=80, deadline=None)
@given(st.lists(st.sampled_from(["a", "b", "c", "Dd", "e", "[mask]", "zz"]), max_size=20), st.integers(2, 25))
def test_round_trip_with_unk(words, k):
    v = build_vocab(["a b c dd a"], 10)
    s = encode(" ".join(words), v, k)
    expected = [w.lower() if w.lower() in v.ids and w.lower() not in {t.lower() for t in SPECIALS} else UNK
                for w in words][: k - 1]
    assert decode(s, v) == expected
    assert MASK_ID not in s.ids.tolist()


def test_identity_chain_absorbs():
    o = MarkovOracle(np.eye(3), np.array([1.0, 0, 0]), ("a", "b", "c"))
    assert set(gen_markov_corpus(o, 5, 7, seed=0)) == {"a a a a a a a"}


def test_markov_generation_deterministic(small_oracle):
    assert gen_markov_corpus(small_oracle, 50, 10, 4) == gen_markov_corpus(small_oracle, 50, 10, 4)
    assert gen_markov_corpus(small_oracle, 50, 10, 4) != gen_markov_corpus(small_oracle, 50, 10, 5)


def test_markov_rejects_non_stochastic():
    with pytest.raises(CorpusError):
        MarkovOracle(np.array([[0.5, 0.4], [0.5, 0.5]]), np.array([0.5, 0.5]), ("a", "b"))


def _power_stationary(t, iters=10_000):
    p = np.full(len(t), 1.0 / len(t))
    for _ in range(iters):
        p = p @ t
    return p


def test_two_state_stationary_frequencies():
    t = np.array([[0.9, 0.1], [0.2, 0.8]])
    assert np.allclose(_power_stationary(t), [2 / 3, 1 / 3], atol=1e-12)
    o = MarkovOracle(t, np.array([2 / 3, 1 / 3]), ("a", "b"))
    toks = " ".join(gen_markov_corpus(o, 1000, 100, seed=7)).split()
    assert len(toks) == 100_000
    freq_a = toks.count("a") / len(toks)
    assert abs(freq_a - 2 / 3) < 0.01
    assert np.allclose(o.stationary(), [2 / 3, 1 / 3], atol=1e-12)


def test_bigram_frequencies_converge():
    o = MarkovOracle.random(16, seed=11, concentration=0.5)
    seqs = gen_markov_corpus(o, 2000, 51, seed=2)  # 100k bigrams
    idx = {t: i for i, t in enumerate(o.tokens)}
    counts = np.zeros((16, 16))
    for line in seqs:
        s = [idx[w] for w in line.split()]
        np.add.at(counts, (s[:-1], s[1:]), 1)
    assert counts.sum() == 100_000
    rows = counts.sum(axis=1)
    emp = counts / rows[:, None]
    tv = 0.5 * np.abs(emp - o.transition).sum(axis=1)
    assert float((tv * rows).sum() / rows.sum()) < 0.02


def test_oracle_file_round_trip(tmp_path, small_oracle):
    small_oracle.save(tmp_path / "o.txt")
    back = MarkovOracle.load(tmp_path / "o.txt")
    assert np.array_equal(back.transition, small_oracle.transition)
    assert np.array_equal(back.initial, small_oracle.initial)
    assert back.tokens == small_oracle.tokens
    (tmp_path / "bad.txt").write_text("order 1\nstates 2\n")
    with pytest.raises(CorpusError):
        MarkovOracle.load(tmp_path / "bad.txt")


def _corpus(n):
    v = build_vocab(["a b c"], 10)
    return EncodedCorpus.from_texts(["a b"] * n, v, 4)


def test_batch_sizes():
    assert [len(b) for b in batch_iter(_corpus(5), 2, 0, 0)] == [2, 2, 1]
    with pytest.raises(CorpusError):
        list(batch_iter(_corpus(5), 0, 0, 0))


def test_epoch_order_properties():
    assert np.array_equal(epoch_order(100, 3, 1), epoch_order(100, 3, 1))
    assert not np.array_equal(epoch_order(100, 0, 1), epoch_order(100, 1, 1))
    seen = np.concatenate([b.instance_ids for b in batch_iter(_corpus(37), 8, 2, 0)])
    assert sorted(seen.tolist()) == list(range(37))


def test_tokenize_lowercases():
    assert tokenize("The  Cat\tSat") == ["the", "cat", "sat"]
