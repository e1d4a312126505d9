import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sas import probe
from sas.augment import cold_start_table
from sas.corpus import EncodedCorpus, MarkovOracle, build_vocab, gen_markov_corpus, state_ids
from sas.model import EncoderConfig, ModelState
from sas.trainer import TrainConfig, train

from conftest import TINY


def _state(vocab, k=12, **kw):
    return ModelState.init(EncoderConfig(vocab_size=len(vocab), seq_len=k, **{**TINY, **kw}), seed=0)


def test_kl_identical_is_zero():
    q = np.array([0.2, 0.5, 0.3])
    assert probe.kl_restricted(q, np.log(q)) == pytest.approx(0.0, abs=1e-12)


def test_kl_uniform_model_against_peaked_truth():
    expected = 0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5)
    assert expected == pytest.approx(0.3681, abs=1e-4)
    assert probe.kl_restricted(np.array([0.9, 0.1]), np.log([0.5, 0.5])) == pytest.approx(expected)


def test_kl_renormalises_over_support():
    # extra mass outside the support is ignored
    assert probe.kl_restricted(np.array([0.9, 0.1]), np.log([0.25, 0.25])) == pytest.approx(0.3681, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8), st.integers(0, 2**31))
def test_kl_nonnegative(w, seed):
    q = np.array(w) / sum(w)
    lp = np.random.default_rng(seed).normal(size=len(w))
    assert probe.kl_restricted(q, lp) >= -1e-12


def test_kl_zero_model_mass_is_error():
    with pytest.raises(probe.ProbeError):
        probe.kl_restricted(np.array([0.5, 0.5]), np.array([-np.inf, -np.inf]))


def _auc_pairs(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    return sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg) / (len(pos) * len(neg))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_auc_matches_pairwise_count(seed):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 10, 50) / 10.0  # ties on purpose
    labels = rng.random(50) < 0.7
    if labels.all() or not labels.any():
        labels[0] = not labels[0]
    assert probe.auc_rank(scores, labels) == pytest.approx(_auc_pairs(scores, labels), abs=1e-12)


def test_chance_level_detector(small_data):
    _, vocab, corpus = small_data
    st_ = _state(vocab)
    st_.params["rtd.out.w"][...] = 0
    st_.params["rtd.out.b"][...] = 0
    rep = probe.intrinsic_eval(st_, corpus, vocab)
    res = probe._run(st_, corpus, vocab, 0, "unigram", 256)
    base = float(np.concatenate(res.labels).mean())
    assert 0.8 < base < 0.95
    assert rep.rtd_accuracy == pytest.approx(base)
    assert abs(rep.rtd_auc - 0.5) <= 0.02


def test_uniform_mlm_gives_log_vocab(small_data):
    _, vocab, corpus = small_data
    st_ = _state(vocab)
    st_.params["mlm.ln.g"][...] = 0
    st_.params["mlm.ln.b"][...] = 0
    st_.params["mlm.bias"][...] = 0
    rep = probe.intrinsic_eval(st_, corpus, vocab)
    assert rep.mlm_ce == pytest.approx(math.log(len(vocab)), rel=1e-5)
    assert rep.mlm_ppl == pytest.approx(math.exp(rep.mlm_ce))


def test_metrics_deterministic(small_data, small_oracle):
    _, vocab, corpus = small_data
    st_ = _state(vocab)
    a = probe.full_eval(st_, corpus, vocab, seed=3, oracle=small_oracle)
    b = probe.full_eval(st_, corpus, vocab, seed=3, oracle=small_oracle, batch_size=7)
    assert a.as_dict() == pytest.approx(b.as_dict(), nan_ok=True)
    assert 0 <= a.rtd_auc <= 1 and a.generator_mean_kl >= 0


def test_empty_heldout(small_data):
    _, vocab, corpus = small_data
    with pytest.raises(probe.ProbeError):
        probe.intrinsic_eval(_state(vocab), corpus.subset([]), vocab)


def test_mask_mode_evaluates(small_data):
    _, vocab, corpus = small_data
    rep = probe.intrinsic_eval(_state(vocab), corpus, vocab, mode="mask")
    assert rep.mlm_ce > 0


# ---------------------------------------------------------------- Bayes floors


def _enumerated_floor(oracle, vocab, corpus, seed):
    """Brute force over every hidden sequence and every corruption subset containing the scored position."""
    sid = state_ids(oracle, vocab)
    table = cold_start_table(vocab, "unigram")
    n = oracle.size
    nll = []
    aug = probe.eval_augment(corpus, np.arange(len(corpus)), vocab, seed)
    for b in range(len(corpus)):
        L = int(aug.pad_mask[b].sum()) - 1
        obs = aug.x_aug[b, 1 : L + 1]
        sel = list(aug.cols[aug.rows == b] - 1)
        m = len(sel)
        seqs = np.array(list(itertools.product(range(n), repeat=L)))
        prior = oracle.initial[seqs[:, 0]] * np.prod(oracle.transition[seqs[:, :-1], seqs[:, 1:]], axis=1)
        for j in sel:
            post = np.zeros(n)
            for S in itertools.combinations(range(L), m):
                if j not in S:
                    continue
                like = np.ones(len(seqs))
                for i in range(L):
                    like *= table[obs[i]] if i in S else (sid[seqs[:, i]] == obs[i])
                np.add.at(post, seqs[:, j], prior * like)
            post /= post.sum()
            nll.append(-math.log(post[list(sid).index(aug.x[b, j + 1])]))
    return float(np.mean(nll))


def test_corrupted_context_entropy_matches_enumeration():
    oracle = MarkovOracle.random(3, seed=5, concentration=0.5)
    texts = gen_markov_corpus(oracle, 400, 7, seed=1)  # 7 words -> 2 corrupted positions
    vocab = build_vocab(texts, 100)
    held = EncodedCorpus.from_texts(texts[:6], vocab, 8)
    got = probe.corrupted_context_entropy(oracle, vocab, held, seed=2)
    assert got == pytest.approx(_enumerated_floor(oracle, vocab, held, seed=2), rel=1e-9)


def test_floor_ordering(small_oracle):
    texts = gen_markov_corpus(small_oracle, 300, 11, seed=1)
    vocab = build_vocab(texts, 100)
    held = EncodedCorpus.from_texts(texts[:100], vocab, 12)
    clean = probe.oracle_conditional_entropy(small_oracle, 11)
    noisy = probe.corrupted_context_entropy(small_oracle, vocab, held)
    masked = probe.corrupted_context_entropy(small_oracle, vocab, held, mode="mask")
    assert clean < noisy and clean < masked < probe.unigram_entropy(vocab) + 0.2


# ---------------------------------------------------------------- linear probe


def _two_oracle_data(n_each, k=12, seed=0):
    a, b = MarkovOracle.random(8, seed=11, concentration=0.2), MarkovOracle.random(8, seed=12, concentration=0.2)
    ta = gen_markov_corpus(a, n_each, k - 1, seed + 1)
    tb = gen_markov_corpus(b, n_each, k - 1, seed + 2)
    vocab = build_vocab(ta + tb, 100)
    return vocab, ta, tb


def test_probe_shuffled_labels_is_chance():
    vocab, ta, tb = _two_oracle_data(500)
    st_ = _state(vocab)
    ca, cb = EncodedCorpus.from_texts(ta, vocab, 12), EncodedCorpus.from_texts(tb, vocab, 12, first_id=500)
    assert abs(probe.linear_probe(st_, ca, cb, shuffle_labels=True) - 0.5) <= 0.05


def test_probe_same_source_is_chance():
    vocab, ta, _ = _two_oracle_data(1000)
    st_ = _state(vocab)
    ca = EncodedCorpus.from_texts(ta[:500], vocab, 12)
    cb = EncodedCorpus.from_texts(ta[500:], vocab, 12, first_id=500)
    assert abs(probe.linear_probe(st_, ca, cb) - 0.5) <= 0.05


def test_probe_degenerate_split():
    vocab, ta, tb = _two_oracle_data(1)
    st_ = _state(vocab)
    with pytest.raises(probe.ProbeError):
        probe.linear_probe(st_, EncodedCorpus.from_texts(ta, vocab, 12), EncodedCorpus.from_texts(tb, vocab, 12))


def test_probe_trained_vs_random_recorded(tmp_path, capsys):
    # Recorded comparison. At this scale the random encoder's [CLS] state already separates the two
    # sources (0.93 to 0.97) and the pretraining losses never touch [CLS], so trained lands lower (0.82 to 0.86).
    vocab, ta, tb = _two_oracle_data(600)
    ca = EncodedCorpus.from_texts(ta[:200], vocab, 12)
    cb = EncodedCorpus.from_texts(tb[:200], vocab, 12, first_id=200)
    pre = EncodedCorpus.from_texts(ta[200:] + tb[200:], vocab, 12, first_id=400)
    enc = EncoderConfig(vocab_size=len(vocab), seq_len=12, **{**TINY, "dropout": 0.1})
    trainer = train(TrainConfig(encoder=enc, strategy="SAS", epochs=4, batch_size=32, lr=3e-3), pre, vocab, tmp_path)
    trained = probe.linear_probe(trainer.models["main"], ca, cb)
    random = probe.linear_probe(ModelState.init(enc, seed=0), ca, cb)
    with capsys.disabled():
        print(f"\nprobe accuracy: trained={trained:.3f} random={random:.3f}")
    assert trained > 0.6 and random > 0.6
