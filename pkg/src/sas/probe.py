"""Evaluation stand-ins: intrinsic MLM/RTD metrics, KL to a Markov oracle, frozen-encoder linear probe."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .augment import (
    AugmentedBatch,
    apply_augmentation,
    cold_start_sample,
    cold_start_table,
    mask_replacements,
    select_positions,
)
from .corpus import MASK_ID, EncodedCorpus, MarkovOracle, Vocab, state_ids
from .model import ModelState, encoder_forward, mlm_log_probs, rtd_probs
from .seeding import Purpose, rng_for


class ProbeError(ValueError):
    pass


@dataclass
class EvalReport:
    mlm_ce: float
    mlm_ppl: float
    rtd_accuracy: float
    rtd_auc: float
    generator_mean_kl: float = float("nan")
    probe_accuracy: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def eval_augment(heldout: EncodedCorpus, rows: np.ndarray, vocab: Vocab, seed: int, mode: str = "unigram") -> AugmentedBatch:
    """Fixed, strategy-independent corruption of held-out rows (unigram, uniform or [MASK])."""
    table = None if mode == "mask" else cold_start_table(vocab, mode)
    items = []
    for r in rows:
        seq = heldout[int(r)]
        pos = select_positions(seq, 0, seed, purpose=Purpose.EVAL)
        n = len(pos.indices)
        if mode == "mask":
            reps = mask_replacements(n)
        else:
            reps = cold_start_sample(table, n, rng_for(seed, Purpose.EVAL, 1, seq.instance_id))
        items.append(apply_augmentation(seq, pos, reps, len(vocab)))
    return AugmentedBatch.stack(items)


@dataclass
class _Pass:
    """Raw per-batch outputs of an evaluation pass."""
    target_lp: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    kl: list = field(default_factory=list)


def auc_rank(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC: P(score of a label-1 item > score of a label-0 item), ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n1, n0 = int(labels.sum()), int((~labels).sum())
    if n1 == 0 or n0 == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def _batches(n: int, size: int):
    for s in range(0, n, size):
        yield np.arange(s, min(n, s + size))


def _run(state: ModelState, heldout: EncodedCorpus, vocab: Vocab, seed: int, mode: str, batch_size: int,
         oracle: MarkovOracle | None = None) -> _Pass:
    if len(heldout) == 0:
        raise ProbeError("heldout corpus is empty")
    cfg = state.config
    p = state.bind()
    out = _Pass()
    sid = state_ids(oracle, vocab) if oracle is not None else None
    for rows in _batches(len(heldout), batch_size):
        aug = eval_augment(heldout, rows, vocab, seed, mode)
        hidden = encoder_forward(p, cfg, aug.x_aug, aug.pad_mask, train_mode=False)
        lp = mlm_log_probs(p, cfg, hidden, aug.rows, aug.cols).data.astype(np.float64)
        targets = aug.x[aug.rows, aug.cols]
        out.target_lp.append(lp[np.arange(len(targets)), targets])
        d = rtd_probs(p, hidden).data
        sel = aug.pad_mask.copy()
        sel[:, 0] = False  # [CLS] is structural, never a candidate
        out.scores.append(d[sel])
        out.labels.append(aug.labels[sel])
        if oracle is not None:
            out.kl.append(_kl_rows(lp, aug, oracle, sid))
    return out


def intrinsic_eval(state: ModelState, heldout: EncodedCorpus, vocab: Vocab, seed: int = 0, mode: str = "unigram",
                   batch_size: int = 256) -> EvalReport:
    return full_eval(state, heldout, vocab, seed, mode, None, batch_size)


def true_conditional(oracle: MarkovOracle, prev: int, nxt: int | None) -> np.ndarray:
    """q(x | prev, next) for a first-order chain; one-sided when ``nxt`` is None."""
    t = oracle.transition
    q = t[prev].copy() if nxt is None else t[prev] * t[:, nxt]
    return q / q.sum()


def kl_restricted(q: np.ndarray, model_log_probs: np.ndarray) -> float:
    """KL(q || model) with the model renormalised over q's support."""
    lp = np.asarray(model_log_probs, dtype=np.float64)
    if not np.isfinite(lp.max()):
        raise ProbeError("model assigns no mass to the oracle's tokens")
    m = np.exp(lp - lp.max())
    z = m.sum()
    if z <= 0 or not np.isfinite(z):
        raise ProbeError("model assigns no mass to the oracle's tokens")
    logm = np.log(np.maximum(m, 1e-300)) - math.log(z)
    nz = q > 0
    return float(np.sum(q[nz] * (np.log(q[nz]) - logm[nz])))


def _kl_rows(lp: np.ndarray, aug: AugmentedBatch, oracle: MarkovOracle, sid: np.ndarray) -> np.ndarray:
    inv = {int(v): s for s, v in enumerate(sid)}
    kls = []
    for r, (b, i) in enumerate(zip(aug.rows, aug.cols)):
        if i < 2 or not aug.labels[b, i - 1]:
            continue  # previous token must be a real, unreplaced word
        prev = inv.get(int(aug.x[b, i - 1]))
        if prev is None:
            continue
        nxt = None
        if i + 1 < aug.x.shape[1] and aug.pad_mask[b, i + 1]:
            if not aug.labels[b, i + 1]:
                continue
            nxt = inv.get(int(aug.x[b, i + 1]))
            if nxt is None:
                continue
        kls.append(kl_restricted(true_conditional(oracle, prev, nxt), lp[r, sid]))
    return np.asarray(kls)


def generator_kl(state: ModelState, oracle: MarkovOracle, vocab: Vocab, heldout: EncodedCorpus, seed: int = 0,
                 batch_size: int = 256, mode: str = "unigram") -> float:
    """Mean KL(true conditional || MLM distribution) over eligible corrupted positions."""
    res = _run(state, heldout, vocab, seed, mode, batch_size, oracle)
    kl = np.concatenate(res.kl)
    if not len(kl):
        raise ProbeError("no eligible positions for KL evaluation")
    return float(kl.mean())


def full_eval(state: ModelState, heldout: EncodedCorpus, vocab: Vocab, seed: int = 0, mode: str = "unigram",
              oracle: MarkovOracle | None = None, batch_size: int = 256) -> EvalReport:
    res = _run(state, heldout, vocab, seed, mode, batch_size, oracle)
    ce = float(-np.concatenate(res.target_lp).mean())
    scores, labels = np.concatenate(res.scores), np.concatenate(res.labels)
    acc = float(((scores >= 0.5).astype(np.int8) == labels).mean())
    rep = EvalReport(ce, math.exp(ce), acc, auc_rank(scores, labels))
    if oracle is not None:
        rep.generator_mean_kl = float(np.concatenate(res.kl).mean())
    return rep


# ------------------------------------------------------------------ entropies


def _marginals(oracle: MarkovOracle, n: int) -> list[np.ndarray]:
    out = [oracle.initial.copy()]
    for _ in range(n - 1):
        out.append(out[-1] @ oracle.transition)
    return out


def _cond_entropy(joint: np.ndarray, axis_target: int) -> float:
    """H(target | rest) from a joint table (natural log)."""
    j = joint / joint.sum()
    rest = j.sum(axis=axis_target, keepdims=True)
    nz = j > 0
    return float(-np.sum(j[nz] * np.log((j / np.where(rest > 0, rest, 1))[nz])))


def position_conditional_entropies(oracle: MarkovOracle, n_words: int) -> np.ndarray:
    """H(X_j | all other words of the sequence) for j = 1..n_words (Markov blanket = neighbours)."""
    t = oracle.transition
    marg = _marginals(oracle, n_words)
    if n_words == 1:
        p = marg[0]
        nz = p > 0
        return np.array([float(-np.sum(p[nz] * np.log(p[nz])))])
    out = np.empty(n_words)
    out[0] = _cond_entropy(marg[0][:, None] * t, 0)
    out[-1] = _cond_entropy(marg[-2][:, None] * t, 1)
    for j in range(1, n_words - 1):
        joint = marg[j - 1][:, None, None] * t[:, :, None] * t[None, :, :]
        out[j] = _cond_entropy(joint, 1)
    return out


def oracle_conditional_entropy(oracle: MarkovOracle, n_words: int) -> float:
    """Mean of the per-position floors under uniform position selection."""
    return float(position_conditional_entropies(oracle, n_words).mean())


def corrupted_context_entropy(oracle: MarkovOracle, vocab: Vocab, heldout: EncodedCorpus, seed: int = 0,
                              mode: str = "unigram", batch_size: int = 256) -> float:
    """Exact Bayes cross-entropy at the corrupted positions of the fixed evaluation draw.

    For every scored position j the posterior p(x_j | corrupted sequence, j selected) is computed by
    forward-backward over (state, number of corrupted positions so far): the remaining |S|-1 selected
    positions are a uniform subset of the other words, each emitting a cold-start (or [MASK]) token,
    while unselected words are observed verbatim. No model can beat this on average.
    """
    sid = state_ids(oracle, vocab)
    t, p0 = oracle.transition, oracle.initial
    corrupt = np.zeros(len(vocab)) if mode == "mask" else cold_start_table(vocab, mode)
    if mode == "mask":
        corrupt[MASK_ID] = 1.0
    nll = []
    for rows in _batches(len(heldout), batch_size):
        aug = eval_augment(heldout, rows, vocab, seed, mode)
        for b in range(len(rows)):
            n_words = int(aug.pad_mask[b].sum()) - 1
            obs = aug.x_aug[b, 1 : n_words + 1]
            truth = aug.x[b, 1 : n_words + 1]
            sel = aug.cols[aug.rows == b] - 1
            m = len(sel)
            clean = (obs[:, None] == sid[None, :]).astype(np.float64)  # (L, states)
            dirty = corrupt[obs][:, None] * np.ones(len(sid))
            nll.extend(_subset_posterior_nll(t, p0, clean, dirty, m, sel, truth, sid))
    return float(np.mean(nll))


def _subset_posterior_nll(t, p0, clean, dirty, m, sel, truth, sid) -> list[float]:
    n_words, n = clean.shape
    # fwd[i][x, c]: prefix 0..i (all observed), c corrupted among them, state x at i; rescaled per step
    fwd = np.zeros((n_words, n, m))
    a = np.zeros((n, m))
    a[:, 0] = p0 * clean[0]
    if m > 1:
        a[:, 1] = p0 * dirty[0]
    fwd[0] = a / a.sum()
    for i in range(1, n_words):
        prior = t.T @ fwd[i - 1]  # (n, m)
        a = prior * clean[i][:, None]
        a[:, 1:] += prior[:, :-1] * dirty[i][:, None]
        fwd[i] = a / max(a.sum(), 1e-300)
    # bwd[i][x, c]: suffix i+1..L-1 observed with c corrupted, given state x at i
    bwd = np.zeros((n_words, n, m))
    bwd[-1][:, 0] = 1.0
    for i in range(n_words - 2, -1, -1):
        nxt_clean = bwd[i + 1] * clean[i + 1][:, None]
        nxt_dirty = np.zeros_like(nxt_clean)
        nxt_dirty[:, 1:] = bwd[i + 1][:, :-1] * dirty[i + 1][:, None]
        b = t @ (nxt_clean + nxt_dirty)
        bwd[i] = b / max(b.sum(), 1e-300)
    out = []
    inv = {int(v): s for s, v in enumerate(sid)}
    for j in sel:
        pre = p0[:, None] * (np.arange(m) == 0) if j == 0 else t.T @ fwd[j - 1]
        # c1 corrupted before j plus c2 after j must equal m - 1
        post = np.einsum("xc,xc->x", pre, bwd[j][:, ::-1])
        post = post / post.sum()
        out.append(-math.log(max(post[inv[int(truth[j])]], 1e-300)))
    return out


def unigram_entropy(vocab: Vocab) -> float:
    p = vocab.unigram()
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


# ------------------------------------------------------------------ linear probe


def cls_features(state: ModelState, corpus: EncodedCorpus, batch_size: int = 256) -> np.ndarray:
    p = state.bind()
    feats = []
    for rows in _batches(len(corpus), batch_size):
        h = encoder_forward(p, state.config, corpus.ids[rows], corpus.pad_mask[rows], train_mode=False)
        feats.append(h.data[:, 0, :].astype(np.float64))
    return np.concatenate(feats)


def fit_logistic(x: np.ndarray, y: np.ndarray, l2: float = 1e-2, tol: float = 1e-6, max_iter: int = 200_000):
    """Full-batch gradient descent on L2-regularised logistic loss; stops when the gradient norm < tol."""
    n, d = x.shape
    xb = np.hstack([x, np.ones((n, 1))])
    lip = 0.25 * np.linalg.eigvalsh(xb.T @ xb / n).max() + l2
    lr = 1.0 / lip
    w = np.zeros(d + 1)
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0
    for it in range(max_iter):
        z = np.clip(xb @ w, -50, 50)
        g = xb.T @ (1.0 / (1.0 + np.exp(-z)) - y) / n + reg * w
        if np.linalg.norm(g) < tol:
            break
        w -= lr * g
    return w, it


def linear_probe(state: ModelState, class_a: EncodedCorpus, class_b: EncodedCorpus, seed: int = 0,
                 test_fraction: float = 0.5, shuffle_labels: bool = False) -> float:
    xa, xb = cls_features(state, class_a), cls_features(state, class_b)
    x = np.vstack([xa, xb])
    y = np.concatenate([np.zeros(len(xa)), np.ones(len(xb))])
    rng = rng_for(seed, Purpose.PROBE)
    if shuffle_labels:
        y = rng.permutation(y)
    order = rng.permutation(len(y))
    n_test = int(round(test_fraction * len(y)))
    test, tr = order[:n_test], order[n_test:]
    if len(np.unique(y[tr])) < 2 or len(np.unique(y[test])) < 2:
        raise ProbeError("degenerate split: a side holds a single class")
    mu, sd = x[tr].mean(axis=0), x[tr].std(axis=0) + 1e-8
    xs = (x - mu) / sd
    w, _ = fit_logistic(xs[tr], y[tr])
    pred = (np.hstack([xs[test], np.ones((len(test), 1))]) @ w) > 0
    return float((pred == y[test].astype(bool)).mean())

