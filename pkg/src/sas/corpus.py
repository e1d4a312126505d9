"""Vocabulary, encoding, Markov oracle corpora and epoch batching."""
from __future__ import annotations

import collections
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .seeding import Purpose, rng_for

PAD, UNK, MASK, CLS = "[PAD]", "[UNK]", "[MASK]", "[CLS]"
SPECIALS = (PAD, UNK, MASK, CLS)
PAD_ID, UNK_ID, MASK_ID, CLS_ID = range(4)
NUM_SPECIALS = len(SPECIALS)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    counts: tuple[int, ...]
    ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.tokens[:NUM_SPECIALS] != SPECIALS:
            raise CorpusError(f"vocab must start with {SPECIALS}")
        if len(self.counts) != len(self.tokens):
            raise CorpusError("tokens and counts differ in length")
        if any(c < 0 for c in self.counts) or any(self.counts[:NUM_SPECIALS]):
            raise CorpusError("counts must be >= 0 and zero for specials")
        if len(set(self.tokens)) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocab")
        object.__setattr__(self, "ids", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def specials(self) -> dict[str, int]:
        return {t: self.ids[t] for t in SPECIALS}

    def id_of(self, token: str) -> int:
        return self.ids.get(token, UNK_ID)

    def unigram(self) -> np.ndarray:
        """Frequency distribution over the whole id space; specials get 0."""
        c = np.asarray(self.counts, dtype=np.float64)
        total = c.sum()
        if total <= 0:
            raise CorpusError("vocab has no counted tokens")
        return c / total

    def uniform(self) -> np.ndarray:
        p = np.zeros(len(self), dtype=np.float64)
        p[NUM_SPECIALS:] = 1.0
        return p / p.sum()

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok, c in zip(self.tokens, self.counts):
                f.write(f"{tok}\t{c}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        tokens, counts = [], []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, _, c = line.partition("\t")
                tokens.append(tok)
                counts.append(int(c) if c else 0)
        return cls(tuple(tokens), tuple(counts))


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def build_vocab(texts: Iterable[str], max_size: int) -> Vocab:
    if max_size < NUM_SPECIALS + 1:
        raise CorpusError(f"max_size must be >= {NUM_SPECIALS + 1}, got {max_size}")
    counter: collections.Counter[str] = collections.Counter()
    for doc in texts:
        counter.update(tokenize(doc))
    for s in SPECIALS:
        counter.pop(s.lower(), None)
    if not counter:
        raise CorpusError("empty corpus")
    kept = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[: max_size - NUM_SPECIALS]
    tokens = SPECIALS + tuple(t for t, _ in kept)
    counts = (0,) * NUM_SPECIALS + tuple(c for _, c in kept)
    return Vocab(tokens, counts)


@dataclass(frozen=True)
class TokenSequence:
    instance_id: int
    ids: np.ndarray
    pad_mask: np.ndarray

    @property
    def selectable(self) -> np.ndarray:
        """Positions eligible for augmentation: real tokens other than [CLS]."""
        idx = np.flatnonzero(self.pad_mask)
        return idx[self.ids[idx] != CLS_ID]


def encode(text: str, vocab: Vocab, k: int, instance_id: int = 0) -> TokenSequence:
    if k < 2:
        raise CorpusError(f"sequence length must be >= 2, got {k}")
    words = [vocab.id_of(w) for w in tokenize(text)][: k - 1]
    ids = np.full(k, PAD_ID, dtype=np.int32)
    ids[0] = CLS_ID
    ids[1 : 1 + len(words)] = words
    mask = np.zeros(k, dtype=bool)
    mask[: 1 + len(words)] = True
    return TokenSequence(instance_id, ids, mask)


def decode(seq: TokenSequence, vocab: Vocab) -> list[str]:
    return [vocab.tokens[i] for i in seq.ids[seq.pad_mask] if i != CLS_ID]


@dataclass
class EncodedCorpus:
    """Columnar store of fixed-length sequences; row i has instance id ``instance_ids[i]``."""

    ids: np.ndarray
    pad_mask: np.ndarray
    instance_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def seq_len(self) -> int:
        return self.ids.shape[1]

    def __getitem__(self, row: int) -> TokenSequence:
        return TokenSequence(int(self.instance_ids[row]), self.ids[row], self.pad_mask[row])

    def row_of(self, instance_id: int) -> int:
        rows = np.flatnonzero(self.instance_ids == instance_id)
        if not len(rows):
            raise KeyError(f"instance {instance_id} not in corpus")
        return int(rows[0])

    @classmethod
    def from_texts(cls, texts: Iterable[str], vocab: Vocab, k: int, first_id: int = 0) -> "EncodedCorpus":
        seqs = [encode(t, vocab, k, first_id + i) for i, t in enumerate(texts)]
        if not seqs:
            raise CorpusError("empty corpus")
        return cls(
            np.stack([s.ids for s in seqs]),
            np.stack([s.pad_mask for s in seqs]),
            np.array([s.instance_id for s in seqs], dtype=np.int64),
        )

    def subset(self, rows: Sequence[int] | np.ndarray) -> "EncodedCorpus":
        rows = np.asarray(rows, dtype=np.int64)
        return EncodedCorpus(self.ids[rows], self.pad_mask[rows], self.instance_ids[rows])


def read_lines(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


# ---------------------------------------------------------------- batching


@dataclass
class SequenceBatch:
    rows: np.ndarray
    instance_ids: np.ndarray
    ids: np.ndarray
    pad_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)

    def sequences(self) -> list[TokenSequence]:
        return [TokenSequence(int(i), x, m) for i, x, m in zip(self.instance_ids, self.ids, self.pad_mask)]


def epoch_order(n: int, epoch: int, seed: int) -> np.ndarray:
    return rng_for(seed, Purpose.SHUFFLE, epoch).permutation(n)


def batch_iter(corpus: EncodedCorpus, batch_size: int, epoch: int, seed: int) -> Iterator[SequenceBatch]:
    if batch_size < 1:
        raise CorpusError(f"batch_size must be >= 1, got {batch_size}")
    if len(corpus) == 0:
        raise CorpusError("empty corpus")
    order = epoch_order(len(corpus), epoch, seed)
    for start in range(0, len(order), batch_size):
        rows = order[start : start + batch_size]
        yield SequenceBatch(rows, corpus.instance_ids[rows], corpus.ids[rows], corpus.pad_mask[rows])


def num_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


# ---------------------------------------------------------------- Markov oracle


@dataclass(frozen=True)
class MarkovOracle:
    transition: np.ndarray
    initial: np.ndarray
    tokens: tuple[str, ...]
    order: int = 1

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=np.float64)
        p0 = np.asarray(self.initial, dtype=np.float64)
        n = len(self.tokens)
        if self.order != 1:
            raise CorpusError("only first-order chains are supported")
        if t.shape != (n, n) or p0.shape != (n,):
            raise CorpusError(f"transition {t.shape} / initial {p0.shape} do not match {n} tokens")
        if (t < 0).any() or np.abs(t.sum(axis=1) - 1).max() > 1e-9:
            raise CorpusError("transition rows must be non-negative and sum to 1")
        if (p0 < 0).any() or abs(p0.sum() - 1) > 1e-9:
            raise CorpusError("initial distribution must be non-negative and sum to 1")
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "initial", p0)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @classmethod
    def random(cls, size: int, seed: int, concentration: float = 0.3, stationary_start: bool = True) -> "MarkovOracle":
        """Dirichlet rows; small concentration gives peaked, low-entropy transitions."""
        rng = rng_for(seed, Purpose.ORACLE)
        t = rng.dirichlet(np.full(size, concentration), size=size)
        t = t / t.sum(axis=1, keepdims=True)
        tokens = tuple(f"w{j}" for j in range(size))
        init = np.full(size, 1.0 / size)
        oracle = cls(t, init, tokens)
        if stationary_start:
            oracle = cls(t, oracle.stationary(), tokens)
        return oracle

    def stationary(self) -> np.ndarray:
        vals, vecs = np.linalg.eig(self.transition.T)
        v = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
        v = np.abs(v)
        return v / v.sum()

    def save(self, path: str | Path) -> None:
        n = self.size
        lines = [f"order {self.order}", f"states {n}", "tokens " + " ".join(self.tokens),
                 "initial " + " ".join(repr(float(x)) for x in self.initial), "transition"]
        lines += [" ".join(repr(float(x)) for x in row) for row in self.transition]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MarkovOracle":
        lines = [ln.split() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        head = {ln[0]: ln[1:] for ln in lines[:4]}
        try:
            order = int(head["order"][0])
            n = int(head["states"][0])
            tokens = tuple(head["tokens"])
            initial = np.array([float(x) for x in head["initial"]])
            if lines[4] != ["transition"]:
                raise KeyError("transition")
            rows = np.array([[float(x) for x in ln] for ln in lines[5 : 5 + n]])
        except (KeyError, IndexError, ValueError) as exc:
            raise CorpusError(f"malformed oracle file {path}: {exc}") from None
        return cls(rows, initial, tokens, order)


def gen_markov_corpus(oracle: MarkovOracle, num_seqs: int, seq_len: int, seed: int) -> list[str]:
    if num_seqs < 1 or seq_len < 1:
        raise CorpusError("num_seqs and seq_len must be >= 1")
    t = np.asarray(oracle.transition, dtype=np.float64)
    if (t < 0).any() or np.abs(t.sum(axis=1) - 1).max() > 1e-9:
        raise CorpusError("transition rows must be non-negative and sum to 1")
    rng = rng_for(seed, Purpose.CORPUS)
    cdf = np.cumsum(t, axis=1)
    cdf[:, -1] = 1.0
    cdf0 = np.cumsum(oracle.initial)
    cdf0[-1] = 1.0
    n = oracle.size
    states = np.empty((num_seqs, seq_len), dtype=np.int64)
    u = rng.random((num_seqs, seq_len))
    states[:, 0] = np.minimum(np.searchsorted(cdf0, u[:, 0], side="right"), n - 1)
    for j in range(1, seq_len):
        prev = states[:, j - 1]
        states[:, j] = np.minimum((u[:, j, None] >= cdf[prev]).sum(axis=1), n - 1)
    toks = np.array(oracle.tokens)
    return [" ".join(row) for row in toks[states]]


def state_ids(oracle: MarkovOracle, vocab: Vocab) -> np.ndarray:
    """Vocab id of every oracle state (raises if a state is missing from the vocab)."""
    missing = [t for t in oracle.tokens if t not in vocab.ids]
    if missing:
        raise CorpusError(f"oracle tokens missing from vocab: {missing[:5]}")
    return np.array([vocab.ids[t] for t in oracle.tokens])
