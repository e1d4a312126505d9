"""Position selection, cold-start and self-augmented replacements, RTD labels, replacement cache."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .corpus import CLS_ID, MASK_ID, NUM_SPECIALS, PAD_ID, TokenSequence
from .seeding import Purpose, rng_for


class AugmentError(ValueError):
    pass


def num_selected(k_eff: int, percent: int = 15) -> int:
    """ceil(percent/100 * k_eff) in exact integer arithmetic."""
    return (percent * k_eff + 99) // 100


@dataclass(frozen=True)
class PositionSet:
    instance_id: int
    epoch: int
    indices: np.ndarray


def select_positions(seq: TokenSequence, epoch: int, seed: int, percent: int = 15,
                     purpose: Purpose = Purpose.SELECT) -> PositionSet:
    pool = seq.selectable
    if len(pool) == 0:
        raise AugmentError(f"instance {seq.instance_id} has no selectable positions")
    rng = rng_for(seed, purpose, epoch, seq.instance_id)
    chosen = np.sort(rng.choice(pool, size=num_selected(len(pool), percent), replace=False))
    return PositionSet(seq.instance_id, epoch, chosen.astype(np.int32))


def _check_table(table: np.ndarray) -> np.ndarray:
    p = np.asarray(table, dtype=np.float64)
    if (p < 0).any() or p.sum() <= 0:
        raise AugmentError("cold-start table has no mass")
    return p / p.sum()


def cold_start_sample(table: np.ndarray, n: int, rng: np.random.Generator | int) -> np.ndarray:
    """i.i.d. draws from a (unigram or uniform) table over the id space."""
    p = _check_table(table)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(n), side="right").astype(np.int32)


def cold_start_table(vocab, mode: str = "unigram") -> np.ndarray:
    if mode == "unigram":
        return vocab.unigram()
    if mode == "uniform":
        return vocab.uniform()
    raise AugmentError(f"unknown cold-start mode {mode!r}")


def sample_from_log_probs(log_probs: np.ndarray, rng: np.random.Generator | int, support_from: int = NUM_SPECIALS) -> np.ndarray:
    """One categorical draw per row, temperature 1, restricted to non-special ids."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    lp = np.asarray(log_probs, dtype=np.float64)
    p = np.exp(lp - lp.max(axis=1, keepdims=True))
    p[:, :support_from] = 0.0
    total = p.sum(axis=1, keepdims=True)
    if (total <= 0).any():
        raise AugmentError("no probability mass on non-special tokens")
    cdf = np.cumsum(p / total, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(len(lp))
    return (u[:, None] >= cdf).sum(axis=1).astype(np.int32)


@dataclass
class AugmentedSequence:
    instance_id: int
    x: np.ndarray
    x_aug: np.ndarray
    positions: np.ndarray
    labels: np.ndarray
    pad_mask: np.ndarray


def apply_augmentation(seq: TokenSequence, positions: PositionSet | np.ndarray, replacements: Sequence[int],
                       vocab_size: int | None = None) -> AugmentedSequence:
    idx = np.asarray(positions.indices if isinstance(positions, PositionSet) else positions, dtype=np.int64)
    rep = np.asarray(replacements, dtype=np.int32)
    if len(idx) != len(rep):
        raise AugmentError(f"{len(rep)} replacements for {len(idx)} positions")
    if vocab_size is not None and len(rep) and (rep.max() >= vocab_size or rep.min() < 0):
        raise AugmentError(f"replacement id out of range for vocab of {vocab_size}")
    x_aug = seq.ids.copy()
    x_aug[idx] = rep
    labels = (x_aug == seq.ids).astype(np.int8)
    return AugmentedSequence(seq.instance_id, seq.ids, x_aug, idx.astype(np.int32), labels, seq.pad_mask)


@dataclass
class AugmentedBatch:
    instance_ids: np.ndarray
    x: np.ndarray
    x_aug: np.ndarray
    labels: np.ndarray
    pad_mask: np.ndarray
    rows: np.ndarray
    cols: np.ndarray

    @classmethod
    def stack(cls, items: Sequence[AugmentedSequence]) -> "AugmentedBatch":
        rows = np.concatenate([np.full(len(a.positions), i, dtype=np.int64) for i, a in enumerate(items)])
        cols = np.concatenate([a.positions.astype(np.int64) for a in items])
        return cls(
            np.array([a.instance_id for a in items], dtype=np.int64),
            np.stack([a.x for a in items]),
            np.stack([a.x_aug for a in items]),
            np.stack([a.labels for a in items]),
            np.stack([a.pad_mask for a in items]),
            rows,
            cols,
        )

    def __len__(self) -> int:
        return len(self.instance_ids)

    def positions_of(self, i: int) -> np.ndarray:
        return self.cols[self.rows == i]

    def replacements_of(self, i: int) -> np.ndarray:
        return self.x_aug[i, self.positions_of(i)]


@dataclass(frozen=True)
class CacheEntry:
    epoch: int
    positions: np.ndarray
    token_ids: np.ndarray


class ReplacementCache:
    """Sampled replacement indices keyed by instance id, one generation per epoch.

    ``store`` writes entries destined for the *next* epoch; ``fetch`` reads
    entries for the current one. Each (instance, epoch) is written once and
    read once.
    """

    def __init__(self):
        self._entries: dict[int, dict[int, CacheEntry]] = {}
        self._consumed: set[tuple[int, int]] = set()

    def store(self, instance_id: int, epoch: int, positions, token_ids) -> None:
        gen = self._entries.setdefault(epoch, {})
        if instance_id in gen:
            raise AugmentError(f"double write for instance {instance_id} epoch {epoch}")
        pos = np.asarray(positions, dtype=np.int32).copy()
        tok = np.asarray(token_ids, dtype=np.int32).copy()
        if pos.shape != tok.shape:
            raise AugmentError("positions and token ids differ in length")
        gen[instance_id] = CacheEntry(epoch, pos, tok)

    def fetch(self, instance_id: int, epoch: int, consume: bool = True) -> CacheEntry:
        try:
            entry = self._entries[epoch][instance_id]
        except KeyError:
            raise KeyError(f"cache miss: instance {instance_id} epoch {epoch}") from None
        if consume:
            if (instance_id, epoch) in self._consumed:
                raise AugmentError(f"instance {instance_id} epoch {epoch} already consumed")
            self._consumed.add((instance_id, epoch))
        return entry

    def has(self, instance_id: int, epoch: int) -> bool:
        return instance_id in self._entries.get(epoch, {})

    def epochs(self) -> list[int]:
        return sorted(self._entries)

    def generation(self, epoch: int) -> dict[int, CacheEntry]:
        return self._entries.get(epoch, {})

    def drop_before(self, epoch: int) -> None:
        for e in [e for e in self._entries if e < epoch]:
            del self._entries[e]
        self._consumed = {c for c in self._consumed if c[1] >= epoch}

    def __len__(self) -> int:
        return sum(len(g) for g in self._entries.values())

    # spill files: repeated little-endian int32 records (instance_id, n, positions[n], ids[n])

    def spill(self, epoch: int, path: str | Path) -> None:
        with open(path, "wb") as f:
            for iid in sorted(self.generation(epoch)):
                e = self._entries[epoch][iid]
                f.write(struct.pack("<ii", iid, len(e.positions)))
                f.write(e.positions.astype("<i4").tobytes())
                f.write(e.token_ids.astype("<i4").tobytes())

    def load_spill(self, epoch: int, path: str | Path) -> None:
        for iid, pos, tok in read_spill(path):
            self.store(iid, epoch, pos, tok)


def read_spill(path: str | Path) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    raw = Path(path).read_bytes()
    off = 0
    while off < len(raw):
        if off + 8 > len(raw):
            raise AugmentError(f"truncated spill file {path}")
        iid, n = struct.unpack_from("<ii", raw, off)
        off += 8
        if n < 0 or off + 8 * n > len(raw):
            raise AugmentError(f"truncated spill file {path}")
        pos = np.frombuffer(raw, dtype="<i4", count=n, offset=off).astype(np.int32)
        tok = np.frombuffer(raw, dtype="<i4", count=n, offset=off + 4 * n).astype(np.int32)
        off += 8 * n
        yield iid, pos, tok


def mask_replacements(n: int) -> np.ndarray:
    return np.full(n, MASK_ID, dtype=np.int32)


FORBIDDEN_REPLACEMENTS = (PAD_ID, CLS_ID)
