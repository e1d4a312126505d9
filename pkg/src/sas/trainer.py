"""Epoch loop, per-batch step, AdamW with warmup/linear decay, checkpoints and metrics."""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint as ckpt
from . import numerics as nx
from .augment import (
    AugmentedBatch,
    AugmentedSequence,
    ReplacementCache,
    apply_augmentation,
    cold_start_sample,
    cold_start_table,
    mask_replacements,
    sample_from_log_probs,
    select_positions,
)
from .corpus import EncodedCorpus, SequenceBatch, Vocab, batch_iter, num_batches
from .flops import generator_config, step_flops
from .model import (
    EncoderConfig,
    ForwardCounter,
    ModelState,
    encoder_forward,
    mlm_log_probs,
    no_decay,
    rtd_probs,
)
from .objective import LambdaSchedule, LossBreakdown, combined_loss, mlm_loss, rtd_loss
from .seeding import Purpose, rng_for

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    SAS = "SAS"
    SAS_C = "SAS_C"
    MASK_MLM = "MASK_MLM"
    UNIG_MLM = "UNIG_MLM"
    UNIG_MLM_SAS = "UNIG_MLM_SAS"
    UNIG_MLM_RTD_C = "UNIG_MLM_RTD_C"
    UNIG_MLM_RTD = "UNIG_MLM_RTD"
    ELECTRA_2NET = "ELECTRA_2NET"

    @property
    def self_augmented(self) -> bool:
        return self in (Strategy.SAS, Strategy.SAS_C, Strategy.UNIG_MLM_SAS)

    @property
    def dual_loss(self) -> bool:
        return self in (Strategy.SAS, Strategy.SAS_C, Strategy.UNIG_MLM_RTD, Strategy.UNIG_MLM_RTD_C,
                        Strategy.ELECTRA_2NET)

    @property
    def forwards_per_batch(self) -> int:
        return 2 if self is Strategy.ELECTRA_2NET else 1

    def default_schedule(self, epochs: int) -> LambdaSchedule | None:
        if not self.dual_loss:
            return None
        if self in (Strategy.SAS, Strategy.UNIG_MLM_RTD):
            return LambdaSchedule.linear(50.0, 200.0, epochs)
        return LambdaSchedule.constant(50.0, epochs)


ABLATION_LADDER = (Strategy.MASK_MLM, Strategy.UNIG_MLM, Strategy.UNIG_MLM_SAS, Strategy.UNIG_MLM_RTD,
                   Strategy.SAS_C, Strategy.SAS)


@dataclass
class TrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    strategy: Strategy = Strategy.SAS
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    warmup_fraction: float = 0.05
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-6
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint_every: int = 1
    log_every: int = 50
    lambda_mode: str | None = None
    lambda_start: float | None = None
    lambda_end: float | None = None
    cold_start: str = "unigram"
    generator_fraction: float = 0.25

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must be in [0, 1]")
        if self.cold_start not in ("unigram", "uniform"):
            raise ValueError(f"cold_start must be unigram or uniform, got {self.cold_start!r}")

    def schedule(self) -> LambdaSchedule | None:
        base = self.strategy.default_schedule(self.epochs)
        if base is None:
            return None
        mode = self.lambda_mode or base.mode
        start = base.start if self.lambda_start is None else self.lambda_start
        if mode == "constant":
            return LambdaSchedule.constant(start, self.epochs)
        end = base.end if self.lambda_end is None else self.lambda_end
        return LambdaSchedule.linear(start, end, self.epochs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d["encoder"])
        return cls(**d)


METRIC_COLUMNS = ("step", "epoch", "mlm_loss", "rtd_loss", "lambda", "total", "rtd_accuracy",
                  "encoder_forward_count", "wall_seconds", "cumulative_flops")


@dataclass
class MetricsRecord:
    step: int
    epoch: int
    mlm_loss: float
    rtd_loss: float
    lambda_: float
    total: float
    rtd_accuracy: float
    encoder_forward_count: int
    wall_seconds: float
    cumulative_flops: float

    def row(self) -> list[str]:
        vals = [self.step, self.epoch, self.mlm_loss, self.rtd_loss, self.lambda_, self.total,
                self.rtd_accuracy, self.encoder_forward_count, round(self.wall_seconds, 3), self.cumulative_flops]
        return [repr(v) if isinstance(v, float) else str(v) for v in vals]


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def lr_at(step: int, total_steps: int, warmup_steps: int, peak: float) -> float:
    """Linear warmup from 0 to ``peak`` then linear decay to 0 at ``total_steps``."""
    if warmup_steps > 0 and step < warmup_steps:
        return peak * step / warmup_steps
    if total_steps <= warmup_steps:
        return peak
    return peak * max(0.0, (total_steps - step) / (total_steps - warmup_steps))


class AdamW:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, names: list[str], shapes: dict[str, tuple], beta1=0.9, beta2=0.999, eps=1e-6,
                 weight_decay=0.01, decay: Callable[[str], bool] = lambda n: not no_decay(n)):
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = {n: np.zeros(shapes[n], dtype=np.float32) for n in names}
        self.v = {n: np.zeros(shapes[n], dtype=np.float32) for n in names}
        self.decay = {n: decay(n) for n in names}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for n, p in params.items():
            g = grads[n]
            m = self.m[n] = (b1 * self.m[n] + (1 - b1) * g).astype(np.float32)
            v = self.v[n] = (b2 * self.v[n] + (1 - b2) * g * g).astype(np.float32)
            if lr == 0.0:
                continue
            upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.decay[n] and self.weight_decay:
                upd = upd + self.weight_decay * p
            p -= np.float32(lr) * upd.astype(np.float32)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        s = np.float32(max_norm / (norm + 1e-12))
        for k in grads:
            grads[k] = grads[k] * s
    return norm


class TrainingError(RuntimeError):
    pass


@dataclass
class StepResult:
    breakdown: LossBreakdown
    batch: AugmentedBatch
    rtd_accuracy: float
    mlm_positions: int


class Trainer:
    """Owns model state, optimizer, replacement cache and the run directory."""

    def __init__(self, config: TrainConfig, corpus: EncodedCorpus, vocab: Vocab, run_dir: str | Path | None = None,
                 hooks: list[Callable[["Trainer", int, StepResult], None]] | None = None):
        if config.encoder.vocab_size != len(vocab):
            raise ValueError(f"encoder vocab_size {config.encoder.vocab_size} != vocab {len(vocab)}")
        if config.encoder.seq_len < corpus.seq_len:
            raise ValueError("corpus sequences longer than encoder seq_len")
        self.config = config
        self.corpus = corpus
        self.vocab = vocab
        self.strategy = config.strategy
        self.schedule = config.schedule()
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.hooks = list(hooks or [])
        self.counter = ForwardCounter()
        self.cache = ReplacementCache()
        self.table = cold_start_table(vocab, config.cold_start)
        self.models = self._init_models()
        names = [n for n in self._flat_params()]
        shapes = {n: a.shape for n, a in self._flat_params().items()}
        self.opt = AdamW(names, shapes, config.beta1, config.beta2, config.adam_eps, config.weight_decay,
                         decay=lambda n: not no_decay(n.split("/", 1)[-1]))
        self.steps_per_epoch = num_batches(len(corpus), config.batch_size)
        self.total_steps = self.steps_per_epoch * config.epochs
        self.warmup_steps = int(round(config.warmup_fraction * self.total_steps))
        self.step_count = 0
        self.epoch = 0  # next epoch to run
        self.cumulative_flops = 0.0
        self.metrics: list[MetricsRecord] = []
        self._t0 = time.perf_counter()
        self._wall_offset = 0.0

    # ------------------------------------------------------------ state

    def _init_models(self) -> dict[str, ModelState]:
        cfg = self.config.encoder
        if self.strategy is Strategy.ELECTRA_2NET:
            gcfg = generator_config(cfg, self.config.generator_fraction)
            return {"gen": ModelState.init(gcfg, self.config.seed, key=1),
                    "disc": ModelState.init(cfg, self.config.seed, key=0)}
        return {"main": ModelState.init(cfg, self.config.seed, key=0)}

    @property
    def state(self) -> ModelState:
        """The network whose encoder is evaluated downstream (the discriminator for ELECTRA)."""
        return self.models["disc" if "disc" in self.models else "main"]

    def _flat_params(self) -> dict[str, np.ndarray]:
        return {f"{m}/{n}": a for m, st in self.models.items() for n, a in st.params.items()}

    # ------------------------------------------------------------ augmentation

    def augment(self, batch: SequenceBatch, epoch: int) -> AugmentedBatch:
        items: list[AugmentedSequence] = []
        seed = self.config.seed
        V = self.config.encoder.vocab_size
        for seq in batch.sequences():
            if self.strategy.self_augmented and epoch > 0:
                try:
                    entry = self.cache.fetch(seq.instance_id, epoch)
                except KeyError as exc:
                    raise TrainingError(f"{exc.args[0]} under {self.strategy.value}") from None
                items.append(apply_augmentation(seq, entry.positions, entry.token_ids, V))
                continue
            pos = select_positions(seq, epoch, seed)
            n = len(pos.indices)
            if self.strategy is Strategy.MASK_MLM or self.strategy is Strategy.ELECTRA_2NET:
                reps = mask_replacements(n)
            else:
                reps = cold_start_sample(self.table, n, rng_for(seed, Purpose.COLD_START, epoch, seq.instance_id))
            items.append(apply_augmentation(seq, pos, reps, V))
        return AugmentedBatch.stack(items)

    # ------------------------------------------------------------ step

    def step(self, batch: SequenceBatch, epoch: int) -> StepResult:
        aug = self.augment(batch, epoch)
        if self.strategy is Strategy.ELECTRA_2NET:
            result, grads = self._electra_forward_backward(aug, batch, epoch)
        else:
            result, grads = self._single_forward_backward(aug, batch, epoch)
        bd = result.breakdown
        if not (math.isfinite(bd.mlm_loss) and math.isfinite(bd.rtd_loss) and math.isfinite(bd.total)):
            raise TrainingError(f"non-finite loss at step {self.step_count}: mlm={bd.mlm_loss} rtd={bd.rtd_loss}")
        clip_global_norm(grads, self.config.grad_clip)
        lr = lr_at(self.step_count, self.total_steps, self.warmup_steps, self.config.lr)
        self.opt.step(self._flat_params(), grads, lr)
        self.step_count += 1
        self.cumulative_flops += step_flops(
            self.config.encoder, self.strategy.value, len(aug), k=aug.x.shape[1],
            m=result.mlm_positions / len(aug), generator_fraction=self.config.generator_fraction)
        return result

    def _collect(self, bound: dict[str, dict[str, nx.Tensor]]) -> dict[str, np.ndarray]:
        grads = {}
        for m, params in bound.items():
            for n, t in params.items():
                grads[f"{m}/{n}"] = t.grad if t.grad is not None else np.zeros_like(t.data)
        return grads

    def _single_forward_backward(self, aug: AugmentedBatch, batch: SequenceBatch, epoch: int):
        cfg = self.config.encoder
        state = self.models["main"]
        p = state.bind(requires_grad=True)
        drop = rng_for(self.config.seed, Purpose.DROPOUT, self.step_count)
        sample_next = self.strategy.self_augmented and epoch + 1 < self.config.epochs
        with nx.Tape() as tape:
            hidden = encoder_forward(p, cfg, aug.x_aug, aug.pad_mask, True, drop, self.counter)
            if sample_next:
                lp = self._mlm_and_sample(p, hidden, aug, batch, epoch)
            else:
                lp = mlm_log_probs(p, cfg, hidden, aug.rows, aug.cols)
            l_mlm = mlm_loss(lp, aug.x[aug.rows, aug.cols], aug.rows)
            l_rtd = None
            acc = float("nan")
            if self.strategy.dual_loss:
                d = rtd_probs(p, hidden)
                l_rtd = rtd_loss(d, aug.labels, aug.pad_mask)
                acc = rtd_accuracy(d.data, aug.labels, aug.pad_mask)
            total, bd = combined_loss(l_mlm, l_rtd, self.schedule, epoch)
            bd.mlm_empty = len(aug.rows) == 0
            tape.backward(total)
        return StepResult(bd, aug, acc, len(aug.rows)), self._collect({"main": p})

    def _mlm_and_sample(self, p, hidden, aug: AugmentedBatch, batch: SequenceBatch, epoch: int) -> nx.Tensor:
        """Evaluate the MLM head at S(t) U S(t+1); sample next-epoch replacements at S(t+1)."""
        cfg = self.config.encoder
        k = aug.x.shape[1]
        nxt = [select_positions(seq, epoch + 1, self.config.seed) for seq in batch.sequences()]
        n_rows = np.concatenate([np.full(len(s.indices), i, dtype=np.int64) for i, s in enumerate(nxt)])
        n_cols = np.concatenate([s.indices.astype(np.int64) for s in nxt])
        flat_cur = aug.rows * k + aug.cols
        flat_next = n_rows * k + n_cols
        union = np.union1d(flat_cur, flat_next)
        lp_all = mlm_log_probs(p, cfg, hidden, union // k, union % k)
        loss_idx = np.searchsorted(union, flat_cur)
        samp_idx = np.searchsorted(union, flat_next)
        rng = rng_for(self.config.seed, Purpose.SAMPLE, epoch, self.step_count)
        sampled = sample_from_log_probs(lp_all.data[samp_idx], rng)
        offset = 0
        for i, s in enumerate(nxt):
            n = len(s.indices)
            self.cache.store(int(batch.instance_ids[i]), epoch + 1, s.indices, sampled[offset : offset + n])
            offset += n
        return nx.take(lp_all, loss_idx)

    def _electra_forward_backward(self, aug: AugmentedBatch, batch: SequenceBatch, epoch: int):
        gen, disc = self.models["gen"], self.models["disc"]
        pg, pd = gen.bind(requires_grad=True), disc.bind(requires_grad=True)
        drop = rng_for(self.config.seed, Purpose.DROPOUT, self.step_count)
        with nx.Tape() as tape:
            hg = encoder_forward(pg, gen.config, aug.x_aug, aug.pad_mask, True, drop, self.counter)
            lp = mlm_log_probs(pg, gen.config, hg, aug.rows, aug.cols)
            l_gen = mlm_loss(lp, aug.x[aug.rows, aug.cols], aug.rows)
            rng = rng_for(self.config.seed, Purpose.SAMPLE, epoch, self.step_count)
            sampled = sample_from_log_probs(lp.data, rng)
            x_aug = aug.x.copy()
            x_aug[aug.rows, aug.cols] = sampled
            disc_batch = replace(aug, x_aug=x_aug, labels=(x_aug == aug.x).astype(np.int8))
            hd = encoder_forward(pd, disc.config, disc_batch.x_aug, aug.pad_mask, True, drop, self.counter)
            d = rtd_probs(pd, hd)
            l_disc = rtd_loss(d, disc_batch.labels, aug.pad_mask)
            total, bd = combined_loss(l_gen, l_disc, self.schedule, epoch)
            tape.backward(total)
        acc = rtd_accuracy(d.data, disc_batch.labels, aug.pad_mask)
        return StepResult(bd, disc_batch, acc, len(aug.rows)), self._collect({"gen": pg, "disc": pd})

    # ------------------------------------------------------------ loop

    def run(self, stop_after_epoch: int | None = None) -> "Trainer":
        """Train from ``self.epoch`` to the configured end (or through ``stop_after_epoch``)."""
        last = self.config.epochs - 1 if stop_after_epoch is None else min(stop_after_epoch, self.config.epochs - 1)
        expected = self.strategy.forwards_per_batch
        for epoch in range(self.epoch, last + 1):
            if self.strategy.self_augmented and epoch > 0:
                self._check_cache_complete(epoch)
            n_steps = self.steps_per_epoch
            for i, batch in enumerate(batch_iter(self.corpus, self.config.batch_size, epoch, self.config.seed)):
                before = self.counter.count
                res = self.step(batch, epoch)
                if self.counter.count - before != expected:
                    raise TrainingError(f"{self.counter.count - before} encoder forwards in one batch, "
                                        f"expected {expected} for {self.strategy.value}")
                for hook in self.hooks:
                    hook(self, epoch, res)
                if self.step_count % self.config.log_every == 0 or i == n_steps - 1:
                    self._log(epoch, res)
            self.epoch = epoch + 1
            self.cache.drop_before(epoch + 1)
            self._end_of_epoch(epoch)
        return self

    def _check_cache_complete(self, epoch: int) -> None:
        gen = self.cache.generation(epoch)
        missing = [int(i) for i in self.corpus.instance_ids if int(i) not in gen]
        if missing:
            raise TrainingError(f"cache miss for {len(missing)} instances in epoch {epoch} "
                                f"(first: {missing[0]}) under {self.strategy.value}")

    def _log(self, epoch: int, res: StepResult) -> None:
        bd = res.breakdown
        rec = MetricsRecord(self.step_count, epoch, bd.mlm_loss, bd.rtd_loss, bd.lambda_t, bd.total,
                            res.rtd_accuracy, self.counter.count, self.wall_seconds(), self.cumulative_flops)
        self.metrics.append(rec)
        if self.run_dir is not None:
            path = self.run_dir / "metrics.csv"
            new = not path.exists()
            with open(path, "a", newline="") as f:
                w = csv.writer(f)
                if new:
                    w.writerow(METRIC_COLUMNS)
                w.writerow(rec.row())
        log.info("epoch %d step %d mlm %.4f rtd %.4f lambda %g", epoch, self.step_count, bd.mlm_loss,
                 bd.rtd_loss, bd.lambda_t)

    def wall_seconds(self) -> float:
        return self._wall_offset + time.perf_counter() - self._t0

    def _end_of_epoch(self, epoch: int) -> None:
        if self.run_dir is None:
            return
        if self.strategy.self_augmented and epoch + 1 < self.config.epochs:
            cache_dir = self.run_dir / "cache"
            cache_dir.mkdir(exist_ok=True)
            self.cache.spill(epoch + 1, cache_dir / f"epoch_{epoch + 1:03d}.bin")
        every = self.config.checkpoint_every
        final = epoch == self.config.epochs - 1
        if (every and (epoch + 1) % every == 0) or final:
            d = self.run_dir / "checkpoints"
            d.mkdir(exist_ok=True)
            self.save(d / f"epoch_{epoch:03d}.ckpt")
        if final:
            self.save(self.run_dir / "final.ckpt")

    # ------------------------------------------------------------ checkpoints

    def checkpoint_payload(self) -> tuple[dict[str, np.ndarray], dict]:
        arrays = {}
        for name, a in self._flat_params().items():
            arrays["param/" + name] = a
        for name in self.opt.m:
            arrays["adam_m/" + name] = self.opt.m[name]
            arrays["adam_v/" + name] = self.opt.v[name]
        cache_ref = None
        if self.strategy.self_augmented and 0 < self.epoch < self.config.epochs and self.run_dir is not None:
            path = self.run_dir / "cache" / f"epoch_{self.epoch:03d}.bin"
            if path.exists():
                cache_ref = {"file": f"cache/epoch_{self.epoch:03d}.bin", "sha256": ckpt.file_sha256(path)}
        meta = {
            "format": "sas-checkpoint",
            "train_config": self.config.to_dict(),
            "model_configs": {m: st.config.to_dict() for m, st in self.models.items()},
            "step": self.step_count,
            "epoch": self.epoch,
            "adam_t": self.opt.t,
            "cumulative_flops": self.cumulative_flops,
            "encoder_forward_count": self.counter.count,
            "cache": cache_ref,
        }
        return arrays, meta

    def save(self, path: str | Path) -> str:
        """Write a checkpoint; wall time goes to a ``timing.json`` sidecar so checkpoint bytes stay reproducible."""
        arrays, meta = self.checkpoint_payload()
        digest = ckpt.save(path, arrays, meta)
        side = Path(path).resolve().parent / "timing.json"
        timing = json.loads(side.read_text()) if side.exists() else {}
        timing[Path(path).name] = round(self.wall_seconds(), 3)
        side.write_text(json.dumps(timing, indent=1, sort_keys=True) + "\n")
        return digest

    def restore(self, path: str | Path) -> "Trainer":
        arrays, meta = ckpt.load(path)
        if meta.get("format") != "sas-checkpoint":
            raise ckpt.CheckpointError("not a training checkpoint")
        if meta["train_config"] != self.config.to_dict():
            raise ckpt.CheckpointError("checkpoint was written under a different training config")
        flat = self._flat_params()
        new_params = {}
        for name in flat:
            key = "param/" + name
            if key not in arrays or arrays[key].shape != flat[name].shape:
                raise ckpt.CheckpointError(f"checkpoint lacks parameter {name}")
            new_params[name] = arrays[key]
        for name, a in new_params.items():
            model, pname = name.split("/", 1)
            self.models[model].params[pname] = a.copy()
        for name in self.opt.m:
            self.opt.m[name] = arrays["adam_m/" + name].copy()
            self.opt.v[name] = arrays["adam_v/" + name].copy()
        self.opt.t = int(meta["adam_t"])
        self.step_count = int(meta["step"])
        self.epoch = int(meta["epoch"])
        self.cumulative_flops = float(meta["cumulative_flops"])
        self.counter.count = int(meta["encoder_forward_count"])
        side = Path(path).resolve().parent / "timing.json"
        timing = json.loads(side.read_text()) if side.exists() else {}
        self._wall_offset = float(timing.get(Path(path).name, 0.0))
        self._t0 = time.perf_counter()
        self.cache = ReplacementCache()
        ref = meta.get("cache")
        if ref is not None:
            base = Path(path).resolve().parent
            cache_path = next((c for c in (base / ref["file"], base.parent / ref["file"]) if c.exists()), None)
            if cache_path is None or ckpt.file_sha256(cache_path) != ref["sha256"]:
                raise ckpt.CheckpointError(f"replacement cache {ref['file']} missing or altered")
            self.cache.load_spill(self.epoch, cache_path)
        self._truncate_metrics()
        return self

    def _truncate_metrics(self) -> None:
        """Drop metric rows logged after the restored step (left by an interrupted run)."""
        if self.run_dir is None or not (self.run_dir / "metrics.csv").exists():
            return
        path = self.run_dir / "metrics.csv"
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        kept = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= self.step_count]
        if len(kept) != len(rows):
            with open(path, "w", newline="") as f:
                csv.writer(f).writerows(kept)


def rtd_accuracy(probs: np.ndarray, labels: np.ndarray, pad_mask: np.ndarray) -> float:
    mask = np.asarray(pad_mask, dtype=bool)
    pred = (np.asarray(probs) >= 0.5).astype(np.int8)
    return float((pred[mask] == np.asarray(labels)[mask]).mean())


def load_model_state(path: str | Path, which: str | None = None) -> tuple[ModelState, dict]:
    """Model parameters (no optimizer) from a training checkpoint."""
    arrays, meta = ckpt.load(path)
    models = meta["model_configs"]
    which = which or ("disc" if "disc" in models else "main")
    cfg = EncoderConfig(**models[which])
    prefix = f"param/{which}/"
    params = {k[len(prefix):]: v.copy() for k, v in arrays.items() if k.startswith(prefix)}
    return ModelState(cfg, params), meta


def train(config: TrainConfig, corpus: EncodedCorpus, vocab: Vocab, run_dir: str | Path | None = None,
          resume: str | Path | None = None, stop_after_epoch: int | None = None, hooks=None) -> Trainer:
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        frozen = run_dir / "train_config.json"
        if resume is None or not frozen.exists():
            frozen.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    trainer = Trainer(config, corpus, vocab, run_dir, hooks)
    if resume is not None:
        trainer.restore(resume)
    return trainer.run(stop_after_epoch)


def file_digest(path: str | Path) -> str:
    return ckpt.file_sha256(path)

