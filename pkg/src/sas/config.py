"""Run configuration files: flat ``section.key = value`` lines, ``#`` comments.

Unknown keys are rejected. Relative paths resolve against the config file's
directory. ``SAS_OUTPUT_DIR`` overrides ``run.output_dir``.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .model import EncoderConfig
from .trainer import Strategy, TrainConfig

OUTPUT_ENV = "SAS_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    data_corpus: str = ""
    data_heldout: str = ""
    data_vocab: str = ""
    data_oracle: str = ""
    data_probe_a: str = ""
    data_probe_b: str = ""
    data_vocab_max_size: int = 30000
    # model
    model_layers: int = 4
    model_hidden: int = 64
    model_heads: int = 4
    model_ffn: int = 256
    model_seq_len: int = 64
    model_dropout: float = 0.1
    model_tied: bool = True
    # train
    train_strategy: str = "SAS"
    train_epochs: int = 10
    train_batch_size: int = 64
    train_lr: float = 1e-3
    train_warmup_fraction: float = 0.05
    train_weight_decay: float = 0.01
    train_beta1: float = 0.9
    train_beta2: float = 0.999
    train_adam_eps: float = 1e-6
    train_grad_clip: float = 1.0
    train_seed: int = 0
    train_checkpoint_every: int = 1
    train_log_every: int = 50
    train_cold_start: str = "unigram"
    train_generator_fraction: float = 0.25
    # lambda schedule ("" = strategy default)
    lambda_mode: str = ""
    lambda_start: str = ""
    lambda_end: str = ""
    # run
    run_output_dir: str = "runs/default"

    def __post_init__(self):
        try:
            Strategy(self.train_strategy)
        except ValueError:
            raise ConfigError(f"unknown strategy {self.train_strategy!r}; "
                              f"choose from {[s.value for s in Strategy]}") from None
        if self.train_cold_start not in ("unigram", "uniform"):
            raise ConfigError(f"train.cold_start must be unigram or uniform, got {self.train_cold_start!r}")
        if self.lambda_mode not in ("", "constant", "linear"):
            raise ConfigError(f"lambda.mode must be constant or linear, got {self.lambda_mode!r}")

    def encoder(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(self.model_layers, self.model_hidden, self.model_heads, self.model_ffn, vocab_size,
                             self.model_seq_len, self.model_dropout, self.model_tied)

    def train_config(self, vocab_size: int) -> TrainConfig:
        return TrainConfig(
            encoder=self.encoder(vocab_size),
            strategy=Strategy(self.train_strategy),
            epochs=self.train_epochs,
            batch_size=self.train_batch_size,
            lr=self.train_lr,
            warmup_fraction=self.train_warmup_fraction,
            weight_decay=self.train_weight_decay,
            beta1=self.train_beta1,
            beta2=self.train_beta2,
            adam_eps=self.train_adam_eps,
            grad_clip=self.train_grad_clip,
            seed=self.train_seed,
            checkpoint_every=self.train_checkpoint_every,
            log_every=self.train_log_every,
            lambda_mode=self.lambda_mode or None,
            lambda_start=float(self.lambda_start) if self.lambda_start != "" else None,
            lambda_end=float(self.lambda_end) if self.lambda_end != "" else None,
            cold_start=self.train_cold_start,
            generator_fraction=self.train_generator_fraction,
        )

    def with_overrides(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            section, _, key = f.name.partition("_")
            v = getattr(self, f.name)
            lines.append(f"{section}.{key} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


_PATH_KEYS = {"data_corpus", "data_heldout", "data_vocab", "data_oracle", "data_probe_a", "data_probe_b",
              "run_output_dir"}


def _coerce(name: str, raw: str, typ):
    if typ is bool or typ == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ}") from None
    return raw


def parse_config(text: str, base_dir: str | Path | None = None) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        name = key.replace(".", "_", 1)
        if "." not in key or name not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[name] = _coerce(key, raw, types[name])
    if base_dir is not None:
        for k in _PATH_KEYS & values.keys():
            if values[k] and not os.path.isabs(str(values[k])):
                values[k] = str(Path(base_dir) / str(values[k]))
    cfg = RunConfig(**values)
    if os.environ.get(OUTPUT_ENV):
        cfg = cfg.with_overrides(run_output_dir=os.environ[OUTPUT_ENV])
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), path.parent.resolve())
