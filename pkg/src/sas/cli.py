"""Command-line entry point: ``sas <subcommand> ...``.

Exit status is 0 on success and 1 with a one-line ``error:`` message on
stderr otherwise (argparse usage errors exit with 2).
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import flops as fl
from .augment import AugmentError, read_spill
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .corpus import CorpusError, EncodedCorpus, MarkovOracle, Vocab, build_vocab, gen_markov_corpus, read_lines
from .model import EncoderConfig
from .probe import ProbeError, full_eval, linear_probe
from .trainer import ABLATION_LADDER, Strategy, TrainingError, load_model_state, train

log = logging.getLogger("sas")

EXPECTED_ERRORS = (ConfigError, CorpusError, CheckpointError, TrainingError, ProbeError, AugmentError,
                   FloatingPointError, FileNotFoundError, NotADirectoryError, FileExistsError, KeyError, ValueError)

REPORT_COLUMNS = ("checkpoint", "mlm_ce", "mlm_ppl", "rtd_accuracy", "rtd_auc", "generator_mean_kl",
                  "probe_accuracy")
ABLATION_COLUMNS = ("strategy", "steps", "train_flops", "mlm_ce", "mlm_ppl", "rtd_accuracy", "rtd_auc",
                    "generator_mean_kl", "probe_accuracy", "eval_mode", "wall_seconds")


class LockError(FileExistsError):
    pass


@contextmanager
def run_lock(run_dir: Path):
    """Exclusive ``run.lock`` in the run directory for the duration of a run."""
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "run.lock"
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{run_dir} is locked by another run (delete {path} if it is stale)") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def _need(path: str, what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} is not set in the config")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _vocab_for(cfg: RunConfig, run_dir: Path, texts: list[str]) -> Vocab:
    if cfg.data_vocab:
        return Vocab.load(_need(cfg.data_vocab, "data.vocab"))
    local = run_dir / "vocab.txt"
    if local.exists():
        return Vocab.load(local)
    vocab = build_vocab(texts, cfg.data_vocab_max_size)
    vocab.save(local)
    return vocab


def _freeze(cfg: RunConfig, run_dir: Path, resume: bool) -> None:
    path = run_dir / "config.resolved"
    text = cfg.dumps()
    if path.exists() and resume:
        if path.read_text() != text:
            raise ConfigError(f"config differs from the frozen copy in {path}; refusing to resume")
        return
    path.write_text(text)


def _latest_checkpoint(run_dir: Path) -> Path:
    found = sorted((run_dir / "checkpoints").glob("epoch_*.ckpt"))
    if not found:
        raise FileNotFoundError(f"no checkpoints to resume from in {run_dir / 'checkpoints'}")
    return found[-1]


def pretrain_run(cfg: RunConfig, resume: str | None = None, stop_after_epoch: int | None = None):
    """Train one run described by ``cfg`` inside its (locked) output directory."""
    run_dir = Path(cfg.run_output_dir)
    texts = read_lines(_need(cfg.data_corpus, "data.corpus"))
    with run_lock(run_dir):
        vocab = _vocab_for(cfg, run_dir, texts)
        if not cfg.data_vocab:
            cfg = cfg.with_overrides(data_vocab=str((run_dir / "vocab.txt").resolve()))
        _freeze(cfg, run_dir, resume is not None)
        corpus = EncodedCorpus.from_texts(texts, vocab, cfg.model_seq_len)
        tcfg = cfg.train_config(len(vocab))
        ckpt = None
        if resume is not None:
            ckpt = _latest_checkpoint(run_dir) if resume == "latest" else _need(resume, "resume checkpoint")
        return train(tcfg, corpus, vocab, run_dir, resume=ckpt, stop_after_epoch=stop_after_epoch)


# ------------------------------------------------------------------ subcommands


def cmd_gen_corpus(a) -> None:
    if a.oracle:
        oracle = MarkovOracle.load(_need(a.oracle, "oracle file"))
    else:
        oracle = MarkovOracle.random(a.states, a.oracle_seed, a.concentration)
    if a.oracle_out:
        oracle.save(a.oracle_out)
    lines = gen_markov_corpus(oracle, a.num_seqs, a.seq_len, a.seed)
    Path(a.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} sequences of {a.seq_len} tokens to {a.out}")


def cmd_build_vocab(a) -> None:
    texts = [t for p in a.corpus for t in read_lines(_need(p, "corpus"))]
    vocab = build_vocab(texts, a.max_size)
    vocab.save(a.out)
    print(f"wrote {len(vocab)} entries to {a.out}")


def _apply_overrides(cfg: RunConfig, a) -> RunConfig:
    kw = {}
    if getattr(a, "strategy", None):
        try:
            Strategy(a.strategy)
        except ValueError:
            raise ConfigError(f"unknown strategy {a.strategy!r}") from None
        kw["train_strategy"] = a.strategy
    if getattr(a, "output_dir", None):
        kw["run_output_dir"] = a.output_dir
    if getattr(a, "epochs", None):
        kw["train_epochs"] = a.epochs
    if getattr(a, "seed", None) is not None:
        kw["train_seed"] = a.seed
    return cfg.with_overrides(**kw) if kw else cfg


def cmd_pretrain(a) -> None:
    cfg = _apply_overrides(load_config(a.config), a)
    t = pretrain_run(cfg, a.resume, a.stop_after_epoch)
    print(f"{cfg.train_strategy}: {t.step_count} steps, epoch {t.epoch}/{t.config.epochs}, "
          f"output in {cfg.run_output_dir}")


def _find_vocab(cfg: RunConfig | None, ckpt: Path) -> Vocab:
    if cfg is not None and cfg.data_vocab:
        return Vocab.load(_need(cfg.data_vocab, "data.vocab"))
    for d in (ckpt.parent, ckpt.parent.parent):
        if (d / "vocab.txt").exists():
            return Vocab.load(d / "vocab.txt")
    raise FileNotFoundError(f"no vocab for {ckpt}: set data.vocab")


def evaluate_checkpoint(ckpt: Path, cfg: RunConfig, seed: int = 0, mode: str | None = None) -> dict:
    state, meta = load_model_state(ckpt)
    vocab = _find_vocab(cfg, ckpt)
    if state.config.vocab_size != len(vocab):
        raise ValueError(f"checkpoint vocab size {state.config.vocab_size} != vocab {len(vocab)}")
    heldout = EncodedCorpus.from_texts(read_lines(_need(cfg.data_heldout, "data.heldout")), vocab,
                                       state.config.seq_len)
    oracle = MarkovOracle.load(_need(cfg.data_oracle, "data.oracle")) if cfg.data_oracle else None
    if mode is None:
        mode = "mask" if meta["train_config"]["strategy"] == "MASK_MLM" else "unigram"
    rep = full_eval(state, heldout, vocab, seed, mode, oracle)
    if cfg.data_probe_a and cfg.data_probe_b:
        k = state.config.seq_len
        a_ = EncodedCorpus.from_texts(read_lines(_need(cfg.data_probe_a, "data.probe_a")), vocab, k)
        b_ = EncodedCorpus.from_texts(read_lines(_need(cfg.data_probe_b, "data.probe_b")), vocab, k)
        rep.probe_accuracy = linear_probe(state, a_, b_, seed)
    out = rep.as_dict()
    out["eval_mode"] = mode
    out["steps"] = meta["step"]
    out["train_flops"] = meta["cumulative_flops"]
    return out


def _append_csv(path: Path, columns, row: dict) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def cmd_probe(a) -> None:
    cfg = load_config(a.config)
    ckpt = _need(a.checkpoint, "checkpoint")
    row = evaluate_checkpoint(ckpt, cfg, a.seed, a.mode)
    row["checkpoint"] = str(ckpt)
    _append_csv(Path(a.out), REPORT_COLUMNS, row)
    print(", ".join(f"{k}={row[k]:.4f}" for k in REPORT_COLUMNS[1:] if not math.isnan(row[k])))


def _flops_rows(a):
    if a.small:
        cfg, steps, batch, embed = fl.SMALL_SHAPES, fl.SMALL_STEPS, fl.SMALL_BATCH, fl.SMALL_EMBED
    else:
        if a.config:
            rc = load_config(a.config)
            cfg = rc.encoder(a.vocab_size)
            batch = a.batch or rc.train_batch_size
        else:
            cfg = EncoderConfig(vocab_size=a.vocab_size)
            batch = a.batch or 64
        steps, embed = a.steps, None
    return fl.comparison_table(cfg, steps, batch, embed=embed), cfg


def cmd_flops(a) -> None:
    rows, cfg = _flops_rows(a)
    print(f"L={cfg.layers} H={cfg.hidden} A={cfg.heads} F={cfg.ffn} V={cfg.vocab_size} k={cfg.seq_len} "
          f"steps={rows[0]['steps']} batch={rows[0]['batch']}")
    print(f"{'strategy':<16}{'step_flops':>14}{'train_flops':>14}{'reference':>12}")
    for r in rows:
        ref = f"{r['reference']:.3e}" if r["reference"] != "" else ""
        print(f"{r['strategy']:<16}{r['step_flops']:>14.4e}{r['train_flops']:>14.4e}{ref:>12}")
    if a.small:
        print("reference column: reference train-FLOPs figures (ordering compared, absolute values annotated only)")
    if a.csv:
        with open(a.csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


def cmd_inspect_aug(a) -> None:
    run_dir = Path(a.run_dir)
    cfg = load_config(_need(str(run_dir / "config.resolved"), "frozen run config"))
    path = run_dir / "cache" / f"epoch_{a.epoch:03d}.bin"
    if not path.exists():
        raise FileNotFoundError(f"no replacement cache for epoch {a.epoch} in {run_dir} "
                                f"(only self-augmented runs write one, for epochs >= 1)")
    vocab = Vocab.load(_need(cfg.data_vocab, "data.vocab"))
    texts = read_lines(_need(cfg.data_corpus, "data.corpus"))
    if not 0 <= a.instance < len(texts):
        raise KeyError(f"instance {a.instance} not in corpus of {len(texts)} sequences")
    corpus = EncodedCorpus.from_texts(texts[a.instance : a.instance + 1], vocab, cfg.model_seq_len,
                                      first_id=a.instance)
    original = corpus.ids[0]
    for iid, pos, tok in read_spill(path):
        if iid == a.instance:
            break
    else:
        raise KeyError(f"instance {a.instance} absent from {path}")
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(("position", "original", "replacement", "label", "original_token", "replacement_token"))
    for p, t in zip(pos, tok):
        o = int(original[p])
        w.writerow((int(p), o, int(t), int(o == t), vocab.tokens[o], vocab.tokens[int(t)]))


def cmd_ablate(a) -> None:
    base = load_config(a.config)
    if a.epochs:
        base = base.with_overrides(train_epochs=a.epochs)
    out_dir = Path(a.output_dir or base.run_output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    strategies = a.strategies or [s.value for s in ABLATION_LADDER]
    table = Path(a.csv) if a.csv else out_dir / "ablation.csv"
    table.unlink(missing_ok=True)
    for name in strategies:
        cfg = base.with_overrides(train_strategy=Strategy(name).value, run_output_dir=str(out_dir / name))
        t0 = time.perf_counter()
        trainer = pretrain_run(cfg)
        row = evaluate_checkpoint(Path(cfg.run_output_dir) / "final.ckpt", cfg, a.seed)
        row["strategy"] = name
        row["wall_seconds"] = round(time.perf_counter() - t0, 3)
        row["steps"] = trainer.step_count
        _append_csv(table, ABLATION_COLUMNS, row)
        print(f"{name}: steps={trainer.step_count} mlm_ce={row['mlm_ce']:.4f} rtd_auc={row['rtd_auc']:.4f} "
              f"probe={row['probe_accuracy']:.4f}")
    print(f"ablation table written to {table}")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sas", description="Self-augmented MLM + replaced-token-detection pretraining")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="sample a corpus from a Markov oracle")
    g.add_argument("--out", required=True)
    g.add_argument("--oracle", help="load this oracle file instead of drawing a random one")
    g.add_argument("--oracle-out", help="save the oracle used")
    g.add_argument("--states", type=int, default=16)
    g.add_argument("--concentration", type=float, default=0.3)
    g.add_argument("--oracle-seed", type=int, default=0)
    g.add_argument("--num-seqs", type=int, default=50_000)
    g.add_argument("--seq-len", type=int, default=31)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_corpus)

    b = sub.add_parser("build-vocab", help="count tokens and write a vocab file")
    b.add_argument("--corpus", nargs="+", required=True)
    b.add_argument("--max-size", type=int, default=30000)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("pretrain", help="train one strategy from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--strategy", help="one of " + ", ".join(s.value for s in Strategy))
    p.add_argument("--output-dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", nargs="?", const="latest", help="checkpoint path (default: latest in the run dir)")
    p.add_argument("--stop-after-epoch", type=int)
    p.set_defaults(func=cmd_pretrain)

    e = sub.add_parser("probe", help="evaluate a checkpoint and append one CSV row")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--out", default="probe.csv")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--mode", choices=("unigram", "uniform", "mask"))
    e.set_defaults(func=cmd_probe)

    f = sub.add_parser("flops", help="per-strategy FLOPs comparison table")
    f.add_argument("--config")
    f.add_argument("--vocab-size", type=int, default=20)
    f.add_argument("--steps", type=int, default=1)
    f.add_argument("--batch", type=int)
    f.add_argument("--small-shapes", dest="small", action="store_true",
                   help="use the 12-layer small-model shapes and 250k x 512 budget")
    f.add_argument("--csv")
    f.set_defaults(func=cmd_flops)

    i = sub.add_parser("inspect-aug", help="dump cached replacements of one instance")
    i.add_argument("--run-dir", required=True)
    i.add_argument("--epoch", type=int, required=True, help="epoch that consumes the replacements")
    i.add_argument("--instance", type=int, required=True)
    i.set_defaults(func=cmd_inspect_aug)

    ab = sub.add_parser("ablate", help="train the ablation ladder under one step budget and tabulate")
    ab.add_argument("--config", required=True)
    ab.add_argument("--output-dir")
    ab.add_argument("--epochs", type=int)
    ab.add_argument("--strategies", nargs="+", choices=[s.value for s in Strategy])
    ab.add_argument("--csv")
    ab.add_argument("--seed", type=int, default=0)
    ab.set_defaults(func=cmd_ablate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except EXPECTED_ERRORS as exc:
        msg = exc.args[0] if exc.args else type(exc).__name__
        print(f"error: {str(msg).splitlines()[0]}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
