"""Train on a 16-state Markov oracle corpus and track held-out metrics per epoch.

Writes <out>/efficacy.csv (one row per epoch), <out>/summary.json with the
reference entropies and the pass/fail status of each efficacy check, and copies
of the first- and last-epoch checkpoints (the bulky <out>/run can be deleted).

    python scripts/run_markov_efficacy.py --out results/markov_efficacy
"""
from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
import time
from pathlib import Path

from sas.corpus import EncodedCorpus, MarkovOracle, build_vocab, gen_markov_corpus
from sas.model import EncoderConfig
from sas.probe import (
    corrupted_context_entropy,
    full_eval,
    oracle_conditional_entropy,
    unigram_entropy,
)
from sas.trainer import Strategy, TrainConfig, load_model_state, train

CE_MARGIN = 0.15
KL_RATIO = 0.5
AUC_MIN = 0.75


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/markov_efficacy")
    ap.add_argument("--strategy", default="SAS", choices=[s.value for s in Strategy])
    ap.add_argument("--states", type=int, default=16)
    ap.add_argument("--concentration", type=float, default=0.3)
    ap.add_argument("--oracle-seed", type=int, default=0)
    ap.add_argument("--num-seqs", type=int, default=50_000)
    ap.add_argument("--heldout", type=int, default=2_000)
    ap.add_argument("--seq-len", type=int, default=32, help="encoder positions including [CLS]")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--batch-size", type=int, default=64)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--layers", type=int, default=4)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--ffn", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    return ap.parse_args(argv)


def export_checkpoints(out: Path, epochs: int) -> None:
    """Copy the first- and last-epoch checkpoints next to the summary so the run dir can be discarded."""
    ckpts = out / "run" / "checkpoints"
    shutil.copyfile(ckpts / "epoch_000.ckpt", out / "epoch_first.ckpt")
    shutil.copyfile(ckpts / f"epoch_{epochs - 1:03d}.ckpt", out / "epoch_last.ckpt")


def run(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    oracle = MarkovOracle.random(args.states, args.oracle_seed, args.concentration)
    oracle.save(out / "oracle.txt")
    n_words = args.seq_len - 1
    train_texts = gen_markov_corpus(oracle, args.num_seqs, n_words, args.seed + 1)
    held_texts = gen_markov_corpus(oracle, args.heldout, n_words, args.seed + 2)
    vocab = build_vocab(train_texts, 1000)
    vocab.save(out / "vocab.txt")
    corpus = EncodedCorpus.from_texts(train_texts, vocab, args.seq_len)
    heldout = EncodedCorpus.from_texts(held_texts, vocab, args.seq_len, first_id=len(train_texts))

    enc = EncoderConfig(args.layers, args.hidden, args.heads, args.ffn, len(vocab), args.seq_len, dropout=0.1)
    cfg = TrainConfig(encoder=enc, strategy=Strategy(args.strategy), epochs=args.epochs,
                      batch_size=args.batch_size, lr=args.lr, seed=args.seed, log_every=100)
    t0 = time.perf_counter()
    trainer = train(cfg, corpus, vocab, out / "run")
    train_seconds = time.perf_counter() - t0

    refs = {
        "unigram_entropy": unigram_entropy(vocab),
        "clean_context_entropy": oracle_conditional_entropy(oracle, n_words),
        "eval_floor": corrupted_context_entropy(oracle, vocab, heldout, seed=args.seed),
    }
    rows = []
    for e in range(args.epochs):
        state, _ = load_model_state(out / "run" / "checkpoints" / f"epoch_{e:03d}.ckpt")
        rep = full_eval(state, heldout, vocab, seed=args.seed, oracle=oracle)
        rows.append({"epoch": e + 1, **rep.as_dict()})
        print(f"epoch {e + 1}: ce={rep.mlm_ce:.4f} kl={rep.generator_mean_kl:.4f} auc={rep.rtd_auc:.4f}",
              flush=True)
    with open(out / "efficacy.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)

    first, last = rows[0], rows[-1]
    checks = {
        "ce_within_margin_of_floor": last["mlm_ce"] - refs["eval_floor"] <= CE_MARGIN,
        "ce_below_unigram_entropy": last["mlm_ce"] < refs["unigram_entropy"],
        "kl_halved": last["generator_mean_kl"] < KL_RATIO * first["generator_mean_kl"],
        "auc_above_threshold": last["rtd_auc"] > AUC_MIN,
    }
    export_checkpoints(out, args.epochs)
    summary = {"args": vars(args), **refs, "final": last, "first": first, "checks": checks,
               "train_seconds": round(train_seconds, 1), "steps": trainer.step_count}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for k, v in checks.items():
        print(f"{'PASS' if v else 'FAIL'} {k}")
    return summary


if __name__ == "__main__":
    s = run(parse_args())
    sys.exit(0 if all(s["checks"].values()) else 1)
