import csv
import importlib.util
import io
from contextlib import redirect_stdout
from pathlib import Path

import pytest

from sas import cli
from sas.config import ConfigError, RunConfig, load_config, parse_config

ROOT = Path(__file__).resolve().parents[1]

TINY_CFG = """\
# tiny desk run
data.corpus = train.txt
data.heldout = held.txt
data.oracle = oracle.txt
model.layers = 1
model.hidden = 16
model.heads = 2
model.ffn = 32
model.seq_len = 12
train.batch_size = 64
train.epochs = {epochs}
train.strategy = {strategy}
train.log_every = 1
run.output_dir = run
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.delenv("SAS_OUTPUT_DIR", raising=False)
    assert cli.main(["gen-corpus", "--out", str(tmp_path / "train.txt"), "--oracle-out", str(tmp_path / "oracle.txt"),
                     "--states", "6", "--num-seqs", "40", "--seq-len", "11", "--seed", "1"]) == 0
    assert cli.main(["gen-corpus", "--out", str(tmp_path / "held.txt"), "--oracle", str(tmp_path / "oracle.txt"),
                     "--num-seqs", "20", "--seq-len", "11", "--seed", "2"]) == 0
    return tmp_path


def _write_cfg(d, strategy="SAS", epochs=2, extra=""):
    p = d / f"{strategy}.cfg"
    p.write_text(TINY_CFG.format(strategy=strategy, epochs=epochs) + extra)
    return p


def _metrics(path, drop=("wall_seconds",)):
    with open(path, newline="") as f:
        return [{k: v for k, v in r.items() if k not in drop} for r in csv.DictReader(f)]


# ---------------------------------------------------------------- config grammar


def test_parse_types_comments_and_paths(tmp_path):
    cfg = parse_config("model.layers = 3  # three\ntrain.lr=0.01\nmodel.tied = false\ndata.corpus = c.txt\n", tmp_path)
    assert cfg.model_layers == 3 and cfg.train_lr == 0.01 and cfg.model_tied is False
    assert cfg.data_corpus == str(tmp_path / "c.txt")


def test_unknown_key_and_bad_values():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("model.depth = 3")
    with pytest.raises(ConfigError):
        parse_config("model.layers = three")
    with pytest.raises(ConfigError):
        parse_config("just words")
    with pytest.raises(ConfigError, match="strategy"):
        parse_config("train.strategy = BERT")
    with pytest.raises(ConfigError):
        parse_config("train.cold_start = zipf")


def test_dump_round_trip():
    cfg = RunConfig(train_strategy="SAS_C", lambda_mode="constant", lambda_start="50", model_tied=False)
    assert parse_config(cfg.dumps()) == cfg


def test_output_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("SAS_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    assert parse_config("run.output_dir = x").run_output_dir == str(tmp_path / "elsewhere")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


# ---------------------------------------------------------------- subcommands


def test_pretrain_writes_run_directory(workdir):
    cfg = _write_cfg(workdir)
    assert cli.main(["pretrain", "--config", str(cfg)]) == 0
    run = workdir / "run"
    for name in ("metrics.csv", "final.ckpt", "config.resolved", "vocab.txt", "timing.json",
                 "checkpoints/epoch_000.ckpt", "cache/epoch_001.bin"):
        assert (run / name).exists(), name
    assert not (run / "run.lock").exists()
    frozen = load_config(run / "config.resolved")
    assert frozen.train_strategy == "SAS" and frozen.data_vocab == str((run / "vocab.txt").resolve())


def test_constant_lambda_column(workdir):
    cfg = _write_cfg(workdir, "SAS_C", 3, "lambda.start = 50\n")
    assert cli.main(["pretrain", "--config", str(cfg)]) == 0
    assert {r["lambda"] for r in _metrics(workdir / "run" / "metrics.csv")} == {"50.0"}


def test_linear_lambda_column_over_ten_epochs(workdir):
    cfg = _write_cfg(workdir, "SAS", 10)
    assert cli.main(["pretrain", "--config", str(cfg)]) == 0
    lam = {int(r["epoch"]): float(r["lambda"]) for r in _metrics(workdir / "run" / "metrics.csv")}
    assert lam[0] == 50.0 and lam[9] == 200.0
    assert all(lam[e] < lam[e + 1] for e in range(9))


def test_identical_runs_identical_metrics(workdir):
    cfg = _write_cfg(workdir)
    assert cli.main(["pretrain", "--config", str(cfg), "--output-dir", str(workdir / "a")]) == 0
    assert cli.main(["pretrain", "--config", str(cfg), "--output-dir", str(workdir / "b")]) == 0
    assert _metrics(workdir / "a" / "metrics.csv") == _metrics(workdir / "b" / "metrics.csv")
    assert (workdir / "a" / "final.ckpt").read_bytes() == (workdir / "b" / "final.ckpt").read_bytes()


def test_resume_cli_and_frozen_config_guard(workdir, capsys):
    cfg = _write_cfg(workdir, epochs=3)
    assert cli.main(["pretrain", "--config", str(cfg), "--stop-after-epoch", "0"]) == 0
    assert cli.main(["pretrain", "--config", str(cfg), "--resume"]) == 0
    assert cli.main(["pretrain", "--config", str(cfg), "--output-dir", str(workdir / "ref")]) == 0
    assert _metrics(workdir / "run" / "metrics.csv") == _metrics(workdir / "ref" / "metrics.csv")
    capsys.readouterr()
    assert cli.main(["pretrain", "--config", str(cfg), "--resume", "--seed", "9"]) == 1
    assert "refusing to resume" in capsys.readouterr().err


def test_lock_blocks_second_writer(workdir, capsys):
    cfg = _write_cfg(workdir)
    (workdir / "run").mkdir()
    (workdir / "run" / "run.lock").write_text("123\n")
    assert cli.main(["pretrain", "--config", str(cfg)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:") and "locked" in err and err.count("\n") == 1


def test_inspect_aug_matches_independent_decoder(workdir, capsys):
    cfg = _write_cfg(workdir, epochs=3)
    assert cli.main(["pretrain", "--config", str(cfg)]) == 0
    capsys.readouterr()
    assert cli.main(["inspect-aug", "--run-dir", str(workdir / "run"), "--epoch", "2", "--instance", "7"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split("\t")[:3] == ["position", "original", "replacement"]
    rows = [ln.split("\t") for ln in lines[1:]]
    spec = importlib.util.spec_from_file_location("decode_cache", ROOT / "scripts" / "decode_cache.py")
    dec = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(dec)
    expected = dec.decode(workdir / "run" / "cache" / "epoch_002.bin")[7]
    assert [(int(r[0]), int(r[2])) for r in rows] == expected
    assert all(int(r[3]) == int(r[1] == r[2]) for r in rows)


def test_probe_subcommand_appends_rows(workdir):
    cfg = _write_cfg(workdir)
    assert cli.main(["pretrain", "--config", str(cfg)]) == 0
    out = workdir / "probe.csv"
    for _ in range(2):
        assert cli.main(["probe", "--checkpoint", str(workdir / "run" / "final.ckpt"), "--config", str(cfg),
                         "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 2 and tuple(rows[0]) == cli.REPORT_COLUMNS
    assert rows[0] == rows[1]
    assert float(rows[0]["generator_mean_kl"]) >= 0


def test_flops_table_and_csv(tmp_path):
    buf = io.StringIO()
    with redirect_stdout(buf):
        assert cli.main(["flops", "--small-shapes", "--csv", str(tmp_path / "f.csv")]) == 0
    assert "1.279e+18" in buf.getvalue()
    rows = {r["strategy"]: r for r in csv.DictReader(open(tmp_path / "f.csv"))}
    assert len(rows) == 8
    assert float(rows["SAS"]["train_flops"]) < float(rows["ELECTRA_2NET"]["train_flops"])


def test_build_vocab(workdir):
    assert cli.main(["build-vocab", "--corpus", str(workdir / "train.txt"), "--out", str(workdir / "v.txt")]) == 0
    assert len((workdir / "v.txt").read_text().splitlines()) == 6 + 4


@pytest.mark.parametrize("argv,needle", [
    (["pretrain", "--config", "/nonexistent.cfg"], "not found"),
    (["probe", "--checkpoint", "/nonexistent.ckpt", "--config", "{cfg}"], "not found"),
    (["pretrain", "--config", "{cfg}", "--strategy", "BERT"], "unknown strategy"),
    (["pretrain", "--config", "{bad}"], "unknown key"),
    (["inspect-aug", "--run-dir", "{dir}", "--epoch", "1", "--instance", "0"], "not found"),
])
def test_errors_exit_nonzero_with_one_line(workdir, capsys, argv, needle):
    cfg = _write_cfg(workdir)
    bad = workdir / "bad.cfg"
    bad.write_text("model.colour = blue\n")
    argv = [a.format(cfg=cfg, bad=bad, dir=workdir) for a in argv]
    assert cli.main(argv) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:") and needle in err and err.count("\n") == 1
