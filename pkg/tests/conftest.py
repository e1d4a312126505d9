import sys

import pytest

from sas.corpus import EncodedCorpus, MarkovOracle, build_vocab, gen_markov_corpus
from sas.model import EncoderConfig

TINY = dict(layers=2, hidden=16, heads=2, ffn=64, dropout=0.0)


@pytest.fixture(scope="session")
def small_oracle():
    return MarkovOracle.random(8, seed=3, concentration=0.3)


@pytest.fixture(scope="session")
def small_data(small_oracle):
    texts = gen_markov_corpus(small_oracle, 96, 11, seed=1)
    vocab = build_vocab(texts, 100)
    corpus = EncodedCorpus.from_texts(texts, vocab, k=12)
    return texts, vocab, corpus


@pytest.fixture
def tiny_cfg(small_data):
    _, vocab, _ = small_data
    return EncoderConfig(vocab_size=len(vocab), seq_len=12, **TINY)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = sorted(getattr(mod, "CRITERIA", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
