"""Analytic FLOPs accounting for one training step.

Conventions (kept deliberately simple and documented in the README):

* a matmul of (a x b) by (b x c) costs 2abc; bias adds and residual adds cost
  one FLOP per element;
* layernorm costs 8 FLOPs per element, gelu 8, softmax/log-softmax 5,
  sigmoid 4;
* the MLM head is charged only at the ``m`` loss positions, the RTD head at
  all ``k`` positions;
* backward = 2 x forward; sampling and cache bookkeeping cost nothing.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .model import EncoderConfig

LN = 8
GELU = 8
SOFTMAX = 5
SIGMOID = 4
BACKWARD_MULTIPLIER = 2

DUAL_LOSS = {"SAS", "SAS_C", "UNIG_MLM_RTD", "UNIG_MLM_RTD_C"}
MLM_ONLY = {"MASK_MLM", "UNIG_MLM", "UNIG_MLM_SAS"}
ELECTRA = "ELECTRA_2NET"


@dataclass
class CostModel:
    forward: dict[str, float] = field(default_factory=dict)
    backward_multiplier: int = BACKWARD_MULTIPLIER

    def add(self, name: str, flops: float) -> None:
        if flops < 0:
            raise ValueError(f"negative cost for {name}")
        self.forward[name] = self.forward.get(name, 0.0) + float(flops)

    @property
    def forward_total(self) -> float:
        return sum(self.forward.values())

    @property
    def backward_total(self) -> float:
        return self.backward_multiplier * self.forward_total

    @property
    def total(self) -> float:
        return self.forward_total + self.backward_total


def linear_flops(rows: int, n_in: int, n_out: int, bias: bool = True) -> float:
    return 2.0 * rows * n_in * n_out + (rows * n_out if bias else 0)


def embedding_flops(cfg: EncoderConfig, k: int, embed: int | None = None) -> float:
    E = embed or cfg.hidden
    f = k * E + LN * k * E
    if E != cfg.hidden:
        f += linear_flops(k, E, cfg.hidden)
    return f


def block_flops(cfg: EncoderConfig, k: int) -> float:
    """One transformer layer over a length-k sequence."""
    H, F, A = cfg.hidden, cfg.ffn, cfg.heads
    attn = 4 * linear_flops(k, H, H)
    attn += 2.0 * k * k * H * 2  # scores and context
    attn += A * k * k * (1 + 1 + SOFTMAX)  # scale, mask add, softmax
    ffn = linear_flops(k, H, F) + GELU * k * F + linear_flops(k, F, H)
    norms = 2 * (k * H + LN * k * H)  # residual + layernorm, twice
    return attn + ffn + norms


def encoder_flops(cfg: EncoderConfig, k: int, embed: int | None = None) -> float:
    return embedding_flops(cfg, k, embed) + cfg.layers * block_flops(cfg, k)


def mlm_head_flops(cfg: EncoderConfig, m: int, embed: int | None = None) -> float:
    H, V = cfg.hidden, cfg.vocab_size
    E = embed or H
    f = linear_flops(m, H, E) + GELU * m * E + LN * m * E
    f += linear_flops(m, E, V) + SOFTMAX * m * V + m  # tied projection + bias, log-softmax, pick
    return f


def rtd_head_flops(cfg: EncoderConfig, k: int) -> float:
    H = cfg.hidden
    return linear_flops(k, H, H) + GELU * k * H + linear_flops(k, H, 1) + SIGMOID * k + 5 * k


def generator_config(cfg: EncoderConfig, fraction: float = 0.25) -> EncoderConfig:
    hidden = max(1, int(round(cfg.hidden * fraction)))
    heads = max(1, int(round(cfg.heads * fraction)))
    while hidden % heads:
        heads -= 1
    return replace(cfg, hidden=hidden, heads=heads, ffn=max(1, int(round(cfg.ffn * fraction))))


def step_cost(cfg: EncoderConfig, strategy: str, batch: int, k: int | None = None, m: int | None = None,
              embed: int | None = None, generator_fraction: float = 0.25) -> CostModel:
    k = k or cfg.seq_len
    if m is None:
        m = (15 * (k - 1) + 99) // 100
    cost = CostModel()
    if strategy == ELECTRA:
        gen = generator_config(cfg, generator_fraction)
        cost.add("generator_encoder", batch * encoder_flops(gen, k, embed))
        cost.add("generator_mlm_head", batch * mlm_head_flops(gen, m, embed))
        cost.add("encoder", batch * encoder_flops(cfg, k, embed))
        cost.add("rtd_head", batch * rtd_head_flops(cfg, k))
        return cost
    if strategy not in DUAL_LOSS | MLM_ONLY:
        raise ValueError(f"unknown strategy {strategy!r}")
    cost.add("encoder", batch * encoder_flops(cfg, k, embed))
    cost.add("mlm_head", batch * mlm_head_flops(cfg, m, embed))
    if strategy in DUAL_LOSS:
        cost.add("rtd_head", batch * rtd_head_flops(cfg, k))
    return cost


def step_flops(cfg: EncoderConfig, strategy: str, batch: int, k: int | None = None, m: int | None = None,
               embed: int | None = None, generator_fraction: float = 0.25) -> float:
    """Forward + backward FLOPs of one optimisation step; ``m`` counts MLM positions per sequence."""
    return step_cost(cfg, strategy, batch, k, m, embed, generator_fraction).total


def run_flops(cfg: EncoderConfig, strategy: str, steps: int, batch: int, **kw) -> float:
    return steps * step_flops(cfg, strategy, batch, **kw)


# Small-model shapes (12 x 256, 250k steps of 512) and reference train-FLOPs for them.
SMALL_SHAPES = EncoderConfig(layers=12, hidden=256, heads=4, ffn=1024, vocab_size=30522, seq_len=128, dropout=0.1)
SMALL_STEPS = 250_000
SMALL_BATCH = 512
REFERENCE_TRAIN_FLOPS = {"SAS": 1.279e18, "SAS_C": 1.279e18, "ELECTRA_2NET": 1.294e18}
SMALL_EMBED = {"SAS": 256, "SAS_C": 256, "ELECTRA_2NET": 128}


def comparison_table(cfg: EncoderConfig, steps: int, batch: int, strategies=None, embed=None) -> list[dict]:
    strategies = strategies or ["MASK_MLM", "UNIG_MLM", "UNIG_MLM_SAS", "UNIG_MLM_RTD", "UNIG_MLM_RTD_C",
                                "SAS_C", "SAS", "ELECTRA_2NET"]
    rows = []
    for s in strategies:
        e = embed.get(s) if isinstance(embed, dict) else embed
        per = step_flops(cfg, s, batch, embed=e)
        rows.append({"strategy": s, "step_flops": per, "steps": steps, "batch": batch,
                     "train_flops": per * steps, "reference": REFERENCE_TRAIN_FLOPS.get(s, "")})
    return rows
