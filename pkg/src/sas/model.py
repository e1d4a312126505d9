"""Post-LN transformer encoder shared by an MLM head (tied embeddings) and an RTD head."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .seeding import Purpose, rng_for

MASK_PERCENT = 15
INIT_STD = 0.02
LN_EPS = 1e-5
ATTN_NEG = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 4
    hidden: int = 64
    heads: int = 4
    ffn: int = 256
    vocab_size: int = 32
    seq_len: int = 64
    dropout: float = 0.1
    tied: bool = True

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in ("layers", "hidden", "heads", "ffn", "vocab_size", "seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


class ForwardCounter:
    """Counts encoder forward passes over a run."""

    def __init__(self):
        self.count = 0

    def tick(self) -> None:
        self.count += 1


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in checkpoint order."""
    H, F, V, k = cfg.hidden, cfg.ffn, cfg.vocab_size, cfg.seq_len
    shapes: dict[str, tuple[int, ...]] = {
        "emb.tok": (V, H),
        "emb.pos": (k, H),
        "emb.ln.g": (H,),
        "emb.ln.b": (H,),
    }
    for i in range(cfg.layers):
        p = f"layer{i}."
        for m in ("q", "k", "v", "o"):
            shapes[p + f"attn.{m}.w"] = (H, H)
            shapes[p + f"attn.{m}.b"] = (H,)
        shapes[p + "attn_ln.g"] = (H,)
        shapes[p + "attn_ln.b"] = (H,)
        shapes[p + "ffn.in.w"] = (H, F)
        shapes[p + "ffn.in.b"] = (F,)
        shapes[p + "ffn.out.w"] = (F, H)
        shapes[p + "ffn.out.b"] = (H,)
        shapes[p + "ffn_ln.g"] = (H,)
        shapes[p + "ffn_ln.b"] = (H,)
    shapes["mlm.dense.w"] = (H, H)
    shapes["mlm.dense.b"] = (H,)
    shapes["mlm.ln.g"] = (H,)
    shapes["mlm.ln.b"] = (H,)
    if not cfg.tied:
        shapes["mlm.decoder.w"] = (V, H)
    shapes["mlm.bias"] = (V,)
    shapes["rtd.dense.w"] = (H, H)
    shapes["rtd.dense.b"] = (H,)
    shapes["rtd.out.w"] = (H, 1)
    shapes["rtd.out.b"] = (1,)
    return shapes


def encoder_param_names(cfg: EncoderConfig) -> list[str]:
    return [n for n in param_shapes(cfg) if not n.startswith(("mlm.", "rtd."))]


def no_decay(name: str) -> bool:
    """Biases and LayerNorm affines are exempt from weight decay."""
    return name.endswith((".b", ".g", "mlm.bias"))


@dataclass
class ModelState:
    config: EncoderConfig
    params: dict[str, np.ndarray]

    @classmethod
    def init(cls, cfg: EncoderConfig, seed: int, key: int = 0) -> "ModelState":
        rng = rng_for(seed, Purpose.INIT, key)
        params = {}
        for name, shape in param_shapes(cfg).items():
            if name.endswith(".g"):
                arr = np.ones(shape)
            elif len(shape) == 2:
                arr = rng.normal(0.0, INIT_STD, size=shape)
            else:
                arr = np.zeros(shape)
            params[name] = arr.astype(np.float32)
        return cls(cfg, params)

    def bind(self, requires_grad: bool = False, dtype=None) -> dict[str, Tensor]:
        """Wrap parameters as leaf tensors (sharing memory unless a dtype cast is requested)."""
        return {k: Tensor(v, requires_grad=requires_grad, dtype=dtype or v.dtype) for k, v in self.params.items()}

    def copy(self) -> "ModelState":
        return ModelState(self.config, {k: v.copy() for k, v in self.params.items()})

    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))


Params = Mapping[str, Tensor]


def _attention(p: Params, pre: str, x: Tensor, bias: Tensor, cfg: EncoderConfig, rng) -> Tensor:
    B, k, H = x.shape
    A, d = cfg.heads, cfg.head_dim

    def heads(name: str) -> Tensor:
        t = nx.linear(x, p[pre + name + ".w"], p[pre + name + ".b"])
        return nx.transpose(nx.reshape(t, (B, k, A, d)), (0, 2, 1, 3))

    q, kk, v = heads("q"), heads("k"), heads("v")
    scores = nx.scale(nx.matmul(q, nx.transpose(kk, (0, 1, 3, 2))), 1.0 / math.sqrt(d))
    probs = nx.softmax(nx.add(scores, bias))
    probs = nx.dropout(probs, cfg.dropout, rng)
    ctx = nx.reshape(nx.transpose(nx.matmul(probs, v), (0, 2, 1, 3)), (B, k, H))
    return nx.linear(ctx, p[pre + "o.w"], p[pre + "o.b"])


def encoder_forward(
    p: Params,
    cfg: EncoderConfig,
    ids: np.ndarray,
    pad_mask: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    counter: ForwardCounter | None = None,
) -> Tensor:
    """Hidden states (B, k, H). Padded keys are excluded from every attention softmax."""
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ValueError(f"ids must be (batch, k), got {ids.shape}")
    if ids.max() >= cfg.vocab_size or ids.min() < 0:
        raise IndexError(f"token id out of range for vocab of {cfg.vocab_size}: max {ids.max()}")
    B, k = ids.shape
    if k > cfg.seq_len:
        raise ValueError(f"sequence length {k} exceeds configured {cfg.seq_len}")
    if counter is not None:
        counter.tick()
    drop_rng = rng if train_mode else None
    dt = p["emb.tok"].data.dtype
    x = nx.add(nx.embedding_gather(p["emb.tok"], ids), nx.take(p["emb.pos"], slice(0, k)))
    x = nx.layernorm(x, p["emb.ln.g"], p["emb.ln.b"], LN_EPS)
    x = nx.dropout(x, cfg.dropout, drop_rng)
    bias = Tensor(np.where(np.asarray(pad_mask, dtype=bool), 0.0, ATTN_NEG).reshape(B, 1, 1, k), dtype=dt)
    for i in range(cfg.layers):
        pre = f"layer{i}."
        a = _attention(p, pre + "attn.", x, bias, cfg, drop_rng)
        a = nx.dropout(a, cfg.dropout, drop_rng)
        x = nx.layernorm(nx.add(x, a), p[pre + "attn_ln.g"], p[pre + "attn_ln.b"], LN_EPS)
        h = nx.gelu(nx.linear(x, p[pre + "ffn.in.w"], p[pre + "ffn.in.b"]))
        h = nx.linear(h, p[pre + "ffn.out.w"], p[pre + "ffn.out.b"])
        h = nx.dropout(h, cfg.dropout, drop_rng)
        x = nx.layernorm(nx.add(x, h), p[pre + "ffn_ln.g"], p[pre + "ffn_ln.b"], LN_EPS)
    return x


def gather_positions(hidden: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    B, k, _ = hidden.shape
    rows, cols = np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)
    if len(rows) and (rows.min() < 0 or rows.max() >= B or cols.min() < 0 or cols.max() >= k):
        raise IndexError(f"position out of range for hidden of shape {hidden.shape}")
    return nx.take(hidden, (rows, cols))


def mlm_head_output(p: Params, h: Tensor) -> Tensor:
    h = nx.gelu(nx.linear(h, p["mlm.dense.w"], p["mlm.dense.b"]))
    return nx.layernorm(h, p["mlm.ln.g"], p["mlm.ln.b"], LN_EPS)


def mlm_logits_from_head(p: Params, cfg: EncoderConfig, g: Tensor) -> Tensor:
    table = p["emb.tok"] if cfg.tied else p["mlm.decoder.w"]
    return nx.add(nx.matmul(g, nx.transpose(table, (1, 0))), p["mlm.bias"])


def mlm_log_probs(p: Params, cfg: EncoderConfig, hidden: Tensor, rows, cols) -> Tensor:
    """log p(x' | augmented input) for every x' in V, evaluated only at (rows, cols)."""
    g = mlm_head_output(p, gather_positions(hidden, rows, cols))
    return nx.log_softmax(mlm_logits_from_head(p, cfg, g))


def rtd_logits(p: Params, hidden: Tensor) -> Tensor:
    h = nx.gelu(nx.linear(hidden, p["rtd.dense.w"], p["rtd.dense.b"]))
    z = nx.linear(h, p["rtd.out.w"], p["rtd.out.b"])
    return nx.reshape(z, hidden.shape[:2])


def rtd_probs(p: Params, hidden: Tensor) -> Tensor:
    """Probability that each position holds its original token."""
    return nx.sigmoid(rtd_logits(p, hidden))
