"""Byte-level decoder-only transformer used as the pruning substrate.

The model is a plain container of named numpy matrices plus pure functions
for tokenization, the causal forward pass, and greedy decoding. Weights are
float32 by default; tests may build float64 models for gradient checks.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import GenerationBudgetError, SequenceTooLongError

VOCAB_SIZE = 259
BOS_ID = 256
EOS_ID = 257
PAD_ID = 258

LN_EPS = 1e-5

# attention q/k/v/o and MLP up/down are the only matrices pruning may touch
_PRUNABLE_RE = re.compile(r"^blocks\.\d+\.(attn\.(wq|wk|wv|wo)|mlp\.(up|down))$")


def tokenize(text: str | bytes) -> np.ndarray:
    """Map text to [BOS] + raw byte values + [EOS]."""
    raw = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    return np.concatenate(
        [[BOS_ID], np.frombuffer(raw, dtype=np.uint8).astype(np.int64), [EOS_ID]]
    ).astype(np.int64)


def detokenize(ids: np.ndarray) -> bytes:
    """Inverse of tokenize; drops BOS/EOS/PAD."""
    ids = np.asarray(ids)
    return bytes(ids[ids < 256].astype(np.uint8).tolist())


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_seq_len: int = 256
    seed: int = 0
    vocab_size: int = VOCAB_SIZE

    def __post_init__(self) -> None:
        if self.vocab_size != VOCAB_SIZE:
            raise ValueError(f"vocab_size is fixed at {VOCAB_SIZE}")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.max_seq_len < 2:
            raise ValueError("max_seq_len must be at least 2")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class Transformer:
    """Named-weight container; immutable by convention after creation."""

    config: ModelConfig
    weights: dict[str, np.ndarray] = field(repr=False)

    def prunable_names(self) -> list[str]:
        return [name for name in self.weights if _PRUNABLE_RE.match(name)]

    def copy(self) -> "Transformer":
        return Transformer(self.config, {k: v.copy() for k, v in self.weights.items()})

    def astype(self, dtype) -> "Transformer":
        return Transformer(
            self.config, {k: v.astype(dtype) for k, v in self.weights.items()}
        )


def weight_names(config: ModelConfig) -> list[str]:
    """Canonical weight ordering; fixes RNG draw order and checkpoint layout."""
    names = ["tok_emb", "pos_emb"]
    for i in range(config.n_layers):
        p = f"blocks.{i}"
        names += [
            f"{p}.ln1.g", f"{p}.ln1.b",
            f"{p}.attn.wq", f"{p}.attn.wk", f"{p}.attn.wv", f"{p}.attn.wo",
            f"{p}.ln2.g", f"{p}.ln2.b",
            f"{p}.mlp.up", f"{p}.mlp.down",
        ]
    names += ["ln_f.g", "ln_f.b"]
    return names


def _weight_shape(name: str, cfg: ModelConfig) -> tuple[int, ...]:
    d, f = cfg.d_model, cfg.d_ff
    if name == "tok_emb":
        return (cfg.vocab_size, d)
    if name == "pos_emb":
        return (cfg.max_seq_len, d)
    if name.endswith((".g", ".b")):
        return (d,)
    if name.endswith(".mlp.up"):
        return (f, d)
    if name.endswith(".mlp.down"):
        return (d, f)
    return (d, d)  # attention projections


def init_model(config: ModelConfig, dtype=np.float32) -> Transformer:
    """Deterministic N(0, 0.02) init; residual-output projections downscaled."""
    rng = np.random.default_rng(config.seed)
    resid_scale = 1.0 / np.sqrt(2.0 * config.n_layers)
    weights: dict[str, np.ndarray] = {}
    for name in weight_names(config):
        shape = _weight_shape(name, config)
        if name.endswith(".g"):
            w = np.ones(shape)
        elif name.endswith(".b"):
            w = np.zeros(shape)
        else:
            w = rng.normal(0.0, 0.02, size=shape)
            if name.endswith((".attn.wo", ".mlp.down")):
                w *= resid_scale
        weights[name] = np.ascontiguousarray(w, dtype=dtype)
    return Transformer(config, weights)


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _attention(h, wq, wk, wv, wo, n_heads):
    """Causal multi-head attention on (B, T, d) inputs.

    Returns (output, concatenated head context) — the context is the input
    actually multiplied by wo, which activation capture needs.
    """
    B, T, d = h.shape
    dh = d // n_heads
    q = (h @ wq.T).reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    k = (h @ wk.T).reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    v = (h @ wv.T).reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh).astype(h.dtype)
    mask = np.triu(np.ones((T, T), dtype=bool), k=1)
    scores = np.where(mask, np.array(-np.inf, dtype=h.dtype), scores)
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
    return ctx @ wo.T, ctx


def forward_batch(
    model: Transformer,
    ids: np.ndarray,
    capture: dict[str, list[np.ndarray]] | None = None,
) -> np.ndarray:
    """Causal forward over a (B, T) id batch; returns (B, T, vocab) logits.

    When `capture` is given, the raw input rows of every prunable matrix are
    appended to capture[name] as (B*T, d_in) arrays (PAD filtering is the
    caller's job).
    """
    cfg = model.config
    w = model.weights
    ids = np.atleast_2d(np.asarray(ids))
    B, T = ids.shape
    if T > cfg.max_seq_len:
        raise SequenceTooLongError(
            f"sequence length {T} exceeds max_seq_len {cfg.max_seq_len}"
        )

    def grab(name: str, x: np.ndarray) -> None:
        if capture is not None:
            capture.setdefault(name, []).append(x.reshape(-1, x.shape[-1]))

    x = w["tok_emb"][ids] + w["pos_emb"][:T]
    for i in range(cfg.n_layers):
        p = f"blocks.{i}"
        h = _layernorm(x, w[f"{p}.ln1.g"], w[f"{p}.ln1.b"])
        for proj in ("wq", "wk", "wv"):
            grab(f"{p}.attn.{proj}", h)
        attn_out, ctx = _attention(
            h, w[f"{p}.attn.wq"], w[f"{p}.attn.wk"], w[f"{p}.attn.wv"],
            w[f"{p}.attn.wo"], cfg.n_heads,
        )
        grab(f"{p}.attn.wo", ctx)
        x = x + attn_out
        h2 = _layernorm(x, w[f"{p}.ln2.g"], w[f"{p}.ln2.b"])
        grab(f"{p}.mlp.up", h2)
        u = gelu(h2 @ w[f"{p}.mlp.up"].T)
        grab(f"{p}.mlp.down", u)
        x = x + u @ w[f"{p}.mlp.down"].T
    x = _layernorm(x, w["ln_f.g"], w["ln_f.b"])
    return x @ w["tok_emb"].T


def forward(model: Transformer, tokens: np.ndarray) -> np.ndarray:
    """Logits for one token sequence; shape (len(tokens), vocab)."""
    return forward_batch(model, np.asarray(tokens)[None, :])[0]


def greedy_generate(model: Transformer, prompt: np.ndarray, max_new: int) -> np.ndarray:
    """Append argmax tokens (ties -> lowest id) until EOS or budget runs out."""
    prompt = np.asarray(prompt, dtype=np.int64)
    if len(prompt) + max_new > model.config.max_seq_len:
        raise GenerationBudgetError(
            f"prompt {len(prompt)} + max_new {max_new} exceeds "
            f"max_seq_len {model.config.max_seq_len}"
        )
    out = prompt.copy()
    for _ in range(max_new):
        logits = forward(model, out)
        nxt = int(np.argmax(logits[-1]))
        out = np.append(out, nxt)
        if nxt == EOS_ID:
            break
    return out
