"""Adam training of the toy transformer on next-byte prediction.

Forward/backward are hand-written numpy; the gradient implementation is
checked against central finite differences in the test suite. Training is
deterministic for a fixed (config, corpus, hyper) triple.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import CorpusTooSmallError, NonFiniteLossError
from .model import (
    BOS_ID,
    LN_EPS,
    ModelConfig,
    Transformer,
    gelu,
    init_model,
    weight_names,
)


@dataclass(frozen=True)
class TrainHyper:
    steps: int
    batch: int = 8
    lr: float = 1e-3
    seed: int = 0
    window: int | None = None  # bytes per training sample; default min(128, max_seq_len)


def _layernorm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu_bwd(x):
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    return cdf + x * phi


def _split_heads(x, n_heads):
    B, T, d = x.shape
    return x.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def loss_and_grads(
    model: Transformer, ids: np.ndarray, targets: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean next-token cross-entropy over the batch plus parameter gradients."""
    cfg = model.config
    w = model.weights
    dtype = w["tok_emb"].dtype
    B, T = ids.shape
    n_heads = cfg.n_heads
    scale = np.asarray(1.0 / np.sqrt(cfg.head_dim), dtype=dtype)
    causal = np.triu(np.ones((T, T), dtype=bool), k=1)

    grads = {name: np.zeros_like(arr) for name, arr in w.items()}

    x = w["tok_emb"][ids] + w["pos_emb"][:T]
    caches = []
    for i in range(cfg.n_layers):
        p = f"blocks.{i}"
        h, ln1 = _layernorm_fwd(x, w[f"{p}.ln1.g"], w[f"{p}.ln1.b"])
        q = _split_heads(h @ w[f"{p}.attn.wq"].T, n_heads)
        k = _split_heads(h @ w[f"{p}.attn.wk"].T, n_heads)
        v = _split_heads(h @ w[f"{p}.attn.wv"].T, n_heads)
        s = q @ k.transpose(0, 1, 3, 2) * scale
        s = np.where(causal, np.array(-np.inf, dtype=dtype), s)
        s -= s.max(axis=-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(a @ v)
        attn = ctx @ w[f"{p}.attn.wo"].T
        x1 = x + attn
        h2, ln2 = _layernorm_fwd(x1, w[f"{p}.ln2.g"], w[f"{p}.ln2.b"])
        u = h2 @ w[f"{p}.mlp.up"].T
        act = gelu(u)
        x = x1 + act @ w[f"{p}.mlp.down"].T
        caches.append((h, ln1, q, k, v, a, ctx, x1, h2, ln2, u, act))
    y, lnf = _layernorm_fwd(x, w["ln_f.g"], w["ln_f.b"])
    logits = y @ w["tok_emb"].T

    # stable softmax cross-entropy
    m = logits.max(axis=-1, keepdims=True)
    z = np.exp(logits - m)
    zsum = z.sum(axis=-1, keepdims=True)
    logp = logits - m - np.log(zsum)
    n = B * T
    loss = float(-logp.reshape(n, -1)[np.arange(n), targets.reshape(n)].mean())

    dlogits = z / zsum
    flat = dlogits.reshape(n, -1)
    flat[np.arange(n), targets.reshape(n)] -= 1.0
    dlogits /= n

    dy = dlogits @ w["tok_emb"]
    grads["tok_emb"] += dlogits.reshape(n, -1).T @ y.reshape(n, -1)
    dx, grads["ln_f.g"], grads["ln_f.b"] = _layernorm_bwd(dy, lnf)

    for i in reversed(range(cfg.n_layers)):
        p = f"blocks.{i}"
        h, ln1, q, k, v, a, ctx, x1, h2, ln2, u, act = caches[i]
        wo, wq, wk, wv = (w[f"{p}.attn.{n}"] for n in ("wo", "wq", "wk", "wv"))
        up, down = w[f"{p}.mlp.up"], w[f"{p}.mlp.down"]

        # mlp branch
        dact = dx @ down
        grads[f"{p}.mlp.down"] += dx.reshape(-1, dx.shape[-1]).T @ act.reshape(-1, act.shape[-1])
        du = dact * _gelu_bwd(u)
        dh2 = du @ up
        grads[f"{p}.mlp.up"] += du.reshape(-1, du.shape[-1]).T @ h2.reshape(-1, h2.shape[-1])
        dln2, grads[f"{p}.ln2.g"], grads[f"{p}.ln2.b"] = _layernorm_bwd(dh2, ln2)
        dx1 = dx + dln2

        # attention branch
        dctx = dx1 @ wo
        grads[f"{p}.attn.wo"] += dx1.reshape(-1, dx1.shape[-1]).T @ ctx.reshape(-1, ctx.shape[-1])
        dctx_h = _split_heads(dctx, n_heads)
        da = dctx_h @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dctx_h
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
        dq = ds @ k * scale
        dk = ds.transpose(0, 1, 3, 2) @ q * scale
        dh = np.zeros_like(h)
        hflat = h.reshape(-1, h.shape[-1])
        for g, mat, name in ((dq, wq, "wq"), (dk, wk, "wk"), (dv, wv, "wv")):
            gflat = _merge_heads(g).reshape(-1, h.shape[-1])
            dh += gflat.reshape(h.shape) @ mat
            grads[f"{p}.attn.{name}"] += gflat.T @ hflat
        dln1, grads[f"{p}.ln1.g"], grads[f"{p}.ln1.b"] = _layernorm_bwd(dh, ln1)
        dx = dx1 + dln1

    grads["pos_emb"][:T] += dx.sum(axis=0)
    np.add.at(grads["tok_emb"], ids.reshape(-1), dx.reshape(-1, dx.shape[-1]))
    return loss, grads


class AdamState:
    def __init__(self, model: Transformer, lr: float):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in model.weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in model.weights.items()}

    def step(self, model: Transformer, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name in weight_names(model.config):
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            model.weights[name] -= (
                self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            ).astype(model.weights[name].dtype)


def sample_windows(
    corpus: bytes, batch: int, window: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Random corpus windows as (inputs, targets): BOS-prefixed byte ids."""
    starts = rng.integers(0, len(corpus) - window, size=batch)
    raw = np.stack(
        [np.frombuffer(corpus[s : s + window], dtype=np.uint8) for s in starts]
    ).astype(np.int64)
    ids = np.concatenate(
        [np.full((batch, 1), BOS_ID, dtype=np.int64), raw[:, :-1]], axis=1
    )
    return ids, raw


def train_toy(
    config: ModelConfig,
    corpus: bytes,
    hyper: TrainHyper,
    on_step=None,
) -> tuple[Transformer, list[float]]:
    """Train a fresh model on random corpus windows; returns (model, loss curve)."""
    if len(corpus) < 10 * config.max_seq_len:
        raise CorpusTooSmallError(
            f"corpus has {len(corpus)} bytes, need at least {10 * config.max_seq_len}"
        )
    window = hyper.window or min(128, config.max_seq_len)
    if window > config.max_seq_len:
        raise ValueError("window exceeds max_seq_len")
    model = init_model(config)
    rng = np.random.default_rng(hyper.seed)
    opt = AdamState(model, hyper.lr)
    losses: list[float] = []
    for step in range(hyper.steps):
        ids, targets = sample_windows(corpus, hyper.batch, window, rng)
        loss, grads = loss_and_grads(model, ids, targets)
        if not np.isfinite(loss):
            raise NonFiniteLossError(
                f"loss {loss} at step {step} (lr={hyper.lr}, batch={hyper.batch})"
            )
        opt.step(model, grads)
        losses.append(loss)
        if on_step is not None:
            on_step(step, loss)
    return model, losses
