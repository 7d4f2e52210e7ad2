"""Region classifiers trained with pixel-weighted cross-entropy.

Three decoders share one protocol: linear, MLP (hidden width 1000, GELU),
and a pre-LayerNorm transformer (fused QKV, 4x MLP, no final LayerNorm)
with a linear class head. Gradients are hand-derived reverse mode over
float64 parameters; a finite-difference oracle in the test suite is the
correctness gate. Attention masking uses exact -inf scores, so padded
tokens get exactly zero attention weight and cannot influence real tokens.

Training iterates over groups: a group is the attention unit (one image's
tokens for the transformer, a single region for the pointwise decoders).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

from .core import ConfigError, DimsMismatchError, DivergenceError

_LN_EPS = 1e-5


def _trunc_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std."""
    return stats.truncnorm.rvs(-2.0, 2.0, scale=std, size=shape, random_state=rng)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + special.erf(x / math.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + special.erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class LabeledGroup:
    """One attention unit of training data (an image, or a single region)."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64 class indices
    weights: np.ndarray  # (n,) float64 pixel counts

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if f.ndim != 2 or y.shape != (f.shape[0],) or w.shape != (f.shape[0],):
            raise ValueError("features (n,d), labels (n,), weights (n,) required")
        if f.shape[0] == 0:
            raise ValueError("empty group")
        if (w <= 0).any():
            raise ValueError("weights must be positive")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "weights", w)


class LinearDecoder:
    """logits = x W^T + b."""

    kind = "linear"

    def __init__(self, dim: int, num_classes: int, seed: int = 0):
        if dim < 1 or num_classes < 1:
            raise ConfigError("dim and num_classes must be >= 1")
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.num_classes = num_classes
        self.params = {
            "w": _trunc_normal(rng, (num_classes, dim)),
            "b": np.zeros(num_classes),
        }

    def forward(self, tokens: np.ndarray, attention_mask: np.ndarray | None = None) -> np.ndarray:
        tokens = _check_tokens(tokens, self.dim)
        return tokens @ self.params["w"].T + self.params["b"]

    def forward_backward(self, tokens, attention_mask, dlogits):
        grads = {
            "w": dlogits.T @ tokens,
            "b": dlogits.sum(axis=0),
        }
        return grads


class MlpDecoder:
    """One GELU hidden layer (default width 1000) then a linear head."""

    kind = "mlp"

    def __init__(self, dim: int, num_classes: int, hidden: int = 1000, seed: int = 0):
        if dim < 1 or num_classes < 1 or hidden < 1:
            raise ConfigError("dim, num_classes, hidden must be >= 1")
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.num_classes = num_classes
        self.hidden = hidden
        self.params = {
            "w1": _trunc_normal(rng, (hidden, dim)),
            "b1": np.zeros(hidden),
            "w2": _trunc_normal(rng, (num_classes, hidden)),
            "b2": np.zeros(num_classes),
        }

    def forward(self, tokens: np.ndarray, attention_mask: np.ndarray | None = None) -> np.ndarray:
        tokens = _check_tokens(tokens, self.dim)
        a = tokens @ self.params["w1"].T + self.params["b1"]
        return gelu(a) @ self.params["w2"].T + self.params["b2"]

    def forward_backward(self, tokens, attention_mask, dlogits):
        p = self.params
        a = tokens @ p["w1"].T + p["b1"]
        h = gelu(a)
        dh = dlogits @ p["w2"]
        da = dh * gelu_grad(a)
        return {
            "w2": dlogits.T @ h,
            "b2": dlogits.sum(axis=0),
            "w1": da.T @ tokens,
            "b1": da.sum(axis=0),
        }


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_backward(dy: np.ndarray, g: np.ndarray, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    n = xhat.shape[-1]
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


class TransformerDecoder:
    """Pre-LN transformer blocks over a token group, then a linear class head.

    Defaults: 1 block, 8 heads (segmentation); multi-view setups use 3
    blocks. Attention is masked with exact -inf scores on padded keys.
    """

    kind = "transformer"

    def __init__(self, dim: int, num_classes: int, blocks: int = 1, heads: int = 8, seed: int = 0):
        if dim < 1 or num_classes < 1 or blocks < 1 or heads < 1:
            raise ConfigError("dim, num_classes, blocks, heads must be >= 1")
        if dim % heads != 0:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.num_classes = num_classes
        self.blocks = blocks
        self.heads = heads
        p: dict[str, np.ndarray] = {}
        for i in range(blocks):
            p[f"blk{i}.ln1_g"] = np.ones(dim)
            p[f"blk{i}.ln1_b"] = np.zeros(dim)
            p[f"blk{i}.wqkv"] = _trunc_normal(rng, (3 * dim, dim))
            p[f"blk{i}.bqkv"] = np.zeros(3 * dim)
            p[f"blk{i}.wo"] = _trunc_normal(rng, (dim, dim))
            p[f"blk{i}.bo"] = np.zeros(dim)
            p[f"blk{i}.ln2_g"] = np.ones(dim)
            p[f"blk{i}.ln2_b"] = np.zeros(dim)
            p[f"blk{i}.w1"] = _trunc_normal(rng, (4 * dim, dim))
            p[f"blk{i}.b1"] = np.zeros(4 * dim)
            p[f"blk{i}.w2"] = _trunc_normal(rng, (dim, 4 * dim))
            p[f"blk{i}.b2"] = np.zeros(dim)
        p["head_w"] = _trunc_normal(rng, (num_classes, dim))
        p["head_b"] = np.zeros(num_classes)
        self.params = p

    def _run(self, tokens: np.ndarray, attention_mask: np.ndarray | None, keep: bool):
        tokens = _check_tokens(tokens, self.dim)
        n, d = tokens.shape
        if attention_mask is None:
            attention_mask = np.ones(n, dtype=bool)
        else:
            attention_mask = np.asarray(attention_mask, dtype=bool)
            if attention_mask.shape != (n,):
                raise DimsMismatchError("attention mask length must match token count")
            if not attention_mask.any():
                raise ConfigError("attention mask excludes every token")
        p = self.params
        nh, dh = self.heads, d // self.heads
        scale = 1.0 / math.sqrt(dh)
        x = tokens
        caches = []
        for i in range(self.blocks):
            pre = f"blk{i}."
            u, ln1c = _layernorm(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
            qkv = u @ p[pre + "wqkv"].T + p[pre + "bqkv"]
            q = qkv[:, :d].reshape(n, nh, dh).transpose(1, 0, 2)
            k = qkv[:, d : 2 * d].reshape(n, nh, dh).transpose(1, 0, 2)
            v = qkv[:, 2 * d :].reshape(n, nh, dh).transpose(1, 0, 2)
            scores = (q @ k.transpose(0, 2, 1)) * scale  # (nh, n, n)
            scores[:, :, ~attention_mask] = -np.inf
            att = softmax(scores)
            opre = (att @ v).transpose(1, 0, 2).reshape(n, d)
            o = opre @ p[pre + "wo"].T + p[pre + "bo"]
            xmid = x + o
            u2, ln2c = _layernorm(xmid, p[pre + "ln2_g"], p[pre + "ln2_b"])
            a = u2 @ p[pre + "w1"].T + p[pre + "b1"]
            h = gelu(a)
            m = h @ p[pre + "w2"].T + p[pre + "b2"]
            xout = xmid + m
            if keep:
                caches.append((x, u, ln1c, q, k, v, att, opre, xmid, u2, ln2c, a, h))
            x = xout
        logits = x @ p["head_w"].T + p["head_b"]
        return logits, (tokens, attention_mask, caches, x)

    def forward(self, tokens: np.ndarray, attention_mask: np.ndarray | None = None) -> np.ndarray:
        logits, _ = self._run(tokens, attention_mask, keep=False)
        return logits

    def forward_backward(self, tokens, attention_mask, dlogits):
        _, (tokens, attention_mask, caches, xfinal) = self._run(tokens, attention_mask, keep=True)
        p = self.params
        n, d = tokens.shape
        nh, dh = self.heads, d // self.heads
        scale = 1.0 / math.sqrt(dh)
        grads = {
            "head_w": dlogits.T @ xfinal,
            "head_b": dlogits.sum(axis=0),
        }
        dx = dlogits @ p["head_w"]
        for i in range(self.blocks - 1, -1, -1):
            pre = f"blk{i}."
            x, u, ln1c, q, k, v, att, opre, xmid, u2, ln2c, a, h = caches[i]
            # MLP sublayer
            dm = dx
            grads[pre + "w2"] = dm.T @ h
            grads[pre + "b2"] = dm.sum(axis=0)
            dh_ = dm @ p[pre + "w2"]
            da = dh_ * gelu_grad(a)
            grads[pre + "w1"] = da.T @ u2
            grads[pre + "b1"] = da.sum(axis=0)
            du2 = da @ p[pre + "w1"]
            dxmid_ln, dg2, db2 = _layernorm_backward(du2, p[pre + "ln2_g"], ln2c)
            grads[pre + "ln2_g"] = dg2
            grads[pre + "ln2_b"] = db2
            dxmid = dx + dxmid_ln
            # attention sublayer
            do = dxmid
            grads[pre + "wo"] = do.T @ opre
            grads[pre + "bo"] = do.sum(axis=0)
            dopre = (do @ p[pre + "wo"]).reshape(n, nh, dh).transpose(1, 0, 2)
            datt = dopre @ v.transpose(0, 2, 1)
            dv = att.transpose(0, 2, 1) @ dopre
            ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
            dq = (ds @ k) * scale
            dk = (ds.transpose(0, 2, 1) @ q) * scale
            dqkv = np.concatenate(
                [
                    dq.transpose(1, 0, 2).reshape(n, d),
                    dk.transpose(1, 0, 2).reshape(n, d),
                    dv.transpose(1, 0, 2).reshape(n, d),
                ],
                axis=1,
            )
            grads[pre + "wqkv"] = dqkv.T @ u
            grads[pre + "bqkv"] = dqkv.sum(axis=0)
            du = dqkv @ p[pre + "wqkv"]
            dx_ln, dg1, db1 = _layernorm_backward(du, p[pre + "ln1_g"], ln1c)
            grads[pre + "ln1_g"] = dg1
            grads[pre + "ln1_b"] = db1
            dx = dxmid + dx_ln
        return grads


Decoder = LinearDecoder | MlpDecoder | TransformerDecoder


def _check_tokens(tokens: np.ndarray, dim: int) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != dim:
        raise DimsMismatchError(f"expected (n, {dim}) tokens, got {tokens.shape}")
    return tokens


def loss_and_grads(
    decoder: Decoder,
    groups: Sequence[LabeledGroup],
) -> tuple[float, dict[str, np.ndarray]]:
    """Pixel-weighted cross-entropy over a batch of groups, plus gradients.

    loss = sum_i w_i * CE_i / sum_i w_i over every token of every group.
    """
    if len(groups) == 0:
        raise ConfigError("empty batch")
    total_w = float(sum(g.weights.sum() for g in groups))
    loss = 0.0
    grads: dict[str, np.ndarray] = {}
    for g in groups:
        logits = decoder.forward(g.features)
        logp = log_softmax(logits)
        idx = np.arange(g.labels.size)
        if (g.labels < 0).any() or (g.labels >= logits.shape[1]).any():
            raise ValueError("label index out of range")
        loss += float(-(g.weights * logp[idx, g.labels]).sum())
        p = np.exp(logp)
        p[idx, g.labels] -= 1.0
        dlogits = p * (g.weights / total_w)[:, None]
        gg = decoder.forward_backward(g.features, None, dlogits)
        for name, val in gg.items():
            if name in grads:
                grads[name] += val
            else:
                grads[name] = val
    return loss / total_w, grads


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch: int = 32  # groups per step
    epochs: int = 20
    optimizer: str = "sgd"  # or "adamw"
    weight_decay: float = 0.0
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch < 1 or self.epochs < 1 or self.patience < 1:
            raise ConfigError("batch, epochs, patience must be >= 1")
        if self.optimizer not in ("sgd", "adamw"):
            raise ConfigError(f"optimizer must be sgd or adamw, got {self.optimizer!r}")


@dataclass
class TrainResult:
    train_losses: list[float]
    val_losses: list[float]
    stopped_epoch: int
    best_epoch: int


class _AdamW:
    def __init__(self, params, lr, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.wd = weight_decay
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            params[k] -= self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.wd * params[k])


class _Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.lr * g


def _dataset_loss(decoder: Decoder, groups: Sequence[LabeledGroup]) -> float:
    total_w = float(sum(g.weights.sum() for g in groups))
    loss = 0.0
    for g in groups:
        logp = log_softmax(decoder.forward(g.features))
        loss += float(-(g.weights * logp[np.arange(g.labels.size), g.labels]).sum())
    return loss / total_w


def train(
    decoder: Decoder,
    dataset: Sequence[LabeledGroup],
    cfg: TrainConfig = TrainConfig(),
    val_dataset: Sequence[LabeledGroup] | None = None,
) -> TrainResult:
    """Minibatch training with early stopping; deterministic per seed.

    Batches are groups; epochs shuffle group order. Early-stops after
    cfg.patience epochs without improvement of the validation loss (train
    loss when no validation set is given) and restores the best-epoch
    parameters. NaN loss aborts with DivergenceError.
    """
    if len(dataset) == 0:
        raise ConfigError("empty dataset")
    monitor = val_dataset if val_dataset else dataset
    rng = np.random.default_rng(cfg.seed)
    opt = _Sgd(cfg.lr) if cfg.optimizer == "sgd" else _AdamW(decoder.params, cfg.lr, cfg.weight_decay)
    train_losses: list[float] = []
    val_losses: list[float] = []
    best = math.inf
    best_epoch = -1
    best_params: dict[str, np.ndarray] = {}
    since_best = 0
    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        epoch_w = 0.0
        for start in range(0, len(order), cfg.batch):
            batch = [dataset[i] for i in order[start : start + cfg.batch]]
            loss, grads = loss_and_grads(decoder, batch)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss {loss} at epoch {epoch}, step {start // cfg.batch}"
                )
            bw = float(sum(g.weights.sum() for g in batch))
            epoch_loss += loss * bw
            epoch_w += bw
            opt.step(decoder.params, grads)
        train_losses.append(epoch_loss / epoch_w)
        vloss = _dataset_loss(decoder, monitor)
        if not math.isfinite(vloss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        val_losses.append(vloss)
        if vloss < best:
            best = vloss
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in decoder.params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    for k, v in best_params.items():
        decoder.params[k] = v
    return TrainResult(train_losses, val_losses, epoch, best_epoch)


def gradient_check(
    decoder: Decoder,
    groups: Sequence[LabeledGroup],
    step: float = 1e-3,
) -> dict[str, float]:
    """Central finite differences vs analytic grads, per parameter tensor.

    Returns max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-6)
    for every tensor.
    """
    _, grads = loss_and_grads(decoder, groups)
    out = {}
    for name, p in decoder.params.items():
        num = np.zeros_like(p)
        flat = p.ravel()
        nflat = num.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi, _ = loss_and_grads(decoder, groups)
            flat[j] = orig - step
            lo, _ = loss_and_grads(decoder, groups)
            flat[j] = orig
            nflat[j] = (hi - lo) / (2.0 * step)
        denom = max(np.abs(grads[name]).max(), np.abs(num).max(), 1e-6)
        out[name] = float(np.abs(grads[name] - num).max() / denom)
    return out
