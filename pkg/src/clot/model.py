"""Encoder with feature dispatching, parallel query decoder, refinement and heads.

Parameters live in a plain ``dict[str, np.ndarray]``. Forward functions take
:class:`~clot.autograd.Tensor` inputs so the same code runs for inference and
for building the training graph; :class:`Model` wraps the per-step bookkeeping
(leaf creation, loss assembly, backward, gradient store).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .core import DimensionError, FormatError, ParameterError, Rng, StateError


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    n_actions: int
    n_queries: int
    hidden_dim: int = 128
    embed_dim: int = 64
    dec_dim: int = 64
    dec_layers: int = 2
    dec_heads: int = 8
    ffn_mult: int = 4
    tau: float = 3.0
    dropout: float = 0.5
    dec_dropout: float = 0.1
    detach_s_in_refine: bool = False

    def __post_init__(self):
        if self.dec_dim % self.dec_heads:
            raise ParameterError(
                f"decoder width {self.dec_dim} is not divisible by {self.dec_heads} heads"
            )
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if self.n_queries < 1 or self.n_actions < 1:
            raise ParameterError("need at least one action and one query")
        for name in ("dropout", "dec_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ParameterError(f"{name} must be in [0, 1), got {rate}")


def _layer_names(layer: int) -> list[str]:
    p = f"dec{layer}."
    names = []
    for block in ("sa", "ca"):
        names += [p + f"{block}_{w}" for w in ("wq", "wk", "wv", "wo")]
    names += [p + "ffn_w1", p + "ffn_b1", p + "ffn_w2", p + "ffn_b2"]
    for ln in ("ln1", "ln2", "ln3"):
        names += [p + f"{ln}_g", p + f"{ln}_b"]
    return names


def init_params(cfg: ModelConfig, rng: Rng) -> dict[str, np.ndarray]:
    """Fresh parameters. Action embeddings start at zero and are set by k-means."""

    def dense(fan_in, fan_out, gain=1.0):
        return rng.standard_normal((fan_in, fan_out)) * gain / math.sqrt(fan_in)

    d, dd, h = cfg.embed_dim, cfg.dec_dim, cfg.hidden_dim
    p: dict[str, np.ndarray] = {
        "enc_w1": dense(cfg.input_dim, h, math.sqrt(2.0)),
        "enc_b1": np.zeros((1, h)),
        "enc_w2": dense(h, d),
        "enc_b2": np.zeros((1, d)),
        "dispatch_alpha": np.ones((1, 1)),
        "dispatch_beta": np.zeros((1, 1)),
        "queries": rng.standard_normal((cfg.n_queries, dd)) * 0.02,
    }
    for layer in range(cfg.dec_layers):
        pre = f"dec{layer}."
        p[pre + "sa_wq"] = dense(dd, dd)
        p[pre + "sa_wk"] = dense(dd, dd)
        p[pre + "sa_wv"] = dense(dd, dd)
        p[pre + "sa_wo"] = dense(dd, dd)
        p[pre + "ca_wq"] = dense(dd, dd)
        p[pre + "ca_wk"] = dense(d, dd)
        p[pre + "ca_wv"] = dense(d, dd)
        p[pre + "ca_wo"] = dense(dd, dd)
        p[pre + "ffn_w1"] = dense(dd, cfg.ffn_mult * dd, math.sqrt(2.0))
        p[pre + "ffn_b1"] = np.zeros((1, cfg.ffn_mult * dd))
        p[pre + "ffn_w2"] = dense(cfg.ffn_mult * dd, dd)
        p[pre + "ffn_b2"] = np.zeros((1, dd))
        for ln in ("ln1", "ln2", "ln3"):
            p[pre + f"{ln}_g"] = np.ones((1, dd))
            p[pre + f"{ln}_b"] = np.zeros((1, dd))
    p["dec_norm_g"] = np.ones((1, dd))
    p["dec_norm_b"] = np.zeros((1, dd))
    p["out_proj"] = dense(dd, d, 0.1)
    p["actions"] = np.zeros((cfg.n_actions, d))
    return p


def param_names(cfg: ModelConfig) -> list[str]:
    names = ["enc_w1", "enc_b1", "enc_w2", "enc_b2", "dispatch_alpha", "dispatch_beta", "queries"]
    for layer in range(cfg.dec_layers):
        names += _layer_names(layer)
    return names + ["dec_norm_g", "dec_norm_b", "out_proj", "actions"]


# ---------------------------------------------------------------- forward pieces


def _dropout(x: Tensor, rate: float, rng: Rng | None, train: bool) -> Tensor:
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def encode(x, P, dropout_rate: float = 0.0, rng: Rng | None = None, train: bool = False) -> Tensor:
    """One-hidden-layer ReLU MLP; inverted dropout on the hidden layer in train mode."""
    x = ag._wrap(x)
    if x.shape[-1] != P["enc_w1"].shape[0]:
        raise DimensionError(f"input width {x.shape[-1]} != encoder width {P['enc_w1'].shape[0]}")
    h = ag.relu(x @ P["enc_w1"] + P["enc_b1"])
    h = _dropout(h, dropout_rate, rng, train)
    return h @ P["enc_w2"] + P["enc_b2"]


def dispatch(f, actions, alpha, beta) -> Tensor:
    """``f_i + (1/K) sum_k sigmoid(beta + alpha cos(A_k, f_i)) A_k``."""
    f, actions = ag._wrap(f), ag._wrap(actions)
    if f.shape[-1] != actions.shape[-1]:
        raise DimensionError(f"frame width {f.shape[-1]} != action width {actions.shape[-1]}")
    cos = ag.row_normalize(f) @ ag.row_normalize(actions).T
    phi = ag.sigmoid(ag._wrap(beta) + ag._wrap(alpha) * cos)
    return f + (phi @ actions) / actions.shape[0]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, width = x.shape
    return ag.transpose(ag.reshape(x, (n, heads, width // heads)), (1, 0, 2))


def _merge_heads(x: Tensor) -> Tensor:
    heads, n, dh = x.shape
    return ag.reshape(ag.transpose(x, (1, 0, 2)), (n, heads * dh))


def attention(hq: Tensor, hkv: Tensor, wq, wk, wv, wo, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention without biases."""
    q = _split_heads(hq @ wq, heads)
    k = _split_heads(hkv @ wk, heads)
    v = _split_heads(hkv @ wv, heads)
    dh = q.shape[-1]
    scores = (q @ ag.transpose(k, (0, 2, 1))) / math.sqrt(dh)
    return _merge_heads(ag.softmax(scores, axis=-1) @ v) @ wo


def feed_forward(h: Tensor, w1, b1, w2, b2) -> Tensor:
    return ag.relu(h @ w1 + b1) @ w2 + b2


def decoder_layer(q: Tensor, mem: Tensor, P, layer: int, heads: int, rate: float, rng, train) -> Tensor:
    """Pre-norm block: self-attention, cross-attention to ``mem``, feed-forward."""
    p = f"dec{layer}."
    h = ag.layer_norm(q, P[p + "ln1_g"], P[p + "ln1_b"])
    q = q + _dropout(attention(h, h, P[p + "sa_wq"], P[p + "sa_wk"], P[p + "sa_wv"], P[p + "sa_wo"], heads), rate, rng, train)
    h = ag.layer_norm(q, P[p + "ln2_g"], P[p + "ln2_b"])
    q = q + _dropout(attention(h, mem, P[p + "ca_wq"], P[p + "ca_wk"], P[p + "ca_wv"], P[p + "ca_wo"], heads), rate, rng, train)
    h = ag.layer_norm(q, P[p + "ln3_g"], P[p + "ln3_b"])
    return q + _dropout(feed_forward(h, P[p + "ffn_w1"], P[p + "ffn_b1"], P[p + "ffn_w2"], P[p + "ffn_b2"]), rate, rng, train)


def decode_segments(f, P, cfg: ModelConfig, train: bool = False, rng: Rng | None = None) -> Tensor:
    """All ``K'`` segment embeddings at once from the learnable queries."""
    f = ag._wrap(f)
    q = ag._wrap(P["queries"])
    for layer in range(cfg.dec_layers):
        q = decoder_layer(q, f, P, layer, cfg.dec_heads, cfg.dec_dropout, rng, train)
    q = ag.layer_norm(q, P["dec_norm_g"], P["dec_norm_b"])
    return q @ P["out_proj"]


def refine(f, s, tau: float) -> Tensor:
    """``F + softmax(F S^T / (tau sqrt(d))) S``."""
    f, s = ag._wrap(f), ag._wrap(s)
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    d = f.shape[-1]
    att = ag.softmax((f @ s.T) / (tau * math.sqrt(d)), axis=-1)
    return f + att @ s


def predict_log(h, actions, tau: float) -> Tensor:
    """Row-wise log-softmax of ``h A^T / tau``."""
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    return ag.log_softmax((ag._wrap(h) @ ag._wrap(actions).T) / tau, axis=-1)


def predict(h, actions, tau: float) -> np.ndarray:
    return np.exp(predict_log(h, actions, tau).data)


def cross_entropy_loss(p, t) -> float:
    """``-sum_ij t_ij log p_ij`` with ``p`` clamped at 1e-12."""
    p, t = np.asarray(p, dtype=np.float64), np.asarray(t, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"shape mismatch: {p.shape} vs {t.shape}")
    return float(-(t * np.log(np.maximum(p, 1e-12))).sum())


def soft_cross_entropy(log_p: Tensor, t: np.ndarray) -> Tensor:
    if log_p.shape != t.shape:
        raise DimensionError(f"shape mismatch: {log_p.shape} vs {t.shape}")
    return -ag.tsum(log_p * t)


# ---------------------------------------------------------------- stateful wrapper


@dataclass
class Forward:
    """Intermediate values of one video's forward pass (plain arrays)."""

    f: np.ndarray
    s: np.ndarray
    f_r: np.ndarray


class Model:
    """Parameters plus the training graph of the current step."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        self._leaves: dict[str, Tensor] | None = None
        self._loss: Tensor | None = None

    # graph construction ---------------------------------------------------
    def begin(self) -> dict[str, Tensor]:
        """Start a new graph; returns the parameter leaves for this step."""
        self._leaves = {k: ag.leaf(v) for k, v in self.params.items()}
        self._loss = None
        return self._leaves

    def _tensors(self) -> dict:
        return self._leaves if self._leaves is not None else self.params

    def frames(self, x, train: bool = False, rng: Rng | None = None) -> Tensor:
        P = self._tensors()
        f = encode(x, P, self.cfg.dropout, rng, train)
        return dispatch(f, P["actions"], P["dispatch_alpha"], P["dispatch_beta"])

    def segments(self, f: Tensor, train: bool = False, rng: Rng | None = None) -> Tensor:
        return decode_segments(f, self._tensors(), self.cfg, train, rng)

    def refined(self, f: Tensor, s: Tensor) -> Tensor:
        if self.cfg.detach_s_in_refine:
            s = ag.detach(s)
        return refine(f, s, self.cfg.tau)

    def log_probs(self, h: Tensor) -> Tensor:
        return predict_log(h, self._tensors()["actions"], self.cfg.tau)

    def add_loss(self, loss: Tensor) -> None:
        self._loss = loss if self._loss is None else self._loss + loss

    # differentiation -----------------------------------------------------
    def backward(self, scale: float = 1.0) -> dict[str, np.ndarray]:
        """Gradient store for the accumulated loss times ``scale``."""
        if self._loss is None or self._leaves is None:
            raise StateError("backward called before a forward pass built a loss")
        ag.backward(self._loss, seed=np.full(self._loss.shape, scale))
        grads = {
            k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for k, t in self._leaves.items()
        }
        self._loss = None
        self._leaves = None
        return grads


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam with decoupled weight decay, updating ``params`` in place."""
    if set(grads) != set(params):
        raise DimensionError("gradient store does not match parameters")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {theta.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        theta -= state.lr * update + state.lr * state.weight_decay * theta


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"CLOTCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Named 2-D float64 tensors, little-endian, in insertion order."""
    chunks = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION)]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            arr = arr.reshape(1, -1) if arr.ndim < 2 else arr.reshape(arr.shape[0], -1)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<II", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic at byte offset 0")
    if len(buf) < 12:
        raise FormatError(f"{path}: truncated header at byte offset 8")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte offset 8")
    out: dict[str, np.ndarray] = {}
    pos = 12
    while pos < len(buf):
        if pos + 2 > len(buf):
            raise FormatError(f"{path}: truncated entry header at byte offset {pos}")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + nlen + 8 > len(buf):
            raise FormatError(f"{path}: truncated entry header at byte offset {pos}")
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        rows, cols = struct.unpack_from("<II", buf, pos)
        pos += 8
        nbytes = 8 * rows * cols
        if pos + nbytes > len(buf):
            raise FormatError(
                f"{path}: tensor {name!r} needs {nbytes} bytes at offset {pos}, "
                f"only {len(buf) - pos} available"
            )
        out[name] = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float64)
        pos += nbytes
    return out
