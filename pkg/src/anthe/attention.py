"""Multi-head attention with pre-attention sigmoid gating.

A gate ``XgY`` multiplies stream ``Y`` (after its own projection) by
``sigmoid(W_X X)``. The gating stream ``X`` then enters attention
unprojected, and the third stream keeps its plain projection. So KgV reads::

    Q_s = W_Q Q,   K_s = K,   V_s = (W_V V) * sigmoid(W_K K)

Every variant holds the same three matrices, so the gate never changes the
parameter count. With the pre-attention projections removed ("no patt") the
gate reduces to ``Y * sigmoid(X)``.
"""

from __future__ import annotations

import enum
from typing import Callable

import numpy as np

from . import functional as F
from .errors import ConfigError, ShapeError
from .modules import Linear, Module
from .tensor import Tensor, sigmoid, swapaxes


class GateKind(str, enum.Enum):
    NONE = "none"
    KgV = "KgV"
    KgQ = "KgQ"
    QgV = "QgV"
    QgK = "QgK"
    VgK = "VgK"
    VgQ = "VgQ"

    @classmethod
    def parse(cls, value) -> GateKind:
        if isinstance(value, cls):
            return value
        for g in cls:
            if g.value.lower() == str(value).lower():
                return g
        raise ConfigError(f"unknown gate {value!r}; choose from {[g.value for g in cls]}")

    @property
    def gater(self) -> str | None:
        return None if self is GateKind.NONE else self.value[0]

    @property
    def gated(self) -> str | None:
        return None if self is GateKind.NONE else self.value[2]

    @property
    def cross_compatible(self) -> bool:
        """True when the gate pairs only K and V, which share the encoder length."""
        return self is GateKind.NONE or {self.gater, self.gated} == {"K", "V"}

    def __str__(self) -> str:
        return self.value


LinearFactory = Callable[[int, int, str], Module]


class Attention(Module):
    """Parameters and forward pass of one (self- or cross-) attention block.

    ``make_patt`` builds each pre-attention projection; it lets the model
    substitute tensor-chain layers for the dense ones.
    """

    def __init__(self, d_model: int, d_h: int, gate: GateKind, rng: np.random.Generator, *,
                 patt_enabled: bool = True, cross: bool = False, p_dropout: float = 0.0,
                 make_patt: LinearFactory | None = None):
        super().__init__()
        if d_model % d_h:
            raise ConfigError(f"d_model={d_model} is not divisible by d_h={d_h}")
        gate = GateKind.parse(gate)
        if cross and not gate.cross_compatible:
            raise ConfigError(
                f"gate {gate} pairs the decoder query with an encoder stream of a different "
                "length; it cannot be used in cross-attention")
        self.d_model, self.d_h = d_model, d_h
        self.gate = gate
        self.patt_enabled = patt_enabled
        self.cross = cross
        self.p_dropout = p_dropout
        self.rng = rng
        if make_patt is None:
            def make_patt(d_in, d_out, name):
                return Linear(d_in, d_out, rng, kind="patt")
        self.W_Q = self.W_K = self.W_V = None
        if patt_enabled:
            self.W_Q = make_patt(d_model, d_model, "W_Q")
            self.W_K = make_patt(d_model, d_model, "W_K")
            self.W_V = make_patt(d_model, d_model, "W_V")
        self.W_O = Linear(d_model, d_model, rng, kind="attention_output")

    def projection(self, stream: str):
        return {"Q": self.W_Q, "K": self.W_K, "V": self.W_V}[stream]

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
        q_s, k_s, v_s = gate_streams(self.gate, q, k, v, self)
        return multi_head_attention(q_s, k_s, v_s, mask, self)


def gate_streams(gate: GateKind, Q: Tensor, K: Tensor, V: Tensor, params: Attention):
    """Return the attention inputs ``(Q_s, K_s, V_s)`` for the given gate."""
    gate = GateKind.parse(gate)
    raw = {"Q": Q, "K": K, "V": V}

    def project(name):
        w = params.projection(name) if params.patt_enabled else None
        return raw[name] if w is None else w(raw[name])

    if gate is GateKind.NONE:
        return project("Q"), project("K"), project("V")
    x, y = gate.gater, gate.gated
    if raw[x].shape != raw[y].shape:
        raise ShapeError(f"gate {gate}: stream {x} {raw[x].shape} cannot gate {y} {raw[y].shape}")
    out = {x: raw[x], y: project(y) * sigmoid(project(x))}
    (z,) = {"Q", "K", "V"} - {x, y}
    out[z] = project(z)
    return out["Q"], out["K"], out["V"]


def _split_heads(x: Tensor, h: int) -> Tensor:
    B, T, D = x.shape
    return x.reshape(B, T, h, D // h).transpose(0, 2, 1, 3)


def attention_weights(q_s: Tensor, k_s: Tensor, mask: np.ndarray | None, d_h: int) -> Tensor:
    """Softmax attention probabilities ``[batch, heads, t_q, t_k]``."""
    d_model = q_s.shape[-1]
    scale = 1.0 / np.sqrt(d_model / d_h)
    scores = (_split_heads(q_s, d_h) @ swapaxes(_split_heads(k_s, d_h), -1, -2)) * scale
    if mask is not None:
        mask = np.asarray(mask)
        tq, tk = scores.shape[-2:]
        if mask.ndim < 2 or mask.shape[-2] not in (1, tq) or mask.shape[-1] not in (1, tk):
            raise ShapeError(f"mask shape {mask.shape} incompatible with (t_q, t_k)=({tq}, {tk})")
        scores = scores + mask.astype(scores.dtype)
    return F.softmax(scores, axis=-1)


def multi_head_attention(q_s: Tensor, k_s: Tensor, v_s: Tensor, mask, params: Attention) -> Tensor:
    B, tq, D = q_s.shape
    probs = attention_weights(q_s, k_s, mask, params.d_h)
    probs = F.dropout(probs, params.p_dropout, params.training, params.rng)
    heads = probs @ _split_heads(v_s, params.d_h)
    merged = heads.transpose(0, 2, 1, 3).reshape(B, tq, D)
    return params.W_O(merged)


def causal_mask(t: int, dtype=np.float32) -> np.ndarray:
    """Additive ``[t, t]`` mask with ``-inf`` above the diagonal."""
    return np.triu(np.full((t, t), -np.inf, dtype=dtype), k=1)


def padding_mask(real: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Additive ``[batch, 1, 1, t_k]`` mask hiding padded keys."""
    real = np.asarray(real, bool)
    return np.where(real, 0.0, -np.inf).astype(dtype)[:, None, None, :]
