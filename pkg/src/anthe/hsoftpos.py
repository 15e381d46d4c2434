"""Hierarchical soft part-of-speech embeddings.

Level 1 is a narrow token embedding (width ``d_emb``) plus a fixed sinusoidal
position code. Each further level is a causal kernel-3 convolution of the
previous level with dilation ``2**l`` and ``d_sp`` output channels. Every
level also contributes a "soft POS" vector: a softmax over its first ``n_sp``
channels mixing the rows of a learned ``[n_sp, d_sp]`` table. All pieces are
concatenated to width ``d_model``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .errors import ConfigError
from .modules import Module, glorot_uniform, normal, zeros
from .tensor import Tensor, as_tensor, concat, slice_channels, take_rows


@dataclass(frozen=True)
class HSoftPosConfig:
    d_model: int = 512
    n_vocab: int = 32000
    l_sp: int = 2
    n_sp: int = 16

    @property
    def d_sp(self) -> int:
        return self.d_model // (2 * self.l_sp)

    @property
    def d_emb(self) -> int:
        return self.d_model - (2 * self.l_sp - 1) * self.d_sp

    def validate(self) -> None:
        if self.l_sp < 1:
            raise ConfigError(f"hsoftpos.l_sp must be >= 1, got {self.l_sp}")
        if self.d_sp < 1 or self.d_emb < 1:
            raise ConfigError(f"d_model={self.d_model} too narrow for l_sp={self.l_sp}")
        if not 1 <= self.n_sp <= min(self.d_emb, self.d_sp):
            raise ConfigError(
                f"hsoftpos.n_sp={self.n_sp} must lie in [1, min(d_emb, d_sp)="
                f"{min(self.d_emb, self.d_sp)}]")

    def level_inputs(self) -> list[int]:
        """Input channel width of the convolution producing each level l >= 2."""
        return [self.d_emb if l == 2 else self.d_sp for l in range(2, self.l_sp + 1)]


def embedding_param_count(config: HSoftPosConfig) -> int:
    conv = sum(3 * c_in * config.d_sp + config.d_sp for c_in in config.level_inputs())
    return config.d_emb * config.n_vocab + conv + config.l_sp * config.n_sp * config.d_sp


def sinusoidal_encoding(t: int, d: int, dtype=np.float32) -> np.ndarray:
    """Standard ``[t, d]`` sine/cosine position code (sines on even channels)."""
    pos = np.arange(t)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((t, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe.astype(dtype)


class HSoftPosEmbedding(Module):
    """Token ids ``[batch, t]`` to features ``[batch, t, d_model]``.

    ``table`` may be supplied (e.g. a tensor-chain layer exposing ``rows``)
    in place of the dense ``[n_vocab, d_emb]`` lookup.
    """

    def __init__(self, config: HSoftPosConfig, rng: np.random.Generator, kind: str, table=None):
        super().__init__()
        config.validate()
        self.kind = kind
        self.config = config
        if table is None:
            self.E = normal(rng, (config.n_vocab, config.d_emb), 0.02)
        else:
            self.table = table
        self.kernels: list[Tensor] = []
        self.conv_biases: list[Tensor] = []
        for l, c_in in zip(range(2, config.l_sp + 1), config.level_inputs()):
            k = glorot_uniform(rng, (3, c_in, config.d_sp), 3 * c_in, 3 * config.d_sp)
            b = zeros((config.d_sp,))
            setattr(self, f"conv{l}", k)
            setattr(self, f"conv{l}_bias", b)
            self.kernels.append(k)
            self.conv_biases.append(b)
        self.W_sp: list[Tensor] = []
        for l in range(1, config.l_sp + 1):
            w = glorot_uniform(rng, (config.n_sp, config.d_sp), config.n_sp, config.d_sp)
            setattr(self, f"W_sp{l}", w)
            self.W_sp.append(w)

    def lookup(self, ids: np.ndarray) -> Tensor:
        if "E" in self._params:
            return take_rows(self.E, ids)
        return self.table.rows(ids)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return embed(ids, self)


def soft_pos(x: Tensor, W_sp: Tensor) -> Tensor:
    n_sp = W_sp.shape[0]
    return F.softmax(slice_channels(x, 0, n_sp), axis=-1) @ W_sp


def embed(ids: np.ndarray, params: HSoftPosEmbedding) -> Tensor:
    cfg = params.config
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.n_vocab):
        raise IndexError(f"token id out of range for n_vocab={cfg.n_vocab}")
    x = params.lookup(ids)
    t = ids.shape[-1]
    pe = sinusoidal_encoding(t, cfg.d_model, x.dtype)[:, : cfg.d_emb]
    x = x + as_tensor(pe)
    pieces = [x, soft_pos(x, params.W_sp[0])]
    for l in range(2, cfg.l_sp + 1):
        x = F.causal_conv1d(x, params.kernels[l - 2], 2 ** l, params.conv_biases[l - 2])
        pieces += [x, soft_pos(x, params.W_sp[l - 1])]
    return concat(pieces, axis=-1)
