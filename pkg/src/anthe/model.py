"""Encoder-decoder assembly, architecture presets and parameter census.

An :class:`ArchConfig` describes one row of the ablation tables. ``build``
turns it into a post-layer-norm encoder-decoder Transformer, replacing any
linear named in ``tc_plan`` by a tensor-chain layer.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .attention import Attention, GateKind, causal_mask, padding_mask
from .errors import ConfigError
from .hsoftpos import HSoftPosConfig, HSoftPosEmbedding, sinusoidal_encoding
from .modules import LayerNorm, Linear, Module, ModuleList, normal, shape_only, zeros
from .tc import TCLinear, plan_factors
from .tensor import Tensor, as_tensor, gelu, no_grad, relu, take_rows

TC_PLACEMENTS = ("emb", "ff", "patt", "output")

CENSUS_FIELDS = ("encoder_embedding", "decoder_embedding", "patt", "attention_output",
                 "ff", "layer_norms", "output_projection")


@dataclass
class SoftPosOptions:
    l_sp: int = 2
    n_sp: int = 16


@dataclass
class ArchConfig:
    d_model: int = 512
    N: int = 6
    d_h: int = 8
    d_ff: int | None = None
    p_dropout: float = 0.1
    n_vocab: int = 32000
    ff_kind: str = "FF"
    embedding_kind: str = "full"
    gate: GateKind = GateKind.NONE
    # "auto" follows ``gate`` where it is length-compatible, else "none"
    cross_gate: str = "auto"
    share_embeddings: bool = False
    patt_enabled: bool = True
    ff_enabled: bool = True
    tc_plan: dict[str, tuple[float, int]] = field(default_factory=dict)
    hsoftpos: SoftPosOptions = field(default_factory=SoftPosOptions)

    def __post_init__(self):
        self.gate = GateKind.parse(self.gate)
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        plan = {}
        for key, val in dict(self.tc_plan).items():
            r, n = (val, 2) if np.isscalar(val) else (float(val[0]), int(val[1]))
            targets = ("ff", "patt") if key == "layer" else (key,)
            for t in targets:
                plan[t] = (float(r), int(n))
        self.tc_plan = plan

    @property
    def d_geglu(self) -> int:
        return round(2 * self.d_ff / 3)

    def hsoftpos_config(self) -> HSoftPosConfig:
        return HSoftPosConfig(self.d_model, self.n_vocab, self.hsoftpos.l_sp, self.hsoftpos.n_sp)

    def resolved_cross_gate(self) -> GateKind:
        if self.cross_gate == "auto":
            return self.gate if self.gate.cross_compatible else GateKind.NONE
        return GateKind.parse(self.cross_gate)

    def validate(self) -> None:
        def bad(field_name, msg):
            raise ConfigError(f"{field_name}: {msg}")

        for name in ("d_model", "N", "d_h", "d_ff"):
            if getattr(self, name) < 1:
                bad(name, "must be positive")
        if self.n_vocab < 2:
            bad("n_vocab", "must be >= 2")
        if self.d_model % self.d_h:
            bad("d_h", f"d_model={self.d_model} is not divisible by d_h={self.d_h}")
        if not 0.0 <= self.p_dropout < 1.0:
            bad("p_dropout", "must lie in [0, 1)")
        if self.ff_kind not in ("FF", "GEGLU"):
            bad("ff_kind", f"expected FF or GEGLU, got {self.ff_kind!r}")
        if self.embedding_kind not in ("full", "hsoftpos"):
            bad("embedding_kind", f"expected full or hsoftpos, got {self.embedding_kind!r}")
        if self.share_embeddings:
            if self.embedding_kind != "full":
                bad("share_embeddings", "requires embedding_kind=full")
            if {"emb", "output"} & set(self.tc_plan):
                bad("share_embeddings", "cannot be combined with TC on emb or output")
        for key, (r, n) in self.tc_plan.items():
            if key not in TC_PLACEMENTS:
                bad("tc_plan", f"unknown placement {key!r}; use one of {TC_PLACEMENTS} or layer")
            if not 0.0 < r <= 1.0:
                bad(f"tc_plan.{key}", f"reduction factor {r} outside (0, 1]")
            if n < 2:
                bad(f"tc_plan.{key}", f"chain length {n} < 2")
        if not self.resolved_cross_gate().cross_compatible:
            bad("cross_gate", f"{self.cross_gate} cannot gate across different sequence lengths")
        if self.embedding_kind == "hsoftpos":
            try:
                self.hsoftpos_config().validate()
            except ConfigError as exc:
                bad("hsoftpos", str(exc))

    def replace(self, **changes) -> ArchConfig:
        return dataclasses.replace(self, **changes)


# config files ---------------------------------------------------------

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _config_keys() -> dict[str, type]:
    keys = {}
    for f in dataclasses.fields(ArchConfig):
        if f.name == "hsoftpos":
            keys.update({"hsoftpos.l_sp": int, "hsoftpos.n_sp": int})
        elif f.name == "tc_plan":
            keys.update({f"tc_plan.{p}": tuple for p in TC_PLACEMENTS + ("layer",)})
        else:
            keys[f.name] = f.type
    return keys


def set_option(cfg: ArchConfig, key: str, value: str) -> ArchConfig:
    """Return a copy of ``cfg`` with one flat ``key = value`` applied."""
    key, value = key.strip(), value.strip()
    keys = _config_keys()
    if key not in keys:
        raise ConfigError(f"unknown config key {key!r}")
    if key.startswith("hsoftpos."):
        sub = dataclasses.replace(cfg.hsoftpos, **{key.split(".", 1)[1]: int(value)})
        return cfg.replace(hsoftpos=sub)
    if key.startswith("tc_plan."):
        where = key.split(".", 1)[1]
        plan = dict(cfg.tc_plan)
        drop = ("ff", "patt") if where == "layer" else (where,)
        for d in drop:
            plan.pop(d, None)
        if value.lower() not in ("none", ""):
            parts = value.split(",")
            r = float(parts[0])
            n = int(parts[1]) if len(parts) > 1 else 2
            plan[where] = (r, n)
        return cfg.replace(tc_plan=plan)
    kind = keys[key]
    try:
        if key == "d_ff" and value.lower() == "none":
            parsed = None
        elif "bool" in str(kind):
            parsed = _BOOL[value.lower()]
        elif "int" in str(kind):
            parsed = int(value)
        elif "float" in str(kind):
            parsed = float(value)
        else:
            parsed = value
    except (KeyError, ValueError):
        raise ConfigError(f"cannot parse {key}={value!r}") from None
    return cfg.replace(**{key: parsed})


def apply_overrides(cfg: ArchConfig, overrides) -> ArchConfig:
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        cfg = set_option(cfg, k, v)
    return cfg


def parse_config(text: str, base: ArchConfig | None = None) -> ArchConfig:
    """Read a flat ``key = value`` config (``#`` starts a comment)."""
    cfg = base or ArchConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        cfg = set_option(cfg, k, v)
    return cfg


def format_config(cfg: ArchConfig) -> str:
    lines = []
    for f in dataclasses.fields(ArchConfig):
        val = getattr(cfg, f.name)
        if f.name == "hsoftpos":
            lines += [f"hsoftpos.l_sp = {val.l_sp}", f"hsoftpos.n_sp = {val.n_sp}"]
        elif f.name == "tc_plan":
            lines += [f"tc_plan.{k} = {r!r},{n}" for k, (r, n) in sorted(val.items())]
        elif isinstance(val, bool):
            lines.append(f"{f.name} = {str(val).lower()}")
        else:
            lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


# presets --------------------------------------------------------------

_B = dict(ff_kind="FF", share_embeddings=False)
_BP = dict(_B, ff_kind="GEGLU")
_BPK = dict(_BP, gate="KgV")
_NO_TC = dict(_BPK, embedding_kind="hsoftpos")
_ANTHE = dict(_NO_TC, tc_plan={"ff": 0.005, "patt": 0.07})

#: name -> (config overrides, published parameter count or None)
PRESETS: dict[str, tuple[dict, float | None]] = {
    "transformer-shared": (dict(ff_kind="FF", share_embeddings=True), 60e6),
    "b": (_B, 93e6),
    "b-prime": (_BP, 93e6),
    "b-prime-kgv": (_BPK, 93e6),
    "anthe-no-tc": (_NO_TC, 68e6),
    "tc-emb-0.2": (dict(_BPK, tc_plan={"emb": 0.2}), 67e6),
    "tc-ff-0.1": (dict(_NO_TC, tc_plan={"ff": 0.1}), 46e6),
    "anthe": (_ANTHE, 30e6),
    "tc-emb-0.8": (dict(_BPK, tc_plan={"emb": 0.8}), 86e6),
    "tc-layer-0.2": (dict(_BPK, tc_plan={"layer": 0.2}), 61e6),
    "tc-layer-0.8": (dict(_BPK, tc_plan={"layer": 0.8}), 85e6),
    "tc-output-0.2": (dict(_BPK, tc_plan={"output": 0.2}), 80e6),
    "tc-output-0.8": (dict(_BPK, tc_plan={"output": 0.8}), 89e6),
    "tc-layer-0.1-n2": (dict(_NO_TC, tc_plan={"layer": (0.1, 2)}), 33e6),
    "tc-layer-0.1-n3": (dict(_NO_TC, tc_plan={"layer": (0.1, 3)}), 33e6),
    "tc-layer-0.1-n4": (dict(_NO_TC, tc_plan={"layer": (0.1, 4)}), 29e6),
    "anthe-no-patt": (dict(_ANTHE, patt_enabled=False), 29e6),
    "anthe-no-ff": (dict(_ANTHE, ff_enabled=False), 30e6),
    "anthe-no-patt-no-ff": (dict(_ANTHE, patt_enabled=False, ff_enabled=False), 29e6),
    "anthe-small": (dict(_ANTHE, d_model=64, N=2, d_h=4, n_vocab=64), None),
}
for _g in ("KgQ", "QgV", "QgK", "VgK", "VgQ"):
    PRESETS[f"b-prime-{_g.lower()}"] = (dict(_BP, gate=_g), None)


def preset(name: str, **overrides) -> ArchConfig:
    try:
        base, _ = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None
    kwargs = dict(base)
    kwargs["tc_plan"] = dict(kwargs.get("tc_plan", {}))
    kwargs.update(overrides)
    return ArchConfig(**kwargs)


# building blocks ------------------------------------------------------


class Embedding(Module):
    """Dense or tensor-chain token table plus the sinusoidal position code."""

    def __init__(self, d_model: int, n_vocab: int, rng, kind: str, table: TCLinear | None = None):
        super().__init__()
        self.kind = kind
        self.d_model = d_model
        if table is None:
            self.E = normal(rng, (n_vocab, d_model), 0.02)
        else:
            self.table = table

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        x = take_rows(self.E, ids) if "E" in self._params else self.table.rows(ids)
        return x + as_tensor(sinusoidal_encoding(ids.shape[-1], self.d_model, x.dtype))


class FeedForward(Module):
    kind = "ff"

    def __init__(self, cfg: ArchConfig, make_linear):
        super().__init__()
        self.ff_kind = cfg.ff_kind
        if cfg.ff_kind == "FF":
            self.W1 = make_linear(cfg.d_model, cfg.d_ff, "ff")
            self.W2 = make_linear(cfg.d_ff, cfg.d_model, "ff")
        else:
            h = cfg.d_geglu
            self.W_g = make_linear(cfg.d_model, h, "ff")
            self.W = make_linear(cfg.d_model, h, "ff")
            self.W_o = make_linear(h, cfg.d_model, "ff")

    def __call__(self, x: Tensor) -> Tensor:
        if self.ff_kind == "FF":
            return self.W2(relu(self.W1(x)))
        return geglu_block(x, self)


def geglu_block(x: Tensor, params: FeedForward) -> Tensor:
    """``(GELU(x W_g) * (x W)) W_o``."""
    return params.W_o(gelu(params.W_g(x)) * params.W(x))


class EncoderBlock(Module):
    def __init__(self, cfg: ArchConfig, rng, make_linear):
        super().__init__()
        self.p = cfg.p_dropout
        self.rng = rng
        self.self_attn = Attention(cfg.d_model, cfg.d_h, cfg.gate, rng, patt_enabled=cfg.patt_enabled,
                                   p_dropout=cfg.p_dropout, make_patt=make_linear_patt(make_linear))
        self.ff = FeedForward(cfg, make_linear) if cfg.ff_enabled else None
        self.ln1 = LayerNorm(cfg.d_model)
        self.ln2 = LayerNorm(cfg.d_model)

    def _drop(self, x):
        return F.dropout(x, self.p, self.training, self.rng)

    def __call__(self, x, mask):
        x = self.ln1(x + self._drop(self.self_attn(x, x, x, mask)))
        return self.ln2(x + self._drop(self.ff(x))) if self.ff is not None else self.ln2(x)


class DecoderBlock(EncoderBlock):
    def __init__(self, cfg: ArchConfig, rng, make_linear):
        super().__init__(cfg, rng, make_linear)
        self.cross_attn = Attention(cfg.d_model, cfg.d_h, cfg.resolved_cross_gate(), rng,
                                    patt_enabled=cfg.patt_enabled, cross=True, p_dropout=cfg.p_dropout,
                                    make_patt=make_linear_patt(make_linear))
        self.ln3 = LayerNorm(cfg.d_model)

    def __call__(self, y, memory, self_mask, cross_mask):
        y = self.ln1(y + self._drop(self.self_attn(y, y, y, self_mask)))
        y = self.ln2(y + self._drop(self.cross_attn(y, memory, memory, cross_mask)))
        return self.ln3(y + self._drop(self.ff(y))) if self.ff is not None else self.ln3(y)


def make_linear_patt(make_linear):
    return lambda d_in, d_out, name: make_linear(d_in, d_out, "patt")


class OutputProjection(Module):
    kind = "output_projection"

    def __init__(self, cfg: ArchConfig, rng, make_linear, shared: Tensor | None):
        super().__init__()
        self.shared = shared is not None
        if shared is not None:
            object.__setattr__(self, "E", shared)  # counted by its owner
            self.bias = zeros((cfg.n_vocab,))
        else:
            self.proj = make_linear(cfg.d_model, cfg.n_vocab, "output")

    def __call__(self, h: Tensor) -> Tensor:
        if self.shared:
            return h @ self.E.transpose() + self.bias
        return self.proj(h)


class Model(Module):
    def __init__(self, cfg: ArchConfig, seed: int = 0):
        super().__init__()
        cfg.validate()
        self.config = cfg
        rng = np.random.default_rng(seed)
        self.rng = np.random.default_rng([seed, 1])  # dropout stream
        self.tc_layers: list[tuple[str, TCLinear]] = []

        def make_linear(d_in, d_out, where):
            kind = {"emb": None, "output": "output_projection"}.get(where, where)
            if where in cfg.tc_plan:
                r, n = cfg.tc_plan[where]
                layer = TCLinear(plan_factors(d_in, d_out, n, r), rng, kind=kind)
                self.tc_layers.append((where, layer))
                return layer
            return Linear(d_in, d_out, rng, bias=True, kind=kind)

        def make_table(n_rows, width, kind):
            if "emb" not in cfg.tc_plan:
                return None
            r, n = cfg.tc_plan["emb"]
            layer = TCLinear(plan_factors(n_rows, width, n, r), rng, kind=kind)
            self.tc_layers.append(("emb", layer))
            return layer

        if cfg.embedding_kind == "hsoftpos":
            hcfg = cfg.hsoftpos_config()
            self.src_embed = HSoftPosEmbedding(hcfg, rng, "encoder_embedding",
                                               make_table(cfg.n_vocab, hcfg.d_emb, "encoder_embedding"))
            self.tgt_embed = HSoftPosEmbedding(hcfg, rng, "decoder_embedding",
                                               make_table(cfg.n_vocab, hcfg.d_emb, "decoder_embedding"))
        else:
            self.src_embed = Embedding(cfg.d_model, cfg.n_vocab, rng, "encoder_embedding",
                                       make_table(cfg.n_vocab, cfg.d_model, "encoder_embedding"))
            if cfg.share_embeddings:
                self.tgt_embed = self.src_embed
            else:
                self.tgt_embed = Embedding(cfg.d_model, cfg.n_vocab, rng, "decoder_embedding",
                                           make_table(cfg.n_vocab, cfg.d_model, "decoder_embedding"))
        self.encoder = ModuleList(EncoderBlock(cfg, rng, make_linear) for _ in range(cfg.N))
        self.decoder = ModuleList(DecoderBlock(cfg, rng, make_linear) for _ in range(cfg.N))
        shared = self.src_embed.E if cfg.share_embeddings else None
        self.output = OutputProjection(cfg, rng, make_linear, shared)

    def _drop(self, x):
        return F.dropout(x, self.config.p_dropout, self.training, self.rng)

    def encode(self, src: np.ndarray, src_real: np.ndarray | None = None) -> Tensor:
        src = np.asarray(src)
        real = np.ones(src.shape, bool) if src_real is None else src_real
        x = self._drop(self.src_embed(src))
        mask = padding_mask(real, x.dtype)
        for block in self.encoder:
            x = block(x, mask)
        return x

    def decode(self, memory: Tensor, src_real, tgt_in: np.ndarray, tgt_real=None) -> Tensor:
        tgt_in = np.asarray(tgt_in)
        B, T = tgt_in.shape
        src_real = np.ones(memory.shape[:2], bool) if src_real is None else src_real
        tgt_real = np.ones((B, T), bool) if tgt_real is None else tgt_real
        y = self._drop(self.tgt_embed(tgt_in))
        self_mask = causal_mask(T, y.dtype)[None, None] + padding_mask(tgt_real, y.dtype)
        cross_mask = padding_mask(src_real, y.dtype)
        for block in self.decoder:
            y = block(y, memory, self_mask, cross_mask)
        return self.output(y)

    def __call__(self, src, tgt_in, src_real=None, tgt_real=None) -> Tensor:
        """Logits ``[batch, t_target, n_vocab]`` under teacher forcing."""
        return self.decode(self.encode(src, src_real), src_real, tgt_in, tgt_real)

    def state_dict(self) -> dict[str, Tensor]:
        return {name: t for name, t, _ in self.named_parameters()}


def build(config: ArchConfig, seed: int = 0) -> Model:
    return Model(config, seed)


# census ---------------------------------------------------------------


@dataclass
class ParamCensus:
    encoder_embedding: int = 0
    decoder_embedding: int = 0
    patt: int = 0
    attention_output: int = 0
    ff: int = 0
    layer_norms: int = 0
    output_projection: int = 0
    tc: list[dict] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(getattr(self, f) for f in CENSUS_FIELDS)

    def as_dict(self) -> dict[str, int]:
        out = {f: getattr(self, f) for f in CENSUS_FIELDS}
        out["total"] = self.total
        return out

    def format_table(self) -> str:
        rows = list(self.as_dict().items())
        width = max(len(k) for k, _ in rows)
        lines = [f"{k:<{width}}  {v:>12,d}  {v / max(self.total, 1):6.1%}" for k, v in rows]
        for t in self.tc:
            lines.append(f"tc[{t['where']}] {t['name']}: n={t['n']} b={t['b']} "
                         f"r_target={t['r_target']:g} r_actual={t['r_actual']:.5f}")
        return "\n".join(lines)

    def format_kv(self) -> str:
        lines = [f"{k}={v}" for k, v in self.as_dict().items()]
        lines += [f"tc.{t['name']}.r_actual={t['r_actual']:.6g}" for t in self.tc]
        return "\n".join(lines)


def census(model: Model) -> ParamCensus:
    c = ParamCensus()
    for _, t, kind in model.named_parameters():
        if kind not in CENSUS_FIELDS:
            raise AssertionError(f"parameter of unknown kind {kind!r}")
        setattr(c, kind, getattr(c, kind) + t.size)
    names = {id(m): name for name, m in model.modules()}
    for where, layer in model.tc_layers:
        p = layer.plan
        c.tc.append(dict(where=where, name=names[id(layer)], n=p.n, b=p.b,
                         r_target=p.r_target, r_actual=p.r_actual))
    return c


def count_params(config: ArchConfig) -> ParamCensus:
    """Census from shapes alone; no parameter memory is allocated."""
    with shape_only():
        return census(build(config))


# decoding -------------------------------------------------------------


def greedy_decode(model: Model, src: np.ndarray, max_len: int, bos: int, eos: int, pad: int = 0,
                  src_real: np.ndarray | None = None) -> np.ndarray:
    """Argmax decoding; returns ``[batch, <= max_len]`` ids, ``pad`` after ``eos``."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    src = np.asarray(src)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            memory = model.encode(src, src_real)
            ys = np.full((src.shape[0], 1), bos, dtype=np.int64)
            done = np.zeros(src.shape[0], bool)
            for _ in range(max_len):
                logits = model.decode(memory, src_real, ys).data[:, -1]
                nxt = np.where(done, pad, logits.argmax(-1))
                ys = np.concatenate([ys, nxt[:, None]], axis=1)
                done |= nxt == eos
                if done.all():
                    break
    finally:
        model.train(was_training)
    return ys[:, 1:]
