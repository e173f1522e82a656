"""Pre-layer-norm transformer encoder, MLM head and language discriminator."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor

INIT_STD = 0.02


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    hidden: int = 32
    n_heads: int = 4
    ff_multiplier: int = 4
    vocab_size: int = 256
    max_positions: int = 64
    n_languages: int = 2

    def validate(self) -> None:
        for key, value in asdict(self).items():
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{key} must be a positive integer, got {value!r}")
        if self.hidden % self.n_heads:
            raise ConfigError(f"hidden={self.hidden} is not divisible by n_heads={self.n_heads}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.n_heads

    def parameter_count(self) -> int:
        h, f = self.hidden, self.hidden * self.ff_multiplier
        per_layer = 4 * (h * h + h) + 2 * (2 * h) + (h * f + f) + (f * h + h)
        return (
            self.vocab_size * h
            + self.max_positions * h
            + self.n_layers * per_layer
            + 2 * h
            + h * self.vocab_size
            + self.vocab_size
        )

    def is_larger_than(self, other: ModelConfig) -> bool:
        return self.hidden > other.hidden and self.n_layers > other.n_layers


class ParamStore:
    """Ordered name -> parameter mapping shared by every model component."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, v in state.items():
            p = self._params[k]
            if v.shape != p.shape:
                raise ValueError(f"{k}: shape {v.shape} does not match {p.shape}")
            p.data = np.array(v, dtype=np.float64, copy=True)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def freeze(self) -> None:
        for p in self._params.values():
            p.requires_grad = False
            p.grad = None

    def num_values(self) -> int:
        return sum(p.size for p in self._params.values())


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) resampled outside two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ag.matmul(x, w) + b


class EncoderModel:
    """Token + position embeddings, ``n_layers`` pre-LN blocks, final LN, MLM head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        h, f, v = config.hidden, config.hidden * config.ff_multiplier, config.vocab_size
        P = self.params
        P.add("emb.tok", truncated_normal(rng, (v, h)))
        P.add("emb.pos", truncated_normal(rng, (config.max_positions, h)))
        for i in range(config.n_layers):
            pre = f"layers.{i}"
            P.add(f"{pre}.ln1.gain", np.ones(h))
            P.add(f"{pre}.ln1.bias", np.zeros(h))
            for proj in ("q", "k", "v", "o"):
                P.add(f"{pre}.attn.{proj}.weight", truncated_normal(rng, (h, h)))
                P.add(f"{pre}.attn.{proj}.bias", np.zeros(h))
            P.add(f"{pre}.ln2.gain", np.ones(h))
            P.add(f"{pre}.ln2.bias", np.zeros(h))
            P.add(f"{pre}.ff.in.weight", truncated_normal(rng, (h, f)))
            P.add(f"{pre}.ff.in.bias", np.zeros(f))
            P.add(f"{pre}.ff.out.weight", truncated_normal(rng, (f, h)))
            P.add(f"{pre}.ff.out.bias", np.zeros(h))
        P.add("final_ln.gain", np.ones(h))
        P.add("final_ln.bias", np.zeros(h))
        P.add("mlm.weight", truncated_normal(rng, (h, v)))
        P.add("mlm.bias", np.zeros(v))

    def parameters(self) -> list[Tensor]:
        return list(self.params)

    def _attention(self, x: Tensor, layer: int, key_mask: np.ndarray) -> Tensor:
        cfg = self.config
        B, S, H = x.shape
        nh, hd = cfg.n_heads, cfg.head_dim
        P, pre = self.params, f"layers.{layer}.attn"

        def heads(t: Tensor) -> Tensor:
            return t.reshape(B, S, nh, hd).transpose(0, 2, 1, 3)

        q = heads(linear(x, P[f"{pre}.q.weight"], P[f"{pre}.q.bias"]))
        k = heads(linear(x, P[f"{pre}.k.weight"], P[f"{pre}.k.bias"]))
        v = heads(linear(x, P[f"{pre}.v.weight"], P[f"{pre}.v.bias"]))
        scores = ag.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(hd))
        attn = ag.softmax(scores, axis=-1, mask=key_mask[:, None, None, :])
        ctx = ag.matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, S, H)
        return linear(ctx, P[f"{pre}.o.weight"], P[f"{pre}.o.bias"])

    def encode(self, ids: np.ndarray, attn_mask: np.ndarray | None = None) -> Tensor:
        """Hidden states ``[batch, seq, hidden]`` after the final layer norm."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ValueError(f"ids must be [batch, seq], got shape {ids.shape}")
        B, S = ids.shape
        if S > self.config.max_positions:
            raise ValueError(f"sequence length {S} exceeds max_positions={self.config.max_positions}")
        if attn_mask is None:
            attn_mask = np.ones((B, S), dtype=bool)
        attn_mask = np.asarray(attn_mask, dtype=bool)
        if attn_mask.shape != ids.shape:
            raise ValueError(f"attention mask shape {attn_mask.shape} does not match ids {ids.shape}")
        if not attn_mask.any(axis=1).all():
            raise ValueError("every sequence needs at least one non-pad position")
        P = self.params
        x = ag.embedding_lookup(P["emb.tok"], ids) + P["emb.pos"][:S]
        for i in range(self.config.n_layers):
            pre = f"layers.{i}"
            x = x + self._attention(ag.layer_norm(x, P[f"{pre}.ln1.gain"], P[f"{pre}.ln1.bias"]), i, attn_mask)
            hdn = ag.layer_norm(x, P[f"{pre}.ln2.gain"], P[f"{pre}.ln2.bias"])
            hdn = ag.gelu(linear(hdn, P[f"{pre}.ff.in.weight"], P[f"{pre}.ff.in.bias"]))
            x = x + linear(hdn, P[f"{pre}.ff.out.weight"], P[f"{pre}.ff.out.bias"])
        return ag.layer_norm(x, P["final_ln.gain"], P["final_ln.bias"])

    def mlm_logits(self, hidden: Tensor) -> Tensor:
        return linear(hidden, self.params["mlm.weight"], self.params["mlm.bias"])


def init_parameters(config: ModelConfig, seed: int) -> EncoderModel:
    return EncoderModel(config, seed)


def encode_sequence(model: EncoderModel, ids: np.ndarray, attn_mask: np.ndarray | None = None) -> Tensor:
    return model.encode(ids, attn_mask)


def mlm_logits(model: EncoderModel, hidden: Tensor) -> Tensor:
    return model.mlm_logits(hidden)


def mean_pool(hidden: Tensor, attn_mask: np.ndarray) -> Tensor:
    """Average hidden states over non-pad positions of each sequence."""
    mask = np.asarray(attn_mask, dtype=np.float64)
    counts = mask.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("cannot mean-pool an all-pad sequence")
    weights = np.broadcast_to((mask / counts[:, None])[:, :, None], hidden.shape)
    return (hidden * weights).sum(axis=1)


class LanguageDiscriminator:
    """One linear layer from the pooled sentence vector to language logits."""

    def __init__(self, hidden: int, n_languages: int, seed: int = 0):
        if hidden <= 0 or n_languages <= 0:
            raise ConfigError("discriminator sizes must be positive")
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.n_languages = n_languages
        self.params = ParamStore()
        self.params.add("disc.weight", truncated_normal(rng, (hidden, n_languages)))
        self.params.add("disc.bias", np.zeros(n_languages))

    def parameters(self) -> list[Tensor]:
        return list(self.params)

    def __call__(self, pooled: Tensor, detach_params: bool = False) -> Tensor:
        w, b = self.params["disc.weight"], self.params["disc.bias"]
        if detach_params:
            w, b = w.detach(), b.detach()
        return linear(pooled, w, b)


def discriminate_language(
    disc: LanguageDiscriminator, hidden: Tensor, attn_mask: np.ndarray
) -> Tensor:
    return disc(mean_pool(hidden, attn_mask))


class TeacherModel:
    """A frozen encoder; forward passes never build a graph."""

    def __init__(self, encoder: EncoderModel):
        self.encoder = encoder
        encoder.params.freeze()

    @property
    def config(self) -> ModelConfig:
        return self.encoder.config

    def logits(self, ids: np.ndarray, attn_mask: np.ndarray) -> np.ndarray:
        with ag.no_grad():
            return self.encoder.mlm_logits(self.encoder.encode(ids, attn_mask)).data
