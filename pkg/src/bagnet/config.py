"""Model, feature and training configuration plus ablation wiring."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path


class ConfigError(ValueError):
    pass


class Ablation(str, Enum):
    FULL = "FULL"
    NO_ATTENTION = "NO_ATTENTION"
    SINGLE_ATTENTION = "SINGLE_ATTENTION"
    NO_GCN = "NO_GCN"
    NO_EDGE_TYPE = "NO_EDGE_TYPE"
    NO_TAGS = "NO_TAGS"
    NO_TAGS_NO_CTX = "NO_TAGS_NO_CTX"

    @classmethod
    def parse(cls, name: str) -> "Ablation":
        key = name.strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown ablation {name!r}; choose from {[a.value for a in cls]}") from None


@dataclass(frozen=True)
class ModelConfig:
    token_dim: int = 300
    ctx_dim: int = 1024
    d_hat: int = 512
    d_ner: int = 8
    d_pos: int = 8
    lstm_layers: int = 2
    ffn_hidden: int = 256
    n_layers: int = 5
    dropout: float = 0.2
    # "total": c_i = |N_i| over all relations; "relation": per-relation neighbour count
    norm: str = "total"
    # query-to-node reading; only the BiDAF-style reconstruction is implemented
    q2n: str = "bidaf"
    output_tanh: bool = False
    ablation: Ablation = Ablation.FULL

    def __post_init__(self):
        if self.d_hat % 2:
            raise ConfigError("d_hat must be even (BiLSTM halves it per direction)")
        if self.norm not in ("total", "relation"):
            raise ConfigError(f"norm must be 'total' or 'relation', got {self.norm!r}")
        if self.q2n != "bidaf":
            raise ConfigError(f"unsupported q2n mode {self.q2n!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        for name in ("token_dim", "ctx_dim", "d_hat", "ffn_hidden", "lstm_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_layers < 0 or self.d_ner < 0 or self.d_pos < 0:
            raise ConfigError("n_layers, d_ner and d_pos must be non-negative")

    @property
    def lstm_hidden(self) -> int:
        return self.d_hat // 2

    @property
    def use_tags(self) -> bool:
        return self.ablation not in (Ablation.NO_TAGS, Ablation.NO_TAGS_NO_CTX)

    @property
    def use_ctx(self) -> bool:
        return self.ablation is not Ablation.NO_TAGS_NO_CTX

    @property
    def use_gcn(self) -> bool:
        return self.ablation is not Ablation.NO_GCN

    @property
    def typed_edges(self) -> bool:
        return self.ablation is not Ablation.NO_EDGE_TYPE

    @property
    def d(self) -> int:
        """Feature width shared by nodes and query tokens."""
        return self.d_hat + (self.d_ner + self.d_pos if self.use_tags else 0)

    @property
    def node_input_dim(self) -> int:
        return self.token_dim + (self.ctx_dim if self.use_ctx else 0)

    @property
    def predictor_input_dim(self) -> int:
        if self.ablation in (Ablation.NO_ATTENTION, Ablation.SINGLE_ATTENTION):
            return 2 * self.d
        return 4 * self.d


@dataclass(frozen=True)
class FeatureConfig:
    # "hash" or a word2vec-style text file
    embeddings: str = "hash"
    # "hash-window" or a JSON-lines file of per-document vectors
    contextual: str = "hash-window"
    # "stub" or a JSON-lines file of per-document tags
    tags: str = "stub"
    feature_seed: int = 0


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    lr0: float = 2e-4
    halve_every: int = 5
    batch_size: int = 32
    epochs: int = 50
    node_cap: int = 500
    query_cap: int = 25
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0 or self.halve_every < 1 or self.batch_size < 1:
            raise ConfigError("lr0, halve_every and batch_size must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.node_cap < 1 or self.query_cap < 1:
            raise ConfigError("caps must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * 0.5 ** (epoch // self.halve_every)

    # flat key=value view ------------------------------------------------

    def to_flat(self) -> dict:
        flat = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for g in fields(value):
                    v = getattr(value, g.name)
                    flat[g.name] = v.value if isinstance(v, Enum) else v
            else:
                flat[f.name] = value
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainConfig":
        return cls().updated(flat)

    def updated(self, overrides: dict) -> "TrainConfig":
        """Return a copy with flat ``overrides`` applied; unknown keys are rejected."""
        model_keys = {f.name: f for f in fields(ModelConfig)}
        feature_keys = {f.name: f for f in fields(FeatureConfig)}
        top_keys = {f.name: f for f in fields(TrainConfig) if f.name not in ("model", "features")}
        m, fe, top = {}, {}, {}
        for key, raw in overrides.items():
            if key in model_keys:
                m[key] = _coerce(getattr(self.model, key), raw, key)
            elif key in feature_keys:
                fe[key] = _coerce(getattr(self.features, key), raw, key)
            elif key in top_keys:
                top[key] = _coerce(getattr(self, key), raw, key)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return replace(self, model=replace(self.model, **m), features=replace(self.features, **fe), **top)


def _coerce(current, raw, key):
    if not isinstance(raw, str):
        if isinstance(current, Ablation):
            return Ablation.parse(str(raw.value if isinstance(raw, Enum) else raw))
        return raw
    try:
        if isinstance(current, Ablation):
            return Ablation.parse(raw)
        if isinstance(current, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def read_config_file(path) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def make_variant(config: TrainConfig, ablation: Ablation | str) -> TrainConfig:
    """Config whose model wiring realises one ablation row."""
    if isinstance(ablation, str):
        ablation = Ablation.parse(ablation)
    return replace(config, model=replace(config.model, ablation=ablation))


def small_config(**overrides) -> TrainConfig:
    """Tiny dimensions (d = 12) used by gradient checks and quick runs."""
    base = TrainConfig(
        model=ModelConfig(token_dim=6, ctx_dim=6, d_hat=8, d_ner=2, d_pos=2, ffn_hidden=8, n_layers=2),
    )
    return base.updated(overrides)
