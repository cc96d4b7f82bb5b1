"""Training/architecture configuration, file round-trip, and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass
class TrainConfig:
    # loss weights
    w_diff: float = 1.0
    w_dur: float = 1.0
    w_spk: float = 1.0
    w_rhy: float = 1.0
    w_aort: float = 1.0
    w_ort: float = 0.01
    # optimization
    batch_size: int = 16
    max_steps: int = 10000
    seed: int = 0
    learning_rate: float = 2e-4
    warmup_steps: int = 1000
    grad_clip: float = 1.0
    # ablation flags
    use_ort: bool = True
    use_aort: bool = True
    use_tca: bool = True
    use_fine_timbre: bool = True
    # architecture
    feature_dim: int = 256
    text_blocks: int = 8
    text_heads: int = 4
    wavenet_layers: int = 20
    wavenet_hidden: int = 256
    et_convs: int = 3
    n_mels: int = 80
    # diffusion
    diffusion_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.06
    sigma_mode: str = "posterior"
    # equation variants
    ort_variant: str = "scalar_sum"
    tca_projections: str = "qk"
    saln_literal_var: bool = False
    # corpus-tied dimensions
    vocab_size: int = 64
    n_speakers: int = 8
    n_rhythms: int = 4

    # fields that define the network shape; checkpoints refuse to load across changes
    ARCHITECTURE_FIELDS = (
        "feature_dim", "text_blocks", "text_heads", "wavenet_layers",
        "wavenet_hidden", "et_convs", "n_mels", "tca_projections",
        "use_tca", "use_fine_timbre", "vocab_size", "n_speakers", "n_rhythms",
    )

    def validate(self):
        for name in ("w_diff", "w_dur", "w_spk", "w_rhy", "w_aort", "w_ort"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")
        if self.use_tca and not self.use_fine_timbre:
            raise ConfigError("use_tca requires use_fine_timbre")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ConfigError("batch_size must be >= 1 and max_steps >= 0")
        if self.ort_variant not in ("scalar_sum", "gram"):
            raise ConfigError(f"unknown ort_variant {self.ort_variant!r}")
        if self.tca_projections not in ("none", "qk", "qkv"):
            raise ConfigError(f"unknown tca_projections {self.tca_projections!r}")
        if self.sigma_mode not in ("posterior", "beta"):
            raise ConfigError(f"unknown sigma_mode {self.sigma_mode!r}")
        if self.diffusion_steps < 1:
            raise ConfigError("diffusion_steps must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()

    def with_overrides(self, overrides: dict) -> "TrainConfig":
        """Apply string key=value overrides with field-type coercion."""
        data = self.to_dict()
        for key, raw in overrides.items():
            if key not in data:
                raise ConfigError(f"unknown config key {key!r}")
            data[key] = _coerce(raw, type(data[key]), key)
        return TrainConfig.from_dict(data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def architecture(self) -> dict:
        return {name: getattr(self, name) for name in self.ARCHITECTURE_FIELDS}


def _coerce(raw, target_type, key):
    if isinstance(raw, target_type) and not isinstance(raw, str):
        return raw
    text = str(raw)
    if target_type is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean for {key!r}: {text!r}")
    try:
        return target_type(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {target_type.__name__} for {key!r}: {text!r}") from exc


def load_config(path) -> TrainConfig:
    """Read a flat key: value config file."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a key: value mapping")
    return TrainConfig.from_dict(data)


def save_config(config: TrainConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
