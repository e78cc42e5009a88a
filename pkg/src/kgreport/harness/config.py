"""Flat run configuration: one dataclass, one key=value file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields


@dataclass
class TrainConfig:
    """Every knob of a run; all fields are addressable from a config file.

    Defaults are the desk-scale profile: batch 8, learning rate 1e-4,
    three graph layers, beam width 3, and a 512/64/128 corpus at n=704.
    """

    # training
    seed: int = 42
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs: int = 30
    fusion: str = "modality"            # element | modality | average | none
    use_gcn: bool = True
    disease_features_only: bool = False  # prompt with aligned disease features only
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dtype: str = "float32"              # float32 | float64

    # model dimensions
    n_patches: int = 16
    patch_dim: int = 32
    d_model: int = 128
    heads: int = 4
    gcn_layers: int = 3
    decoder_layers: int = 2
    mlp_hidden: int = 256
    context_len: int = 192

    # decoding
    beam_width: int = 3
    gen_max_len: int = 48

    # synthetic corpus
    n_samples: int = 704
    train_ratio: float = 8 / 11
    val_ratio: float = 1 / 11
    test_ratio: float = 2 / 11
    cooccurrence_boost: float = 3.0
    pair_probability: float = 0.5
    signature_amplitude: float = 1.2
    secondary_amplitude_scale: float = 0.45
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.fusion not in ("element", "modality", "average", "none"):
            raise ValueError(f"unknown fusion strategy {self.fusion!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unknown dtype {self.dtype!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if abs(self.train_ratio + self.val_ratio + self.test_ratio - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, known[key].type)
        return cls(**kwargs)

    def replace(self, **overrides) -> "TrainConfig":
        return dataclasses.replace(self, **overrides)


def _coerce(raw, annotation):
    if not isinstance(raw, str):
        return raw
    if annotation in ("bool", bool):
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean from {raw!r}")
    if annotation in ("int", int):
        return int(raw)
    if annotation in ("float", float):
        return float(raw)
    return raw


def parse_config_file(path: str) -> dict:
    """Read a flat ``key = value`` document; '#' starts a comment."""
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            if key in mapping:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            mapping[key] = value.strip()
    return mapping


def load_config(path: str | None, **overrides) -> TrainConfig:
    mapping = parse_config_file(path) if path else {}
    cfg = TrainConfig.from_mapping(mapping)
    clean = {k: v for k, v in overrides.items() if v is not None}
    return cfg.replace(**clean) if clean else cfg


def write_config_file(cfg: TrainConfig, path: str) -> None:
    lines = [f"{key} = {value}" for key, value in cfg.to_dict().items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def config_diff(a: TrainConfig, b: TrainConfig) -> dict[str, tuple]:
    """Field-by-field differences, {name: (a_value, b_value)}."""
    out = {}
    for f in fields(TrainConfig):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if va != vb:
            out[f.name] = (va, vb)
    return out
