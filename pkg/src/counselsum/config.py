"""Run configuration: defaults, flat key=value files, CLI overrides, hashing."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from hashlib import sha256
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # widths: scaffold and structural rows are 2*d_hidden wide and must match
    d_embed: int = 32
    d_hidden: int = 32
    d_k: int = 64
    d_v: int = 64
    d_s: int = 2
    decoder_width: int = 128
    decoder_blocks: int = 2
    clf_d_embed: int = 32
    clf_d_hidden: int = 32
    clf_window: int = 32
    phq_threshold: float = 0.5
    min_count: int = 1
    batch_size: int = 4
    epochs: int = 10
    learning_rate: float = 1e-3
    lr_decay: float = 0.1
    max_len: int = 128
    beam_width: int = 1
    length_penalty: float = 0.0
    use_gold_components: bool = False
    same_speaker_edges: bool = False
    dense_maps: bool = False
    tie_lm_head: bool = False
    split_ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)

    def validate(self) -> None:
        for name in ("d_embed", "d_hidden", "d_k", "d_v", "d_s", "decoder_width",
                     "decoder_blocks", "clf_d_embed", "clf_d_hidden", "clf_window",
                     "batch_size", "max_len", "beam_width", "min_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"config: {name} must be positive")
        if not 0.0 <= self.phq_threshold <= 1.0:
            raise ConfigError("config: phq_threshold must be in [0, 1]")
        if self.epochs < 0:
            raise ConfigError("config: epochs must be >= 0")
        if self.learning_rate <= 0 or self.lr_decay <= 0:
            raise ConfigError("config: learning_rate and lr_decay must be positive")
        if self.length_penalty < 0:
            raise ConfigError("config: length_penalty must be >= 0")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError("config: split_ratios must be three values summing to 1")

    def config_hash(self) -> str:
        payload = "\n".join(f"{f.name}={getattr(self, f.name)!r}"
                            for f in dataclasses.fields(self))
        return sha256(payload.encode("utf-8")).hexdigest()


def _parse_value(name: str, raw: str, target_type):
    raw = raw.strip()
    try:
        if target_type is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is str:
            return raw
        # the only remaining field type is the ratio triple
        parts = tuple(float(p) for p in raw.split(","))
        return parts
    except ValueError as exc:
        raise ConfigError(f"config: bad value for {name}: {raw!r} ({exc})") from exc


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file entries, then explicit overrides; validated."""
    cfg = RunConfig()
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    if path is not None:
        for line_no, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"config line {line_no}: expected key=value")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in fields:
                raise ConfigError(f"config line {line_no}: unknown key {key!r}")
            base_type = type(getattr(cfg, key))
            setattr(cfg, key, _parse_value(key, raw, base_type))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in fields:
            raise ConfigError(f"unknown config override {key!r}")
        setattr(cfg, key, value)
    cfg.validate()
    return cfg
