"""Run configuration: flat key=value config files, named presets, flag
overrides, and a deterministic echo for logs.

Presets bundle reference hyperparameter sets for the four Nguni languages
in both training modes, plus a small "desk" default sized for laptop-scale
experiments. dp_max_seg uses two sentinels: -1 means "cap
segments at max_seg_len" (the default), 0 means uncapped (segments may span
whole words).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .errors import DataError, UsageError

MODELS = ("sslm", "char-lm", "bpe-lm", "ulm-lm")
MODES = ("long-range", "word-level")


@dataclass
class RunConfig:
    model: str = "sslm"
    mode: str = "long-range"
    embed_dim: int = 64
    hidden_dim: int = 128
    num_layers: int = 1
    dropout: float = 0.0
    lexicon_size: int = 1000
    max_seg_len: int = 8
    dp_max_seg: int = -1  # -1: use max_seg_len; 0: uncapped; >0: explicit
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-5
    clip: float = 1.0
    halve_after: int = 3
    stop_after: int = 6
    max_epochs: int = 200
    batch_size: int = 32
    seq_len: int = 120
    seed: int = 0
    min_count: int = 1
    bpe_merges: int = 500
    ulm_pieces: int = 1000
    ulm_seed_size: int = 2000

    def validate(self) -> None:
        if self.model not in MODELS:
            raise UsageError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r}; choose from {MODES}")
        positive = (
            "embed_dim hidden_dim num_layers max_seg_len lr halve_after "
            "stop_after max_epochs batch_size seq_len"
        ).split()
        for name in positive:
            if getattr(self, name) <= 0:
                raise UsageError(f"{name} must be positive")
        if self.lexicon_size < 0:
            raise UsageError("lexicon_size must be >= 0 (0 disables the lexicon)")
        if self.dp_max_seg < -1:
            raise UsageError("dp_max_seg must be -1 (default), 0 (uncapped) or positive")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError("dropout must lie in [0, 1)")

    def resolved_dp_max_seg(self) -> Optional[int]:
        if self.dp_max_seg == 0:
            return None
        if self.dp_max_seg == -1:
            return self.max_seg_len
        return self.dp_max_seg


_LONG_RANGE = dict(
    mode="long-range",
    num_layers=3,
    embed_dim=512,
    hidden_dim=1024,
    lr=0.001,
    dropout=0.5,
    batch_size=64,
    seq_len=120,
    weight_decay=1e-5,
    clip=1.0,
)
_WORD_LEVEL = dict(
    mode="word-level",
    num_layers=1,
    embed_dim=512,
    hidden_dim=1024,
    lr=0.005,
    dropout=0.2,
    batch_size=16,
    weight_decay=1e-5,
    clip=1.0,
)

PRESETS: dict[str, dict] = {
    "desk": dict(),
    "xh-longrange": dict(_LONG_RANGE, lexicon_size=10000, max_seg_len=5),
    "zu-longrange": dict(_LONG_RANGE, lexicon_size=10000, max_seg_len=5),
    "nr-longrange": dict(_LONG_RANGE, lexicon_size=5000, max_seg_len=10),
    "ss-longrange": dict(_LONG_RANGE, lexicon_size=10000, max_seg_len=20),
    "xh-wordlevel": dict(_WORD_LEVEL, lexicon_size=10000, max_seg_len=10),
    "zu-wordlevel": dict(_WORD_LEVEL, lexicon_size=5000, max_seg_len=20),
    "nr-wordlevel": dict(_WORD_LEVEL, lexicon_size=10000, max_seg_len=10),
    "ss-wordlevel": dict(_WORD_LEVEL, lexicon_size=5000, max_seg_len=20),
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise UsageError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as e:
        raise UsageError(f"config key {key}: cannot parse {raw!r} as {kind}") from e


def parse_config_file(path) -> dict:
    """Flat key=value lines; # starts a comment; blank lines ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from e
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, raw)
    return out


def build_config(
    preset: Optional[str] = None,
    config_path=None,
    overrides: Optional[dict[str, str]] = None,
) -> RunConfig:
    """Layer preset < config file < explicit overrides, then validate."""
    values: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if config_path is not None:
        values.update(parse_config_file(config_path))
    for key, raw in (overrides or {}).items():
        values[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def echo_config(cfg: RunConfig) -> list[str]:
    """Deterministic config dump for reproducibility logs."""
    return [f"# {f.name}={getattr(cfg, f.name)}" for f in fields(RunConfig)]
