"""Run configuration: presets, plain-text config files, CLI overrides.

A config file is UTF-8 text with one ``key = value`` per line; ``#`` starts a
comment. Values are parsed by the declared type of the field. Precedence is
preset defaults < config file < command-line flags.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .assembler import AssemblerConfig
from .cdr3_gpt import DecoderConfig
from .epitope_bert import DiffusionSchedule, EncoderConfig
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    preset: str = "desk"
    # architecture (overridable; -1 means "use the preset value")
    d_model: int = -1
    n_layers: int = -1
    n_heads: int = -1
    d_head: int = -1
    d_ff: int = -1
    # corruption schedule
    schedule_steps: int = -1
    p_min: float = 0.05
    p_max: float = 0.45
    # optimization
    epochs: int = -1
    lr_peak: float = 2e-3
    batch_size: int = 16
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1
    # lengths
    max_epitope_len: int = 32
    max_cdr3_len: int = 32
    max_chain_len: int = 160
    # sampling
    temperature: tuple = (1.0,)
    samples: int = 10
    dropout: float = 0.1

    def validate(self):
        if self.preset not in ("desk", "full"):
            raise ConfigError(f"preset must be desk or full, got {self.preset!r}")
        if not 0.0 < self.p_min <= self.p_max <= 1.0:
            raise ConfigError(f"need 0 < p_min <= p_max <= 1, got ({self.p_min}, {self.p_max})")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr_peak < 0:
            raise ConfigError("lr_peak must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if any(t < 0 for t in self.temperature):
            raise ConfigError("temperatures must be >= 0")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ConfigError("warmup_fraction must be in (0, 1)")
        return self


_PRESETS = {
    "desk": dict(d_model=64, n_layers=2, n_heads=4, d_head=16, d_ff=256, schedule_steps=20),
    "full": dict(d_model=768, n_layers=12, n_heads=12, d_head=64, d_ff=3072, schedule_steps=100),
}

# command-specific epoch defaults at desk scale (enough to memorize the toy corpora)
DEFAULT_EPOCHS = {
    "pretrain-epitope": 150,
    "pretrain-cdr3": 120,
    "transfer-alpha": 60,
    "finetune": 150,
    "train-assembler": 200,
}


def _preset_value(cfg: RunConfig, key: str) -> int:
    value = getattr(cfg, key)
    return _PRESETS[cfg.preset][key] if value == -1 else value


def encoder_config(cfg: RunConfig) -> EncoderConfig:
    return EncoderConfig(
        d_model=_preset_value(cfg, "d_model"),
        n_heads=_preset_value(cfg, "n_heads"),
        d_head=_preset_value(cfg, "d_head"),
        n_layers=_preset_value(cfg, "n_layers"),
        d_ff=_preset_value(cfg, "d_ff"),
        max_len=cfg.max_epitope_len,
        time_steps=_preset_value(cfg, "schedule_steps"),
        dropout=cfg.dropout,
    )


def decoder_config(cfg: RunConfig, cross_attend: bool = False, d_cond: int = 0) -> DecoderConfig:
    if cfg.n_layers != -1:
        n_layers = cfg.n_layers
    else:
        n_layers = 8 if cfg.preset == "full" else 2
    return DecoderConfig(
        d_model=_preset_value(cfg, "d_model"),
        n_layers=n_layers,
        n_heads=_preset_value(cfg, "n_heads"),
        d_head=_preset_value(cfg, "d_head"),
        d_ff=_preset_value(cfg, "d_ff"),
        max_len=cfg.max_cdr3_len + 2,
        dropout=cfg.dropout,
        cross_attend=cross_attend,
        d_cond=d_cond,
    )


def assembler_config(cfg: RunConfig) -> AssemblerConfig:
    if cfg.preset == "full":
        base = dict(d_model=512, n_heads=8, d_head=64, n_enc_layers=4, n_dec_layers=4, d_ff=2048)
    else:
        base = dict(d_model=64, n_heads=4, d_head=16, n_enc_layers=2, n_dec_layers=2, d_ff=256)
    if cfg.d_model != -1:
        base["d_model"] = cfg.d_model
        base["d_ff"] = cfg.d_ff if cfg.d_ff != -1 else 4 * cfg.d_model
    if cfg.n_heads != -1:
        base["n_heads"] = cfg.n_heads
    if cfg.d_head != -1:
        base["d_head"] = cfg.d_head
    if cfg.n_layers != -1:
        base["n_enc_layers"] = base["n_dec_layers"] = cfg.n_layers
    return AssemblerConfig(max_cdr3_len=cfg.max_cdr3_len, max_chain_len=cfg.max_chain_len,
                           dropout=cfg.dropout, **base)


def schedule(cfg: RunConfig) -> DiffusionSchedule:
    return DiffusionSchedule(steps=_preset_value(cfg, "schedule_steps"),
                             p_min=cfg.p_min, p_max=cfg.p_max)


def _parse_value(field_type, raw: str, key: str):
    raw = raw.strip()
    try:
        if field_type == "int":
            return int(raw)
        if field_type == "float":
            return float(raw)
        if field_type == "tuple":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    type_by_name = {f.name: f.type.split("[")[0] for f in fields(RunConfig)}
    out = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {line_no}: expected key = value")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in type_by_name:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        out[key] = _parse_value(type_by_name[key], raw, key)
    return out


def build_run_config(config_path: str | None = None, **overrides) -> RunConfig:
    values = {}
    if config_path:
        values.update(load_config_file(config_path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = replace(RunConfig(), **values)
    return cfg.validate()
