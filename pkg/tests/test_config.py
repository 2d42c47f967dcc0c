import pytest

from lsmtcr.config import (
    RunConfig,
    assembler_config,
    build_run_config,
    decoder_config,
    encoder_config,
    load_config_file,
    schedule,
)
from lsmtcr.errors import ConfigError, DataError


def test_defaults_validate():
    cfg = build_run_config()
    assert cfg.preset == "desk"
    assert cfg.seed == 0


def test_config_file_parsing(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(
        "# comment line\n"
        "seed = 42\n"
        "lr_peak = 1e-4   # inline comment\n"
        "temperature = 0.5, 1.0, 1.5\n"
        "\n"
        "preset = desk\n"
    )
    values = load_config_file(p)
    assert values == {"seed": 42, "lr_peak": 1e-4, "temperature": (0.5, 1.0, 1.5), "preset": "desk"}


def test_config_file_unknown_key(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("banana = 3\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config_file(p)


def test_config_file_bad_value(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("seed = soon\n")
    with pytest.raises(ConfigError):
        load_config_file(p)


def test_config_file_missing():
    with pytest.raises(DataError):
        load_config_file("/nonexistent/run.cfg")


def test_overrides_win_over_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("seed = 1\nbatch_size = 4\n")
    cfg = build_run_config(str(p), seed=9)
    assert cfg.seed == 9
    assert cfg.batch_size == 4


def test_validation_rejects_bad_values():
    with pytest.raises(ConfigError):
        build_run_config(preset="huge")
    with pytest.raises(ConfigError):
        build_run_config(p_min=0.9, p_max=0.1)
    with pytest.raises(ConfigError):
        build_run_config(batch_size=0)
    with pytest.raises(ConfigError):
        build_run_config(temperature=(-1.0,))


def test_desk_preset_dimensions():
    cfg = build_run_config()
    enc = encoder_config(cfg)
    assert (enc.d_model, enc.n_heads, enc.d_head, enc.n_layers, enc.d_ff) == (64, 4, 16, 2, 256)
    dec = decoder_config(cfg)
    assert (dec.d_model, dec.n_layers) == (64, 2)
    asm = assembler_config(cfg)
    assert (asm.d_model, asm.n_enc_layers, asm.n_dec_layers) == (64, 2, 2)
    assert schedule(cfg).steps == 20


def test_full_preset_dimensions():
    cfg = build_run_config(preset="full")
    enc = encoder_config(cfg)
    assert (enc.d_model, enc.n_heads, enc.d_head, enc.n_layers, enc.d_ff) == (768, 12, 64, 12, 3072)
    assert enc.time_steps == 100
    dec = decoder_config(cfg)
    assert (dec.d_model, dec.n_layers, dec.n_heads, dec.d_head) == (768, 8, 12, 64)
    asm = assembler_config(cfg)
    assert (asm.d_model, asm.n_enc_layers, asm.n_dec_layers) == (512, 4, 4)


def test_custom_overrides():
    cfg = build_run_config(d_model=32, n_layers=1, n_heads=2, d_head=16, d_ff=64)
    enc = encoder_config(cfg)
    assert (enc.d_model, enc.n_layers) == (32, 1)
    dec = decoder_config(cfg)
    assert (dec.d_model, dec.n_layers) == (32, 1)
    asm = assembler_config(cfg)
    assert (asm.d_model, asm.n_enc_layers) == (32, 1)
