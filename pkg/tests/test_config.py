from pathlib import Path

import pytest

from sketch2mesh.config import ConfigError, PipelineConfig, load_config, parse_config

ROOT = Path(__file__).resolve().parents[1]


def test_defaults_validate():
    cfg = load_config(None)
    assert cfg.data.num_views == 12 and cfg.implicit.num_fc_layers == 5
    assert cfg.decoder().widths[0] == 131


def test_repo_configs_parse():
    for path in sorted((ROOT / "configs").glob("*.cfg")):
        load_config(path)


def test_text_roundtrip():
    cfg = parse_config("[stage1]\nlambdas = 1, 2, 3, 0\n[implicit]\nresolutions = 16\nsteps = 5\n")
    assert cfg.stage1.lambdas == (1.0, 2.0, 3.0, 0.0)
    assert parse_config(cfg.to_text()) == cfg


@pytest.mark.parametrize("text,match", [
    ("[nope]\n", "unknown section"),
    ("[data]\nimage_sz = 64\n", "unknown key"),
    ("[data]\nimage_size = big\n", "image_size"),
    ("[implicit]\ninvert_labels = maybe\n", "boolean"),
    ("[data]\nshapes = cone\n", "shapes"),
    ("[view]\ninput = photo\n", "view.input"),
    ("[implicit]\nencoder_resolution = 24\n", "power of two"),
    ("[implicit]\nnum_fc_layers = 5\nhidden = 8, 8\n", "hidden widths"),
    ("[data]\nnum_views = 10\n", "num_views"),
    ("no section header\n", "<string>"),
])
def test_invalid_configs_are_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_inline_comments_and_case_sensitive_keys():
    cfg = parse_config("# header\n[run]\nseed = 7   ; the seed\n")
    assert cfg.run.seed == 7
    with pytest.raises(ConfigError):
        parse_config("[run]\nSeed = 7\n")


def test_structural_hashes():
    base = PipelineConfig()
    tweak = parse_config("[stage1]\nlr = 0.1\nsteps = 3\n[run]\nseed = 9\n[implicit]\nlr = 0.5\n")
    assert tweak.stage1_hash() == base.stage1_hash() and tweak.stage2_hash() == base.stage2_hash()
    assert parse_config("[stage1]\ndisc_channels = 8, 16\n").stage1_hash() != base.stage1_hash()
    assert parse_config("[implicit]\nnum_fc_layers = 6\n").stage2_hash() != base.stage2_hash()
    assert parse_config("[view]\ninput = sketch\n").stage2_hash() != base.stage2_hash()


def test_derived_configs_follow_sections():
    cfg = parse_config("[data]\nimage_size = 32\n[view]\ninput = sketch\n[run]\nseed = 4\n")
    assert cfg.sketch25d().image_size == 32 and cfg.sketch25d().seed == 4
    assert cfg.view_encoder().in_channels == 1
    assert cfg.train25d().seed == 4 and cfg.implicit_train().seed == 4
