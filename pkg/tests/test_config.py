from pathlib import Path

import pytest

from xstft.blocks import BlockSpec, InceptionSpec
from xstft.config import (
    KNOWN_KEYS,
    ConfigError,
    dump_config,
    dump_spec,
    format_layer,
    load_config,
    load_spec,
    parse_layer,
    read_config,
)
from xstft.network import FULL_LAYOUT, MICRO_LAYOUT

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_are_full_preset():
    cfg = load_config("")
    assert cfg.network.num_classes == 174
    assert cfg.network.size == (112, 112)
    assert cfg.network.layout == FULL_LAYOUT


def test_micro_preset():
    cfg = load_config("preset = micro\nvariant = st\n")
    assert cfg.network.variant == "st"
    assert cfg.network.layout == MICRO_LAYOUT
    assert cfg.network.size == (32, 32)


@pytest.mark.parametrize("preset", ["full", "micro"])
def test_dump_roundtrip(preset):
    cfg = load_config(f"preset = {preset}\nlr = 0.05\nstop_at = 0.9\naugment = false\n")
    again = load_config(dump_config(cfg))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


@pytest.mark.parametrize("name", ["micro.cfg", "full.cfg"])
def test_shipped_configs_load(name):
    cfg = read_config(CONFIGS / name)
    assert cfg.train.lr == 0.1


def test_comments_and_blank_lines():
    cfg = load_config("# header\n\nepochs = 3   # trailing\n")
    assert cfg.train.epochs == 3


def test_overrides_win():
    cfg = load_config("preset = micro\nepochs = 3\nvariant = st\n", {"epochs": "7", "variant": None})
    assert cfg.train.epochs == 7
    assert cfg.network.variant == "st"


@pytest.mark.parametrize(
    "text,key",
    [
        ("learning_rate = 0.1\n", "learning_rate"),
        ("epochs = ten\n", "epochs"),
        ("epochs = 1\nepochs = 2\n", "epochs"),
        ("size = 32\n", "size"),
        ("augment = maybe\n", "augment"),
        ("preset = huge\n", "preset"),
        ("variant = xyz\n", "variant"),
        ("lr = -1\n", "lr"),
        ("layer = conv 3\n", "layer"),
    ],
)
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        load_config(text)
    assert info.value.key == key
    assert repr(key) in str(info.value)


def test_missing_equals():
    with pytest.raises(ConfigError):
        load_config("epochs 3\n")


def test_unknown_override_key():
    with pytest.raises(ConfigError):
        load_config("", {"bogus": "1"})


@pytest.mark.parametrize("item", FULL_LAYOUT)
def test_layer_roundtrip(item):
    assert parse_layer(format_layer(item)) == item


def test_layer_lines_replace_layout():
    cfg = load_config("preset = micro\nlayer = stem 64 8 1x2x2\nlayer = stem 192 32 1x1x1\nlayer = inception 1 2 3 4 5 6\n")
    assert cfg.network.layout == (
        ("stem", 64, 8, (1, 2, 2)),
        ("stem", 192, 32, (1, 1, 1)),
        ("inception", (1, 2, 3, 4, 5, 6)),
    )


@pytest.mark.parametrize(
    "spec",
    [
        BlockSpec("t_stft", 16, 8, 32, stride=(2, 1, 1)),
        BlockSpec("st_stft", 3, 4, 8, window=(5, 5, 5), activation="relu"),
        BlockSpec("t_stft", 8, 8, 8, temporal="identity"),
        InceptionSpec(12, (2, 3, 4, 1, 2, 2), "s_stft"),
    ],
)
def test_spec_roundtrip(spec):
    text = dump_spec(spec)
    assert text.startswith(f"type = {type(spec).__name__}\n")
    assert load_spec(text) == spec


def test_spec_errors():
    with pytest.raises(ConfigError):
        load_spec("type = Conv\n")
    with pytest.raises(ConfigError):
        load_spec("type = BlockSpec\nkind = t_stft\nin_channels = 1\n")
    with pytest.raises(ConfigError):
        load_spec(dump_spec(BlockSpec("t_stft", 1, 1, 1)) + "colour = red\n")
    with pytest.raises(ConfigError):
        load_spec(dump_spec(BlockSpec("t_stft", 1, 1, 1)).replace("t_stft", "bogus"))


def test_known_keys_cover_training_fields():
    assert {"lr", "batch_size", "precision", "train_samples", "stop_at", "layer"} <= KNOWN_KEYS
