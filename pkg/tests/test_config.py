from typing import Optional, Tuple

import pytest

from stclstm_depth.config import (
    build_dataclass,
    check_unknown_keys,
    coerce_value,
    load_config,
    parse_config_text,
)
from stclstm_depth.errors import ConfigError, format_error
from stclstm_depth.pipeline import TrainConfig
from stclstm_depth.synthdata import SceneSpec


def test_parse_entries_and_comments():
    cfg = parse_config_text("# header\nepochs = 3   # trailing\n\nuse-gan = no\n")
    assert sorted(cfg.keys()) == ["epochs", "use_gan"]
    entry = cfg.get("epochs")
    assert entry.raw == "3"
    assert entry.line == 2


def test_coerce_values():
    assert coerce_value("4", int) == 4
    assert coerce_value("1e-4", float) == 1e-4
    assert coerce_value("Yes", bool) is True
    assert coerce_value("off", bool) is False
    assert coerce_value("(64, 48)", Tuple[int, int]) == (64, 48)
    assert coerce_value("none", Optional[Tuple[int, int]]) is None
    assert coerce_value("1, 2, 3", Tuple[int, ...]) == (1, 2, 3)
    with pytest.raises(ValueError):
        coerce_value("maybe", bool)
    with pytest.raises(ValueError):
        coerce_value("1, 2, 3", Tuple[int, int])


def test_build_train_config(tmp_path):
    path = tmp_path / "train.cfg"
    path.write_text("epochs = 3\nn_frames = 4\ncrop = 32, 32\nuse_gan = false\n", encoding="utf-8")
    cfg = build_dataclass(TrainConfig, load_config(path))
    assert cfg.epochs == 3
    assert cfg.n_frames == 4
    assert cfg.crop == (32, 32)
    assert cfg.use_gan is False
    assert cfg.gen_lr == 1e-4


def test_overrides_win_and_none_is_ignored():
    cfg = parse_config_text("epochs = 3\nseed = 4\n")
    train = build_dataclass(TrainConfig, cfg, overrides={"epochs": 6, "seed": None})
    assert train.epochs == 6
    assert train.seed == 4


def test_prefixed_keys_override_plain_ones():
    cfg = parse_config_text("n_objects = 2\nscene.n_objects = 5\nresolution = 32, 32\n")
    spec = build_dataclass(SceneSpec, cfg, prefix="scene.")
    assert spec.n_objects == 5
    assert spec.resolution == (32, 32)


def test_bad_value_points_at_column():
    text = "epochs = 3\nn_frames = cinco\n"
    with pytest.raises(ConfigError) as exc:
        build_dataclass(TrainConfig, parse_config_text(text))
    assert exc.value.line == 2
    message = str(exc.value)
    assert "n_frames = cinco" in message
    assert "(valor de 'n_frames')" in message
    assert message.splitlines()[-1] == " " * 11 + "^~~~~"


def test_missing_equals_is_reported():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("epochs 3\n")
    assert exc.value.line == 1


def test_duplicate_key_is_reported():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("epochs = 3\nepochs = 4\n")
    assert exc.value.line == 2


def test_unknown_key_is_rejected():
    cfg = parse_config_text("epochs = 3\nepoch = 4\n")
    with pytest.raises(ConfigError) as exc:
        check_unknown_keys(cfg, {"epochs"})
    assert "epoch" in str(exc.value)
    assert exc.value.line == 2


def test_format_error_caret():
    src = "a = 1\nbb = x\n"
    assert format_error(src, 2, 6) == "Línea 2, columna 6 (valor de 'bb'):\nbb = x\n     ^"
    assert format_error(None, 1, 1) == "Error en 1:1"
    assert format_error(src, 9, 1) == "Error en 9:1"


def test_format_error_underlines_the_token():
    src = "  batch_size = 4  # lote\nresolution = 32, 32\nsin igual\n"
    assert format_error(src, 1, 3).splitlines() == [
        "Línea 1, columna 3 (clave 'batch_size'):",
        "  batch_size = 4  # lote",
        "  ^~~~~~~~~~",
    ]
    assert format_error(src, 2, 14).splitlines()[-1] == " " * 13 + "^~~~~~"
    assert format_error(src, 3, 1).splitlines()[0] == "Línea 3, columna 1:"
    assert format_error(src, 3, 1).splitlines()[-1] == "^~~~~~~~~"
