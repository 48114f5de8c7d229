"""The published per-dataset starting points."""

import pytest

from posrec.errors import UserError
from posrec.model import ModelConfig
from posrec.presets import PRESETS, get_preset, preset_names


def test_names():
    assert preset_names() == ["beauty", "fashion", "games", "men"]


@pytest.mark.parametrize("name,expect", [
    ("men", {"lr": 6e-6, "max_len": 35, "heads": 3, "dropout": 0.3,
             "d": 390, "g": 1950, "nmax": 1e-4}),
    ("games", {"lr": 1e-4, "max_len": 50, "heads": 3, "dropout": 0.5,
               "d": 90, "g": 450, "nmax": None}),
    ("beauty", {"lr": 1e-4, "max_len": 75, "heads": 1, "dropout": 0.5,
                "d": 90, "g": 450, "nmax": 1e-4}),
    ("fashion", {"lr": 1e-5, "max_len": 35, "heads": 3, "dropout": 0.3,
                 "d": 390, "g": 1950, "nmax": 1e-4}),
])
def test_published_values(name, expect):
    preset = get_preset(name)
    for key, value in expect.items():
        assert preset[key] == value, (name, key)
    assert preset["blocks"] == 3
    assert preset["batch_size"] == 128
    assert preset["epochs"] == 1000
    assert preset["l2_weight"] == 0.0


def test_every_preset_builds_a_config():
    for name in preset_names():
        cfg = ModelConfig(**get_preset(name))
        assert cfg.d % cfg.heads == 0
        assert cfg.g == 5 * cfg.d


def test_get_preset_returns_a_copy():
    get_preset("games")["lr"] = 999
    assert PRESETS["games"]["lr"] == 1e-4


def test_unknown_preset():
    with pytest.raises(UserError, match="beauty, fashion, games, men"):
        get_preset("steam")
