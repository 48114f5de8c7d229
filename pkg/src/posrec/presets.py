"""Tuned starting points for the benchmark datasets.

Each preset is a plain kwargs dict for ModelConfig; callers overlay their
own overrides (encoding, seed, epochs, ...) on top.
"""

from __future__ import annotations

from .errors import UserError

_COMMON = {"l2_weight": 0.0, "batch_size": 128, "epochs": 1000}

PRESETS: dict[str, dict] = {
    "men": {**_COMMON, "lr": 6e-6, "max_len": 35, "blocks": 3, "heads": 3,
            "dropout": 0.3, "d": 390, "g": 1950, "nmax": 1e-4},
    "games": {**_COMMON, "lr": 1e-4, "max_len": 50, "blocks": 3, "heads": 3,
              "dropout": 0.5, "d": 90, "g": 450, "nmax": None},
    "beauty": {**_COMMON, "lr": 1e-4, "max_len": 75, "blocks": 3, "heads": 1,
               "dropout": 0.5, "d": 90, "g": 450, "nmax": 1e-4},
    "fashion": {**_COMMON, "lr": 1e-5, "max_len": 35, "blocks": 3, "heads": 3,
                "dropout": 0.3, "d": 390, "g": 1950, "nmax": 1e-4},
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def get_preset(name: str) -> dict:
    """Fresh copy of the preset kwargs, so callers can mutate freely."""
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise UserError(
            f"unknown preset '{name}'; available: {', '.join(preset_names())}"
        ) from None
