"""Run-configuration files.

A run config is a YAML mapping with up to six sections — preset, data,
model, encoding, sweep, out — validated strictly: an unknown key anywhere
is an error, never silently ignored.  CLI flags overlay the file, and the
file overlays the preset.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import yaml

from . import synth
from .data import InteractionDataset, load_attributes, load_interactions
from .encodings import EncodingSpec, check_variant
from .errors import UserError
from .model import ModelConfig
from .presets import get_preset

TOP_KEYS = {"preset", "data", "model", "encoding", "sweep", "out"}
DATA_KEYS = {"path", "attributes", "min_interactions", "synth"}
SYNTH_KEYS = {"profile", "users", "items", "seq_len", "seed", "shift"}
MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {"encoding"}
ENCODING_KEYS = {"variant", "clip_distance", "rope_base", "use_value_bias",
                 "projection_activation"}
SWEEP_KEYS = {"seeds", "jobs"}


def _check_keys(section: str, mapping: dict, allowed: set) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise UserError(
            f"unknown key '{unknown[0]}' in {section}; "
            f"allowed keys: {', '.join(sorted(allowed))}"
        )


def _require_mapping(section: str, value) -> dict:
    if not isinstance(value, dict):
        raise UserError(f"{section} must be a mapping, got {type(value).__name__}")
    return value


@dataclass
class RunConfig:
    preset: str | None = None
    data: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    encoding: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    out: str | None = None
    source_path: str | None = None


def parse_run_config(raw, source_path: str | None = None) -> RunConfig:
    if raw is None:
        raw = {}
    raw = _require_mapping("run config", raw)
    _check_keys("run config", raw, TOP_KEYS)

    data = _require_mapping("section 'data'", raw.get("data") or {})
    _check_keys("section 'data'", data, DATA_KEYS)
    if "synth" in data:
        sy = _require_mapping("section 'data.synth'", data["synth"])
        _check_keys("section 'data.synth'", sy, SYNTH_KEYS)
        if "path" in data:
            raise UserError("section 'data' must give either 'path' or 'synth', not both")

    model = _require_mapping("section 'model'", raw.get("model") or {})
    if "encoding" in model:
        raise UserError("the encoding belongs in its own 'encoding' section, "
                        "not under 'model'")
    _check_keys("section 'model'", model, MODEL_KEYS)

    encoding = raw.get("encoding") or {}
    if isinstance(encoding, str):
        encoding = {"variant": encoding}
    encoding = _require_mapping("section 'encoding'", encoding)
    _check_keys("section 'encoding'", encoding, ENCODING_KEYS)

    sweep = _require_mapping("section 'sweep'", raw.get("sweep") or {})
    _check_keys("section 'sweep'", sweep, SWEEP_KEYS)
    if "seeds" in sweep and not isinstance(sweep["seeds"], list):
        raise UserError("sweep.seeds must be a list of integers")

    preset = raw.get("preset")
    if preset is not None:
        get_preset(str(preset))  # fail early with the list of names

    out = raw.get("out")
    return RunConfig(
        preset=None if preset is None else str(preset),
        data=data,
        model=model,
        encoding=encoding,
        sweep=sweep,
        out=None if out is None else str(out),
        source_path=source_path,
    )


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as err:
        raise UserError(f"cannot read config {path}: {err}") from None
    except yaml.YAMLError as err:
        raise UserError(f"config {path} is not valid YAML: {err}") from None
    return parse_run_config(raw, source_path=os.path.abspath(path))


def build_model_config(rc: RunConfig, overrides: dict | None = None) -> ModelConfig:
    """preset < file < flags; the encoding spec is built against the
    resolved d / max_len so dimension checks cannot disagree."""
    kwargs: dict = {}
    if rc.preset:
        kwargs.update(get_preset(rc.preset))
    kwargs.update(rc.model)

    enc = dict(rc.encoding)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "encoding":
            enc["variant"] = value
        else:
            kwargs[key] = value

    variant = check_variant(str(enc.pop("variant", "None")))
    d = int(kwargs.get("d", 90))
    max_len = int(kwargs.get("max_len", 50))
    enc.setdefault("projection_activation", kwargs.get("activation", "leaky"))
    kwargs["encoding"] = EncodingSpec(variant=variant, max_len=max_len,
                                      model_dim=d, **enc)
    return ModelConfig(**kwargs)


def resolve_dataset(data_section: dict, path_override: str | None = None) -> InteractionDataset:
    data = dict(data_section)
    if path_override is not None:
        data["path"] = path_override
        data.pop("synth", None)

    if "synth" in data:
        sy = dict(data["synth"])
        for required in ("profile", "users", "items", "seq_len"):
            if required not in sy:
                raise UserError(f"data.synth needs '{required}'")
        return synth.build_dataset(
            str(sy["profile"]), int(sy["users"]), int(sy["items"]),
            int(sy["seq_len"]), seed=int(sy.get("seed", 0)),
            shift=int(sy.get("shift", 7)),
        )

    if "path" not in data:
        raise UserError("no data source: give data.path / data.synth in the "
                        "config, or pass --data")
    path = str(data["path"])
    if path.endswith(".npz") and "min_interactions" in data:
        raise UserError("min_interactions applies to raw logs, not .npz caches")
    if "min_interactions" in data:
        ds = load_interactions(path, min_interactions=int(data["min_interactions"]))
    else:
        ds = load_interactions(path)
    if "attributes" in data and data["attributes"]:
        load_attributes(str(data["attributes"]), ds)
    return ds
