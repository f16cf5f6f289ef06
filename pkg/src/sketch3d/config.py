"""Flat ``key = value`` run configuration.

One file per run directory lists every tunable with its value, grouped by
dotted prefix::

    # sketch3d run configuration
    seed = 0
    train.lr = 0.01
    loss.variant = cl+tl
    abstraction.trans_radius_factor = 1.0

Unknown keys are rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import fields

from .abstraction import AbstractionParams
from .chain_ops import ConsolidationConfig
from .metric_learning import LossConfig
from .sampling import SamplingConfig
from .toy_encoder import TrainConfig

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "default_config",
    "parse_config",
    "load_config",
    "format_config",
    "save_config",
    "config_hash",
    "train_config",
    "abstraction_params",
    "consolidation_config",
    "sampling_config",
    "loss_config",
    "parse_levels",
]


class ConfigError(ValueError):
    pass


def _section(prefix, cls, skip=()):
    return {f"{prefix}.{f.name}": f.default for f in fields(cls) if f.name not in skip}


DEFAULTS = {
    "seed": 0,
    "dataset.levels": "0.0,0.25,0.5,0.75,1.0",
    "dataset.split": "0.72,0.08,0.20",
    "dataset.render_views": False,
    "render.views": 12,
    "render.elevation_deg": 30.0,
    "render.image_size": 224,
    "render.tube_radius_factor": 0.01,
    **_section("consolidation", ConsolidationConfig),
    **_section("abstraction", AbstractionParams, skip=("l_a",)),
    **_section("sampling", SamplingConfig),
    **_section("train", TrainConfig, skip=("seed", "loss", "sampling")),
    **_section("loss", LossConfig),
    "train.level": "0.5",
}
DEFAULTS["loss.lambda_ch"] = "auto"


def default_config():
    return dict(DEFAULTS)


def _coerce(key, raw):
    default = DEFAULTS[key]
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {type(default).__name__}") from None
    return text


def parse_config(text, source="<config>"):
    """Parse config text over the defaults."""
    cfg = default_config()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        cfg[key] = _coerce(key, value)
    return cfg


def load_config(path=None):
    if path is None:
        return default_config()
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def format_config(cfg):
    lines = ["# sketch3d run configuration"]
    lines += [f"{k} = {_fmt(cfg[k])}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def save_config(cfg, path):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))
    os.replace(tmp, path)


def config_hash(cfg):
    return hashlib.sha256(format_config(cfg).encode("utf-8")).hexdigest()


def _pick(cfg, prefix, cls, **extra):
    kw = {f.name: cfg[f"{prefix}.{f.name}"] for f in fields(cls) if f"{prefix}.{f.name}" in cfg}
    kw.update(extra)
    return cls(**kw)


def consolidation_config(cfg):
    return _pick(cfg, "consolidation", ConsolidationConfig)


def abstraction_params(cfg, l_a):
    return _pick(cfg, "abstraction", AbstractionParams, l_a=float(l_a))


def sampling_config(cfg):
    return _pick(cfg, "sampling", SamplingConfig)


def loss_config(cfg, variant=None):
    lam = cfg["loss.lambda_ch"]
    return _pick(cfg, "loss", LossConfig,
                 variant=variant or cfg["loss.variant"],
                 lambda_ch=None if str(lam) == "auto" else float(lam))


def train_config(cfg, variant=None, seed=None):
    return _pick(cfg, "train", TrainConfig,
                 seed=cfg["seed"] if seed is None else seed,
                 loss=loss_config(cfg, variant),
                 sampling=sampling_config(cfg))


def parse_levels(text):
    return [float(x) for x in str(text).split(",") if x.strip()]
