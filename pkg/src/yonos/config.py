"""Experiment configuration: JSON document with defaults and strict keys.

Every field has a default; unknown keys abort before any work starts.
`model.in_channels` / `model.out_channels` may be null, in which case
they derive from the autoencoder (latent channels for the learned mode,
1 for identity; input is always twice the output for the concatenated
conditioning).
"""

from __future__ import annotations

import copy
import hashlib
import json

from .autoencoder import AEConfig
from .degradation import DegradeMode
from .nn import ConfigError, NetworkConfig

_DEFAULTS = {
    "data": {
        "n_train": 2000,
        "n_eval": 128,
        "hr_size": 64,
        "seed": 0,
        "degrade_mode": "bicubic",
    },
    "model": {
        "base_channels": 16,
        "channel_mult": [1, 2],
        "depth": 2,
        "width_scale": 1.0,
        "time_embed_dim": 32,
        "in_channels": None,
        "out_channels": None,
    },
    "train": {
        "steps_per_stage": 6000,
        "batch": 16,
        "lr": 2e-4,
        "seed": 0,
    },
    "scales": [2, 4, 8],
    "ae": {
        "mode": "learned",
        "latent_channels": 2,
        "f": 4,
    },
    "eval": {
        "step_counts": [1, 2, 4, 8, 16],
        "seed": 0,
    },
}


def default_config() -> dict:
    return copy.deepcopy(_DEFAULTS)


def _merge(defaults, user, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"config section '{path or '<root>'}' must be an object")
    out = {}
    for key, dval in defaults.items():
        kpath = f"{path}.{key}" if path else key
        if key not in user:
            out[key] = copy.deepcopy(dval)
        elif isinstance(dval, dict):
            out[key] = _merge(dval, user[key], kpath)
        else:
            out[key] = copy.deepcopy(user[key])
    for key in user:
        if key not in defaults:
            kpath = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key: {kpath}")
    return out


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate_config(cfg: dict) -> dict:
    d = cfg["data"]
    _require(isinstance(d["n_train"], int) and d["n_train"] >= 1, "data.n_train must be a positive int")
    _require(isinstance(d["n_eval"], int) and d["n_eval"] >= 1, "data.n_eval must be a positive int")
    _require(isinstance(d["hr_size"], int) and d["hr_size"] >= 8, "data.hr_size must be an int >= 8")
    _require(d["degrade_mode"] in ("bicubic", "lite"), "data.degrade_mode must be 'bicubic' or 'lite'")
    t = cfg["train"]
    _require(isinstance(t["steps_per_stage"], int) and t["steps_per_stage"] >= 0,
             "train.steps_per_stage must be a non-negative int")
    _require(isinstance(t["batch"], int) and t["batch"] >= 1, "train.batch must be a positive int")
    _require(t["lr"] > 0, "train.lr must be positive")
    scales = cfg["scales"]
    _require(isinstance(scales, list) and scales and all(isinstance(s, int) for s in scales),
             "scales must be a non-empty list of ints")
    for a, b in zip(scales, scales[1:]):
        _require(b > a and b % a == 0, f"scales must be strictly increasing and divide: {scales}")
    for s in scales:
        _require(d["hr_size"] % s == 0, f"hr_size {d['hr_size']} not divisible by scale {s}")
    ae = cfg["ae"]
    AEConfig(mode=ae["mode"], latent_channels=ae["latent_channels"], f=ae["f"])
    ev = cfg["eval"]
    _require(isinstance(ev["step_counts"], list) and all(isinstance(k, int) and k >= 1 for k in ev["step_counts"]),
             "eval.step_counts must be a list of positive ints")
    network_config(cfg).validate()
    return cfg


def parse_config(user: dict) -> dict:
    return validate_config(_merge(_DEFAULTS, user))


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        user = json.load(fh)
    return parse_config(user)


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply dotted-path overrides ('train.lr=1e-4'); values parse as JSON."""
    user = copy.deepcopy(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key.path=value, got '{item}'")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = user
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key: {key}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key: {key}")
        node[parts[-1]] = value
    return parse_config(user)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


# -- typed views ------------------------------------------------------------


def ae_config(cfg: dict) -> AEConfig:
    ae = cfg["ae"]
    return AEConfig(mode=ae["mode"], latent_channels=ae["latent_channels"], f=ae["f"])


def latent_channels(cfg: dict) -> int:
    return ae_config(cfg).effective_latent_channels


def network_config(cfg: dict, width_scale=None) -> NetworkConfig:
    m = cfg["model"]
    out_ch = m["out_channels"] if m["out_channels"] is not None else latent_channels(cfg)
    in_ch = m["in_channels"] if m["in_channels"] is not None else 2 * out_ch
    return NetworkConfig(
        base_channels=m["base_channels"],
        channel_mult=tuple(m["channel_mult"]),
        depth=m["depth"],
        width_scale=m["width_scale"] if width_scale is None else width_scale,
        time_embed_dim=m["time_embed_dim"],
        in_channels=in_ch,
        out_channels=out_ch,
    )


def degrade_mode(cfg: dict) -> DegradeMode:
    return DegradeMode(kind=cfg["data"]["degrade_mode"])
