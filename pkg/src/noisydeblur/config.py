"""Run configuration: one JSON document covering every tool section.

Sections and defaults (any scalar can be overridden on the command
line as ``--set section.key=value``):

  synth    size=64 count=64 channels=1 l_min=3 l_max=24 steps=256
           inertia=0.7 jitter=0.5
  network  levels=2 base_channels=8 residual=true
  train    batch_size=16 precision=32
  hqs      lambda0=0.002 mu_exemplar=0.001 beta0=null beta_growth=2.0
           beta_max=1e5 outer_iters=5 kernel_ridge=0.001
           kernel_prune=0.05 epsilon_wiener=0.001 gradient_domain=true
  eval     psf_method="none" workers=1

Unknown sections or keys are rejected.  ``dump_config`` emits the full
effective document; feeding that file back in reproduces the run.
"""

from __future__ import annotations

import copy
import json

from .errors import ValidationError

DEFAULTS = {
    "synth": {
        "size": 64,
        "count": 64,
        "channels": 1,
        "l_min": 3,
        "l_max": 24,
        "steps": 256,
        "inertia": 0.7,
        "jitter": 0.5,
    },
    "network": {
        "levels": 2,
        "base_channels": 8,
        "residual": True,
    },
    "train": {
        "batch_size": 16,
        "precision": 32,
    },
    "hqs": {
        "lambda0": 0.002,
        "mu_exemplar": 0.001,
        "beta0": None,
        "beta_growth": 2.0,
        "beta_max": 1e5,
        "outer_iters": 5,
        "kernel_ridge": 1e-3,
        "kernel_prune": 0.05,
        "epsilon_wiener": 1e-3,
        "gradient_domain": True,
    },
    "eval": {
        "psf_method": "none",
        "workers": 1,
    },
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _coerce(path: str, old, new):
    if old is None:
        if new is None or isinstance(new, (int, float)):
            return None if new is None else float(new)
        raise ValidationError(f"{path}: expected number or null, got {new!r}")
    if isinstance(old, bool):
        if isinstance(new, bool):
            return new
        raise ValidationError(f"{path}: expected true/false, got {new!r}")
    if isinstance(old, int):
        if isinstance(new, int) and not isinstance(new, bool):
            return new
        raise ValidationError(f"{path}: expected integer, got {new!r}")
    if isinstance(old, float):
        if isinstance(new, (int, float)) and not isinstance(new, bool):
            return float(new)
        raise ValidationError(f"{path}: expected number, got {new!r}")
    if isinstance(old, str):
        if isinstance(new, str):
            return new
        raise ValidationError(f"{path}: expected string, got {new!r}")
    raise ValidationError(f"{path}: unsupported config value {new!r}")


def _merge(cfg: dict, doc: dict, source: str) -> dict:
    if not isinstance(doc, dict):
        raise ValidationError(f"{source}: top level must be an object")
    for section, body in doc.items():
        if section not in cfg:
            raise ValidationError(f"{source}: unknown section {section!r}")
        if not isinstance(body, dict):
            raise ValidationError(f"{source}: section {section!r} must be an object")
        for key, val in body.items():
            if key not in cfg[section]:
                raise ValidationError(f"{source}: unknown key {section}.{key}")
            cfg[section][key] = _coerce(f"{section}.{key}", DEFAULTS[section][key], val)
    return cfg


def load_config(path=None) -> dict:
    """Defaults, deep-merged with the JSON document at ``path`` if given."""
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    return _merge(cfg, doc, str(path))


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply ``section.key=value`` strings; values parse as JSON scalars
    with a bare-string fallback."""
    for item in assignments or ():
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ValidationError(f"--set key must be section.key, got {key!r}")
        section, name = parts
        if section not in cfg or name not in cfg[section]:
            raise ValidationError(f"--set: unknown key {key!r}")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        cfg[section][name] = _coerce(key, DEFAULTS[section][name], val)
    return cfg


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
