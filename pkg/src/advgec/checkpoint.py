"""Versioned checkpoint directories shared by generator and discriminator.

Layout::

    MANIFEST        magic line, format version, model kind
    config.txt      key=value lines echoing the model config
    params.npz      named parameter arrays
    state.json      rng state, step counter and model-specific extras
    optimizer.pt    optimizer state dict (optional)
"""

from __future__ import annotations

import base64
import dataclasses
import io
import json
import zipfile
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch

MAGIC = "ADVGEC-CHECKPOINT"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointConfigError(CheckpointError):
    pass


def config_to_text(config) -> str:
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def _coerce(value: str, default: Any):
    if isinstance(default, bool):
        if value not in ("True", "False", "true", "false", "1", "0"):
            raise ValueError(f"not a boolean: {value!r}")
        return value in ("True", "true", "1")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.split(",") if v)
    return value


def config_from_text(cls, text: str):
    defaults = cls()
    kwargs = {}
    names = {f.name for f in dataclasses.fields(cls)}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, value = line.split("=", 1)
        if key not in names:
            raise CheckpointConfigError(f"unknown config key {key!r} for {cls.__name__}")
        kwargs[key] = _coerce(value, getattr(defaults, key))
    return cls(**kwargs)


def rng_to_text(gen: torch.Generator) -> str:
    return base64.b64encode(gen.get_state().numpy().tobytes()).decode("ascii")


def rng_from_text(text: str) -> torch.Tensor:
    return torch.from_numpy(np.frombuffer(base64.b64decode(text), dtype=np.uint8).copy())


def save(path, kind: str, config, params: Dict[str, torch.Tensor], state: Dict[str, Any],
         optimizer_state: Optional[dict] = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "MANIFEST").write_text(f"{MAGIC}\nversion={VERSION}\nkind={kind}\n", encoding="utf-8")
    (path / "config.txt").write_text(config_to_text(config), encoding="utf-8")
    arrays = {name: t.detach().cpu().numpy() for name, t in params.items()}
    np.savez(path / "params.npz", **arrays)
    (path / "state.json").write_text(json.dumps(state, sort_keys=True), encoding="utf-8")
    opt_path = path / "optimizer.pt"
    if optimizer_state is not None:
        torch.save(optimizer_state, opt_path)
    elif opt_path.exists():
        opt_path.unlink()


def load(path, kind: str, config_cls, expected_config=None) -> Tuple[Any, Dict[str, torch.Tensor], dict, Optional[dict]]:
    path = Path(path)
    try:
        manifest = (path / "MANIFEST").read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read manifest ({exc})") from None
    if not manifest or manifest[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    fields = dict(line.split("=", 1) for line in manifest[1:] if "=" in line)
    if fields.get("version") != str(VERSION):
        raise CheckpointVersionError(f"{path}: format version {fields.get('version')} != {VERSION}")
    if fields.get("kind") != kind:
        raise CheckpointError(f"{path}: holds a {fields.get('kind')!r}, expected {kind!r}")
    try:
        config = config_from_text(config_cls, (path / "config.txt").read_text(encoding="utf-8"))
        with np.load(path / "params.npz") as data:
            params = {name: torch.from_numpy(data[name].copy()) for name in data.files}
        state = json.loads((path / "state.json").read_text(encoding="utf-8"))
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    if expected_config is not None and expected_config != config:
        diff = [f.name for f in dataclasses.fields(config)
                if getattr(config, f.name) != getattr(expected_config, f.name)]
        raise CheckpointConfigError(f"{path}: config mismatch in {diff}")
    opt_path = path / "optimizer.pt"
    optimizer_state = None
    if opt_path.exists():
        try:
            optimizer_state = torch.load(io.BytesIO(opt_path.read_bytes()), weights_only=True)
        except Exception as exc:  # torch raises a variety of types here
            raise CheckpointError(f"{path}: corrupt optimizer state ({exc})") from None
    return config, params, state, optimizer_state
