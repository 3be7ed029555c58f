"""Versioned checkpoint files: a JSON header plus named arrays in one ``.npz``."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError

CHECKPOINT_VERSION = 1
_HEADER_KEY = "__header__"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, arrays: dict, cfg_hash: str, meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format_version": CHECKPOINT_VERSION, "config_hash": cfg_hash, **(meta or {})}
    if _HEADER_KEY in arrays:
        raise ValueError(f"array name {_HEADER_KEY!r} is reserved")
    payload = {name: np.asarray(value) for name, value in arrays.items()}
    payload[_HEADER_KEY] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return path


def load_checkpoint(path, expected_hash: str | None = None, force: bool = False):
    """Return ``(header, arrays)``; refuse a config-hash mismatch unless ``force``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if _HEADER_KEY not in data.files:
            raise DataError(f"{path} is not a checkpoint (no header)")
        header = json.loads(str(data[_HEADER_KEY]))
        arrays = {name: data[name] for name in data.files if name != _HEADER_KEY}
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {header.get('format_version')}")
    if expected_hash is not None and header.get("config_hash") != expected_hash and not force:
        raise ConfigError(
            f"checkpoint config hash {header.get('config_hash')} does not match current "
            f"config {expected_hash}; pass --force to load anyway")
    return header, arrays
