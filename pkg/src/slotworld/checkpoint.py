"""Versioned binary checkpoints: named parameter arrays plus a config snapshot."""

from __future__ import annotations

from pathlib import Path

import torch

FORMAT_VERSION = 1


def save_checkpoint(path, modules: dict, config: dict, extra: dict | None = None) -> None:
    """Write an archive of module state dicts; parent directories are created.

    The write goes through a temporary file and an atomic replace so an
    interrupted save never clobbers the previous checkpoint.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "modules": modules,
        "extra": extra or {},
    }
    scratch = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, scratch)
    scratch.replace(path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    return payload
