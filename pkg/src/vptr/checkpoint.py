"""Checkpoint bundles: one ``.vtn`` tensor file per parameter plus a manifest.

The manifest records parameter names/shapes in a fixed order and whatever
metadata the caller supplies (variant, config hash, the stage-one
checkpoint hash a predictor was trained against). Bundle hashes cover the
manifest and every tensor file, so a frozen autoencoder can be verified
byte-for-byte after stage two.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch
from torch import nn

from .errors import CheckpointError
from .tensorfile import EXTENSION, load_tensor, save_tensor

MANIFEST_NAME = "manifest.json"


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_checkpoint(directory: str | Path, module: nn.Module, meta: dict) -> None:
    """Write every parameter/buffer of ``module`` as a tensor file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, tensor in module.state_dict().items():
        filename = name + EXTENSION
        save_tensor(directory / filename, tensor.detach().to(torch.float32))
        entries.append({"name": name, "file": filename, "shape": list(tensor.shape)})
    manifest = {"format": 1, "params": entries, "meta": meta}
    (directory / MANIFEST_NAME).write_text(_canonical_json(manifest))


def load_checkpoint(directory: str | Path) -> tuple[dict, dict]:
    """Read a bundle back as ``(state_dict, meta)``."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"no checkpoint manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest {manifest_path}: {exc}") from exc
    state = {}
    for entry in manifest.get("params", []):
        tensor = load_tensor(directory / entry["file"])
        if list(tensor.shape) != entry["shape"]:
            raise CheckpointError(
                f"{entry['file']}: shape {list(tensor.shape)} != manifest {entry['shape']}"
            )
        state[entry["name"]] = tensor
    return state, manifest.get("meta", {})


def load_into(module: nn.Module, directory: str | Path) -> dict:
    """Load a bundle into a freshly built module; returns the metadata."""
    state, meta = load_checkpoint(directory)
    try:
        module.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint does not fit the module: {exc}") from exc
    return meta


def checkpoint_hash(directory: str | Path) -> str:
    """sha256 over the manifest and every tensor file it lists, in order."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"no checkpoint manifest at {manifest_path}")
    digest = hashlib.sha256()
    digest.update(manifest_path.read_bytes())
    manifest = json.loads(manifest_path.read_text())
    for entry in manifest.get("params", []):
        digest.update((directory / entry["file"]).read_bytes())
    return digest.hexdigest()
