"""Single-file checkpoint format shared by every model kind.

Layout: 4-byte magic ``OSCK``, little-endian uint32 manifest byte length,
canonical-JSON manifest, then a payload of little-endian float32 parameter
data concatenated in manifest order.  The manifest records, per parameter,
its name, shape, and byte offset into the payload, plus format version,
module kind, a training-config echo, a git-describe string, and the seed.

Round-tripping a checkpoint through load -> save is byte-identical.
"""

from __future__ import annotations

import json
import subprocess
from pathlib import Path

import numpy as np
import torch

from onestep_edit.schedule import InvalidArgument

MAGIC = b"OSCK"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Integrity or version failure while reading a checkpoint."""


_GIT_DESC: str | None = None


def _git_describe() -> str:
    global _GIT_DESC
    if _GIT_DESC is None:
        try:
            _GIT_DESC = subprocess.run(
                ["git", "describe", "--always", "--dirty"],
                capture_output=True, text=True, timeout=5,
            ).stdout.strip() or "unknown"
        except Exception:
            _GIT_DESC = "unknown"
    return _GIT_DESC


def save_checkpoint(
    path: str | Path,
    state_dict: dict[str, torch.Tensor],
    kind: str,
    config: dict | None = None,
    seed: int = 0,
    git_describe: str | None = None,
) -> None:
    """Serialize a state dict; parameters are stored as float32."""
    entries = []
    blobs = []
    offset = 0
    for name, tensor in state_dict.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "f4", "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "params": entries,
        "config": config or {},
        "git_describe": git_describe if git_describe is not None else _git_describe(),
        "seed": seed,
        "payload_bytes": offset,
    }
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(len(mbytes)).tobytes())
        f.write(mbytes)
        f.write(b"".join(blobs))


def load_checkpoint(path: str | Path, expected_kind: str | None = None) -> tuple[dict[str, torch.Tensor], dict]:
    """Read a checkpoint, verifying bounds and version; returns (state, manifest)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    mlen = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    try:
        manifest = json.loads(raw[8 : 8 + mlen])
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt manifest: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {manifest.get('format_version')} != {FORMAT_VERSION}; refusing partial load"
        )
    if expected_kind is not None and manifest["kind"] != expected_kind:
        raise CheckpointError(f"{path}: kind {manifest['kind']!r}, expected {expected_kind!r}")
    payload = raw[8 + mlen :]
    state: dict[str, torch.Tensor] = {}
    for entry in manifest["params"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = entry["offset"] + n * 4
        if end > len(payload):
            raise CheckpointError(
                f"{path}: entry {entry['name']!r} spans [{entry['offset']}, {end}) "
                f"beyond payload of {len(payload)} bytes"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=entry["offset"]).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    return state, manifest


def resave_checkpoint(path: str | Path, state: dict[str, torch.Tensor], manifest: dict) -> None:
    """Write back a loaded checkpoint preserving its manifest metadata."""
    save_checkpoint(
        path,
        state,
        kind=manifest["kind"],
        config=manifest.get("config"),
        seed=manifest.get("seed", 0),
        git_describe=manifest.get("git_describe"),
    )


def save_module(path: str | Path, module: torch.nn.Module, kind: str, config: dict | None = None, seed: int = 0) -> None:
    save_checkpoint(path, module.state_dict(), kind, config=config, seed=seed)


def load_into_module(path: str | Path, module: torch.nn.Module, expected_kind: str | None = None) -> dict:
    state, manifest = load_checkpoint(path, expected_kind)
    module.load_state_dict(state)
    return manifest
