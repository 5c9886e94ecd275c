"""Self-describing checkpoint container.

Layout: a magic line with the format version, one JSON header line
(architecture descriptor, schedule parameters, parameter names/shapes in
lexicographic order, provenance, creation timestamp), then the raw
little-endian float64 bytes of each parameter in header order.  The text
header makes name/shape mismatches diagnosable before any bytes are
interpreted, and the fixed binary layout round-trips bitwise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .denoiser import DenoiserConfig
from .errors import AlignmentError, ConfigurationError
from .params import ParamSet

MAGIC = "DIFFMERGE-CKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """A model at rest: parameters plus everything needed to use them."""

    config: DenoiserConfig
    schedule_params: dict  # {"T": int, "beta_start": float, "beta_end": float}
    params: ParamSet
    provenance: dict = field(default_factory=dict)
    created: str = ""


def _config_to_dict(config: DenoiserConfig) -> dict:
    d = asdict(config)
    d["hidden_dims"] = list(config.hidden_dims)
    if config.projection_sites is not None:
        d["projection_sites"] = list(config.projection_sites)
    return d


def _config_from_dict(d: dict) -> DenoiserConfig:
    sites = d.get("projection_sites")
    return DenoiserConfig(
        data_dim=int(d["data_dim"]),
        hidden_dims=tuple(int(h) for h in d["hidden_dims"]),
        time_embed_dim=int(d["time_embed_dim"]),
        use_projection=bool(d["use_projection"]),
        projection_sites=None if sites is None else tuple(int(s) for s in sites),
    )


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    created = ckpt.created or datetime.now(timezone.utc).isoformat()
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": _config_to_dict(ckpt.config),
        "schedule": ckpt.schedule_params,
        "params": [
            {"name": name, "shape": list(arr.shape)} for name, arr in ckpt.params.items()
        ],
        "provenance": ckpt.provenance,
        "created": created,
    }
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {FORMAT_VERSION}\n".encode())
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        for _, arr in ckpt.params.items():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.readline().decode().strip()
        if not magic.startswith(MAGIC):
            raise ConfigurationError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        version = int(magic.split()[-1])
        if version != FORMAT_VERSION:
            raise ConfigurationError(
                f"{path}: format_version {version} unsupported (expected {FORMAT_VERSION})"
            )
        header = json.loads(fh.readline().decode())
        entries = {}
        for spec in header["params"]:
            name, shape = spec["name"], tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise AlignmentError(f"{path}: truncated data for parameter {name!r}")
            entries[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        trailing = fh.read(1)
        if trailing:
            raise AlignmentError(f"{path}: trailing bytes after final parameter")
    return Checkpoint(
        config=_config_from_dict(header["architecture"]),
        schedule_params=header["schedule"],
        params=ParamSet(entries),
        provenance=header.get("provenance", {}),
        created=header.get("created", ""),
    )


def param_hash(params: ParamSet) -> str:
    """Short content id over parameter names and bytes (used for provenance)."""
    import hashlib

    digest = hashlib.sha256()
    for name, arr in params.items():
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return digest.hexdigest()[:16]


def checkpoints_equivalent(a: str | Path, b: str | Path) -> bool:
    """Byte-for-byte equality of two checkpoint files, ignoring timestamps."""
    ca, cb = load_checkpoint(a), load_checkpoint(b)
    if ca.params != cb.params:
        return False
    ha = {**ca.provenance}
    hb = {**cb.provenance}
    return (
        ha == hb
        and _config_to_dict(ca.config) == _config_to_dict(cb.config)
        and ca.schedule_params == cb.schedule_params
    )
