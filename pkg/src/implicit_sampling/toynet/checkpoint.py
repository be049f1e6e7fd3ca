"""Model checkpoints: JSON header plus a little-endian float64 parameter blob."""

from __future__ import annotations

import hashlib
import json
import os
import zlib

import numpy as np

from ..sampling import ChecksumError, DatasetFormatError
from .model import ArchConfig, ToyModel

FORMAT = "implicit-sampling-checkpoint"
FORMAT_VERSION = 1


def _blob_path(path: str) -> str:
    return os.path.splitext(path)[0] + ".params.bin"


def save_checkpoint(model: ToyModel, path, extra: dict | None = None) -> dict:
    path = os.fspath(path)
    blob = model.params.astype("<f8").tobytes()
    header = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "archetype": model.archetype,
        "config": model.config.to_dict(),
        "provenance": model.provenance,
        "blob": os.path.basename(_blob_path(path)),
        "blob_bytes": len(blob),
        "crc32": zlib.crc32(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    if extra:
        header.update(extra)
    with open(_blob_path(path), "wb") as fh:
        fh.write(blob)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return header


def load_checkpoint(path) -> ToyModel:
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = json.load(fh)
    if header.get("format") != FORMAT:
        raise DatasetFormatError(f"{path}: not a checkpoint header")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: checkpoint version {header.get('version')} != {FORMAT_VERSION}")
    with open(os.path.join(os.path.dirname(path), header["blob"]), "rb") as fh:
        blob = fh.read()
    if len(blob) != header["blob_bytes"]:
        raise DatasetFormatError(f"{path}: truncated parameter blob")
    if zlib.crc32(blob) != header["crc32"]:
        raise ChecksumError(f"{path}: CRC-32 mismatch in parameter blob")
    cfg = ArchConfig(**header["config"])
    return ToyModel(cfg, np.frombuffer(blob, dtype="<f8").copy(), header.get("provenance", {}))
