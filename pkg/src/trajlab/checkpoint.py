"""Binary persistence for trained models and codebooks.

Layout: 4 magic bytes, version and header length as little-endian u32, a
canonical JSON header, then one little-endian float64 blob per array in
sorted name order. Canonical JSON plus fixed blob order makes a load/save
round trip byte-identical.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .codebook import MotionCodebook
from .data import NormStats
from .errors import ConfigError, DataError
from .models import ModelConfig, build_model, config_hash

MAGIC = b"TJLB"
FORMAT_VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _array_entries(arrays: dict) -> list:
    return [{"name": name, "shape": list(arrays[name].shape)} for name in sorted(arrays)]


def _write_container(path, header: dict, arrays: dict) -> None:
    header_bytes = _canonical_json(header)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for name in sorted(arrays):
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def _read_container(path) -> tuple:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise DataError(f"{path} is not a model container (bad magic)")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    if len(blob) < 12 + header_len:
        raise DataError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt header: {exc}") from exc

    arrays = {}
    offset = 12 + header_len
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise DataError(f"{path}: truncated blob for {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            blob, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise DataError(f"{path}: {len(blob) - offset} trailing bytes")
    return header, arrays


# ---- checkpoints ---------------------------------------------------------


def save_checkpoint(path, forecaster, epoch: int = 0, val_mad: float = math.nan) -> None:
    """Persist a forecaster bundle (model params, normalization, codebook)."""
    cfg = forecaster.config
    arrays = {f"param.{name}": t.data for name, t in forecaster.model.named_params().items()}
    arrays["norm.mean"] = forecaster.norm.mean
    arrays["norm.std"] = forecaster.norm.std
    header = {
        "kind": "checkpoint",
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg.to_dict()),
        "epoch": int(epoch),
        "val_mad": float(val_mad),
        "codebook": None,
    }
    if forecaster.codebook is not None:
        cb = forecaster.codebook
        arrays["codebook.centroids"] = cb.centroids
        header["codebook"] = {"k": cb.k, "seed": cb.seed,
                              "iterations": cb.iterations_run, "inertia": cb.inertia}
    header["arrays"] = _array_entries(arrays)
    _write_container(path, header, arrays)


def load_checkpoint(path, expect_hash: str | None = None, force: bool = False):
    """Rebuild a forecaster from disk.

    Returns (forecaster, meta) where meta carries epoch, val_mad and the
    stored config hash. A caller expecting a specific configuration passes
    its hash; a mismatch refuses to load unless forced.
    """
    from .evaluation import Forecaster

    header, arrays = _read_container(path)
    if header.get("kind") != "checkpoint":
        raise DataError(f"{path} holds a {header.get('kind')!r}, not a checkpoint")
    cfg_dict = header["config"]
    stored_hash = header["config_hash"]
    if config_hash(cfg_dict) != stored_hash:
        raise DataError(f"{path}: config hash does not match stored config")
    if expect_hash is not None and expect_hash != stored_hash and not force:
        raise ConfigError(
            f"checkpoint {path} was trained under config {stored_hash}, expected {expect_hash}; "
            "pass force to load anyway")
    cfg = ModelConfig(**cfg_dict)
    model = build_model(cfg, seed=0)
    params = model.named_params()
    stored_names = {n[len("param."):] for n in arrays if n.startswith("param.")}
    if stored_names != set(params):
        missing = sorted(set(params) - stored_names)
        extra = sorted(stored_names - set(params))
        raise DataError(f"{path}: parameter names disagree (missing {missing}, extra {extra})")
    for name, tensor in params.items():
        blob = arrays[f"param.{name}"]
        if blob.shape != tensor.data.shape:
            raise DataError(f"{path}: {name} has shape {blob.shape}, expected {tensor.data.shape}")
        tensor.data[...] = blob

    norm = NormStats(mean=arrays["norm.mean"], std=arrays["norm.std"])
    codebook = None
    if header.get("codebook") is not None:
        meta = header["codebook"]
        codebook = MotionCodebook(centroids=arrays["codebook.centroids"], seed=meta["seed"],
                                  iterations_run=meta["iterations"], inertia=meta["inertia"])
        if codebook.k != meta["k"]:
            raise DataError(f"{path}: codebook k mismatch")
    forecaster = Forecaster(config=cfg, model=model, norm=norm, codebook=codebook)
    meta = {"epoch": header["epoch"], "val_mad": header["val_mad"], "config_hash": stored_hash}
    return forecaster, meta


# ---- standalone codebooks ------------------------------------------------


def save_codebook(path, codebook: MotionCodebook) -> None:
    arrays = {"codebook.centroids": codebook.centroids}
    header = {
        "kind": "codebook",
        "format_version": FORMAT_VERSION,
        "codebook": {"k": codebook.k, "seed": codebook.seed,
                     "iterations": codebook.iterations_run, "inertia": codebook.inertia},
        "arrays": _array_entries(arrays),
    }
    _write_container(path, header, arrays)


def load_codebook(path) -> MotionCodebook:
    header, arrays = _read_container(path)
    if header.get("kind") != "codebook":
        raise DataError(f"{path} holds a {header.get('kind')!r}, not a codebook")
    meta = header["codebook"]
    cb = MotionCodebook(centroids=arrays["codebook.centroids"], seed=meta["seed"],
                        iterations_run=meta["iterations"], inertia=meta["inertia"])
    if cb.k != meta["k"]:
        raise DataError(f"{path}: codebook k mismatch")
    return cb
