"""Self-describing binary checkpoint container.

Layout: 8-byte magic, u32 version, u32 metadata length, UTF-8 JSON metadata
(config, vocabulary, array names/shapes, RNG state), then the raw
little-endian float64 array payloads in declared order. Writes are atomic
(temp file + rename) and loads round-trip bitwise.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, IoError, ShapeMismatch, VersionMismatch
from .models import ModelDims, SequenceModel, init_model
from .sequences import N_RESERVED, Vocabulary

MAGIC = b"LVAECKPT"
VERSION = 1


@dataclass
class Checkpoint:
    method: str
    config: dict
    vocab: Vocabulary
    epoch: int
    arrays: list[tuple[str, np.ndarray]]
    rng_state: dict = field(default_factory=dict)
    version: int = VERSION

    @property
    def vocab_hash(self) -> str:
        return self.vocab.content_hash()


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    meta = {
        "version": ckpt.version,
        "method": ckpt.method,
        "config": ckpt.config,
        "vocab": list(ckpt.vocab.tokens[N_RESERVED:]),
        "vocab_hash": ckpt.vocab_hash,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in ckpt.arrays],
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", ckpt.version))
            f.write(struct.pack("<I", len(meta_bytes)))
            f.write(meta_bytes)
            for _, a in ckpt.arrays:
                f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except OSError as e:
        raise IoError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise IoError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path} is not a checkpoint file")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    (meta_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    if off + meta_len > len(blob):
        raise ShapeMismatch(f"{path}: truncated metadata block")
    meta = json.loads(blob[off : off + meta_len].decode("utf-8"))
    off += meta_len

    arrays: list[tuple[str, np.ndarray]] = []
    for spec in meta["arrays"]:
        shape = tuple(spec["shape"])
        n_bytes = int(np.prod(shape)) * 8 if shape else 8
        if off + n_bytes > len(blob):
            raise ShapeMismatch(f"{path}: payload shorter than declared shapes")
        a = np.frombuffer(blob[off : off + n_bytes], dtype="<f8").reshape(shape).copy()
        arrays.append((spec["name"], a))
        off += n_bytes
    if off != len(blob):
        raise ShapeMismatch(f"{path}: {len(blob) - off} trailing bytes after payload")

    return Checkpoint(
        method=meta["method"],
        config=meta["config"],
        vocab=Vocabulary(meta["vocab"]),
        epoch=meta["epoch"],
        arrays=arrays,
        rng_state=meta["rng_state"],
        version=version,
    )


def checkpoint_from_model(
    model: SequenceModel,
    method: str,
    config: dict,
    vocab: Vocabulary,
    epoch: int,
    rng_state: dict | None = None,
) -> Checkpoint:
    arrays = [(n, p.data.copy()) for n, p in model.named_parameters()]
    return Checkpoint(
        method=method,
        config=config,
        vocab=vocab,
        epoch=epoch,
        arrays=arrays,
        rng_state=rng_state or {},
    )


def model_from_checkpoint(ckpt: Checkpoint) -> SequenceModel:
    cfg = ckpt.config
    dims = ModelDims(
        vocab_size=ckpt.vocab.size,
        d_emb=int(cfg["d_emb"]),
        d_h=int(cfg["d_h"]),
        d_z=int(cfg["d_z"]),
        cell=cfg.get("cell", "gru"),
        shared_embeddings=bool(cfg.get("shared_embeddings", False)),
    )
    model = init_model(dims, np.random.default_rng(0), with_encoder=ckpt.method != "lm")
    named = dict(model.named_parameters())
    stored = dict(ckpt.arrays)
    if set(named) != set(stored):
        raise ShapeMismatch(
            f"checkpoint arrays {sorted(stored)} do not match model {sorted(named)}"
        )
    for name, tensor in named.items():
        if tensor.data.shape != stored[name].shape:
            raise ShapeMismatch(
                f"array {name}: checkpoint {stored[name].shape} vs model {tensor.data.shape}"
            )
        tensor.data = stored[name].copy()
    return model
