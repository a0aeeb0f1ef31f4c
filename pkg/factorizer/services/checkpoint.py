"""
Checkpoint container.

Layout: magic b"FCKP", u8 version, u64 little-endian manifest length, UTF-8 JSON
manifest, then FTensor v1 blobs. Manifest entries record each tensor's name,
byte offset (relative to the first blob), shape and dtype.
"""
import hashlib
import io
import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from factorizer.autograd import ftensor
from factorizer.exceptions import FormatError
from factorizer.models.network import Factorizer, build
from factorizer.schemas.config import FactorizerConfig

logger = logging.getLogger(__name__)

MAGIC = b"FCKP"
VERSION = 1
OPTIMIZER_PREFIXES = ("optim.m.", "optim.v.")


@dataclass
class Checkpoint:
    config: FactorizerConfig
    step: int
    seeds: Dict[str, int]
    tensors: "OrderedDict[str, np.ndarray]"
    train: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def parameters(self) -> Dict[str, np.ndarray]:
        return OrderedDict((k, v) for k, v in self.tensors.items() if not k.startswith(OPTIMIZER_PREFIXES))

    def optimizer_state(self) -> Dict[str, np.ndarray]:
        return OrderedDict((k, v) for k, v in self.tensors.items() if k.startswith(OPTIMIZER_PREFIXES))


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    blobs = io.BytesIO()
    entries = []
    for name, array in checkpoint.tensors.items():
        data = ftensor.encode(array)
        entries.append({"name": name, "offset": blobs.tell(), "shape": list(array.shape), "dtype": str(array.dtype)})
        blobs.write(data)
    manifest = {
        "config": checkpoint.config.model_dump(mode="json"),
        "train": checkpoint.train,
        "seeds": checkpoint.seeds,
        "step": checkpoint.step,
        "extra": checkpoint.extra,
        "entries": entries,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    header = MAGIC + struct.pack("<BQ", VERSION, len(manifest_bytes))
    return header + manifest_bytes + blobs.getvalue()


def decode_checkpoint(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise FormatError(f"not a checkpoint (header {data[:4]!r})")
    if len(data) < 13:
        raise FormatError(f"truncated checkpoint header ({len(data)} bytes)")
    version, length = struct.unpack("<BQ", data[4:13])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        manifest = json.loads(data[13:13 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt checkpoint manifest: {e}") from e
    missing = [key for key in ("config", "seeds", "step", "entries") if key not in manifest]
    if missing:
        raise FormatError(f"checkpoint manifest lacks {missing}")
    blob_start = 13 + length
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in manifest["entries"]:
        stream = io.BytesIO(data[blob_start + entry["offset"]:])
        array = ftensor.read_from(stream)
        if list(array.shape) != entry["shape"] or str(array.dtype) != entry["dtype"]:
            raise FormatError(f"checkpoint entry {entry['name']} does not match its manifest record")
        tensors[entry["name"]] = array
    return Checkpoint(
        config=FactorizerConfig(**manifest["config"]),
        step=int(manifest["step"]),
        seeds={k: int(v) for k, v in manifest["seeds"].items()},
        tensors=tensors,
        train=manifest.get("train"),
        extra=manifest.get("extra") or {},
    )


def model_checkpoint(
    model: Factorizer,
    step: int,
    optimizer_state: Optional[Dict[str, np.ndarray]] = None,
    train: Optional[Dict[str, Any]] = None,
    seeds: Optional[Dict[str, int]] = None,
) -> Checkpoint:
    tensors = OrderedDict(model.state_dict())
    tensors.update(optimizer_state or {})
    return Checkpoint(
        config=model.cfg,
        step=step,
        seeds={"model": model.seed, **(seeds or {})},
        tensors=tensors,
        train=train,
    )


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Write via a temporary file so an interrupted save keeps the previous checkpoint"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(checkpoint))
    tmp.replace(path)
    logger.info(f"Saved checkpoint at step {checkpoint.step} to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def restore_model(checkpoint: Checkpoint) -> Factorizer:
    model = build(checkpoint.config, seed=checkpoint.seeds.get("model", 0))
    model.load_state_dict(checkpoint.parameters())
    model.set_step(checkpoint.step)
    return model


def file_hash(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
