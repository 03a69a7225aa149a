"""
Checkpoint Container Module

Binary container bundling model parameters, normalization statistics, the
label vocabulary, fitted completers and prepared datasets, so evaluation can
never pair a model with mismatched preprocessing.

Layout (all integers little-endian):
    b"HS2S"                      magic
    uint16                       format version
    uint32 + bytes               header: UTF-8 `key=value` lines, including
                                 `manifest=` (comma-separated block names)
    blocks, each:
        uint16 + bytes           block name (UTF-8)
        uint8                    rank
        uint32 * rank            dims
        float32 * prod(dims)     row-major values
    8 bytes                      blake2b (digest_size=8) of everything before

The writer emits no timestamps or absolute paths, so identical inputs give
identical files.

Dependencies:
- numpy: Block encoding
"""

import hashlib
import logging
import os
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from tools.completion import CompletionVector, Completer, FnCompleter
from tools.errors import CorruptionError, StructureError, VersionError
from tools.hs2sae import ArchConfig, ModelParams
from tools.motiondata import LabelVocab, NormStats
from tools.ndmath import DenseParams

logger = logging.getLogger(__name__)

MAGIC = b"HS2S"
FORMAT_VERSION = 1
CHECKSUM_SIZE = 8
_PREFIX = struct.Struct("<4sHI")


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=CHECKSUM_SIZE).digest()


# -------------------------------------------------------------------
# RAW CONTAINER
# -------------------------------------------------------------------
def encode_container(header: Dict[str, str], blocks: Dict[str, np.ndarray], version: int = FORMAT_VERSION) -> bytes:
    """Serialize a header and named blocks; `manifest` defaults to the block names in order."""
    header = dict(header)
    header.setdefault("manifest", ",".join(blocks))
    for key, value in header.items():
        if "=" in key or "\n" in key or "\n" in str(value):
            raise StructureError(f"header entry '{key}' cannot be encoded")
    header_bytes = "".join(f"{k}={v}\n" for k, v in header.items()).encode("utf-8")

    parts = [_PREFIX.pack(MAGIC, version, len(header_bytes)), header_bytes]
    for name, value in blocks.items():
        data = np.ascontiguousarray(value, dtype="<f4")
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    payload = b"".join(parts)
    return payload + _checksum(payload)


def decode_container(raw: bytes) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    """
    Parse and verify a container.

    Raises:
        CorruptionError: On a bad magic, truncation or checksum mismatch
        VersionError: On an unknown format version
        StructureError: If blocks and manifest disagree
    """
    if len(raw) < _PREFIX.size + CHECKSUM_SIZE:
        raise CorruptionError("checkpoint is truncated")
    payload, digest = raw[:-CHECKSUM_SIZE], raw[-CHECKSUM_SIZE:]
    magic, version, header_len = _PREFIX.unpack_from(payload, 0)
    if magic != MAGIC:
        raise CorruptionError("not a checkpoint (bad magic bytes)")
    if _checksum(payload) != digest:
        raise CorruptionError("checksum mismatch")
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")

    offset = _PREFIX.size
    try:
        header_text = payload[offset:offset + header_len].decode("utf-8")
        offset += header_len
        header = {}
        for line in header_text.splitlines():
            key, _, value = line.partition("=")
            header[key] = value

        blocks: Dict[str, np.ndarray] = {}
        seen: List[str] = []
        while offset < len(payload):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", payload, offset)
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if offset + 4 * count > len(payload):
                raise CorruptionError(f"block '{name}' is truncated")
            blocks[name] = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(dims).copy()
            offset += 4 * count
            seen.append(name)
    except (struct.error, UnicodeDecodeError) as e:
        raise CorruptionError(f"malformed checkpoint: {e}")

    manifest = [n for n in header.get("manifest", "").split(",") if n]
    duplicates = sorted({n for n in seen if seen.count(n) > 1})
    if duplicates:
        raise StructureError(f"blocks stored more than once: {', '.join(duplicates)}")
    missing = [n for n in manifest if n not in blocks]
    extra = [n for n in seen if n not in manifest]
    if missing or extra:
        raise StructureError(f"manifest mismatch (missing: {missing}, unlisted: {extra})")
    return header, blocks


def write_container(path: Union[str, Path], header: Dict[str, str], blocks: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_container(header, blocks))
    os.replace(tmp, path)
    return path


def read_container(path: Union[str, Path]) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise CorruptionError(f"checkpoint '{path}' not found")
    return decode_container(raw)


# -------------------------------------------------------------------
# BUNDLES
# -------------------------------------------------------------------
@dataclass
class CheckpointAux:
    """Everything stored next to (or instead of) the model parameters."""

    stats: Optional[NormStats] = None
    vocab: Optional[LabelVocab] = None
    completers: Dict[str, Completer] = field(default_factory=dict)
    dataset: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, str] = field(default_factory=dict)


def _arch_header(cfg: ArchConfig) -> Dict[str, str]:
    return {f"arch.{k}": str(v) for k, v in cfg.as_dict().items()}


def _arch_from_header(header: Dict[str, str]) -> ArchConfig:
    values = {}
    for f in fields(ArchConfig):
        raw = header.get(f"arch.{f.name}")
        if raw is None:
            raise StructureError(f"header lacks arch.{f.name}")
        values[f.name] = int(raw) if f.type in (int, "int") else raw
    return ArchConfig(**values)


def _completer_entries(name: str, completer: Completer) -> Tuple[Dict[str, str], Dict[str, np.ndarray]]:
    prefix = f"completer.{name}"
    header = {
        f"{prefix}.kind": "add" if isinstance(completer, CompletionVector) else "fn",
        f"{prefix}.j": str(completer.j if isinstance(completer, CompletionVector) else completer.trained_j),
        f"{prefix}.prefix_len": str(completer.prefix_len),
        f"{prefix}.target_len": str(completer.target_len),
        f"{prefix}.mode": completer.mode,
    }
    if isinstance(completer, CompletionVector):
        header[f"{prefix}.sample_count"] = str(completer.sample_count)
        return header, {f"{prefix}.v": completer.v, f"{prefix}.sigma": completer.sigma}
    blocks = {f"{prefix}.weight": completer.layer.weight, f"{prefix}.bias": completer.layer.bias}
    if completer.sigma is not None:
        blocks[f"{prefix}.sigma"] = completer.sigma
    return header, blocks


def _completer_from(name: str, header: Dict[str, str], blocks: Dict[str, np.ndarray]) -> Completer:
    prefix = f"completer.{name}"
    as64 = lambda key: blocks[f"{prefix}.{key}"].astype(np.float64)
    j = int(header[f"{prefix}.j"])
    prefix_len, target_len = int(header[f"{prefix}.prefix_len"]), int(header[f"{prefix}.target_len"])
    mode = header[f"{prefix}.mode"]
    if header[f"{prefix}.kind"] == "add":
        return CompletionVector(j, as64("v"), as64("sigma"), int(header[f"{prefix}.sample_count"]),
                                prefix_len, target_len, mode)
    sigma = as64("sigma") if f"{prefix}.sigma" in blocks else None
    return FnCompleter(DenseParams(as64("weight"), as64("bias"), "linear"), j, prefix_len, target_len, mode, sigma)


def save_checkpoint(path: Union[str, Path], model: Optional[ModelParams], aux: Optional[CheckpointAux] = None) -> Path:
    """Write model parameters and auxiliary state as one container (32-bit values)."""
    aux = aux or CheckpointAux()
    header: Dict[str, str] = {"format": "hs2s"}
    blocks: Dict[str, np.ndarray] = {}

    if model is not None:
        header.update(_arch_header(model.arch))
        blocks.update({f"model.{k}": v for k, v in model.blocks().items()})
    if aux.stats is not None:
        header["stats.scheme"] = aux.stats.scheme
        header["stats.ignore_threshold"] = repr(aux.stats.ignore_threshold)
        for key in ("mean", "std", "min", "max"):
            blocks[f"stats.{key}"] = getattr(aux.stats, key)
        blocks["stats.keep_mask"] = aux.stats.keep_mask.astype(np.float32)
    if aux.vocab is not None:
        header["vocab"] = ",".join(aux.vocab.names)
    for name in sorted(aux.completers):
        completer_header, completer_blocks = _completer_entries(name, aux.completers[name])
        header.update(completer_header)
        blocks.update(completer_blocks)
    if aux.dataset:
        header["dataset"] = ",".join(aux.dataset)
        blocks.update({f"dataset.{k}": v for k, v in aux.dataset.items()})
    header.update({f"meta.{k}": str(v) for k, v in sorted(aux.meta.items())})

    written = write_container(path, header, blocks)
    logger.info(f"Saved checkpoint {Path(path).name}", extra={"blocks": len(blocks)})
    return written


def load_checkpoint(path: Union[str, Path]) -> Tuple[Optional[ModelParams], CheckpointAux]:
    """
    Read a container written by save_checkpoint.

    Raises:
        CorruptionError / VersionError / StructureError: See decode_container
    """
    header, blocks = read_container(path)
    as64 = {k: v.astype(np.float64) for k, v in blocks.items()}

    model = None
    if "arch.T" in header:
        cfg = _arch_from_header(header)
        model_blocks = {k[len("model."):]: v for k, v in as64.items() if k.startswith("model.")}
        try:
            model = ModelParams.from_blocks(cfg, model_blocks)
        except KeyError as e:
            raise StructureError(f"model block {e} missing")

    aux = CheckpointAux()
    if "stats.scheme" in header:
        aux.stats = NormStats(
            mean=as64["stats.mean"], std=as64["stats.std"], min=as64["stats.min"], max=as64["stats.max"],
            keep_mask=blocks["stats.keep_mask"] > 0.5, scheme=header["stats.scheme"],
            ignore_threshold=float(header["stats.ignore_threshold"]),
        )
    if header.get("vocab"):
        aux.vocab = LabelVocab(tuple(header["vocab"].split(",")))
    names = sorted({k.split(".")[1] for k in header if k.startswith("completer.")})
    aux.completers = {name: _completer_from(name, header, blocks) for name in names}
    if header.get("dataset"):
        aux.dataset = {k: as64[f"dataset.{k}"] for k in header["dataset"].split(",")}
    aux.meta = {k[len("meta."):]: v for k, v in header.items() if k.startswith("meta.")}
    return model, aux
