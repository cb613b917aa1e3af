"""Binary model checkpoints ("NTMG") and resumable run directories.

Layout of a ``.ntmg`` file, all integers little-endian::

    b"NTMG" | version u32 | interleaver seed u64 | k, F_enc, F_dec, L, I u32
    | count u32 | count x (name_len u32, name utf-8, rank u32, dims u32*rank,
                           float32 payload)
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import DecoderModel, EncoderModel, Interleaver

MAGIC = b"NTMG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ5I")
_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    """Raised for unreadable, truncated or mismatched checkpoints."""


@dataclass(frozen=True)
class CheckpointHeader:
    seed: int
    k: int
    enc_features: int
    dec_features: int
    dec_layers: int
    iterations: int
    version: int = FORMAT_VERSION


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_checkpoint(header: CheckpointHeader, arrays: "OrderedDict[str, np.ndarray]") -> bytes:
    parts = [_HEADER.pack(MAGIC, header.version, header.seed, header.k, header.enc_features,
                          header.dec_features, header.dec_layers, header.iterations),
             _U32.pack(len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> tuple[CheckpointHeader, "OrderedDict[str, np.ndarray]"]:
    if len(blob) < _HEADER.size + _U32.size:
        raise CheckpointError("checkpoint truncated: header incomplete")
    magic, version, seed, k, f_enc, f_dec, layers, iters = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = _HEADER.size
    (count,) = _U32.unpack_from(blob, pos)
    pos += _U32.size
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = _U32.unpack_from(blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = _U32.unpack_from(blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            nbytes = 4 * int(np.prod(dims, dtype=np.int64))
            if pos + nbytes > len(blob):
                raise CheckpointError(f"checkpoint truncated inside tensor {name!r}")
            arrays[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).astype(np.float32)
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"checkpoint truncated: {exc}") from None
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after last tensor")
    return CheckpointHeader(seed, k, f_enc, f_dec, layers, iters, version), arrays


def model_arrays(enc: EncoderModel, dec: DecoderModel) -> "OrderedDict[str, np.ndarray]":
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    arrays["interleaver.perm"] = enc.interleaver.perm.astype(np.float32)
    for name, t in enc.named_parameters("enc."):
        arrays[name] = t.data
    for name, t in dec.named_parameters("dec."):
        arrays[name] = t.data
    return arrays


def header_for(enc: EncoderModel, dec: DecoderModel) -> CheckpointHeader:
    return CheckpointHeader(
        seed=int(enc.interleaver.seed), k=enc.interleaver.k, enc_features=enc.features,
        dec_features=dec.features, dec_layers=len(dec.blocks[0][0].kernels),
        iterations=dec.iterations)


def save_model(path, enc: EncoderModel, dec: DecoderModel) -> None:
    atomic_write_bytes(path, encode_checkpoint(header_for(enc, dec), model_arrays(enc, dec)))


def read_checkpoint(path) -> tuple[CheckpointHeader, "OrderedDict[str, np.ndarray]"]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def models_from_arrays(header: CheckpointHeader, arrays) -> tuple[EncoderModel, DecoderModel]:
    """Rebuild encoder/decoder; widths not in the header are read off tensor shapes."""
    if "interleaver.perm" in arrays:
        perm = arrays["interleaver.perm"].astype(np.int64)
        interleaver = Interleaver(perm, seed=header.seed)
    else:
        interleaver = Interleaver.random(header.k, header.seed)
    sub_blocks = len({n.split(".")[2] for n in arrays if n.startswith("enc.branch1.")})
    hidden = arrays["dec.iter0.first.kernels.0"].shape[2]
    kernel = arrays["dec.iter0.first.kernels.0"].shape[0]
    enc = EncoderModel.init(interleaver, header.enc_features, sub_blocks)
    dec = DecoderModel.init(interleaver, header.iterations, header.dec_features, header.dec_layers,
                            hidden, kernel)
    expected = model_arrays(enc, dec)
    if list(expected) != list(arrays):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        raise CheckpointError(f"tensor names do not match architecture (missing={missing[:3]}, extra={extra[:3]})")
    for name, t in list(enc.named_parameters("enc.")) + list(dec.named_parameters("dec.")):
        if arrays[name].shape != t.shape:
            raise CheckpointError(f"{name}: shape {arrays[name].shape} != expected {t.shape}")
        t.data = arrays[name].copy()
    return enc, dec


def load_model(path) -> tuple[EncoderModel, DecoderModel]:
    header, arrays = read_checkpoint(path)
    return models_from_arrays(header, arrays)


def save_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
