"""LoRA adapter weight merging over single-file named-tensor archives.

Archive format (compatible with the common single-file tensor
serialization used by model hubs): an 8-byte little-endian header
length, a JSON header mapping tensor name to {dtype, shape,
data_offsets}, then the concatenated raw little-endian tensor data.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

_DTYPE_TO_NP = {"F32": np.dtype("<f4"), "F16": np.dtype("<f2")}
_NP_TO_DTYPE = {np.dtype("float32"): "F32", np.dtype("float16"): "F16"}


class MergeError(Exception):
    pass


class ArchiveError(MergeError):
    pass


@dataclass(frozen=True)
class AdapterPair:
    """Low-rank factors for one backbone tensor: delta = (alpha/rank) * B @ A."""

    target: str
    A: np.ndarray  # rank x in
    B: np.ndarray  # out x rank
    rank: int
    alpha: float

    def __post_init__(self):
        if self.rank <= 0:
            raise MergeError(f"rank must be positive, got {self.rank}")
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise MergeError(f"alpha must be positive and finite, got {self.alpha}")
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise MergeError(f"{self.target}: adapter factors must be 2-D")
        if self.A.shape[0] != self.rank or self.B.shape[1] != self.rank:
            raise MergeError(
                f"{self.target}: factor shapes {self.B.shape}x{self.A.shape} "
                f"inconsistent with rank {self.rank}")

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def delta(self) -> np.ndarray:
        """fp32 weight delta (out x in)."""
        return self.scale * (self.B.astype(np.float32) @ self.A.astype(np.float32))


def save_archive(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write tensors in name-sorted order; round trips are bit-exact."""
    header: dict[str, dict] = {}
    blobs: list[bytes] = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype not in _NP_TO_DTYPE:
            raise ArchiveError(f"{name}: unsupported dtype {arr.dtype}")
        blob = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        header[name] = {
            "dtype": _NP_TO_DTYPE[arr.dtype],
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(blob)],
        }
        blobs.append(blob)
        offset += len(blob)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_archive(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ArchiveError(f"{path}: truncated archive")
    (header_len,) = struct.unpack("<Q", raw[:8])
    if 8 + header_len > len(raw):
        raise ArchiveError(f"{path}: header length {header_len} exceeds file size")
    header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    data = raw[8 + header_len:]
    tensors: dict[str, np.ndarray] = {}
    for name, meta in header.items():
        if name == "__metadata__":
            continue
        dtype = _DTYPE_TO_NP.get(meta["dtype"])
        if dtype is None:
            raise ArchiveError(f"{name}: unsupported dtype {meta['dtype']!r}")
        begin, end = meta["data_offsets"]
        shape = tuple(meta["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if end - begin != expected:
            raise ArchiveError(
                f"{name}: declared byte span {end - begin} != shape bytes {expected}")
        tensors[name] = np.frombuffer(data[begin:end], dtype=dtype).reshape(shape)
    return tensors


def save_adapters(path: str | Path, adapters: Sequence[AdapterPair]) -> None:
    """Store factors as `{target}.lora_A` / `{target}.lora_B` plus a sidecar descriptor."""
    tensors: dict[str, np.ndarray] = {}
    descriptor = {"adapters": []}
    for ad in adapters:
        tensors[f"{ad.target}.lora_A"] = ad.A.astype(np.float32)
        tensors[f"{ad.target}.lora_B"] = ad.B.astype(np.float32)
        descriptor["adapters"].append(
            {"target": ad.target, "rank": ad.rank, "alpha": ad.alpha})
    save_archive(path, tensors)
    Path(str(path) + ".json").write_text(
        json.dumps(descriptor, indent=2) + "\n", encoding="utf-8")


def load_adapters(path: str | Path) -> list[AdapterPair]:
    tensors = load_archive(path)
    descriptor = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    out = []
    for meta in descriptor["adapters"]:
        target = meta["target"]
        out.append(AdapterPair(
            target=target,
            A=tensors[f"{target}.lora_A"],
            B=tensors[f"{target}.lora_B"],
            rank=meta["rank"],
            alpha=meta["alpha"],
        ))
    return out


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise MergeError(f"{name}: non-finite values")


def merge_lora(backbone: dict[str, np.ndarray],
               adapters: Sequence[AdapterPair]) -> dict[str, np.ndarray]:
    """Add each adapter delta onto its target: W + (alpha/rank) * B @ A.

    Accumulation happens in fp32 and is cast back to the archive dtype;
    tensors without an adapter are copied bit-exact.
    """
    merged = {name: arr.copy() for name, arr in backbone.items()}
    for ad in adapters:
        if ad.target not in backbone:
            raise MergeError(f"adapter target {ad.target!r} not in backbone")
        w = backbone[ad.target]
        expected = (ad.B.shape[0], ad.A.shape[1])
        if w.shape != expected:
            raise MergeError(
                f"{ad.target}: backbone shape {w.shape} != adapter delta shape {expected}")
        _check_finite(ad.target, w)
        _check_finite(f"{ad.target}.lora_A", ad.A)
        _check_finite(f"{ad.target}.lora_B", ad.B)
        out = w.astype(np.float32) + ad.delta()
        _check_finite(f"{ad.target} (merged)", out)
        merged[ad.target] = out.astype(w.dtype)
    return merged


def merge_lora_base(instruct: dict[str, np.ndarray],
                    adapters_trained_on_base: Sequence[AdapterPair]) -> dict[str, np.ndarray]:
    """Add adapter deltas trained on the foundation model onto the Instruct weights.

    The arithmetic is identical to merge_lora; the delta is independent
    of which same-architecture backbone it lands on.
    """
    return merge_lora(instruct, adapters_trained_on_base)


def delta(merged: dict[str, np.ndarray],
          reference: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Elementwise fp32 difference merged - reference, tensor by tensor."""
    if set(merged) != set(reference):
        missing = set(merged) ^ set(reference)
        raise MergeError(f"tensor name mismatch: {sorted(missing)}")
    out = {}
    for name, m in merged.items():
        r = reference[name]
        if m.shape != r.shape:
            raise MergeError(f"{name}: shape mismatch {m.shape} vs {r.shape}")
        out[name] = m.astype(np.float32) - r.astype(np.float32)
    return out
