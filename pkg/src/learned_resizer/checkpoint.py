"""Binary checkpoint archive for resizer and baseline weights.

Layout (all integers little-endian u32)::

    b"RSZCKPT1"  version  meta_len  meta_json[meta_len]
    count  { name_len  name[name_len]  rank  dims[rank]  float32[prod(dims)] } * count

Metadata is UTF-8 JSON with sorted keys, so saving a loaded checkpoint
reproduces the original file byte for byte.
"""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"RSZCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    metadata: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)

    def prefixed(self, prefix):
        """Tensors under ``prefix.`` with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def to_bytes(ckpt):
    meta = json.dumps(ckpt.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        raw_name = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def from_bytes(raw, name="<bytes>"):
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{name}: bad magic {raw[:8]!r}, expected {MAGIC!r} (not a resizer checkpoint)")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise CheckpointError(f"{name}: truncated checkpoint at byte {pos}")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"{name}: unsupported checkpoint version {version}, this build reads version {VERSION}")
    (meta_len,) = take("<I")
    meta = json.loads(raw[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = take("<I")
        tname = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        size = int(np.prod(dims, dtype=np.int64)) * 4
        if pos + size > len(raw):
            raise CheckpointError(f"{name}: truncated data for tensor {tname!r}")
        tensors[tname] = np.frombuffer(raw, dtype="<f4", count=size // 4, offset=pos).reshape(dims).astype(np.float32)
        pos += size
    if pos != len(raw):
        raise CheckpointError(f"{name}: {len(raw) - pos} trailing bytes after last tensor")
    return Checkpoint(meta, tensors)


def save(path, ckpt):
    with open(path, "wb") as f:
        f.write(to_bytes(ckpt))


def load(path):
    with open(path, "rb") as f:
        return from_bytes(f.read(), str(path))


def resizer_metadata(resizer):
    c = resizer.cfg
    return {"r": c.r, "n": c.n, "out_h": c.out_h, "out_w": c.out_w}


def from_models(resizer=None, baseline=None, **extra):
    """Bundle models into a checkpoint; ``extra`` goes into the metadata."""
    meta = dict(extra)
    tensors = {}
    if resizer is not None:
        meta["resizer"] = resizer_metadata(resizer)
        tensors.update({f"resizer.{k}": v for k, v in resizer.state_arrays().items()})
    if baseline is not None:
        meta["baseline"] = baseline.metadata()
        tensors.update({f"baseline.{k}": v for k, v in baseline.state_arrays().items()})
    return Checkpoint(meta, tensors)


def restore_resizer(ckpt, expect=None):
    """Rebuild the resizer stored in ``ckpt``; ``expect`` is an optional ResizerConfig to match."""
    from .resizer import ResizerConfig, ResizerModel

    meta = ckpt.metadata.get("resizer")
    if meta is None:
        raise CheckpointError("checkpoint has no resizer")
    cfg = ResizerConfig(meta["r"], meta["n"], meta["out_h"], meta["out_w"])
    if expect is not None and (expect.r, expect.n) != (cfg.r, cfg.n):
        raise CheckpointError(
            f"architecture mismatch: checkpoint resizer has r={cfg.r}, n={cfg.n} but config asks for r={expect.r}, n={expect.n}"
        )
    if expect is not None:
        cfg = ResizerConfig(cfg.r, cfg.n, expect.out_h, expect.out_w)
    model = ResizerModel(cfg, seed=0)
    model.load_arrays(ckpt.prefixed("resizer"))
    return model


def restore_baseline(ckpt):
    from .baselines import build_baseline

    meta = ckpt.metadata.get("baseline")
    if meta is None:
        raise CheckpointError("checkpoint has no baseline")
    model = build_baseline(meta)
    model.load_arrays(ckpt.prefixed("baseline"))
    return model
