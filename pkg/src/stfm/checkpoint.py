"""Binary checkpoints.

Layout (all integers little-endian)::

    b"STFM"  u32 version
    u32 meta_len, meta_len bytes of UTF-8 JSON (configs, iteration, RNG state)
    u32 record_count
    record*: u32 name_len, name (UTF-8), u32 rank, u64 extent * rank,
             float64 LE payload in C order

Records are written in sorted name order, so saving the same state twice
gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import StyleCorpus
from .training import Trainer, TrainingConfig
from .transformer import TransformerConfig

MAGIC = b"STFM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    out += [struct.pack("<I", len(blob)), blob, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype.kind not in "fiub":
            raise CheckpointError(f"tensor {name!r} has non-numeric dtype {arr.dtype}")
        key = name.encode("utf-8")
        out.append(struct.pack("<I", len(key)) + key + struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def decode(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError("checkpoint is truncated")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this build reads version {VERSION})")
    (meta_len,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from None
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(buf):
        raise CheckpointError("trailing bytes after the last record")
    return meta, tensors


def write(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(meta, tensors))
    tmp.replace(path)


def read(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode(buf)


# ---------------------------------------------------------------------------
# trainer state


def trainer_state(trainer: Trainer, extra: dict | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    meta = {
        "model": trainer.model_cfg.to_dict(),
        "training": trainer.cfg.to_dict(),
        "iteration": trainer.iteration,
        "rng": trainer.rng.bit_generator.state,
        "opt_g_t": trainer.opt_g.t,
        "opt_d_t": trainer.opt_d.t,
        "extra": extra or {},
    }
    tensors = {}
    for prefix, params in (("gen", trainer.gen.params), ("disc", trainer.disc.params)):
        tensors.update({f"{prefix}/{k}": p.data for k, p in params.items()})
    for prefix, opt in (("opt_g", trainer.opt_g), ("opt_d", trainer.opt_d)):
        for k in opt.m:
            tensors[f"{prefix}/m/{k}"] = opt.m[k]
            tensors[f"{prefix}/v/{k}"] = opt.v[k]
    return meta, tensors


def save_trainer(path: str | Path, trainer: Trainer, extra: dict | None = None) -> None:
    write(path, *trainer_state(trainer, extra))


def _fill(params: dict, tensors: dict[str, np.ndarray], prefix: str) -> None:
    for k, p in params.items():
        key = f"{prefix}/{k}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint lacks tensor {key!r}")
        if tensors[key].shape != p.data.shape:
            raise CheckpointError(f"tensor {key!r} has shape {tensors[key].shape}, expected {p.data.shape}")
        p.data[...] = tensors[key]


def model_configs(meta: dict) -> tuple[TransformerConfig, TrainingConfig]:
    try:
        return TransformerConfig(**meta["model"]), TrainingConfig.from_dict(meta["training"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint metadata is incomplete: {exc}") from None


def load_trainer(path: str | Path, corpora: Sequence[StyleCorpus]) -> tuple[Trainer, dict]:
    """Rebuild a trainer (weights, optimiser moments, RNG, iteration) to resume exactly."""
    meta, tensors = read(path)
    model_cfg, train_cfg = model_configs(meta)
    trainer = Trainer(model_cfg, train_cfg, corpora)
    _fill(trainer.gen.params, tensors, "gen")
    _fill(trainer.disc.params, tensors, "disc")
    for prefix, opt in (("opt_g", trainer.opt_g), ("opt_d", trainer.opt_d)):
        for k in opt.m:
            opt.m[k][...] = tensors[f"{prefix}/m/{k}"]
            opt.v[k][...] = tensors[f"{prefix}/v/{k}"]
    trainer.opt_g.t, trainer.opt_d.t = int(meta["opt_g_t"]), int(meta["opt_d_t"])
    trainer.rng.bit_generator.state = meta["rng"]
    trainer.iteration = int(meta["iteration"])
    return trainer, meta


def load_generator(path: str | Path):
    """Just the generator, for transfer and evaluation."""
    from .generator import StyleTransformer

    meta, tensors = read(path)
    model_cfg, _ = model_configs(meta)
    gen = StyleTransformer(model_cfg, 0)
    _fill(gen.params, tensors, "gen")
    return gen, meta
