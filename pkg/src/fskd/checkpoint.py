"""Binary checkpoint files.

Layout (all integers little-endian)::

    magic    8 bytes   b"FSKDCKPT"
    version  u32       1
    count    u32       number of records
    count x record:
        name_len  u32
        name      name_len bytes, UTF-8
        kind      u8       0 = float64 array, 1 = int64 array, 2 = UTF-8 JSON text
        ndim      u32
        dims      ndim x u32   (JSON records: ndim = 1, dims = [byte length])
        payload   prod(dims) x 8 bytes for arrays, dims[0] bytes for JSON

Records are written sorted by name and JSON is dumped with sorted keys, so
save -> load -> save reproduces the file byte for byte.

A training checkpoint holds these records:

    meta          JSON: backbone config, head scale/margin, optimizer
                  hyper-parameters, step and epoch counters, the RNG state
                  (seed and next epoch; every batch stream is derived from
                  these two) and free-form run info
    head.W        class weight matrix
    param.<name>  backbone parameters
    buffer.<name> BatchNorm running statistics
    velocity.<i>  momentum buffers, in optimizer parameter order
"""

import json
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .backbone import BackboneConfig, build_backbone
from .engine import SGD, Tensor
from .heads import MarginHeadParams
from .training import TrainState

MAGIC = b"FSKDCKPT"
VERSION = 1

KIND_F64 = 0
KIND_I64 = 1
KIND_JSON = 2

Record = Union[np.ndarray, dict]


class CheckpointError(Exception):
    pass


def write_records(path, records: Dict[str, Record]) -> None:
    out = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name in sorted(records):
        value = records[name]
        key = name.encode("utf-8")
        out.append(struct.pack("<I", len(key)))
        out.append(key)
        if isinstance(value, dict):
            blob = json.dumps(value, sort_keys=True, separators=(",", ":")).encode("utf-8")
            out.append(struct.pack("<BII", KIND_JSON, 1, len(blob)))
            out.append(blob)
            continue
        arr = np.asarray(value)
        if np.issubdtype(arr.dtype, np.integer):
            kind, arr = KIND_I64, arr.astype("<i8")
        else:
            kind, arr = KIND_F64, arr.astype("<f8")
        out.append(struct.pack("<BI", kind, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(out))


def read_records(path) -> Dict[str, Record]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    records: Dict[str, Record] = {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos : pos + klen].decode("utf-8")
            pos += klen
            kind, ndim = struct.unpack_from("<BI", raw, pos)
            pos += 5
            dims = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            if kind == KIND_JSON:
                records[name] = json.loads(raw[pos : pos + dims[0]].decode("utf-8"))
                pos += dims[0]
            elif kind in (KIND_F64, KIND_I64):
                dtype = "<f8" if kind == KIND_F64 else "<i8"
                size = int(np.prod(dims, dtype=np.int64))
                arr = np.frombuffer(raw, dtype=dtype, count=size, offset=pos).reshape(dims)
                records[name] = arr.astype(np.float64 if kind == KIND_F64 else np.int64)
                pos += 8 * size
            else:
                raise CheckpointError(f"{path}: unknown record kind {kind} for {name!r}")
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt record ({exc})") from exc
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return records


def state_records(state: TrainState, seed: int, info: Optional[dict] = None) -> Dict[str, Record]:
    """Flatten a :class:`~fskd.training.TrainState` into checkpoint records."""
    cfg = state.backbone.config
    opt = state.optimizer
    meta = {
        "backbone": {
            "block_channel_widths": list(cfg.block_channel_widths),
            "blocks_per_stage": cfg.blocks_per_stage,
            "embedding_dim": cfg.embedding_dim,
            "input_size": cfg.input_size,
            "in_channels": cfg.in_channels,
        },
        "backbone_seed": state.backbone.seed,
        "head": {"s": float(state.head.s), "m": float(state.head.m), "n_classes": state.head.n_classes},
        "optimizer": {
            "lr": float(opt.lr),
            "momentum": float(opt.state.momentum),
            "weight_decay": float(opt.state.weight_decay),
        },
        "step": int(state.step),
        "epoch": int(state.epoch),
        "rng": {"seed": int(seed), "epoch": int(state.epoch)},
        "info": info or {},
    }
    records: Dict[str, Record] = {"meta": meta, "head.W": state.head.W.data}
    records.update(state.backbone.state_arrays())
    records.update(opt.state_arrays())
    return records


def save_checkpoint(path, state: TrainState, seed: int, info: Optional[dict] = None) -> None:
    write_records(path, state_records(state, seed, info))


def load_checkpoint(path) -> Tuple[TrainState, dict]:
    """Rebuild a ``TrainState`` from ``path``; returns ``(state, meta)``."""
    records = read_records(path)
    meta = records.get("meta")
    if not isinstance(meta, dict):
        raise CheckpointError(f"{path}: missing meta record")
    try:
        b = meta["backbone"]
        cfg = BackboneConfig(
            tuple(b["block_channel_widths"]), b["blocks_per_stage"], b["embedding_dim"], b["input_size"],
            b["in_channels"],
        )
        backbone = build_backbone(cfg, meta["backbone_seed"])
        backbone.load_state_arrays(records)
        head = MarginHeadParams(Tensor(records["head.W"].copy(), requires_grad=True), meta["head"]["s"],
                                meta["head"]["m"])
        o = meta["optimizer"]
        opt = SGD(backbone.parameters() + [head.W], o["lr"], o["momentum"], o["weight_decay"])
        for i, v in enumerate(opt.state.velocity):
            v[...] = records[f"velocity.{i}"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: incomplete checkpoint ({exc})") from exc
    state = TrainState(backbone, head, opt, int(meta["step"]), int(meta["epoch"]))
    return state, meta
