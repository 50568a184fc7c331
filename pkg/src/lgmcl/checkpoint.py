"""Binary named-parameter store.

Layout (little-endian):
    b"LGMC" | u32 version | u16 len + config hash (utf-8) | u32 len + metadata JSON
    u32 n_blocks, then per block: u16 len + name | u8 ndim | u64 dims... | fp64 payload
    b"END."
Optimizer moments are stored as ordinary blocks under ``optim.m.`` / ``optim.v.``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.nn import Module
from .autodiff.optim import Adam
from .errors import CheckpointError, ShapeError

MAGIC = b"LGMC"
TRAILER = b"END."
FORMAT_VERSION = 1
_M, _V = "optim.m.", "optim.v."


@dataclass
class Checkpoint:
    config_hash: str
    params: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    optimizer: dict | None = None  # {"hyper": {...}, "m": {name: arr}, "v": {name: arr}}

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}


def checkpoint_from_model(model: Module, config_hash: str, optimizer: Adam | None = None, metadata: dict | None = None) -> Checkpoint:
    params = model.state_dict()
    opt = None
    if optimizer is not None and optimizer.state.m:
        names = [n for n, _ in model.named_parameters()]
        by_id = {id(p): n for n, p in model.named_parameters()}
        order = [by_id.get(id(p)) for p in optimizer.params]
        if None in order or len(order) != len(names):
            raise CheckpointError("optimizer parameters do not match the model")
        s = optimizer.state
        opt = {
            "hyper": {"lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps, "step": s.step},
            "m": {n: a.copy() for n, a in zip(order, s.m)},
            "v": {n: a.copy() for n, a in zip(order, s.v)},
        }
    return Checkpoint(config_hash, params, dict(metadata or {}), opt)


def _block(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = dict(ckpt.metadata)
    blocks = dict(sorted(ckpt.params.items()))
    if ckpt.optimizer is not None:
        meta["optimizer"] = ckpt.optimizer["hyper"]
        for n, a in sorted(ckpt.optimizer["m"].items()):
            blocks[_M + n] = a
        for n, a in sorted(ckpt.optimizer["v"].items()):
            blocks[_V + n] = a
    h = ckpt.config_hash.encode("utf-8")
    m = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<H", len(h)), h, struct.pack("<I", len(m)), m]
    parts.append(struct.pack("<I", len(blocks)))
    parts += [_block(n, a) for n, a in blocks.items()]
    parts.append(TRAILER)
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, data: bytes, source: str) -> None:
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: corrupt checkpoint (truncated at byte {self.pos})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    """Parse the whole payload; nothing is returned unless every block is valid."""
    r = _Reader(data, source)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: format version {version}, expected {FORMAT_VERSION}")
    (hlen,) = r.unpack("<H")
    try:
        config_hash = r.take(hlen).decode("utf-8")
        (mlen,) = r.unpack("<I")
        meta = json.loads(r.take(mlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt header: {exc}") from exc
    (n_blocks,) = r.unpack("<I")
    blocks: dict[str, np.ndarray] = {}
    for _ in range(n_blocks):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        if name in blocks:
            raise CheckpointError(f"{source}: duplicate block {name!r}")
        blocks[name] = arr
    if r.take(len(TRAILER)) != TRAILER or r.pos != len(data):
        raise CheckpointError(f"{source}: corrupt checkpoint (bad trailer)")
    hyper = meta.pop("optimizer", None)
    params = {k: v for k, v in blocks.items() if not k.startswith(("optim.m.", "optim.v."))}
    opt = None
    if hyper is not None:
        opt = {
            "hyper": hyper,
            "m": {k[len(_M):]: v for k, v in blocks.items() if k.startswith(_M)},
            "v": {k[len(_V):]: v for k, v in blocks.items() if k.startswith(_V)},
        }
    return Checkpoint(config_hash, params, meta, opt)


def load_checkpoint(path: str | Path, expected_hash: str | None = None, allow_hash_mismatch: bool = False) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    ckpt = decode_checkpoint(data, str(path))
    if expected_hash is not None and ckpt.config_hash != expected_hash and not allow_hash_mismatch:
        raise CheckpointError(
            f"{path}: config hash {ckpt.config_hash[:12]} does not match current config {expected_hash[:12]}"
        )
    return ckpt


def apply_checkpoint(model: Module, ckpt: Checkpoint, prefixes: tuple[str, ...] | None = None, strict: bool = True) -> list[str]:
    """Load all blocks, or only those under ``prefixes`` (partial load)."""
    state = ckpt.params if prefixes is None else {k: v for k, v in ckpt.params.items() if k.startswith(prefixes)}
    if prefixes is not None and not state:
        raise CheckpointError(f"checkpoint has no blocks under {prefixes}")
    try:
        return model.load_state_dict(state, strict=strict and prefixes is None)
    except KeyError as exc:
        raise CheckpointError(str(exc.args[0])) from exc
    except ShapeError as exc:
        raise CheckpointError(str(exc)) from exc


def restore_optimizer(optimizer: Adam, model: Module, ckpt: Checkpoint) -> None:
    if ckpt.optimizer is None:
        raise CheckpointError("checkpoint carries no optimizer state")
    by_id = {id(p): n for n, p in model.named_parameters()}
    names = [by_id[id(p)] for p in optimizer.params]
    m, v = ckpt.optimizer["m"], ckpt.optimizer["v"]
    for n in names:
        if n not in m or n not in v:
            raise CheckpointError(f"optimizer state lacks {n!r}")
    s, hyper = optimizer.state, ckpt.optimizer["hyper"]
    s.lr, s.beta1, s.beta2, s.eps, s.step = hyper["lr"], hyper["beta1"], hyper["beta2"], hyper["eps"], int(hyper["step"])
    s.m = [m[n].copy() for n in names]
    s.v = [v[n].copy() for n in names]
