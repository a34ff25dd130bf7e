"""Versioned binary checkpoints for masked Bayesian nets.

Layout (all integers little-endian; full byte map in the README):

    offset 0   8 bytes   magic b"SSVICKPT"
           8   u16       format version (currently 1)
          10   u8        task tag (0 classification, 1 regression)
          11   u64       global step
          19   u32       rng-state JSON length L, then L bytes of JSON
               u32       number of layers
    per layer:
               u32 out, u32 in
               out*in f64   mu  (row-major)
               out*in f64   sigma
               out    f64   bias
               ceil(out*in/8) bytes  mask bits (numpy packbits order)

Loading validates the magic, version, and exact byte count, and raises
``CheckpointError`` naming the offset otherwise.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .layers import BayesLinear, VariationalNet

MAGIC = b"SSVICKPT"
VERSION = 1

_TASKS = ("classification", "regression")


def save_checkpoint(
    path: str | Path,
    net: VariationalNet,
    step: int,
    rng_state: dict | None = None,
) -> None:
    """Write atomically (tmp file + rename)."""
    chunks = [MAGIC, struct.pack("<HBQ", VERSION, _TASKS.index(net.task), step)]
    state_blob = json.dumps(rng_state or {}, sort_keys=True).encode()
    chunks.append(struct.pack("<I", len(state_blob)))
    chunks.append(state_blob)
    chunks.append(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        chunks.append(struct.pack("<II", layer.out_dim, layer.in_dim))
        chunks.append(np.ascontiguousarray(layer.mu, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(layer.sigma, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
        chunks.append(np.packbits(layer.mask.ravel()).tobytes())
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(
                f"{self.path}: truncated at offset {len(self.raw)} while reading "
                f"{what} (need {self.pos + n} bytes)"
            )
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path: str | Path) -> tuple[VariationalNet, int, dict]:
    """Returns (net, step, rng_state)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such checkpoint: {path}")
    r = _Reader(path.read_bytes(), path)

    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    version, task_tag, step = r.unpack("<HBQ", "header")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}, expected {VERSION}")
    if task_tag >= len(_TASKS):
        raise CheckpointError(f"{path}: unknown task tag {task_tag}")

    (state_len,) = r.unpack("<I", "rng-state length")
    state_blob = r.take(state_len, "rng state")
    try:
        rng_state = json.loads(state_blob.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt rng-state JSON: {exc}") from exc

    (n_layers,) = r.unpack("<I", "layer count")
    layers = []
    for li in range(n_layers):
        out_d, in_d = r.unpack("<II", f"layer {li} dims")
        if out_d == 0 or in_d == 0 or out_d * in_d > 10**9:
            raise CheckpointError(f"{path}: implausible layer {li} dims {out_d}x{in_d}")
        count = out_d * in_d
        mu = np.frombuffer(r.take(8 * count, f"layer {li} mu"), dtype="<f8").reshape(out_d, in_d)
        sigma = np.frombuffer(r.take(8 * count, f"layer {li} sigma"), dtype="<f8").reshape(out_d, in_d)
        bias = np.frombuffer(r.take(8 * out_d, f"layer {li} bias"), dtype="<f8")
        mask_bytes = r.take((count + 7) // 8, f"layer {li} mask")
        mask = np.unpackbits(np.frombuffer(mask_bytes, dtype=np.uint8))[:count]
        layers.append(BayesLinear(
            mu=mu.copy(), sigma=sigma.copy(), bias=bias.copy(),
            mask=mask.reshape(out_d, in_d).astype(bool),
        ))
    if r.pos != len(r.raw):
        raise CheckpointError(
            f"{path}: {len(r.raw) - r.pos} trailing bytes after offset {r.pos}"
        )
    return VariationalNet(layers, task=_TASKS[task_tag]), step, rng_state
