"""Binary dataset/checkpoint/mask files and CSV report writers.

All binary formats are little-endian and start with an 8-byte magic followed
by a u32 format version. Readers reject unknown magics and versions.

Dataset (``FDDCSI01``)::

    magic | u32 version | u32 Na | u32 Nc | u32 count
    count x ( f32 PG_dB | Na*Nc x (f32 re, f32 im), antenna-major, carrier fastest )

Checkpoint (``FDDNN001``)::

    magic | u32 version | u32 n_layers
    n_layers x ( u32 kind | u32 in | u32 out | u32 dilation | u32 has_bias )
    f32 parameters, layer by layer (conv: w (3,3,in,out), b; bn: gamma, beta, mean, var)
    mask block | u32 meta length | UTF-8 JSON metadata

Mask (``FDDMSK01``)::

    magic | u32 version | mask block
    mask block = u32 Na | u32 Nc | f64 eta | packed bits of the (Na, Nc) pattern
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .channel import CsiSet
from .errors import CorruptionError, FormatError
from .masking import Mask
from .nn.model import LayerSpec, ModelParams

DATASET_MAGIC = b"FDDCSI01"
CHECKPOINT_MAGIC = b"FDDNN001"
MASK_MAGIC = b"FDDMSK01"
VERSION = 1

_KINDS = ["conv_t", "batch_norm", "relu", "residual_merge"]
_PARAM_ORDER = {"conv_t": ("w", "b"), "batch_norm": ("gamma", "beta", "running_mean", "running_var")}


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptionError(f"{self.what} truncated at byte {len(self.data)} (needed {self.pos + n})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def f32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise CorruptionError(f"{self.what} has {len(self.data) - self.pos} trailing bytes")


def _header(r: _Reader, magic: bytes) -> None:
    got = r.data[:8]
    if len(got) < 8 or got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    r.pos = 8
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported {r.what} version {version}")


# -- datasets ---------------------------------------------------------------

def dataset_bytes(data: CsiSet) -> bytes:
    mats = np.asarray(data.matrices)
    n = len(mats)
    na, nc = (mats.shape[1], mats.shape[2]) if n else (0, 0)
    body = np.empty((n, 1 + 2 * na * nc), dtype="<f4")
    body[:, 0] = np.asarray(data.path_gain_db, dtype=np.float64)
    if n:
        ri = np.stack([mats.real, mats.imag], axis=-1).reshape(n, -1)
        body[:, 1:] = ri
    return DATASET_MAGIC + struct.pack("<4I", VERSION, na, nc, n) + body.tobytes()


def write_dataset(path, data: CsiSet) -> None:
    Path(path).write_bytes(dataset_bytes(data))


def read_dataset(path, band: str = "UL", tag: str = "") -> CsiSet:
    """Load a dataset file. Values come back as the stored 32-bit numbers, widened exactly."""
    r = _Reader(Path(path).read_bytes(), "dataset")
    _header(r, DATASET_MAGIC)
    na, nc, n = r.u32(3)
    per = 1 + 2 * na * nc
    body = r.f32(n * per).reshape(n, per)
    r.done()
    mats = body[:, 1:].astype(np.float64).reshape(n, na, nc, 2)
    return CsiSet(mats[..., 0] + 1j * mats[..., 1], body[:, 0].astype(np.float64), tag, band)


def quantize(data: CsiSet) -> CsiSet:
    """The values a dataset file would store (32-bit), as a new set."""
    m = np.asarray(data.matrices)
    re = m.real.astype(np.float32).astype(np.float64)
    im = m.imag.astype(np.float32).astype(np.float64)
    pg = np.asarray(data.path_gain_db).astype(np.float32).astype(np.float64)
    return CsiSet(re + 1j * im, pg, data.tag, data.band)


# -- masks ------------------------------------------------------------------

def _mask_block(mask: Mask) -> bytes:
    na, nc = mask.shape
    return struct.pack("<2Id", na, nc, float(mask.eta)) + np.packbits(mask.pattern.ravel()).tobytes()


def _read_mask_block(r: _Reader) -> Mask:
    na, nc = r.u32(2)
    (eta,) = struct.unpack("<d", r.take(8))
    nbits = na * nc
    bits = np.unpackbits(np.frombuffer(r.take((nbits + 7) // 8), np.uint8))[:nbits]
    try:
        return Mask(bits.reshape(na, nc).astype(bool), eta)
    except ValueError as exc:
        raise CorruptionError(f"invalid mask: {exc}") from exc


def write_mask(path, mask: Mask) -> None:
    Path(path).write_bytes(MASK_MAGIC + struct.pack("<I", VERSION) + _mask_block(mask))


def read_mask(path) -> Mask:
    r = _Reader(Path(path).read_bytes(), "mask")
    _header(r, MASK_MAGIC)
    mask = _read_mask_block(r)
    r.done()
    return mask


# -- checkpoints ------------------------------------------------------------

def _jsonable(meta: dict) -> dict:
    out = {}
    for k, v in meta.items():
        if k == "mask":
            continue
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, np.generic):
            v = v.item()
        out[k] = v
    return out


def checkpoint_bytes(model: ModelParams, mask: Mask | None = None) -> bytes:
    mask = mask if mask is not None else model.meta.get("mask")
    if mask is None:
        raise ValueError("a checkpoint needs the model's feedback mask")
    parts = [CHECKPOINT_MAGIC, struct.pack("<2I", VERSION, len(model.specs))]
    for s in model.specs:
        parts.append(struct.pack("<5I", _KINDS.index(s.kind), s.in_channels, s.out_channels, s.dilation,
                                 int(s.has_bias)))
    for s, p in zip(model.specs, model.params):
        for name in _PARAM_ORDER.get(s.kind, ()):
            parts.append(np.ascontiguousarray(p[name], dtype="<f4").tobytes())
    parts.append(_mask_block(mask))
    meta = dict(_jsonable(model.meta), bn_momentum=model.bn_momentum, bn_eps=model.bn_eps)
    blob = json.dumps(meta, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(parts)


def save_checkpoint(path, model: ModelParams, mask: Mask | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, mask))


def load_checkpoint(path) -> ModelParams:
    r = _Reader(Path(path).read_bytes(), "checkpoint")
    _header(r, CHECKPOINT_MAGIC)
    n_layers = r.u32()
    specs = []
    for _ in range(n_layers):
        kind, cin, cout, dil, bias = r.u32(5)
        if kind >= len(_KINDS):
            raise FormatError(f"unknown layer kind code {kind}")
        specs.append(LayerSpec(_KINDS[kind], cin, cout, dil, bool(bias)))
    params = []
    for s in specs:
        p = {}
        if s.kind == "conv_t":
            p["w"] = r.f32(9 * s.in_channels * s.out_channels).reshape(3, 3, s.in_channels, s.out_channels)
            p["b"] = r.f32(s.out_channels)
        elif s.kind == "batch_norm":
            for name in _PARAM_ORDER["batch_norm"]:
                p[name] = r.f32(s.out_channels)
        params.append(p)
    mask = _read_mask_block(r)
    size = r.u32()
    try:
        meta = json.loads(r.take(size).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"checkpoint metadata unreadable: {exc}") from exc
    r.done()
    momentum = meta.pop("bn_momentum")
    eps = meta.pop("bn_eps")
    meta["mask"] = mask
    return ModelParams(specs, params, momentum, eps, meta)


# -- CSV reports ------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    """Write rows with round-trippable float formatting (same numbers, same bytes)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
