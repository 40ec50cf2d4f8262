"""Binary checkpoint format.

Layout, all integers little-endian::

    magic        4 bytes  b"HRN1"
    version      u32
    config_len   u32, then config_len bytes of UTF-8 ``key = value`` text
    n_tensors    u32, then n_tensors tensor records
    has_optim    u8
      if 1: step u64, beta1 f64, beta2 f64, eps f64, base_lr f64,
            n_tensors m-records, n_tensors v-records (same names and order)
    crc32        u32 over every preceding byte

A tensor record is ``name_len u16, name, dtype u8 (1=f32, 2=f64), ndim u8,
dims u32 * ndim, raw little-endian scalars``.
"""

from __future__ import annotations

import io
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ConfigError, RunConfig, parse_config_text
from .model import HRAN

MAGIC = b"HRN1"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class CheckpointError(Exception):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class NameMismatchError(CheckpointError):
    pass


@dataclass
class OptimState:
    """Adam moments, step counter and hyperparameters."""

    m: "OrderedDict[str, np.ndarray]"
    v: "OrderedDict[str, np.ndarray]"
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    base_lr: float = 1e-3

    @classmethod
    def zeros_like(cls, params, **hyper) -> "OptimState":
        return cls(OrderedDict((k, np.zeros_like(p)) for k, p in params.items()),
                   OrderedDict((k, np.zeros_like(p)) for k, p in params.items()), **hyper)


def _write_tensor(buf, name: str, arr: np.ndarray):
    arr = np.asarray(arr)
    le = arr.dtype.newbyteorder("<")
    if le not in DTYPE_CODES:
        raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<BB", DTYPE_CODES[le], arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype=le).tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ChecksumError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self):
        (nlen,) = self.unpack("<H")
        name = self.take(nlen).decode("utf-8")
        code, ndim = self.unpack("<BB")
        if code not in CODE_DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        dims = self.unpack(f"<{ndim}I") if ndim else ()
        dtype = CODE_DTYPES[code]
        count = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype).reshape(dims)
        return name, arr.astype(dtype.newbyteorder("="))


def dumps_checkpoint(model: HRAN, optim: Optional[OptimState] = None, run: Optional[RunConfig] = None) -> bytes:
    run = run or RunConfig(model=model.config)
    if run.model != model.config:
        raise CheckpointError("run config does not describe this model")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    text = run.dumps().encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(model.params)))
    for name, arr in model.params.items():
        _write_tensor(buf, name, arr)
    buf.write(struct.pack("<B", optim is not None))
    if optim is not None:
        buf.write(struct.pack("<Q4d", optim.t, optim.beta1, optim.beta2, optim.eps, optim.base_lr))
        for name in model.params:
            _write_tensor(buf, name, optim.m[name])
        for name in model.params:
            _write_tensor(buf, name, optim.v[name])
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, model: HRAN, optim: Optional[OptimState] = None, run: Optional[RunConfig] = None) -> None:
    data = dumps_checkpoint(model, optim, run)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def _read_section(r: _Reader, n: int, expected: Optional[list], what: str) -> "OrderedDict[str, np.ndarray]":
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(n):
        name, arr = r.tensor()
        if name in out:
            raise NameMismatchError(f"{what}: duplicate tensor {name}")
        out[name] = arr
    if expected is None:
        return out
    missing = sorted(set(expected) - set(out))
    unknown = sorted(set(out) - set(expected))
    if missing or unknown:
        raise NameMismatchError(f"{what}: missing {missing[:5]}, unknown {unknown[:5]}")
    return out


def loads_checkpoint(data: bytes):
    """Parse checkpoint bytes into ``(model, optim or None, RunConfig)``."""
    if len(data) < 12 or data[:4] != MAGIC:
        if len(data) >= 4 and data[:4] != MAGIC:
            raise CheckpointError("not an HRN1 checkpoint (bad magic)")
        raise ChecksumError("checkpoint is truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checkpoint checksum mismatch (corrupt or truncated file)")
    r = _Reader(body)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads {VERSION}")
    (clen,) = r.unpack("<I")
    try:
        run = RunConfig.from_mapping(parse_config_text(r.take(clen).decode("utf-8"), "<checkpoint>"), "<checkpoint>")
    except ConfigError as exc:
        raise CheckpointError(f"embedded config is invalid: {exc}") from None
    (n,) = r.unpack("<I")
    params = _read_section(r, n, None, "parameters")
    try:
        model = HRAN(run.model, params=params)
    except (KeyError, ValueError) as exc:
        raise NameMismatchError(f"parameters do not match the embedded config: {exc}") from None
    names = list(model.params)
    (has_optim,) = r.unpack("<B")
    optim = None
    if has_optim:
        t, b1, b2, eps, lr = r.unpack("<Q4d")
        m = _read_section(r, n, names, "adam m")
        v = _read_section(r, n, names, "adam v")
        optim = OptimState(OrderedDict((k, m[k]) for k in names), OrderedDict((k, v[k]) for k in names),
                           t, b1, b2, eps, lr)
    if r.pos != len(body):
        raise CheckpointError(f"{len(body) - r.pos} trailing bytes after checkpoint payload")
    return model, optim, run


def load_checkpoint(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    return loads_checkpoint(data)
