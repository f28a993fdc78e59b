"""Versioned binary checkpoint container.

Layout (all integers little-endian; documented in docs/formats.md):

    offset size  field
    0      8     magic  b"SPGRUCKP"
    8      4     format version (u32, currently 1)
    12     4     hidden size H (u32)
    16     4     input dim D (u32)
    20     8     family name, ASCII padded with NUL
    28     32    network-config fingerprint, ASCII hex
    60     4     number of named arrays (u32)

followed by one record per array:

    2            name length (u16)
    <len>        name, UTF-8
    1            ndim (u8)
    4 * ndim     dims (u32 each)
    8 * numel    float64 data, little-endian, C order

Array order is fixed (parameters in canonical order, then extras sorted by
name), so identical states serialize to identical bytes.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cell import NetworkConfig, SpGruParams, param_names
from .errors import FormatError

MAGIC = b"SPGRUCKP"
VERSION = 1
FAMILY = "gaussian"


def config_fingerprint(cfg: NetworkConfig) -> str:
    """32 hex chars identifying the network configuration."""
    canon = "|".join(
        f"{k}={getattr(cfg, k)!r}"
        for k in sorted(cfg.__dataclass_fields__)
    )
    return hashlib.sha256(canon.encode()).hexdigest()[:32]


@dataclass
class CheckpointHeader:
    version: int
    hidden: int
    input_dim: int
    family: str
    fingerprint: str


def _write_array(fh, name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr, dtype="<f8")
    nb = name.encode()
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<B", data.ndim))
    for d in data.shape:
        fh.write(struct.pack("<I", d))
    fh.write(data.tobytes())


def save_checkpoint(path, params: SpGruParams, cfg: NetworkConfig,
                    extras: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters (and optional optimizer extras) to path."""
    extras = extras or {}
    names = param_names()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, params.hidden, params.input_dim))
        fh.write(FAMILY.encode().ljust(8, b"\0"))
        fh.write(config_fingerprint(cfg).encode())
        fh.write(struct.pack("<I", len(names) + len(extras)))
        for name in names:
            _write_array(fh, name, params.arrays[name])
        for name in sorted(extras):
            _write_array(fh, name, extras[name])


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint while reading {what} at offset {fh.tell() - len(buf)}")
    return buf


def load_checkpoint(path) -> tuple[SpGruParams, CheckpointHeader, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (params, header, extra arrays)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at offset 0")
        version, hidden, input_dim = struct.unpack("<III", _read_exact(fh, 12, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        family = _read_exact(fh, 8, "family").rstrip(b"\0").decode()
        fingerprint = _read_exact(fh, 32, "fingerprint").decode()
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "array count"))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, nlen, "name").decode()
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            dims = [struct.unpack("<I", _read_exact(fh, 4, "dim"))[0] for _ in range(ndim)]
            numel = int(np.prod(dims)) if dims else 1
            raw = _read_exact(fh, 8 * numel, f"data of {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    known = set(param_names())
    params = SpGruParams(hidden, input_dim,
                         {k: v for k, v in arrays.items() if k in known})
    missing = known - set(params.arrays)
    if missing:
        raise FormatError(f"checkpoint missing arrays: {sorted(missing)}")
    extras = {k: v for k, v in arrays.items() if k not in known}
    header = CheckpointHeader(version, hidden, input_dim, family, fingerprint)
    return params, header, extras
