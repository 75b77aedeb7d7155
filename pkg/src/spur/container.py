"""Single binary tensor container used for feature and token files.

Layout, all little-endian: magic "SPURTNSR" (8 bytes) | u32 version=1 |
u8 dtype (0 = f32) | u8 ndim | u64 dims[ndim] | 64-byte zero-padded
provenance string (config hash) | row-major f32 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

TENSOR_MAGIC = b"SPURTNSR"
TENSOR_VERSION = 1
DTYPE_F32 = 0
PROVENANCE_BYTES = 64


class ContainerFormatError(ValidationError):
    """Tensor container has a bad magic, version, or inconsistent payload."""


def write_tensor(path, values: np.ndarray, provenance: str = "") -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    prov = provenance.encode("utf-8")
    if len(prov) > PROVENANCE_BYTES:
        raise ContainerFormatError(
            f"provenance string is {len(prov)} bytes, limit {PROVENANCE_BYTES}"
        )
    header = (
        TENSOR_MAGIC
        + struct.pack("<IBB", TENSOR_VERSION, DTYPE_F32, values.ndim)
        + struct.pack(f"<{values.ndim}Q", *values.shape)
        + prov.ljust(PROVENANCE_BYTES, b"\0")
    )
    Path(path).write_bytes(header + values.tobytes(order="C"))


def read_header(path) -> dict:
    """Parse everything before the payload; returns dims, dtype, provenance."""
    raw = Path(path).read_bytes()
    if len(raw) < 14:
        raise ContainerFormatError(f"{path}: truncated before header")
    if raw[:8] != TENSOR_MAGIC:
        raise ContainerFormatError(f"{path}: bad magic {raw[:8]!r}, expected {TENSOR_MAGIC!r}")
    version, dtype, ndim = struct.unpack_from("<IBB", raw, 8)
    if version != TENSOR_VERSION:
        raise ContainerFormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise ContainerFormatError(f"{path}: unsupported dtype code {dtype}")
    pos = 14
    try:
        dims = struct.unpack_from(f"<{ndim}Q", raw, pos)
    except struct.error:
        raise ContainerFormatError(f"{path}: truncated dimension list")
    pos += 8 * ndim
    prov_raw = raw[pos : pos + PROVENANCE_BYTES]
    if len(prov_raw) < PROVENANCE_BYTES:
        raise ContainerFormatError(f"{path}: truncated provenance field")
    return {
        "version": version,
        "dtype": "f32",
        "dims": tuple(int(d) for d in dims),
        "provenance": prov_raw.rstrip(b"\0").decode("utf-8", errors="replace"),
        "payload_offset": pos + PROVENANCE_BYTES,
    }


def read_tensor(path) -> tuple[np.ndarray, str]:
    """Read payload and provenance; the payload length must match the dims."""
    header = read_header(path)
    raw = Path(path).read_bytes()
    dims = header["dims"]
    n_values = int(np.prod(dims, dtype=np.int64)) if dims else 1
    payload = raw[header["payload_offset"] :]
    if len(payload) != 4 * n_values:
        raise ContainerFormatError(
            f"{path}: dims {dims} imply {4 * n_values} payload bytes, found {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy(), header["provenance"]
