"""Binary grid dumps and key=value sidecar metadata.

Layout (all little-endian)::

    b"MFHJ" | version u32 | d u32 | N u32 | M u32 | has_z u32 | [b"CPLX"] | payload f64...

Real payloads hold ``M**(d*(N+has_z))`` values in row-major order.  Complex
payloads are tagged with ``b"CPLX"`` and store interleaved (re, im) pairs.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .torus import GridSpec, TorusGridFn

MAGIC = b"MFHJ"
VERSION = 1
CPLX = b"CPLX"
_HEADER = struct.Struct("<4sIIIII")


def _payload_count(d: int, N: int, M: int, has_z: int) -> int:
    return M ** (d * (N + has_z))


def dumps(f: TorusGridFn) -> bytes:
    s = f.spec
    head = _HEADER.pack(MAGIC, VERSION, s.d, s.N, s.M, int(s.has_z))
    return head + f.flat.astype("<f8").tobytes()


def dumps_complex(values: np.ndarray, d: int, N: int, M: int, has_z: bool = False) -> bytes:
    vals = np.asarray(values, dtype=complex).reshape(-1)
    if vals.size != _payload_count(d, N, M, int(has_z)):
        raise InvalidInputError("complex payload size does not match header")
    inter = np.empty(2 * vals.size, dtype="<f8")
    inter[0::2] = vals.real
    inter[1::2] = vals.imag
    return _HEADER.pack(MAGIC, VERSION, d, N, M, int(has_z)) + CPLX + inter.tobytes()


def loads(data: bytes) -> tuple[dict, np.ndarray]:
    """Parse a dump; returns ``(header, values)`` with complex values if tagged."""
    if len(data) < _HEADER.size:
        raise InvalidInputError("truncated dump header")
    magic, version, d, N, M, has_z = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise InvalidInputError(f"bad magic {magic!r}")
    if version != VERSION:
        raise InvalidInputError(f"unsupported dump version {version}")
    header = {"version": version, "d": d, "N": N, "M": M, "has_z": bool(has_z)}
    count = _payload_count(d, N, M, has_z)
    body = data[_HEADER.size:]
    if len(body) == 8 * count:
        header["complex"] = False
        return header, np.frombuffer(body, dtype="<f8").astype(float)
    if body[:4] == CPLX and len(body) == 4 + 16 * count:
        inter = np.frombuffer(body[4:], dtype="<f8")
        header["complex"] = True
        return header, inter[0::2] + 1j * inter[1::2]
    raise InvalidInputError("payload length does not match header")


def write_grid(path, f: TorusGridFn) -> None:
    Path(path).write_bytes(dumps(f))


def read_grid(path) -> TorusGridFn:
    header, vals = loads(Path(path).read_bytes())
    if header["complex"]:
        raise InvalidInputError(f"{path} holds a complex payload, not a grid function")
    spec = GridSpec(header["d"], header["N"], header["M"], header["has_z"])
    return TorusGridFn(spec, vals)


def write_meta(path, meta: dict) -> None:
    lines = [f"{k}={v}" for k, v in meta.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    return out
