"""Binary field snapshots.

Format (documented here, stable across versions of the same major):

    bytes 0-3   magic  b"DFLD"
    bytes 4-7   format version, uint32 little-endian (currently 1)
    byte  8     kind code, uint8: 0 scalar, 1 vector3, 2 sym_tensor3
    bytes 9-12  n_space, uint32 little-endian
    bytes 13-16 n_time, uint32 little-endian
    payload     float64 little-endian, C order of
                (component, x1, x2, x3, t) -- the time axis varies fastest

The payload length is fully determined by the header; a mismatch means a
truncated or corrupted file and is rejected.
"""

import struct

import numpy as np

from .errors import ConfigError
from .fields import Grid4, PeriodicField

MAGIC = b"DFLD"
VERSION = 1

_KIND_CODES = {"scalar": 0, "vector3": 1, "sym_tensor3": 2}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}
_COMPONENTS = {"scalar": 1, "vector3": 3, "sym_tensor3": 6}

_HEADER = struct.Struct("<4sIBII")


def write_snapshot(path, values, grid, kind):
    """Write one field to disk; values shape must match the declared kind."""
    if kind not in _KIND_CODES:
        raise ConfigError(f"unknown field kind {kind!r}")
    arr = np.ascontiguousarray(values, dtype=np.float64)
    ncomp = _COMPONENTS[kind]
    want = grid.shape if ncomp == 1 else (ncomp,) + grid.shape
    if arr.shape != want:
        raise ConfigError(
            f"snapshot shape {arr.shape} does not match {kind} on "
            f"{grid.n_space}^3 x {grid.n_time} (want {want})")
    header = _HEADER.pack(MAGIC, VERSION, _KIND_CODES[kind],
                          grid.n_space, grid.n_time)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))
    return path


def read_snapshot(path):
    """Read one field; returns (values, grid, kind)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ConfigError(f"{path}: truncated header")
    magic, version, code, n_space, n_time = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ConfigError(f"{path}: not a field snapshot (bad magic)")
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported snapshot version {version}")
    if code not in _CODE_KINDS:
        raise ConfigError(f"{path}: unknown kind code {code}")
    kind = _CODE_KINDS[code]
    grid = Grid4(n_space, n_time)
    ncomp = _COMPONENTS[kind]
    count = ncomp * n_space ** 3 * n_time
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * count:
        raise ConfigError(
            f"{path}: payload holds {len(payload)} bytes, header implies "
            f"{8 * count}")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    shape = grid.shape if ncomp == 1 else (ncomp,) + grid.shape
    return arr.reshape(shape), grid, kind


def write_field(path, field):
    return write_snapshot(path, field.values, field.grid, field.rank)


def read_field(path):
    values, grid, kind = read_snapshot(path)
    return PeriodicField(grid, kind, values, _validate=False)
