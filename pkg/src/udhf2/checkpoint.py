"""Binary parameter snapshots with a fixed, versioned on-disk layout.

Layout (all integers little-endian): 4-byte magic "UDHF", u16 format version,
u32 entry count, then per entry a u16 name length, the UTF-8 name, a u8 dtype
code (0 = float32, 1 = float64), a u8 rank, u32 dimensions, and the row-major
IEEE-754 payload. Saving and loading round-trip bit-identically.
"""

import struct

import numpy as np

from .errors import CheckpointError

__all__ = ["MAGIC", "VERSION", "apply_state", "load_checkpoint",
           "save_checkpoint", "state_of"]

MAGIC = b"UDHF"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def state_of(module):
    """Name-to-array snapshot of a module's parameters, registration order."""
    return {name: p.data for name, p in module.named_parameters()}


def save_checkpoint(path, state):
    """Write a name-to-array mapping; iteration order is preserved on disk."""
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr)
        code = _DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(
                f"parameter {name!r} has unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", code, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).astype(
            _CODE_DTYPES[code], copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.offset = 0

    def take(self, n, what):
        if self.offset + n > len(self.blob):
            raise CheckpointError(
                f"checkpoint truncated at byte {self.offset}: "
                f"needed {n} more bytes for {what}")
        out = self.blob[self.offset:self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path):
    """Read a snapshot back into an ordered name-to-array mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(
            f"bad checkpoint magic {magic!r}; expected {MAGIC.decode()!r}")
    version, count = reader.unpack("<HI", "header")
    if version != VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} not supported "
            f"(expected {VERSION})")
    state = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H", "name length")
        name = reader.take(name_len, "name").decode("utf-8")
        code, rank = reader.unpack("<BB", f"entry header of {name!r}")
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for {name!r}")
        shape = reader.unpack(f"<{rank}I", f"dimensions of {name!r}")
        dtype = _CODE_DTYPES[code]
        payload = reader.take(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize,
                              f"payload of {name!r}")
        state[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if reader.offset != len(blob):
        raise CheckpointError(
            f"checkpoint has {len(blob) - reader.offset} trailing bytes "
            f"at byte {reader.offset}")
    return state


def apply_state(module, state):
    """Copy a loaded snapshot into a module's parameters, names must match."""
    params = dict(module.named_parameters())
    missing = sorted(set(state) - set(params))
    unexpected = sorted(set(params) - set(state))
    if missing or unexpected:
        raise CheckpointError(
            "checkpoint/model parameter names differ; "
            f"not in model: {missing}; not in checkpoint: {unexpected}")
    for name, arr in state.items():
        p = params[name]
        if p.data.shape != arr.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: model {p.data.shape}, "
                f"checkpoint {arr.shape}")
        p.data = arr.astype(p.data.dtype, copy=True)
