"""Binary parameter checkpoints.

Layout (all integers little-endian):
    magic "VONC" | version u32 | count u32
    then ``count`` value records, one per parameter, each:
        name_len u32 | name utf-8 | rank u32 | dims u32[rank] | payload f64[]
    then, in the same record layout, the optimizer moments for each
    parameter in order (names suffixed ":m1" / ":m2"), and one trailing
    record "adam:steps" holding the per-parameter step counters.
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Parameter

MAGIC = b"VONC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_record(f, name, arr):
    raw = name.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)
    arr = np.asarray(arr, dtype=np.float64)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.astype("<f8").tobytes(order="C"))


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what} at offset {f.tell()}")
    return buf


def _read_record(f):
    (name_len,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
    name = _read_exact(f, name_len, "name").decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
    dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
    n = int(np.prod(dims)) if rank else 1
    payload = np.frombuffer(_read_exact(f, 8 * n, f"payload of {name!r}"), dtype="<f8")
    return name, payload.reshape(dims).astype(np.float64)


def save_params(path, params):
    """Write parameters (values + Adam moments + step counters)."""
    params = list(params)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(params)))
        for p in params:
            _write_record(f, p.name, p.value)
        for p in params:
            _write_record(f, p.name + ":m1", p.m1)
            _write_record(f, p.name + ":m2", p.m2)
        _write_record(f, "adam:steps", np.array([p.step for p in params], dtype=np.float64))


def load_params(path):
    """Read a checkpoint back into fresh Parameter objects (insertion order)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r} at offset 0 (expected {MAGIC!r})")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", _read_exact(f, 4, "count"))
        params = []
        for _ in range(count):
            name, value = _read_record(f)
            params.append(Parameter(name, value))
        for p in params:
            name, m1 = _read_record(f)
            if name != p.name + ":m1":
                raise CheckpointError(f"moment record {name!r} does not match parameter {p.name!r}")
            name, m2 = _read_record(f)
            if name != p.name + ":m2":
                raise CheckpointError(f"moment record {name!r} does not match parameter {p.name!r}")
            if m1.shape != p.value.shape or m2.shape != p.value.shape:
                raise CheckpointError(f"moment shape mismatch for parameter {p.name!r}")
            p.m1, p.m2 = m1, m2
        name, steps = _read_record(f)
        if name != "adam:steps" or steps.size != count:
            raise CheckpointError("missing or malformed step-counter record")
        for p, s in zip(params, steps):
            p.step = int(s)
    return params
