"""Binary weights file (``.ldnw``).

Layout, all integers little-endian::

    b"LDNW" | u32 version=1 | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 ndim | u32 dims[ndim] | f32 data

Tensors are written sorted by name, so two saves of the same graph are
byte-identical. Batch-norm running statistics travel with the parameters.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import WeightsFormatError

MAGIC = b"LDNW"
VERSION = 1


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_tensors(buf: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise WeightsFormatError(f"{source}: truncated while reading {what} at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise WeightsFormatError(f"{source}: bad magic, expected {MAGIC!r}")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise WeightsFormatError(f"{source}: unsupported version {version}, expected {VERSION}")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"name length of tensor {i}"))
        try:
            name = take(nlen, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise WeightsFormatError(f"{source}: tensor {i} name is not UTF-8") from None
        (ndim,) = struct.unpack("<B", take(1, f"ndim of {name!r}"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, f"dims of {name!r}"))
        n = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(take(4 * n, f"data of {name!r}"), dtype="<f4").reshape(dims)
        out[name] = data.astype(np.float32)
    if pos != len(buf):
        raise WeightsFormatError(f"{source}: {len(buf) - pos} trailing bytes after {count} tensors")
    return out


def save_weights(graph, path) -> None:
    Path(path).write_bytes(encode_tensors(graph.named_tensors()))


def load_weights(graph, path) -> None:
    """Load into ``graph``; validates everything before touching any tensor."""
    path = Path(path)
    tensors = decode_tensors(path.read_bytes(), str(path))
    params = graph.named_parameters()
    states = graph.bn_states()
    expected = graph.named_tensors()
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise WeightsFormatError(f"{path}: missing tensor {missing[0]!r}"
                                 + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise WeightsFormatError(f"{path}: unexpected tensor {extra[0]!r} not present in graph")
    for name, arr in expected.items():
        if tensors[name].shape != arr.shape:
            raise WeightsFormatError(
                f"{path}: shape mismatch for {name!r}: file {tensors[name].shape}, graph {arr.shape}")
    for name, p in params.items():
        p.data = tensors[name].astype(p.dtype)
    for key, st in states.items():
        st.running_mean = tensors[f"{key}.running_mean"].astype(st.running_mean.dtype)
        st.running_var = tensors[f"{key}.running_var"].astype(st.running_var.dtype)
        st.updated = True
