"""Named parameter trees, deterministic init, and binary checkpoints.

Checkpoint layout (version 1, little-endian):
    magic  b"HIRI"
    u32    format version
    repeated records until 4 bytes remain:
        u32     name length
        bytes   name (utf-8)
        u32     rank
        u64*rank extents
        f64*prod(extents) payload
    u32    CRC32 over all payload bytes, in record order
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .engine import Tensor
from .errors import ConfigError

MAGIC = b"HIRI"
VERSION = 1


class ParamTree:
    """Ordered path -> Tensor map; the unit of serialization and averaging.

    Holds both trainable parameters and persistent buffers (running BN
    statistics); ``trainable`` marks which entries carry gradients.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, path: str, tensor: Tensor, trainable: bool):
        if path in self._entries:
            raise ConfigError(f"duplicate parameter path {path!r}")
        self._entries[path] = tensor
        self._trainable[path] = trainable

    def __len__(self):
        return len(self._entries)

    def __contains__(self, path):
        return path in self._entries

    def __getitem__(self, path) -> Tensor:
        return self._entries[path]

    def paths(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def is_trainable(self, path: str) -> bool:
        return self._trainable[path]

    def trainable_items(self):
        return [(p, t) for p, t in self._entries.items() if self._trainable[p]]

    def total_params(self) -> int:
        """Learnable parameter count (running statistics excluded)."""
        return sum(t.size for _, t in self.trainable_items())

    def clone(self) -> "ParamTree":
        out = ParamTree()
        for path, t in self._entries.items():
            c = Tensor(t.data.copy())
            out.add(path, c, self._trainable[path])
        return out

    def copy_into(self, other: "ParamTree"):
        """Copy values into an isomorphic tree, preserving array identity."""
        if other.paths() != self.paths():
            raise ConfigError("parameter trees are not isomorphic")
        for path, t in self._entries.items():
            dst = other[path]
            if dst.shape != t.shape:
                raise ConfigError(f"shape mismatch at {path}: {dst.shape} vs {t.shape}")
            np.copyto(dst.data, t.data)

    def allclose(self, other: "ParamTree", atol=0.0) -> bool:
        if other.paths() != self.paths():
            return False
        if atol == 0.0:
            return all(np.array_equal(t.data, other[p].data) for p, t in self.items())
        return all(np.allclose(t.data, other[p].data, atol=atol) for p, t in self.items())


def truncated_normal(rng: np.random.Generator, shape, std=0.02, clip=2.0):
    """Normal(0, std) with rejection outside +-clip standard deviations."""
    x = rng.standard_normal(shape) * std
    bound = clip * std
    bad = np.abs(x) > bound
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(x) > bound
    return x


def init_tree(tree: ParamTree, seed: int):
    """Deterministic init: truncated normal for weights, affine identities."""
    rng = np.random.default_rng(seed)
    for path, t in tree.items():
        leaf = path.rsplit(".", 1)[-1]
        if leaf == "weight":
            t.data[...] = truncated_normal(rng, t.shape)
        elif leaf in ("gamma", "running_var"):
            t.data[...] = 1.0
        else:   # bias, beta, running_mean
            t.data[...] = 0.0


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

def save_checkpoint(tree: ParamTree, path: str):
    crc = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, tensor in tree.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", tensor.ndim))
            for extent in tensor.shape:
                fh.write(struct.pack("<Q", extent))
            payload = np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()
            crc = zlib.crc32(payload, crc)
            fh.write(payload)
        fh.write(struct.pack("<I", crc & 0xFFFFFFFF))


def load_checkpoint(path: str) -> ParamTree:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ConfigError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    tree = ParamTree()
    off = 8
    end = len(blob) - 4
    crc = 0
    while off < end:
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        extents = struct.unpack_from(f"<{rank}Q", blob, off) if rank else ()
        off += 8 * rank
        count = int(np.prod(extents)) if rank else 1
        nbytes = 8 * count
        payload = blob[off:off + nbytes]
        off += nbytes
        crc = zlib.crc32(payload, crc)
        data = np.frombuffer(payload, dtype="<f8").reshape(extents).copy()
        tree.add(name, Tensor(data), trainable=not name.endswith(
            ("running_mean", "running_var")))
    (stored,) = struct.unpack_from("<I", blob, end)
    if stored != (crc & 0xFFFFFFFF):
        raise ConfigError(f"{path}: payload CRC mismatch")
    return tree
