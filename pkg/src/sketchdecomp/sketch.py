"""Count-Min sketch with a seeded, reproducible hash family.

Row ``i`` of a sketch hashes a flow key with keyed BLAKE2b (8-byte digest,
little-endian) under a per-row 64-bit sub-seed, then reduces modulo the
width.  Sub-seeds are the first ``d`` outputs of SplitMix64 started at the
family seed, so the column layout depends only on ``(seed, d, w, key)``.

Counts are float64: sketches built by insertion hold integers, sketches
recovered by the optimizer are fractional.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


@dataclass(frozen=True, order=True)
class FlowKey:
    """Opaque flow identity.  Equality is byte equality."""

    raw: bytes

    @classmethod
    def of(cls, name: str | bytes | FlowKey) -> FlowKey:
        if isinstance(name, FlowKey):
            return name
        if isinstance(name, str):
            return cls(name.encode("utf-8"))
        return cls(bytes(name))

    def encode(self) -> bytes:
        # 4-byte big-endian length prefix, then the raw bytes
        return len(self.raw).to_bytes(4, "big") + self.raw

    @property
    def name(self) -> str:
        return self.raw.decode("utf-8", errors="backslashreplace")

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class HashFamily:
    depth: int
    width: int
    seed: int
    subseeds: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2 (row-difference matrix needs two rows), got {self.depth}")
        if self.width < 2:
            raise ValueError(f"width must be >= 2, got {self.width}")
        if not 0 <= self.seed <= MASK64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        state = self.seed
        subs = []
        for _ in range(self.depth):
            state, out = splitmix64(state)
            subs.append(out)
        object.__setattr__(self, "subseeds", tuple(subs))

    def index(self, row: int, key: FlowKey | str | bytes) -> int:
        return _row_hash(self.subseeds[row], FlowKey.of(key).encode()) % self.width

    def columns(self, key: FlowKey | str | bytes) -> np.ndarray:
        """Column hit by ``key`` in every row, shape ``(d,)``."""
        enc = FlowKey.of(key).encode()
        return np.array([_row_hash(s, enc) % self.width for s in self.subseeds], dtype=np.int64)

    def column_table(self, keys) -> np.ndarray:
        """``(d, F)`` table of columns for a list of keys."""
        if len(keys) == 0:
            return np.zeros((self.depth, 0), dtype=np.int64)
        return np.stack([self.columns(k) for k in keys], axis=1)


@lru_cache(maxsize=65536)
def _row_hash(subseed: int, encoded: bytes) -> int:
    h = hashlib.blake2b(encoded, digest_size=8, key=subseed.to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


class FamilyMismatch(ValueError):
    pass


def diff_matrix(d: int) -> np.ndarray:
    """First-difference matrix A of shape ``(d-1, d)``: A[i, i] = 1, A[i, i+1] = -1."""
    if d < 2:
        raise ValueError("difference matrix needs d >= 2")
    A = np.zeros((d - 1, d))
    idx = np.arange(d - 1)
    A[idx, idx] = 1.0
    A[idx, idx + 1] = -1.0
    return A


class CmSketch:
    """A ``d x w`` Count-Min sketch bound to a :class:`HashFamily`."""

    __slots__ = ("family", "counts")

    def __init__(self, family: HashFamily, counts: np.ndarray | None = None):
        self.family = family
        shape = (family.depth, family.width)
        if counts is None:
            counts = np.zeros(shape)
        else:
            counts = np.asarray(counts, dtype=np.float64)
            if counts.shape != shape:
                raise ValueError(f"counts shape {counts.shape} does not match family {shape}")
        self.counts = counts

    @property
    def depth(self) -> int:
        return self.family.depth

    @property
    def width(self) -> int:
        return self.family.width

    def insert(self, key, count: float = 1) -> None:
        if count <= 0:
            raise ValueError(f"insert count must be positive, got {count}")
        cols = self.family.columns(key)
        self.counts[np.arange(self.depth), cols] += count

    def query(self, key) -> float:
        """Least counter over the rows hit by ``key``."""
        cols = self.family.columns(key)
        return float(self.counts[np.arange(self.depth), cols].min())

    def _check(self, other: CmSketch) -> None:
        if self.family != other.family:
            raise FamilyMismatch(f"hash families differ: {self.family} vs {other.family}")

    def __add__(self, other: CmSketch) -> CmSketch:
        self._check(other)
        return CmSketch(self.family, self.counts + other.counts)

    def sub_clamped(self, other: CmSketch) -> CmSketch:
        self._check(other)
        return CmSketch(self.family, np.maximum(self.counts - other.counts, 0.0))

    def row_sum_residual(self) -> float:
        """Max-abs entry of ``A @ counts @ 1``; zero for insertion-built sketches."""
        rs = self.counts.sum(axis=1)
        return float(np.abs(rs[:-1] - rs[1:]).max())

    def total(self) -> float:
        return float(self.counts.sum())

    def copy(self) -> CmSketch:
        return CmSketch(self.family, self.counts.copy())

    def __eq__(self, other) -> bool:
        if not isinstance(other, CmSketch):
            return NotImplemented
        return self.family == other.family and np.array_equal(self.counts, other.counts)

    def __repr__(self) -> str:
        return f"CmSketch(d={self.depth}, w={self.width}, seed={self.family.seed}, total={self.total():g})"

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "d": self.depth,
            "w": self.width,
            "seed": self.family.seed,
            "counts": [_num(v) for v in self.counts.ravel()],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> CmSketch:
        fam = HashFamily(int(obj["d"]), int(obj["w"]), int(obj["seed"]))
        counts = np.asarray(obj["counts"], dtype=np.float64)
        if counts.size != fam.depth * fam.width:
            raise ValueError(f"expected {fam.depth * fam.width} counts, got {counts.size}")
        return cls(fam, counts.reshape(fam.depth, fam.width))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> CmSketch:
        return cls.from_dict(json.loads(text))


def _num(v: float):
    # integers print without a trailing ".0" so they round-trip as exact decimals
    return int(v) if float(v).is_integer() and abs(v) < 2**53 else float(v)


def sketch_new(d: int, w: int, seed: int) -> CmSketch:
    return CmSketch(HashFamily(d, w, seed))


def sketch_from_stream(family: HashFamily, stream) -> CmSketch:
    """Build a sketch from an iterable of keys or ``(key, count)`` pairs."""
    s = CmSketch(family)
    for item in stream:
        if isinstance(item, tuple):
            s.insert(*item)
        else:
            s.insert(item)
    return s
