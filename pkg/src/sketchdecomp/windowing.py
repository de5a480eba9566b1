"""Upstream/downstream windowing and the observed sketch series.

Upstream window ``k`` covers send times ``[(k-1)T, kT)``; downstream window
``k`` covers arrival times ``[offset + (k-1)T, offset + kT)``, the offset being
the minimum one-way delay.  Arrays are indexed by ``k - 1``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .sim import PacketTrace
from .sketch import CmSketch, HashFamily


@dataclass(frozen=True)
class WindowingConfig:
    n: int
    T_ns: int
    m: int
    offset_ns: int
    d: int = 4
    w: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.n > self.m >= 1:
            raise ValueError(f"need n > m >= 1, got n={self.n}, m={self.m}")
        if self.T_ns <= 0:
            raise ValueError("window length must be positive")
        if self.offset_ns < 0:
            raise ValueError("downstream offset must be >= 0")

    @property
    def family(self) -> HashFamily:
        return HashFamily(self.d, self.w, self.seed)

    @property
    def horizon(self) -> int:
        """Upstream windows whose branches all land inside the downstream horizon."""
        return self.n - self.m + 1


def window_index(t: int, T: int, offset: int = 0, n: int | None = None) -> int | None:
    """1-based window holding time ``t``; ``None`` when out of range."""
    if T <= 0:
        raise ValueError("T must be positive")
    if t < offset:
        return None
    k = (t - offset) // T + 1
    if n is not None and k > n:
        return None
    return int(k)


def window_indices(t: np.ndarray, T: int, offset: int, n: int) -> np.ndarray:
    """Vectorised :func:`window_index`, 0-based, ``-1`` for out of range."""
    t = np.asarray(t, dtype=np.int64)
    k = np.floor_divide(t - offset, T)
    return np.where((t >= offset) & (k < n), k, -1)


@dataclass
class SketchSeries:
    cfg: WindowingConfig
    S: np.ndarray  # (n, d, w) upstream sketches
    R: np.ndarray  # (n, d, w) downstream sketches
    spillover: int = 0  # delivered packets arriving outside the downstream horizon

    @property
    def family(self) -> HashFamily:
        return self.cfg.family

    def upstream(self, k: int) -> CmSketch:
        return CmSketch(self.family, self.S[k - 1])

    def downstream(self, k: int) -> CmSketch:
        return CmSketch(self.family, self.R[k - 1])

    def to_dict(self) -> dict:
        sketches = []
        for role, arr in (("S", self.S), ("R", self.R)):
            for k in range(self.cfg.n):
                entry = CmSketch(self.family, arr[k]).to_dict()
                entry.update(window=k + 1, role=role)
                sketches.append(entry)
        return {"windowing": asdict(self.cfg), "spillover": self.spillover, "sketches": sketches}

    @classmethod
    def from_dict(cls, obj: dict) -> SketchSeries:
        cfg = WindowingConfig(**obj["windowing"])
        S = np.zeros((cfg.n, cfg.d, cfg.w))
        R = np.zeros_like(S)
        for entry in obj["sketches"]:
            sk = CmSketch.from_dict(entry)
            if sk.family != cfg.family:
                raise ValueError("series sketch does not share the configured hash family")
            (S if entry["role"] == "S" else R)[entry["window"] - 1] = sk.counts
        return cls(cfg, S, R, int(obj.get("spillover", 0)))

    def dump(self, fh) -> None:
        json.dump(self.to_dict(), fh)


def _flow_columns(trace: PacketTrace, cfg: WindowingConfig) -> np.ndarray:
    return cfg.family.column_table(trace.flows)


def build_series(trace: PacketTrace, cfg: WindowingConfig) -> SketchSeries:
    F = len(trace.flows)
    up = window_indices(trace.send_ns, cfg.T_ns, 0, cfg.n)
    if np.any(up < 0):
        raise ValueError(f"trace has send times past upstream window {cfg.n}")
    ok = trace.delivered
    down = np.where(ok, window_indices(trace.arrival_ns, cfg.T_ns, cfg.offset_ns, cfg.n), -1)
    spill = int(np.count_nonzero(ok & (down < 0)))
    cols = _flow_columns(trace, cfg)
    sent = kernels.bin_counts(up, trace.flow_idx, cfg.n, F)
    recv = kernels.bin_counts(down, trace.flow_idx, cfg.n, F)
    S = kernels.scatter_sketches(sent.astype(np.float64), cols, cfg.w)
    R = kernels.scatter_sketches(recv.astype(np.float64), cols, cfg.w)
    return SketchSeries(cfg, S, R, spill)


def branch_stack(trace: PacketTrace, cfg: WindowingConfig) -> np.ndarray:
    """Ground-truth sub-sketch stack ``(n, m, d, w)`` from each packet's true branch.

    Block ``[k, i]`` holds the packets sent in upstream window ``k`` and received
    in downstream window ``k + i``; that window may lie past ``n``.
    """
    F = len(trace.flows)
    ok = trace.delivered
    up = window_indices(trace.send_ns, cfg.T_ns, 0, cfg.n)
    if np.any(up < 0):
        raise ValueError(f"trace has send times past upstream window {cfg.n}")
    # unbounded downstream index so late branches are kept
    down = np.floor_divide(trace.arrival_ns - cfg.offset_ns, cfg.T_ns)
    br = down - up
    bad = ok & ((br < 0) | (br >= cfg.m) | (trace.arrival_ns < cfg.offset_ns))
    if np.any(bad):
        raise ValueError(f"{int(bad.sum())} packets branch outside 0..{cfg.m - 1}; jitter exceeds (m-1)T")
    rows = np.where(ok, up * cfg.m + br, -1)
    counts = kernels.bin_counts(rows, trace.flow_idx, cfg.n * cfg.m, F)
    cols = _flow_columns(trace, cfg)
    st = kernels.scatter_sketches(counts.astype(np.float64), cols, cfg.w)
    return st.reshape(cfg.n, cfg.m, cfg.d, cfg.w)


def loss_stack(trace: PacketTrace, cfg: WindowingConfig) -> np.ndarray:
    """Sketches ``(n, d, w)`` of the packets actually dropped in each upstream window."""
    up = window_indices(trace.send_ns, cfg.T_ns, 0, cfg.n)
    rows = np.where(trace.delivered, -1, up)
    counts = kernels.bin_counts(rows, trace.flow_idx, cfg.n, len(trace.flows))
    return kernels.scatter_sketches(counts.astype(np.float64), _flow_columns(trace, cfg), cfg.w)
