"""Synthetic packet traces with bounded delay jitter and scheduled loss.

All times are integer nanoseconds.  Upstream window ``k`` (1-based) covers
``[(k-1)T, kT)``.  Each flow sends a fixed number of packets per active
window, placed uniformly at random inside the window.  Every packet's
one-way delay is ``d_min + J`` where ``J`` follows a log-normal truncated to
``[0, jitter)``, so the bound holds exactly rather than in probability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import kernels
from .sketch import FlowKey

DROPPED = -1
NS_PER_MS = 1_000_000


class ScheduleError(ValueError):
    pass


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class FlowSpec:
    key: FlowKey
    packets_per_window: int
    active: tuple[int, int] | None = None  # inclusive 1-based window range; None = all

    def __post_init__(self):
        object.__setattr__(self, "key", FlowKey.of(self.key))
        if self.packets_per_window < 1:
            raise ValueError(f"flow {self.key}: packets_per_window must be >= 1")
        if self.active is not None:
            lo, hi = self.active
            if lo > hi:
                raise ValueError(f"flow {self.key}: empty active range {self.active}")
            object.__setattr__(self, "active", (int(lo), int(hi)))

    def windows(self, n: int) -> range:
        lo, hi = self.active if self.active is not None else (1, n)
        if lo < 1 or hi > n:
            raise ScheduleError(f"flow {self.key}: active range {self.active} outside [1, {n}]")
        return range(lo, hi + 1)


@dataclass(frozen=True)
class DelayModel:
    """Delay = ``d_min_ns + J``, J ~ LogNormal(log(median_ns), sigma) truncated to ``[0, jitter_ns)``.

    ``jitter_ns == 0`` means a constant delay of exactly ``d_min_ns``.
    """

    d_min_ns: int
    jitter_ns: int
    median_ns: float
    sigma: float = 1.0

    def __post_init__(self):
        if self.d_min_ns < 0:
            raise ValueError("d_min must be >= 0")
        if self.jitter_ns < 0:
            raise ValueError("jitter bound must be >= 0")
        if self.median_ns <= 0 or self.sigma <= 0:
            raise ValueError("log-normal median and sigma must be positive")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Integer delays in ``[d_min, d_min + jitter)``."""
        if self.jitter_ns == 0:
            return np.full(size, self.d_min_ns, dtype=np.int64)
        top = ndtr((np.log(self.jitter_ns) - np.log(self.median_ns)) / self.sigma)
        u = rng.random(size) * top
        j = self.median_ns * np.exp(self.sigma * ndtri(u))
        j = np.minimum(np.floor(j).astype(np.int64), self.jitter_ns - 1)
        return self.d_min_ns + j


@dataclass(frozen=True)
class LossEntry:
    window: int
    flow: FlowKey
    prob: float | None = None
    count: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "flow", FlowKey.of(self.flow))
        if (self.prob is None) == (self.count is None):
            raise ScheduleError(f"loss entry ({self.window}, {self.flow}) needs exactly one of prob/count")
        if self.prob is not None and not 0.0 <= self.prob <= 1.0:
            raise ScheduleError(f"drop probability {self.prob} outside [0, 1]")
        if self.count is not None and self.count < 0:
            raise ScheduleError(f"drop count {self.count} is negative")


@dataclass
class LossSchedule:
    entries: list[LossEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)


@dataclass
class PacketTrace:
    """Packets in global send order.  ``arrival_ns == DROPPED`` marks a loss."""

    flows: list[FlowKey]
    flow_idx: np.ndarray
    send_ns: np.ndarray
    arrival_ns: np.ndarray

    def __len__(self):
        return int(self.send_ns.shape[0])

    @property
    def delivered(self) -> np.ndarray:
        return self.arrival_ns != DROPPED

    def dump_ndjson(self, fh) -> None:
        names = [json.dumps(f.name) for f in self.flows]
        lines = []
        for fi, s, a in zip(self.flow_idx.tolist(), self.send_ns.tolist(), self.arrival_ns.tolist()):
            arr = "null" if a == DROPPED else a
            lines.append(f'{{"flow":{names[fi]},"send_ns":{s},"arrival_ns":{arr}}}\n')
            if len(lines) >= 65536:
                fh.write("".join(lines))
                lines.clear()
        fh.write("".join(lines))

    @classmethod
    def load_ndjson(cls, fh) -> PacketTrace:
        index: dict[str, int] = {}
        flows: list[FlowKey] = []
        fidx, send, arr = [], [], []
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                name = rec["flow"]
                s = rec["send_ns"]
                a = rec["arrival_ns"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from None
            if not isinstance(name, str) or not isinstance(s, int) or not (a is None or isinstance(a, int)):
                raise TraceFormatError(f"line {lineno}: bad field types")
            if s < 0 or (a is not None and a < 0):
                raise TraceFormatError(f"line {lineno}: negative timestamp")
            if name not in index:
                index[name] = len(flows)
                flows.append(FlowKey.of(name))
            fidx.append(index[name])
            send.append(s)
            arr.append(DROPPED if a is None else a)
        return cls(
            flows,
            np.asarray(fidx, dtype=np.int64),
            np.asarray(send, dtype=np.int64),
            np.asarray(arr, dtype=np.int64),
        )


@dataclass
class GroundTruth:
    """Exact per-window, per-flow tallies indexed ``[k-1, flow]``."""

    flows: list[FlowKey]
    sent_count: np.ndarray
    loss_count: np.ndarray

    @property
    def n(self) -> int:
        return int(self.sent_count.shape[0])

    def to_dict(self) -> dict:
        return {
            "flows": [f.name for f in self.flows],
            "sent_count": self.sent_count.tolist(),
            "loss_count": self.loss_count.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> GroundTruth:
        flows = [FlowKey.of(f) for f in obj["flows"]]
        sent = np.asarray(obj["sent_count"], dtype=np.int64).reshape(-1, len(flows))
        lost = np.asarray(obj["loss_count"], dtype=np.int64).reshape(-1, len(flows))
        if sent.shape != lost.shape:
            raise ValueError("sent_count and loss_count shapes differ")
        return cls(flows, sent, lost)


def tally(trace: PacketTrace, n: int, T_ns: int) -> GroundTruth:
    """Recount sent and dropped packets per upstream window straight from a trace."""
    k = trace.send_ns // T_ns
    k = np.where(k < n, k, -1)
    F = len(trace.flows)
    sent = kernels.bin_counts(k, trace.flow_idx, n, F)
    lost_rows = np.where(trace.delivered, -1, k)
    lost = kernels.bin_counts(lost_rows, trace.flow_idx, n, F)
    return GroundTruth(list(trace.flows), sent, lost)


def generate_trace(
    flows: list[FlowSpec],
    delay: DelayModel,
    losses: LossSchedule,
    n: int,
    T_ns: int,
    seed: int,
    clock_offset_ns: int = 0,
) -> tuple[PacketTrace, GroundTruth]:
    if n < 1 or T_ns < 1:
        raise ValueError("need n >= 1 and T > 0")
    keys = [f.key for f in flows]
    if len(set(keys)) != len(keys):
        raise ScheduleError("duplicate flow keys")
    fpos = {k: i for i, k in enumerate(keys)}
    rng = np.random.default_rng(seed)

    # (flow, window) blocks in flow-major order
    blk_flow, blk_win, blk_size = [], [], []
    for fi, spec in enumerate(flows):
        for k in spec.windows(n):
            blk_flow.append(fi)
            blk_win.append(k - 1)
            blk_size.append(spec.packets_per_window)
    blk_size = np.asarray(blk_size, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(blk_size)])
    total = int(starts[-1])
    flow_idx = np.repeat(np.asarray(blk_flow, dtype=np.int64), blk_size)
    win = np.repeat(np.asarray(blk_win, dtype=np.int64), blk_size)
    offset = rng.integers(0, T_ns, size=total)
    order = np.lexsort((offset, win, flow_idx))
    send = win[order] * T_ns + offset[order]  # flow_idx/win are already sorted

    dropped = np.zeros(total, dtype=bool)
    blk_of = {(blk_flow[b], blk_win[b]): b for b in range(len(blk_flow))}
    seen = set()
    for e in losses.entries:
        if e.flow not in fpos:
            raise ScheduleError(f"loss entry references unknown flow {e.flow}")
        if not 1 <= e.window <= n:
            raise ScheduleError(f"loss entry window {e.window} outside [1, {n}]")
        tag = (fpos[e.flow], e.window - 1)
        if tag in seen:
            raise ScheduleError(f"duplicate loss entry for flow {e.flow}, window {e.window}")
        seen.add(tag)
        b = blk_of.get(tag)
        size = 0 if b is None else int(blk_size[b])
        if e.count is not None:
            if e.count > size:
                raise ScheduleError(
                    f"flow {e.flow} window {e.window}: drop count {e.count} exceeds {size} sent"
                )
            if e.count:
                pick = rng.choice(size, size=e.count, replace=False)
                dropped[starts[b] + pick] = True
        elif size:
            dropped[starts[b]:starts[b] + size] |= rng.random(size) < e.prob

    delays = delay.sample(rng, total)
    arrival = np.where(dropped, DROPPED, send + delays + clock_offset_ns)

    glob = np.lexsort((flow_idx, send))
    trace = PacketTrace(keys, flow_idx[glob], send[glob], arrival[glob])
    return trace, tally(trace, n, T_ns)


def delay_bounds_check(trace: PacketTrace, delay: DelayModel) -> bool:
    ok = trace.delivered
    lat = trace.arrival_ns[ok] - trace.send_ns[ok]
    if delay.jitter_ns == 0:
        return bool(np.all(lat == delay.d_min_ns))
    return bool(np.all((lat >= delay.d_min_ns) & (lat < delay.d_min_ns + delay.jitter_ns)))


def delay_histogram(trace: PacketTrace, bin_ns: int) -> tuple[np.ndarray, np.ndarray]:
    """Counts of delivered-packet delays in bins of ``bin_ns``; returns ``(bin_left_ns, counts)``."""
    ok = trace.delivered
    lat = trace.arrival_ns[ok] - trace.send_ns[ok]
    if lat.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    b = lat // bin_ns
    lo = int(b.min())
    counts = np.bincount(b - lo)
    return (np.arange(counts.size) + lo) * bin_ns, counts
