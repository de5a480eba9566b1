"""Run configuration: one JSON document for simulator, windows, sketch, solver and report.

Durations are given in milliseconds (``*_ms`` keys) and held internally as
integer nanoseconds.  Validation errors carry the key path of the offending
field, e.g. ``simulator.delay.jitter_ms``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .sim import NS_PER_MS, DelayModel, FlowSpec, LossEntry, LossSchedule, ScheduleError
from .solver import SolverParams
from .windowing import WindowingConfig


class ConfigError(ValueError):
    pass


def _ms(v) -> int:
    return int(round(float(v) * NS_PER_MS))


@dataclass
class ReportConfig:
    t_severe: float = 20.0
    t_extreme: float = 300.0
    rounded: bool = False


@dataclass
class RunConfig:
    seed: int
    windowing: WindowingConfig
    quiet_start: bool
    flows: list[FlowSpec]
    delay: DelayModel
    losses: LossSchedule
    clock_offset_ns: int = 0
    solver: SolverParams = field(default_factory=SolverParams)
    report: ReportConfig = field(default_factory=ReportConfig)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def lead_in(self) -> int:
        return self.windowing.m - 1 if self.quiet_start else 0


class _Reader:
    def __init__(self, obj, path=""):
        if not isinstance(obj, dict):
            raise ConfigError(f"{path or '<root>'}: expected an object")
        self.obj = obj
        self.path = path

    def _p(self, key):
        return f"{self.path}.{key}" if self.path else key

    def sub(self, key, required=True) -> _Reader:
        if key not in self.obj:
            if required:
                raise ConfigError(f"{self._p(key)}: missing")
            return _Reader({}, self._p(key))
        return _Reader(self.obj[key], self._p(key))

    def get(self, key, kind, default=...):
        if key not in self.obj or self.obj[key] is None:
            if default is ...:
                raise ConfigError(f"{self._p(key)}: missing")
            return default
        v = self.obj[key]
        if kind is int:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{self._p(key)}: expected an integer, got {v!r}")
        elif kind is float:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{self._p(key)}: expected a number, got {v!r}")
            v = float(v)
        elif kind is bool:
            if not isinstance(v, bool):
                raise ConfigError(f"{self._p(key)}: expected true/false, got {v!r}")
        elif kind is str:
            if not isinstance(v, str):
                raise ConfigError(f"{self._p(key)}: expected a string, got {v!r}")
        elif kind is list:
            if not isinstance(v, list):
                raise ConfigError(f"{self._p(key)}: expected a list")
        return v


def _loss_entries(items: list, path: str) -> list[LossEntry]:
    out = []
    for idx, item in enumerate(items):
        r = _Reader(item, f"{path}[{idx}]")
        flows = [r.get("flow", str)] if "flow" in item else r.get("flows", list)
        if "window" in item:
            wins = [r.get("window", int)]
        else:
            lo, hi = r.get("windows", list)
            wins = range(int(lo), int(hi) + 1)
        prob = r.get("prob", float, None)
        count = r.get("count", int, None)
        try:
            out.extend(LossEntry(k, f, prob=prob, count=count) for f in flows for k in wins)
        except ScheduleError as exc:
            raise ConfigError(f"{r.path}: {exc}") from None
    return out


def parse_config(obj: dict) -> RunConfig:
    root = _Reader(obj)
    seed = root.get("seed", int, 0)

    win = root.sub("windowing")
    sk = root.sub("sketch")
    simr = root.sub("simulator")
    dl = simr.sub("delay")
    try:
        delay = DelayModel(
            d_min_ns=_ms(dl.get("d_min_ms", float)),
            jitter_ns=_ms(dl.get("jitter_ms", float)),
            median_ns=_ms(dl.get("median_ms", float, 1.0)),
            sigma=dl.get("sigma", float, 1.0),
        )
    except ValueError as exc:
        raise ConfigError(f"{dl.path}: {exc}") from None

    n = win.get("n", int)
    m = win.get("m", int)
    T_ns = _ms(win.get("T_ms", float))
    offset = win.get("offset_ms", float, None)
    offset_ns = delay.d_min_ns if offset is None else _ms(offset)
    try:
        wcfg = WindowingConfig(
            n=n, T_ns=T_ns, m=m, offset_ns=offset_ns,
            d=sk.get("d", int, 4), w=sk.get("w", int, 32), seed=sk.get("seed", int, 0),
        )
        wcfg.family  # validates d, w, seed
    except ValueError as exc:
        raise ConfigError(f"{win.path}/{sk.path}: {exc}") from None

    clock = _ms(simr.get("clock_offset_ms", float, 0.0))
    lo = delay.d_min_ns + clock - offset_ns
    if lo < 0:
        raise ConfigError(
            f"{win.path}.offset_ms: downstream offset exceeds the minimum delay; packets would arrive before their window"
        )
    if lo + delay.jitter_ns > (m - 1) * T_ns:
        raise ConfigError(
            f"{dl.path}.jitter_ms: jitter bound {delay.jitter_ns / NS_PER_MS:g} ms exceeds (m-1)*T = "
            f"{(m - 1) * T_ns / NS_PER_MS:g} ms; packets could branch past m windows"
        )

    flows = []
    for idx, item in enumerate(simr.get("flows", list, [])):
        r = _Reader(item, f"{simr.path}.flows[{idx}]")
        active = r.get("active", list, None)
        try:
            flows.append(FlowSpec(r.get("key", str), r.get("packets_per_window", int), tuple(active) if active else None))
        except ValueError as exc:
            raise ConfigError(f"{r.path}: {exc}") from None
    losses = LossSchedule(_loss_entries(simr.get("losses", list, []), f"{simr.path}.losses"))

    sv = root.sub("solver", required=False)
    scale = sv.obj.get("scale", "auto")
    if scale == "auto" or scale is None:
        scale = None
    elif isinstance(scale, bool) or not isinstance(scale, (int, float)):
        raise ConfigError(f"{sv.path}.scale: expected \"auto\" or a number")
    try:
        params = SolverParams(
            sigma=sv.get("sigma", float, 1.0),
            gamma=sv.get("gamma", float, 1.618),
            tol=sv.get("tol", float, 1e-4),
            max_iter=sv.get("max_iter", int, 5000),
            scale=None if scale is None else float(scale),
        )
    except ValueError as exc:
        raise ConfigError(f"{sv.path}: {exc}") from None

    rp = root.sub("report", required=False)
    rcfg = ReportConfig(rp.get("t_severe", float, 20.0), rp.get("t_extreme", float, 300.0), rp.get("round", bool, False))
    if not rcfg.t_extreme > rcfg.t_severe > 0:
        raise ConfigError(f"{rp.path}: need t_extreme > t_severe > 0")

    return RunConfig(
        seed=seed,
        windowing=wcfg,
        quiet_start=win.get("quiet_start", bool, True),
        flows=flows,
        delay=delay,
        losses=losses,
        clock_offset_ns=clock,
        solver=params,
        report=rcfg,
        raw=obj,
    )


OVERRIDES = {
    "n": ("windowing", "n"),
    "m": ("windowing", "m"),
    "d": ("sketch", "d"),
    "w": ("sketch", "w"),
    "sigma": ("solver", "sigma"),
    "gamma": ("solver", "gamma"),
    "tol": ("solver", "tol"),
    "max_iter": ("solver", "max_iter"),
}


def apply_overrides(obj: dict, **kw) -> dict:
    out = copy.deepcopy(obj)
    for key, val in kw.items():
        if val is None:
            continue
        if key == "seed":
            out["seed"] = val
            continue
        sect, name = OVERRIDES[key]
        out.setdefault(sect, {})[name] = val
    return out


def load_config(path, **overrides) -> RunConfig:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(apply_overrides(obj, **overrides))
