"""End-to-end glue: trace -> sketch series -> decomposition -> loss report."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .operators import ConstraintSystem, recover_loss_sketches
from .report import FlowLossEstimate, estimate_flow_loss
from .sim import GroundTruth, PacketTrace, generate_trace
from .solver import SolveResult, solve
from .windowing import SketchSeries, build_series


@dataclass
class Detection:
    series: SketchSeries
    system: ConstraintSystem
    result: SolveResult
    stack: np.ndarray  # (n, m, d, w) recovered sub-sketches, real-series indexing
    phi: np.ndarray  # (n - m + 1, d, w) loss sketches
    estimates: list[FlowLossEstimate]

    @property
    def horizon(self) -> int:
        return self.phi.shape[0]


def simulate(cfg: RunConfig) -> tuple[PacketTrace, GroundTruth]:
    w = cfg.windowing
    return generate_trace(cfg.flows, cfg.delay, cfg.losses, w.n, w.T_ns, cfg.seed, cfg.clock_offset_ns)


def detect(trace: PacketTrace, cfg: RunConfig) -> Detection:
    series = build_series(trace, cfg.windowing)
    system = ConstraintSystem.from_series(series, lead_in=cfg.lead_in)
    result = solve(system, cfg.solver, record_every=1)
    stack = system.real_stack(result.M)
    phi = recover_loss_sketches(stack, series.S, cfg.windowing.horizon)
    estimates = estimate_flow_loss(phi, series.S, series.family, sorted(trace.flows))
    return Detection(series, system, result, stack, phi, estimates)
