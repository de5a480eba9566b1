"""Per-flow loss estimates and severity-group metrics."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .sim import GroundTruth
from .sketch import FlowKey, HashFamily

logger = logging.getLogger(__name__)

EPS = 1e-9
GROUPS = ("extremely severe", "severe", "slight")


@dataclass(frozen=True)
class FlowLossEstimate:
    flow: FlowKey
    window: int  # 1-based upstream window
    estimated_loss: float
    sent_estimate: float

    @property
    def loss_rate(self) -> float:
        return self.estimated_loss / max(self.sent_estimate, EPS)

    def to_dict(self, rounded: bool = False) -> dict:
        loss = float(round(self.estimated_loss)) if rounded else self.estimated_loss
        return {
            "flow": self.flow.name,
            "window": self.window,
            "estimated_loss": loss,
            "sent_estimate": self.sent_estimate,
            "loss_rate": self.loss_rate,
        }


def _query_all(sketches: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """CM queries for every (window, flow): ``(K, d, w)`` x ``(d, F)`` -> ``(K, F)``."""
    d = cols.shape[0]
    return sketches[:, np.arange(d)[:, None], cols].min(axis=1)


def estimate_flow_loss(phi: np.ndarray, S: np.ndarray, family: HashFamily, flows) -> list[FlowLossEstimate]:
    """Query every loss sketch ``phi_k`` (and ``S_k`` for the rate) for every flow."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape[1:] != (family.depth, family.width) or S.shape[1:] != phi.shape[1:]:
        raise ValueError("loss sketches and upstream series do not match the hash family")
    flows = [FlowKey.of(f) for f in flows]
    if not flows:
        return []
    K = phi.shape[0]
    cols = family.column_table(flows)
    lost = _query_all(phi, cols)
    sent = _query_all(S[:K], cols)
    return [
        FlowLossEstimate(f, k + 1, float(lost[k, j]), float(sent[k, j]))
        for j, f in enumerate(flows)
        for k in range(K)
    ]


def group_flows(gt: GroundTruth, t_severe: float = 20.0, t_extreme: float = 300.0, horizon: int | None = None) -> dict[str, list[FlowKey]]:
    """Partition flows by mean actual loss per window over windows ``1..horizon``."""
    if not t_extreme > t_severe > 0:
        raise ValueError(f"need t_extreme > t_severe > 0, got {t_extreme}, {t_severe}")
    K = gt.n if horizon is None else horizon
    out: dict[str, list[FlowKey]] = {g: [] for g in GROUPS}
    if K == 0:
        return out
    mean_loss = gt.loss_count[:K].mean(axis=0)
    for f, v in zip(gt.flows, mean_loss):
        if v > t_extreme:
            out["extremely severe"].append(f)
        elif v > t_severe:
            out["severe"].append(f)
        else:
            out["slight"].append(f)
    return out


@dataclass
class GroupMetrics:
    group: str
    flows: int
    samples: int
    avg_actual: float
    avg_estimated: float
    avg_error: float

    @property
    def ratio(self) -> float:
        return self.avg_error / self.avg_actual if self.avg_actual > 0 else float("inf") if self.avg_error > 0 else 0.0


def _pairs(estimates, gt: GroundTruth, flows, horizon: int):
    est = {(e.flow, e.window): e.estimated_loss for e in estimates}
    col = {f: j for j, f in enumerate(gt.flows)}
    act, got = [], []
    for f in flows:
        for k in range(1, horizon + 1):
            if (f, k) not in est:
                raise KeyError(f"no estimate for flow {f} window {k}")
            act.append(gt.loss_count[k - 1, col[f]])
            got.append(est[(f, k)])
    return np.asarray(act, dtype=np.float64).reshape(len(flows), horizon), np.asarray(got).reshape(len(flows), horizon)


def evaluate(
    estimates: list[FlowLossEstimate],
    gt: GroundTruth,
    partition: dict[str, list[FlowKey]],
    horizon: int,
    per: str = "window",
) -> list[GroupMetrics]:
    """Table-style group metrics; ``avg_error`` is the mean absolute error.

    ``per="window"`` averages over every (flow, window) pair; ``per="flow"``
    first averages each flow over its windows, then averages over flows.
    Empty groups are left out.
    """
    if per not in ("window", "flow"):
        raise ValueError(f"per must be 'window' or 'flow', got {per!r}")
    out = []
    for label, flows in partition.items():
        if not flows:
            logger.warning("group %r is empty; omitted from metrics", label)
            continue
        act, got = _pairs(estimates, gt, flows, horizon)
        if per == "flow":
            act, got = act.mean(axis=1), got.mean(axis=1)
        out.append(
            GroupMetrics(
                label,
                len(flows),
                int(act.size),
                float(act.mean()),
                float(got.mean()),
                float(np.abs(act - got).mean()),
            )
        )
    return out


def write_metrics_csv(metrics: list[GroupMetrics], fh) -> None:
    """Rows as in the loss comparison table: one column per group."""
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(["metric"] + [g.group for g in metrics])
    wr.writerow(["average actual loss"] + [repr(g.avg_actual) for g in metrics])
    wr.writerow(["average estimated loss"] + [repr(g.avg_estimated) for g in metrics])
    wr.writerow(["average error"] + [repr(g.avg_error) for g in metrics])
    wr.writerow(["ratio"] + [repr(g.ratio) for g in metrics])


def write_plot_csv(estimates: list[FlowLossEstimate], gt: GroundTruth, fh) -> None:
    col = {f: j for j, f in enumerate(gt.flows)}
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(["flow", "window", "actual", "estimated"])
    for e in estimates:
        wr.writerow([e.flow.name, e.window, int(gt.loss_count[e.window - 1, col[e.flow]]), repr(e.estimated_loss)])


def report_dict(estimates: list[FlowLossEstimate], horizon: int, rounded: bool = False, solver: dict | None = None) -> dict:
    flows = sorted({e.flow for e in estimates})
    out = {
        "windows": horizon,
        "flows": [f.name for f in flows],
        "estimates": [e.to_dict(rounded) for e in estimates],
    }
    if solver is not None:
        out["solver"] = solver
    return out


def estimates_from_dict(obj: dict) -> list[FlowLossEstimate]:
    return [
        FlowLossEstimate(FlowKey.of(e["flow"]), int(e["window"]), float(e["estimated_loss"]), float(e["sent_estimate"]))
        for e in obj["estimates"]
    ]


def metrics_dicts(metrics: list[GroupMetrics]) -> list[dict]:
    return [{**asdict(g), "ratio": g.ratio} for g in metrics]


def dump_report(obj: dict, fh) -> None:
    json.dump(obj, fh, indent=1)
