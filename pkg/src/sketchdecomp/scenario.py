"""Ready-made run configurations.

``severity_scenario`` mimics the three loss-severity groups of the testbed
comparison (about 620, 93 and 3.4 drops per window); ``desk_scenario`` is a
small mixed instance for solver checks.  Both return plain config dicts, so
they can be written to disk and fed to the CLI unchanged.
"""

from __future__ import annotations

import numpy as np

GROUP_LOSS_MEANS = {"extreme": 620.0, "severe": 93.0, "slight": 3.4}


def _base(n, m, d, w, seed, sketch_seed, delay) -> dict:
    return {
        "seed": seed,
        "windowing": {"n": n, "T_ms": 10.0, "m": m, "quiet_start": True},
        "sketch": {"d": d, "w": w, "seed": sketch_seed},
        "simulator": {"flows": [], "delay": delay, "losses": []},
        "solver": {"sigma": 1.0, "gamma": 1.618, "tol": 1e-4, "max_iter": 5000, "scale": "auto"},
        "report": {"t_severe": 20.0, "t_extreme": 300.0},
    }


DEFAULT_DELAY = {"d_min_ms": 20.0, "jitter_ms": 20.0, "median_ms": 2.0, "sigma": 0.8}


def severity_scenario(
    n: int = 100,
    seed: int = 2024,
    flows_per_group: int = 5,
    rates: tuple[int, int, int] = (1500, 600, 200),
    d: int = 4,
    w: int = 32,
    m: int = 3,
) -> dict:
    """Per-window drop counts are Poisson around each group's mean, capped at the flow's rate."""
    rng = np.random.default_rng(seed)
    cfg = _base(n, m, d, w, seed, seed + 1, dict(DEFAULT_DELAY))
    sim = cfg["simulator"]
    for (group, mean), rate in zip(GROUP_LOSS_MEANS.items(), rates):
        for j in range(flows_per_group):
            key = f"{group}-{j}"
            sim["flows"].append({"key": key, "packets_per_window": int(rate)})
            drops = np.minimum(rng.poisson(mean, size=n), rate)
            sim["losses"].extend({"flow": key, "window": k + 1, "count": int(c)} for k, c in enumerate(drops))
    return cfg


def desk_scenario(seed: int = 0, n: int = 30, m: int = 3, d: int = 4, w: int = 16, flows: int = 12) -> dict:
    """Mixed rates (20-150 packets per window); a third of the flows drop about 10%."""
    rng = np.random.default_rng(seed)
    cfg = _base(n, m, d, w, seed, 1000 + seed, dict(DEFAULT_DELAY))
    sim = cfg["simulator"]
    lossy = set(rng.choice(flows, size=max(1, flows // 3), replace=False).tolist())
    for j in range(flows):
        rate = int(rng.integers(20, 151))
        key = f"flow-{j}"
        sim["flows"].append({"key": key, "packets_per_window": rate})
        if j in lossy:
            drops = np.minimum(rng.poisson(0.1 * rate, size=n), rate)
            sim["losses"].extend({"flow": key, "window": k + 1, "count": int(c)} for k, c in enumerate(drops))
    return cfg


def zero_traffic_scenario(n: int = 10, m: int = 3) -> dict:
    return _base(n, m, 4, 16, 0, 1, dict(DEFAULT_DELAY))


def lossless_aligned_scenario(n: int = 12, seed: int = 0) -> dict:
    """``m = 1`` with constant delay: every packet lands in its own window."""
    cfg = _base(n, 1, 4, 16, seed, seed + 1, {"d_min_ms": 20.0, "jitter_ms": 0.0})
    rng = np.random.default_rng(seed)
    cfg["simulator"]["flows"] = [
        {"key": f"flow-{j}", "packets_per_window": int(rng.integers(5, 60))} for j in range(6)
    ]
    return cfg
