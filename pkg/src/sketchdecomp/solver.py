"""sGS-ADMM on the dual of the nuclear-norm decomposition model.

Primal::

    min ||M||_*   s.t.  B1 M = R,  B2 M <= S,  B3 M 1 = 0,  M >= 0

Dual variables: U (equalities), V >= 0 (inequalities), y (row-sum
equalities), G >= 0 (nonnegativity), plus H with spectral norm <= 1.  They
are coupled through

    Gamma = -B1^T U - B2^T V + B3^T y 1^T + G - H = 0

and M is the multiplier of that coupling.  One sweep updates, in order,
U (half step), V, G, U, y (half step), H, y, each as the exact minimiser of
the augmented Lagrangian in its block at the freshest values of the others,
then takes the multiplier step ``M += gamma * sigma * Gamma``.

Right-hand sides are divided by a data scale before iterating (``M`` is
multiplied back afterwards).  For a fixed sigma this only changes how fast
the iteration balances primal and dual progress: with raw packet counts in
the thousands, sigma = 1 barely moves the gap.  The default scale is the
square root of the mean nonzero upstream count.

The closed forms rely on B1 B1^T = B2 B2^T = m I and on B3 B3^T being
block-diagonal with tridiagonal blocks A A^T.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .operators import ConstraintSystem, Dims, gram_diagnostics

logger = logging.getLogger(__name__)

RESIDUAL_NAMES = ("r_eq", "r_ineq", "r_rowsum", "r_nonneg", "r_dualfeas", "gap")


class SolverError(RuntimeError):
    """Numerical failure inside a sweep; ``state`` holds the iterate at failure."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


@dataclass(frozen=True)
class SolverParams:
    sigma: float = 1.0
    gamma: float = 1.618
    tol: float = 1e-4
    max_iter: int = 5000
    scale: float | None = None  # None: auto from the data; 1.0: raw counts

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.gamma <= 1.618 + 1e-9:
            raise ValueError(f"gamma must lie in (0, 1.618], got {self.gamma}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.scale is not None and not self.scale > 0:
            raise ValueError("scale must be positive")


@dataclass
class SolverState:
    U: np.ndarray  # (n-m+1, d, w)
    V: np.ndarray  # (n, d, w), >= 0
    y: np.ndarray  # (n, m, d-1)
    G: np.ndarray  # (n, m, d, w), >= 0
    H: np.ndarray  # (n, m, d, w), spectral norm <= 1 as a (lambda, w) matrix
    M: np.ndarray  # (n, m, d, w)
    iteration: int = 0

    @classmethod
    def zeros(cls, dims: Dims) -> SolverState:
        return cls(
            U=np.zeros(dims.eq_shape),
            V=np.zeros(dims.ineq_shape),
            y=np.zeros(dims.rowsum_shape),
            G=np.zeros(dims.stack_shape),
            H=np.zeros(dims.stack_shape),
            M=np.zeros(dims.stack_shape),
        )

    def copy(self) -> SolverState:
        return SolverState(
            self.U.copy(), self.V.copy(), self.y.copy(), self.G.copy(), self.H.copy(), self.M.copy(), self.iteration
        )

    def to_dict(self) -> dict:
        out = {"iteration": self.iteration}
        for name in ("U", "V", "y", "G", "H", "M"):
            arr = getattr(self, name)
            out[name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> SolverState:
        arrs = {
            name: np.asarray(obj[name]["data"], dtype=np.float64).reshape(obj[name]["shape"])
            for name in ("U", "V", "y", "G", "H", "M")
        }
        return cls(iteration=int(obj.get("iteration", 0)), **arrs)


@dataclass
class KktResiduals:
    r_eq: float
    r_ineq: float
    r_rowsum: float
    r_nonneg: float
    r_dualfeas: float
    gap: float

    def max(self) -> float:
        return max(self.as_tuple())

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in RESIDUAL_NAMES)


@dataclass
class SolveResult:
    M: np.ndarray  # clamped at zero, original units
    residuals: KktResiduals
    converged: bool
    iterations: int
    state: SolverState  # iterates of the scaled problem
    history: list[dict] = field(default_factory=list)
    scale: float = 1.0

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "scale": self.scale,
            "residuals": asdict(self.residuals),
        }

    def write_history_csv(self, fh) -> None:
        write_history_csv(self.history, fh)


# --------------------------------------------------------------------------
# block pieces


def gamma(U, V, y, G, H, dims: Dims) -> np.ndarray:
    """Dual coupling residual ``-B1^T U - B2^T V + B3^T y 1^T + G - H``."""
    return (
        -kernels.b1_adjoint(np.ascontiguousarray(U, dtype=np.float64), dims.n, dims.m)
        - kernels.b2_adjoint(np.ascontiguousarray(V, dtype=np.float64), dims.m)
        + kernels.b3_adjoint(np.ascontiguousarray(y, dtype=np.float64), dims.w)
        + G
        - H
    )


def state_gamma(state: SolverState, dims: Dims) -> np.ndarray:
    return gamma(state.U, state.V, state.y, state.G, state.H, dims)


def update_U(state: SolverState, system: ConstraintSystem, sigma: float) -> np.ndarray:
    """Minimiser of <U,R> - <B1^T U, M> + sigma/2 ||Gamma||^2 over U."""
    dims = system.dims
    C = -kernels.b2_adjoint(state.V, dims.m) + kernels.b3_adjoint(state.y, dims.w) + state.G - state.H
    return (kernels.b1_apply(sigma * C + state.M) - system.R_stack) / (sigma * dims.m)


def update_V(state: SolverState, system: ConstraintSystem, sigma: float) -> np.ndarray:
    """Minimiser over V >= 0; separable because B2 B2^T = m I."""
    dims = system.dims
    C = -kernels.b1_adjoint(state.U, dims.n, dims.m) + kernels.b3_adjoint(state.y, dims.w) + state.G - state.H
    return np.maximum((kernels.b2_apply(sigma * C + state.M) - system.S_stack) / (sigma * dims.m), 0.0)


def update_G(state: SolverState, system: ConstraintSystem, sigma: float) -> np.ndarray:
    dims = system.dims
    D = (
        -kernels.b1_adjoint(state.U, dims.n, dims.m)
        - kernels.b2_adjoint(state.V, dims.m)
        + kernels.b3_adjoint(state.y, dims.w)
        - state.H
    )
    return np.maximum(-D - state.M / sigma, 0.0)


def update_y(state: SolverState, system: ConstraintSystem, sigma: float) -> np.ndarray:
    """Solves ``sigma * w * (B3 B3^T) y = -B3 (M + sigma F) 1`` block by block."""
    dims = system.dims
    F = (
        -kernels.b1_adjoint(state.U, dims.n, dims.m)
        - kernels.b2_adjoint(state.V, dims.m)
        + state.G
        - state.H
    )
    rhs = -kernels.b3_rowsum(np.ascontiguousarray(state.M + sigma * F))
    return kernels.solve_aat(np.ascontiguousarray(rhs)) / (sigma * dims.w)


def project_spectral_ball(X: np.ndarray) -> np.ndarray:
    """Nearest matrix (Frobenius) with largest singular value <= 1; ``X`` is 2-d."""
    try:
        Us, s, Vt = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"SVD failed: {exc}") from exc
    over = s > 1.0
    if not over.any():
        return X.copy()
    return X - (Us[:, over] * (s[over] - 1.0)) @ Vt[over]


def update_H(state: SolverState, system: ConstraintSystem, sigma: float) -> np.ndarray:
    dims = system.dims
    E = (
        -kernels.b1_adjoint(state.U, dims.n, dims.m)
        - kernels.b2_adjoint(state.V, dims.m)
        + kernels.b3_adjoint(state.y, dims.w)
        + state.G
    )
    X = (E + state.M / sigma).reshape(dims.lam, dims.w)
    try:
        P = project_spectral_ball(X)
    except SolverError as exc:
        exc.state = state.copy()
        raise
    return P.reshape(dims.stack_shape)


def update_M(state: SolverState, system: ConstraintSystem, sigma: float, gamma_: float) -> np.ndarray:
    return state.M + gamma_ * sigma * state_gamma(state, system.dims)


# --------------------------------------------------------------------------


def nuclear_norm(M: np.ndarray, dims: Dims) -> float:
    return float(np.linalg.svd(M.reshape(dims.lam, dims.w), compute_uv=False).sum())


def kkt_residuals(state: SolverState, system: ConstraintSystem, Gam: np.ndarray | None = None) -> tuple[KktResiduals, float, float]:
    """Residuals plus ``(primal objective, dual objective)``."""
    dims = system.dims
    M = state.M
    if Gam is None:
        Gam = state_gamma(state, dims)
    nM = float(np.linalg.norm(M))
    nuc = nuclear_norm(M, dims)
    R, S = system.R_stack, system.S_stack
    dual_obj = float(np.vdot(state.U, R) + np.vdot(state.V, S))
    res = KktResiduals(
        r_eq=float(np.linalg.norm(kernels.b1_apply(M) - R)) / (1 + float(np.linalg.norm(R))),
        r_ineq=float(np.linalg.norm(np.maximum(kernels.b2_apply(M) - S, 0.0))) / (1 + float(np.linalg.norm(S))),
        r_rowsum=float(np.abs(kernels.b3_rowsum(M)).max(initial=0.0)) / (1 + nM),
        r_nonneg=float(np.linalg.norm(np.maximum(-M, 0.0))) / (1 + nM),
        r_dualfeas=float(np.linalg.norm(Gam)) / (1 + nM),
        gap=abs(nuc + dual_obj) / (1 + nuc),
    )
    return res, nuc, dual_obj


def sweep(state: SolverState, system: ConstraintSystem, params: SolverParams) -> SolverState:
    """One sGS-ADMM iteration; returns a new state (input untouched)."""
    s = params.sigma
    st = state.copy()
    st.U = update_U(st, system, s)  # half step
    st.V = update_V(st, system, s)
    st.G = update_G(st, system, s)
    st.U = update_U(st, system, s)
    st.y = update_y(st, system, s)  # half step
    st.H = update_H(st, system, s)
    st.y = update_y(st, system, s)
    st.M = update_M(st, system, s, params.gamma)
    st.iteration = state.iteration + 1
    return st


def auto_scale(system: ConstraintSystem) -> float:
    nz = system.S_stack[system.S_stack > 0]
    return float(np.sqrt(nz.mean())) if nz.size else 1.0


def solve(
    system: ConstraintSystem,
    params: SolverParams = SolverParams(),
    state: SolverState | None = None,
    record_every: int = 1,
) -> SolveResult:
    """Run sweeps until every KKT residual is below ``params.tol`` or ``max_iter``.

    Non-convergence is reported through ``SolveResult.converged``; the
    returned ``M`` has its negative entries clamped to zero either way.
    Residuals and history refer to the scaled problem; all six are
    relative measures.
    """
    scale = auto_scale(system) if params.scale is None else params.scale
    if scale != 1.0:
        system = ConstraintSystem(system.dims, system.R_stack / scale, system.S_stack / scale, system.family, system.lead_in)
    dims = system.dims
    rep = gram_diagnostics(Dims(min(dims.n, dims.m + 2), dims.m, dims.d, 2))
    if not rep.ok:  # pragma: no cover - structural self-check
        raise SolverError(f"operator Gram structure broken: {rep}")
    if state is None:
        state = SolverState.zeros(dims)
    history = []
    res = None
    converged = False
    for it in range(1, params.max_iter + 1):
        state = sweep(state, system, params)
        res, nuc, dual_obj = kkt_residuals(state, system)
        if it % record_every == 0 or res.max() <= params.tol or it == params.max_iter:
            row = {"iteration": state.iteration, **asdict(res), "objective": nuc, "dual_objective": dual_obj}
            history.append(row)
        if not np.isfinite(res.max()):
            raise SolverError(f"non-finite residuals at iteration {state.iteration}", state)
        if res.max() <= params.tol:
            converged = True
            break
    if not converged:
        logger.warning("sGS-ADMM stopped at max_iter=%d with max residual %.3e", params.max_iter, res.max())
    return SolveResult(np.maximum(state.M, 0.0) * scale, res, converged, state.iteration, state, history, scale)


def write_history_csv(history: list[dict], fh) -> None:
    cols = ["iteration", *RESIDUAL_NAMES, "objective", "dual_objective"]
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(cols)
    for row in history:
        wr.writerow([row["iteration"]] + [repr(float(row[c])) for c in cols[1:]])


def dump_checkpoint(state: SolverState, fh) -> None:
    json.dump(state.to_dict(), fh)
