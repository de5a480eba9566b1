"""Matrix-free linear constraints on the stacked sub-sketch matrix.

The unknown is the stack of sub-sketches M[k, i] (upstream window k, delay
branch i), held as an array of shape ``(n, m, d, w)``.  Its row-major
flattening is the ``(n*m*d, w)`` matrix with blocks ordered M_11, ..., M_nm.

* ``apply_B1`` maps it to the downstream sums for windows m..n,
* ``apply_B2`` to the upstream sums for windows 1..n,
* ``apply_B3_rowsum`` to the row-sum differences of every block.

Dense materialisations (``dense_B1`` etc.) exist as test oracles only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .sketch import HashFamily, diff_matrix


@dataclass(frozen=True)
class Dims:
    n: int
    m: int
    d: int
    w: int

    def __post_init__(self):
        if not self.n >= self.m >= 1:
            raise ValueError(f"need n >= m >= 1, got n={self.n}, m={self.m}")
        if self.d < 2 or self.w < 1:
            raise ValueError(f"need d >= 2 and w >= 1, got d={self.d}, w={self.w}")

    @property
    def lam(self) -> int:
        return self.n * self.m * self.d

    @property
    def stack_shape(self) -> tuple[int, int, int, int]:
        return (self.n, self.m, self.d, self.w)

    @property
    def eq_shape(self) -> tuple[int, int, int]:
        return (self.n - self.m + 1, self.d, self.w)

    @property
    def ineq_shape(self) -> tuple[int, int, int]:
        return (self.n, self.d, self.w)

    @property
    def rowsum_shape(self) -> tuple[int, int, int]:
        return (self.n, self.m, self.d - 1)


class DimensionMismatch(ValueError):
    pass


def as_stack(M: np.ndarray, dims: Dims) -> np.ndarray:
    """Accept either the 4-d stack or its ``(lambda, w)`` flattening."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape == dims.stack_shape:
        return M
    if M.shape == (dims.lam, dims.w):
        return M.reshape(dims.stack_shape)
    raise DimensionMismatch(f"stack shape {M.shape} does not fit {dims}")


def _expect(arr: np.ndarray, shape: tuple, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != shape:
        raise DimensionMismatch(f"{what}: expected shape {shape}, got {arr.shape}")
    return arr


def apply_B1(M, dims: Dims) -> np.ndarray:
    return kernels.b1_apply(np.ascontiguousarray(as_stack(M, dims)))


def apply_B2(M, dims: Dims) -> np.ndarray:
    return kernels.b2_apply(np.ascontiguousarray(as_stack(M, dims)))


def apply_B3_rowsum(M, dims: Dims) -> np.ndarray:
    return kernels.b3_rowsum(np.ascontiguousarray(as_stack(M, dims)))


def apply_B1_adjoint(Y, dims: Dims) -> np.ndarray:
    Y = _expect(Y, dims.eq_shape, "B1 adjoint input")
    return kernels.b1_adjoint(np.ascontiguousarray(Y), dims.n, dims.m)


def apply_B2_adjoint(V, dims: Dims) -> np.ndarray:
    V = _expect(V, dims.ineq_shape, "B2 adjoint input")
    return kernels.b2_adjoint(np.ascontiguousarray(V), dims.m)


def apply_B3_rowsum_adjoint(y, dims: Dims) -> np.ndarray:
    """``B3^T y 1^T``: each block gets the column ``A^T y_block`` repeated across w."""
    y = _expect(y, dims.rowsum_shape, "B3 adjoint input")
    return kernels.b3_adjoint(np.ascontiguousarray(y), dims.w)


# --------------------------------------------------------------------------
# dense oracles


def dense_B1(dims: Dims) -> np.ndarray:
    n, m, d = dims.n, dims.m, dims.d
    B = np.zeros(((n - m + 1) * d, dims.lam))
    eye = np.eye(d)
    for j in range(n - m + 1):
        k = j + m - 1
        for i in range(m):
            blk = (k - i) * m + i
            B[j * d:(j + 1) * d, blk * d:(blk + 1) * d] = eye
    return B


def dense_B2(dims: Dims) -> np.ndarray:
    n, m, d = dims.n, dims.m, dims.d
    return np.kron(np.eye(n), np.kron(np.ones((1, m)), np.eye(d)))


def dense_B3(dims: Dims) -> np.ndarray:
    return np.kron(np.eye(dims.n * dims.m), diff_matrix(dims.d))


@dataclass
class GramReport:
    dims: Dims
    b1_dev: float
    b2_dev: float
    b3_dev: float

    @property
    def max_dev(self) -> float:
        return max(self.b1_dev, self.b2_dev, self.b3_dev)

    @property
    def ok(self) -> bool:
        return self.max_dev == 0.0


def gram_diagnostics(dims: Dims) -> GramReport:
    """Check ``B1 B1^T = mI``, ``B2 B2^T = mI`` and ``B3 B3^T = blockdiag(A A^T)``.

    The dense operators are built from 0/+-1 entries and multiplied in
    integer arithmetic, so a correct structure shows zero deviation.
    """
    B1 = dense_B1(dims).astype(np.int64)
    B2 = dense_B2(dims).astype(np.int64)
    B3 = dense_B3(dims).astype(np.int64)
    A = diff_matrix(dims.d).astype(np.int64)
    m = dims.m
    dev1 = np.abs(B1 @ B1.T - m * np.eye(B1.shape[0], dtype=np.int64)).max(initial=0)
    dev2 = np.abs(B2 @ B2.T - m * np.eye(B2.shape[0], dtype=np.int64)).max(initial=0)
    dev3 = np.abs(B3 @ B3.T - np.kron(np.eye(dims.n * m, dtype=np.int64), A @ A.T)).max(initial=0)
    return GramReport(dims, float(dev1), float(dev2), float(dev3))


# --------------------------------------------------------------------------


@dataclass
class ConstraintSystem:
    """Right-hand sides of the decomposition model for one sketch series.

    ``lead_in`` empty upstream windows may be prepended (S = 0 there), which
    pins their sub-sketches to zero and lets the downstream equalities cover
    windows 1..m-1 of the real series as well.  Index ``k`` of the real series
    sits at ``k + lead_in`` in the system.
    """

    dims: Dims
    R_stack: np.ndarray  # (n - m + 1, d, w): R_m .. R_n
    S_stack: np.ndarray  # (n, d, w): S_1 .. S_n
    family: HashFamily | None = None
    lead_in: int = 0

    def __post_init__(self):
        self.R_stack = _expect(self.R_stack, self.dims.eq_shape, "R stack")
        self.S_stack = _expect(self.S_stack, self.dims.ineq_shape, "S stack")

    @property
    def A(self) -> np.ndarray:
        return diff_matrix(self.dims.d)

    @classmethod
    def from_series(cls, series, lead_in: int = 0) -> ConstraintSystem:
        cfg = series.cfg
        if lead_in < 0 or lead_in > cfg.m - 1:
            raise ValueError(f"lead_in must be in [0, m-1], got {lead_in}")
        n = cfg.n + lead_in
        dims = Dims(n, cfg.m, cfg.d, cfg.w)
        S = np.zeros(dims.ineq_shape)
        S[lead_in:] = series.S
        R = np.zeros((n, cfg.d, cfg.w))
        R[lead_in:] = series.R
        return cls(dims, R[cfg.m - 1:], S, cfg.family, lead_in)

    def real_stack(self, M: np.ndarray) -> np.ndarray:
        """Drop the lead-in blocks from a system-sized stack."""
        return as_stack(M, self.dims)[self.lead_in:]

    def pad_stack(self, M_real: np.ndarray) -> np.ndarray:
        out = np.zeros(self.dims.stack_shape)
        out[self.lead_in:] = M_real
        return out


def recover_loss_sketches(M: np.ndarray, S: np.ndarray, horizon: int | None = None) -> np.ndarray:
    """``phi_k = max(S_k - sum_i M[k, i], 0)`` for the first ``horizon`` windows.

    ``M`` is ``(n, m, d, w)`` and ``S`` is ``(n, d, w)``, both in real-series
    indexing; ``horizon`` defaults to ``n - m + 1``.
    """
    M = np.asarray(M, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if M.ndim != 4 or S.shape != (M.shape[0],) + M.shape[2:]:
        raise DimensionMismatch(f"stack {M.shape} and upstream series {S.shape} disagree")
    n, m = M.shape[:2]
    K = n - m + 1 if horizon is None else horizon
    return np.maximum(S[:K] - M[:K].sum(axis=1), 0.0)


def stack_to_dict(M: np.ndarray) -> dict:
    n, m, d, w = M.shape
    return {"n": n, "m": m, "d": d, "w": w, "blocks": M.ravel().tolist()}


def stack_from_dict(obj: dict) -> np.ndarray:
    shape = (int(obj["n"]), int(obj["m"]), int(obj["d"]), int(obj["w"]))
    return np.asarray(obj["blocks"], dtype=np.float64).reshape(shape)


def dump_stack(M: np.ndarray, fh) -> None:
    json.dump(stack_to_dict(M), fh)
