"""Dense linear-algebra kernel shared by every operator fit.

All data matrices in this package are column-per-sample: a dataset of N
lifted samples of dimension M is stored as an M x N array. Operators act
from the left, so a fit solves ``A @ G ~= Y`` for A.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NumericalError",
    "LassoResult",
    "pinv",
    "matexp",
    "lstsq",
    "lasso_solve",
]


class NumericalError(RuntimeError):
    """A dense kernel failed to produce a usable result."""


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def pinv(a, rank_tol: float = 0.0) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD with a relative rank cutoff.

    Singular values below ``rank_tol * sigma_max`` are truncated.
    ``rank_tol = 0`` selects the default ``max(rows, cols) * eps``.
    """
    a = _as_matrix(a, "a")
    if rank_tol < 0:
        raise ValueError("rank_tol must be >= 0")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed to converge on {a.shape} matrix") from exc
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    tol = rank_tol if rank_tol > 0 else max(a.shape) * np.finfo(float).eps
    keep = s > tol * s[0]
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (vt.T * inv_s) @ u.T


# Pade-13 numerator coefficients for the scaling-and-squaring method.
_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)
# 1-norm threshold below which the unscaled Pade-13 approximant is accurate.
_PADE13_THETA = 5.371920351148152


def matexp(a) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a Pade-13 approximant.

    The scaling exponent is chosen from the 1-norm of ``a``.
    """
    a = _as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matexp requires a square matrix, got shape {a.shape}")
    n = a.shape[0]
    norm = np.linalg.norm(a, 1)
    if not np.isfinite(norm) or norm > 1e12:
        raise NumericalError(f"matrix 1-norm {norm:g} too large for exponentiation")
    s = max(0, int(np.ceil(np.log2(norm / _PADE13_THETA)))) if norm > _PADE13_THETA else 0
    sa = a / (2.0 ** s)

    b = _PADE13
    ident = np.eye(n)
    sa2 = sa @ sa
    sa4 = sa2 @ sa2
    sa6 = sa4 @ sa2
    u = sa @ (
        sa6 @ (b[13] * sa6 + b[11] * sa4 + b[9] * sa2)
        + b[7] * sa6 + b[5] * sa4 + b[3] * sa2 + b[1] * ident
    )
    v = (
        sa6 @ (b[12] * sa6 + b[10] * sa4 + b[8] * sa2)
        + b[6] * sa6 + b[4] * sa4 + b[2] * sa2 + b[0] * ident
    )
    try:
        r = np.linalg.solve(v - u, v + u)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Pade denominator is singular") from exc
    for _ in range(s):
        r = r @ r
    if not np.all(np.isfinite(r)):
        raise NumericalError("matrix exponential overflowed")
    return r


def lstsq(g, y) -> np.ndarray:
    """Minimum-norm solution of ``argmin_A ||A G - Y||_F`` (column-per-sample).

    Equivalent to ``Y @ pinv(G)``.
    """
    g = _as_matrix(g, "g")
    y = _as_matrix(y, "y")
    if g.shape[1] != y.shape[1]:
        raise ValueError(
            f"sample counts disagree: G has {g.shape[1]} columns, Y has {y.shape[1]}"
        )
    return y @ pinv(g)


@dataclass(frozen=True)
class LassoResult:
    coef: np.ndarray
    converged: bool
    n_iter: int
    objective: float


def _lasso_objective(a, g, y, alpha):
    return float(np.sum((a @ g - y) ** 2) + alpha * np.sum(np.abs(a)))


def lasso_solve(g, y, alpha: float, max_iter: int = 2000,
                tol: float = 1e-10) -> LassoResult:
    """Solve ``argmin_A ||A G - Y||_F^2 + alpha * sum|A_ij|`` by proximal gradient.

    The objective separates over rows of A, so all rows are iterated jointly
    in matrix form (ISTA with a shared backtracked step). With ``alpha = 0``
    this reduces to the minimum-norm least-squares solution and is computed
    directly.

    Non-convergence within ``max_iter`` is not an error: the best iterate is
    returned with ``converged=False``.
    """
    g = _as_matrix(g, "g")
    y = _as_matrix(y, "y")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if g.shape[1] != y.shape[1]:
        raise ValueError(
            f"sample counts disagree: G has {g.shape[1]} columns, Y has {y.shape[1]}"
        )
    if alpha == 0.0:
        a = lstsq(g, y)
        obj = float(np.sum((a @ g - y) ** 2))
        return LassoResult(coef=a, converged=True, n_iter=0, objective=obj)

    gram = g @ g.T
    ygt = y @ g.T
    lip = 2.0 * float(np.linalg.eigvalsh(gram)[-1])
    if lip <= 0.0:
        return LassoResult(coef=np.zeros_like(ygt), converged=True, n_iter=0,
                           objective=float(np.sum(y ** 2)))
    step = 1.0 / lip

    a = np.zeros_like(ygt)
    obj = _lasso_objective(a, g, y, alpha)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = 2.0 * (a @ gram - ygt)
        while True:
            trial = a - step * grad
            a_new = np.sign(trial) * np.maximum(np.abs(trial) - alpha * step, 0.0)
            obj_new = _lasso_objective(a_new, g, y, alpha)
            if obj_new <= obj + 1e-12 * max(1.0, obj) or step < 1e-18 / lip:
                break
            step *= 0.5
        assert obj_new <= obj + 1e-9 * max(1.0, obj), "lasso objective increased"
        delta = np.max(np.abs(a_new - a)) if a.size else 0.0
        a, obj = a_new, obj_new
        if delta < tol:
            converged = True
            break
    return LassoResult(coef=a, converged=converged, n_iter=it, objective=float(obj))
