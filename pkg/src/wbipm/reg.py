"""Smoothed l1 machinery and data-driven regularization parameters.

Covers the majorization-minimization (MM) smoothing of the l1 penalty,
the iteration-dependent diagonal preconditioner it induces, an exact
dense MM reference driver, and weighted generalized cross-validation
(WGCV) on projected problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ValidationError

#: log10 span of the lambda search grid, relative to sigma_max of the
#: projected matrix, and its resolution.
WGCV_GRID_DECADES = (-10.0, 2.0)
WGCV_GRID_POINTS = 40
#: fallback lambda (fraction of sigma_max) when the WGCV surface degenerates
WGCV_FALLBACK_FRACTION = 1e-2


@dataclass
class MmConfig:
    """Solver policy: smoothing, parameter rules, stopping, preconditioning.

    lambda_rule / alpha_rule are "fixed" (use *_value) or "wgcv".
    precond selects what the flexible preconditioner is built from:
    "mm_z" (complement iterate), "mm_x" (full iterate) or "identity".
    """

    epsilon: float = 1e-6
    lambda_rule: str = "wgcv"
    lambda_value: float = 0.1
    alpha_rule: str = "fixed"
    alpha_value: float = 0.1
    max_outer: int = 120
    stagnation_tol: float = 1e-6
    stagnation_window: int = 5
    precond: str = "mm_z"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if self.lambda_rule not in ("fixed", "wgcv"):
            raise ValidationError(f"unknown lambda_rule {self.lambda_rule!r}")
        if self.alpha_rule not in ("fixed", "wgcv"):
            raise ValidationError(f"unknown alpha_rule {self.alpha_rule!r}")
        if self.lambda_value < 0 or self.alpha_value < 0:
            raise ValidationError("fixed regularization values must be >= 0")
        if self.max_outer < 1:
            raise ValidationError("max_outer must be >= 1")
        if self.stagnation_tol <= 0 or self.stagnation_window < 1:
            raise ValidationError("stagnation settings must be positive")
        if self.precond not in ("mm_z", "mm_x", "identity"):
            raise ValidationError(f"unknown precond policy {self.precond!r}")


@dataclass(frozen=True)
class Preconditioner:
    """Positive diagonal weight L; inv_apply is the action of L^{-1}."""

    diag: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "diag", np.asarray(self.diag, dtype=float))
        if self.diag.ndim != 1 or self.diag.size == 0:
            raise ValidationError("preconditioner diagonal must be a nonempty vector")
        if not np.all(np.isfinite(self.diag)) or np.any(self.diag <= 0):
            raise ValidationError("preconditioner diagonal must be finite and positive")

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.diag * v

    def inv_apply(self, v: np.ndarray) -> np.ndarray:
        return v / self.diag

    @property
    def sigma_min(self) -> float:
        return float(self.diag.min())

    @property
    def sigma_max(self) -> float:
        return float(self.diag.max())

    @classmethod
    def identity(cls, n: int) -> "Preconditioner":
        return cls(np.ones(n))


def _apply_forward(A, x: np.ndarray) -> np.ndarray:
    if hasattr(A, "apply"):
        return A.apply(x)
    return np.asarray(A) @ x


def smoothed_objective(x: np.ndarray, A, b: np.ndarray, lam: float,
                       epsilon: float) -> float:
    """||A x - b||^2 + lam^2 * sum_j sqrt(x_j^2 + epsilon)."""
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    r = _apply_forward(A, x) - b
    return float(r @ r + lam**2 * np.sum(np.sqrt(x**2 + epsilon)))


def majorizer(x: np.ndarray, x_ref: np.ndarray, epsilon: float) -> float:
    """Quadratic tangent majorant of the smoothed l1 term at x_ref.

    sum_j [ sqrt(x_ref_j^2 + eps) + (x_j^2 - x_ref_j^2) / (2 sqrt(x_ref_j^2 + eps)) ]
    """
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    root = np.sqrt(x_ref**2 + epsilon)
    return float(np.sum(root + (x**2 - x_ref**2) / (2.0 * root)))


def build_preconditioner(x: np.ndarray, epsilon: float) -> Preconditioner:
    """Diagonal weight L(x) with entries (2 sqrt(x_j^2 + epsilon))^(-1/2).

    The identity convention for the very first iteration is the caller's
    responsibility.
    """
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    return Preconditioner((2.0 * np.sqrt(np.asarray(x, float)**2 + epsilon)) ** -0.5)


def mm_exact_solve(A, b: np.ndarray, lam: float, epsilon: float,
                   n_iter: int, x0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Reference MM/IRLS driver: each reweighted LS problem solved exactly
    by dense normal equations.  Returns (x, objective values per iterate),
    objective[0] being the value at the initial point.

    Small dense problems only; this is the descent oracle the iterative
    solver is measured against.
    """
    a = np.asarray(A.matrix if hasattr(A, "matrix") else A, dtype=float)
    m, n = a.shape
    x = np.zeros(n) if x0 is None else np.asarray(x0, float).copy()
    ata = a.T @ a
    atb = a.T @ b
    objs = [smoothed_objective(x, a, b, lam, epsilon)]
    for _ in range(n_iter):
        w = lam**2 * build_preconditioner(x, epsilon).diag ** 2
        x = scipy.linalg.solve(ata + np.diag(w), atb, assume_a="pos")
        objs.append(smoothed_objective(x, a, b, lam, epsilon))
    return x, np.asarray(objs)


@dataclass(frozen=True)
class WgcvSelection:
    """Outcome of a WGCV parameter search."""

    lam: float
    objective: float
    fallback: bool = False


def _whitened_svd(G: np.ndarray, R_Z: np.ndarray, beta: float):
    """SVD data of G R_Z^{-1} plus the rhs coordinates of beta*e1."""
    G = np.atleast_2d(np.asarray(G, float))
    R_Z = np.atleast_2d(np.asarray(R_Z, float))
    k = G.shape[1]
    if R_Z.shape != (k, k):
        raise ValidationError("R_Z must be square and match the column count of G")
    # C = G R_Z^{-1}: solve R_Z^T C^T = G^T (R_Z upper triangular, invertible)
    c = scipy.linalg.solve_triangular(R_Z.T, G.T, lower=True).T
    p_mat, s, _ = np.linalg.svd(c, full_matrices=False)
    p = beta * p_mat[0, :]          # coordinates of beta*e1 in range(C)
    t0 = max(beta**2 - float(p @ p), 0.0)  # energy outside range(C)
    return s, p, t0, G.shape[0]


def _wgcv_value(lam, s, p, t0, m, k, omega):
    """Weighted GCV of the projected problem; vectorized over lam."""
    lam2 = np.atleast_1d(np.asarray(lam, float))[:, None] ** 2
    filt = lam2 / (s[None, :] ** 2 + lam2)          # 1 - shrinkage factor
    num = np.sum(filt**2 * p[None, :] ** 2, axis=1) + t0
    trace = m - omega * np.sum(s[None, :] ** 2 / (s[None, :] ** 2 + lam2), axis=1)
    return k * num / trace**2


def wgcv_select(G: np.ndarray, R_Z: np.ndarray, beta: float,
                omega: float = 1.0) -> WgcvSelection:
    """Pick lambda minimizing the weighted GCV of the projected problem

        GCV(lam) = k ||(I - G Ghat_lam) beta e1||^2 / trace(I - omega G Ghat_lam)^2,
        Ghat_lam = (G^T G + lam^2 R_Z^T R_Z)^{-1} G^T,

    over a log grid spanning WGCV_GRID_DECADES around sigma_max(G), refined
    by golden-section search when the grid minimum is interior.
    """
    G = np.atleast_2d(np.asarray(G, float))
    if G.shape[1] < 1:
        raise ValidationError("projected problem is empty (k = 0)")
    if not 0.0 < omega <= 1.0:
        raise ValidationError("omega must lie in (0, 1]")

    s_max = float(np.linalg.svd(G, compute_uv=False)[0])
    fallback_lam = WGCV_FALLBACK_FRACTION * max(s_max, 1.0)
    if s_max == 0.0:
        return WgcvSelection(fallback_lam, np.nan, fallback=True)

    s, p, t0, m = _whitened_svd(G, R_Z, beta)
    k = G.shape[1]
    grid = s_max * np.logspace(*WGCV_GRID_DECADES, WGCV_GRID_POINTS)
    vals = _wgcv_value(grid, s, p, t0, m, k, omega)
    if not np.all(np.isfinite(vals)):
        return WgcvSelection(fallback_lam, np.nan, fallback=True)

    i = int(np.argmin(vals))
    lam, val = float(grid[i]), float(vals[i])
    if 0 < i < len(grid) - 1 and vals[i] < vals[i - 1] and vals[i] < vals[i + 1]:
        lam, val = _golden_refine(
            lambda lg: float(_wgcv_value(10.0**lg, s, p, t0, m, k, omega)[0]),
            np.log10(grid[i - 1]), np.log10(grid[i + 1]),
        )
        lam = 10.0**lam
    return WgcvSelection(lam, val)


def _golden_refine(fun, lo: float, hi: float, n_iter: int = 40) -> tuple[float, float]:
    """Plain golden-section minimization of a unimodal 1-D function."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(n_iter):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    x = c if fc < fd else d
    return x, min(fc, fd)


def optimal_omega(G: np.ndarray, R_Z: np.ndarray, beta: float) -> float:
    """Per-iteration WGCV weight, for the adaptive schedule.

    Takes the smallest singular value of the whitened projected matrix as
    the presumed-optimal lambda and solves d(WGCV)/d(lambda) = 0 there for
    omega (the weight enters the trace denominator linearly).  Clamped to
    (0, 1]; callers average these across iterations.
    """
    s, p, t0, m = _whitened_svd(G, R_Z, beta)
    lam = float(s.min())
    if lam <= 0 or not np.isfinite(lam):
        return 1.0
    s2, lam2 = s**2, lam**2
    f = float(np.sum((lam2 / (s2 + lam2)) ** 2 * p**2) + t0)
    fp = float(np.sum(4.0 * lam**3 * s2 * p**2 / (s2 + lam2) ** 3))
    tau = float(np.sum(s2 / (s2 + lam2)))
    taup = float(np.sum(-2.0 * lam * s2 / (s2 + lam2) ** 2))
    denom = fp * tau - 2.0 * f * taup
    if denom <= 0 or not np.isfinite(denom) or fp <= 0:
        return 1.0
    return float(np.clip(m * fp / denom, 1e-3, 1.0))
