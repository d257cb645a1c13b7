"""Augmented flexible Golub-Kahan (AFGK) process.

Builds a pair of orthonormal bases U (data side) and V, a column basis Z
of the complement solution space obtained by flexible preconditioning and
deflation against the warm direction, the Hessenberg/triangular projection
matrices G and T tying them together, and an incrementally-updated thin QR
of Z.  Also solves the projected Tikhonov subproblem and the scalar
warm-direction subproblem in closed form.

The deflated map  Atil = (I - y y^T) A  and its adjoint are applied as
rank-one corrections and never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AfgkBreakdown, NumericalError, RankDeficientUpdate, ValidationError

#: relative threshold below which a new recurrence direction counts as zero
BREAKDOWN_TOL = 1e-12
#: relative threshold below which an appended QR column counts as dependent
RANKDEF_TOL = 1e-12
#: run a second orthogonalization pass when one pass shrinks the norm this much
REORTH_FACTOR = 1e3


@dataclass
class DeflatedSystem:
    """Forward map with the warm-basis data direction projected out.

    y is the unit vector A x_nn_hat / gamma; with no warm basis (y is None)
    the "deflated" map is just A itself, which is how the plain flexible
    hybrid baseline reuses this machinery.
    """

    A: object                      # LinearOperator-like: apply / adjoint_apply / shape
    b: np.ndarray
    b_tilde: np.ndarray
    x_nn_hat: np.ndarray | None = None
    y: np.ndarray | None = None
    gamma: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def apply_tilde(self, v: np.ndarray) -> np.ndarray:
        """Atil v = (I - y y^T) A v."""
        av = self.A.apply(v)
        if self.y is None:
            return av
        return av - self.y * (self.y @ av)

    def adjoint_tilde(self, u: np.ndarray) -> np.ndarray:
        """Atil^T u = A^T (I - y y^T) u."""
        if self.y is not None:
            u = u - self.y * (self.y @ u)
        return self.A.adjoint_apply(u)

    def deflate_direction(self, z: np.ndarray) -> np.ndarray:
        """Remove the warm-basis component from a candidate solution direction."""
        if self.x_nn_hat is None:
            return z
        z = z - self.x_nn_hat * (self.x_nn_hat @ z)
        # one cheap touch-up pass keeps the stored basis orthogonal to the
        # warm direction even when ||z|| is large
        r = self.x_nn_hat @ z
        if abs(r) > 1e-14 * np.linalg.norm(z):
            z = z - self.x_nn_hat * r
        return z


def undeflated(A, b: np.ndarray) -> DeflatedSystem:
    """System wrapper for the no-warm-basis baseline: Atil = A, btil = b."""
    return DeflatedSystem(A=A, b=np.asarray(b, float), b_tilde=np.asarray(b, float).copy())


def _mgs(h: np.ndarray, basis: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Modified Gram-Schmidt of h against all basis vectors, with one extra
    pass when cancellation ate more than REORTH_FACTOR of the norm.
    Returns (coefficients, orthogonalized h)."""
    coeffs = np.zeros(len(basis))
    if not basis:
        return coeffs, h
    norm0 = np.linalg.norm(h)
    for j, q in enumerate(basis):
        coeffs[j] = q @ h
        h = h - coeffs[j] * q
    if np.linalg.norm(h) < norm0 / REORTH_FACTOR:
        for j, q in enumerate(basis):
            c2 = q @ h
            h = h - c2 * q
            coeffs[j] += c2
    return coeffs, h


@dataclass
class AfgkState:
    """Factorization state after k steps of the AFGK recurrence.

    In exact arithmetic:  Atil Z = U G,  Atil^T U[:, :k] = V T,
    Z = Q_Z R_Z (thin QR), U and V have orthonormal columns, and every
    column of Z is orthogonal to the warm direction.
    """

    beta: float
    _us: list = field(default_factory=list)      # M-vectors, k+1 of them
    _vs: list = field(default_factory=list)      # N-vectors, k of them
    _zs: list = field(default_factory=list)      # N-vectors, k of them
    _g_cols: list = field(default_factory=list)  # col i: entries g[1..i+1, i]
    _t_cols: list = field(default_factory=list)  # col i: entries t[1..i, i]
    _q_cols: list = field(default_factory=list)  # thin-QR Q columns of Z
    _r: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    _y_az: list = field(default_factory=list)    # y^T A z_i per column

    @property
    def k(self) -> int:
        return len(self._zs)

    @property
    def U(self) -> np.ndarray:
        return np.column_stack(self._us)

    @property
    def V(self) -> np.ndarray:
        return np.column_stack(self._vs)

    @property
    def Z(self) -> np.ndarray:
        return np.column_stack(self._zs)

    @property
    def G(self) -> np.ndarray:
        g = np.zeros((self.k + 1, self.k))
        for i, col in enumerate(self._g_cols):
            g[: i + 2, i] = col
        return g

    @property
    def T(self) -> np.ndarray:
        t = np.zeros((self.k, self.k))
        for i, col in enumerate(self._t_cols):
            t[: i + 1, i] = col
        return t

    @property
    def Q_Z(self) -> np.ndarray:
        return np.column_stack(self._q_cols)

    @property
    def R_Z(self) -> np.ndarray:
        return self._r.copy()

    @property
    def y_az(self) -> np.ndarray:
        """Per-column scalars y^T A z_i (zeros when there is no warm basis)."""
        return np.asarray(self._y_az)


def afgk_init(ds: DeflatedSystem) -> AfgkState:
    """Start the recurrence with u_1 = btil / ||btil||.

    Raises ValidationError when btil vanishes: the warm-basis direction
    already explains the measurement and there is nothing to iterate on.
    """
    beta = float(np.linalg.norm(ds.b_tilde))
    if beta <= 1e-12 * np.linalg.norm(ds.b):
        raise ValidationError(
            "measurement already explained by warm basis direction (btil = 0)"
        )
    state = AfgkState(beta=beta)
    state._us.append(ds.b_tilde / beta)
    return state


def afgk_step(state: AfgkState, ds: DeflatedSystem, precond=None) -> AfgkState:
    """Advance the recurrence by one iteration (mutates and returns state).

    precond is the flexible diagonal L_i (object with inv_apply), or None
    for the identity.  Raises AfgkBreakdown when a new direction vanishes
    relative to BREAKDOWN_TOL (state is left untouched), and lets
    RankDeficientUpdate from the QR update propagate with the same
    contract.
    """
    u_i = state._us[-1]

    h = ds.adjoint_tilde(u_i)
    norm_h0 = np.linalg.norm(h)
    t_col, h = _mgs(h, state._vs)
    t_ii = np.linalg.norm(h)
    if t_ii <= BREAKDOWN_TOL * norm_h0:
        raise AfgkBreakdown(f"adjoint direction vanished at step {state.k + 1}")
    v_i = h / t_ii

    z_i = precond.inv_apply(v_i) if precond is not None else v_i.copy()
    z_i = ds.deflate_direction(z_i)

    # forward sweep; keep y^T A z_i on the side for the scalar subproblem
    az = ds.A.apply(z_i)
    if ds.y is not None:
        w_i = float(ds.y @ az)
        h2 = az - ds.y * w_i
    else:
        w_i = 0.0
        h2 = az
    norm_h20 = np.linalg.norm(h2)
    # Gram-Schmidt against the u basis.  (The source recurrence prints the
    # subtraction against v_j here; the coefficients are inner products
    # with u_j, so we read that as a typo and subtract u_j.)
    g_col, h2 = _mgs(h2, state._us)
    g_next = np.linalg.norm(h2)
    if g_next <= BREAKDOWN_TOL * norm_h20:
        raise AfgkBreakdown(f"data-side direction vanished at step {state.k + 1}")

    q_new, r_new = qr_append(
        np.column_stack(state._q_cols) if state._q_cols else np.zeros((z_i.size, 0)),
        state._r, z_i,
    )

    state._vs.append(v_i)
    state._t_cols.append(np.append(t_col, t_ii))
    state._zs.append(z_i)
    state._y_az.append(w_i)
    state._g_cols.append(np.append(g_col, g_next))
    state._us.append(h2 / g_next)
    state._q_cols.append(q_new[:, -1])
    state._r = r_new
    return state


def qr_append(Q: np.ndarray, R: np.ndarray, z_new: np.ndarray,
              rankdef_tol: float = RANKDEF_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Extend a thin QR factorization by one column in O(Nk).

    Q' = [Q, (I - Q Q^T) z_new / r],  R' = [[R, Q^T z_new], [0, r]]  with
    r = ||(I - Q Q^T) z_new||; a second orthogonalization pass runs when
    the first removes more than a factor REORTH_FACTOR of the norm.  The
    diagonal of R stays nonnegative by construction.
    """
    Q = np.atleast_2d(np.asarray(Q, float))
    z_new = np.asarray(z_new, float)
    norm0 = np.linalg.norm(z_new)
    r_col = Q.T @ z_new
    h = z_new - Q @ r_col
    if np.linalg.norm(h) < norm0 / REORTH_FACTOR:
        c2 = Q.T @ h
        h = h - Q @ c2
        r_col = r_col + c2
    r = np.linalg.norm(h)
    if r <= rankdef_tol * norm0:
        raise RankDeficientUpdate("appended column lies in the current range")
    k = Q.shape[1]
    q_out = np.column_stack([Q, h / r])
    r_out = np.zeros((k + 1, k + 1))
    r_out[:k, :k] = R
    r_out[:k, k] = r_col
    r_out[k, k] = r
    return q_out, r_out


def projected_solve(G: np.ndarray, R_Z: np.ndarray, beta: float,
                    lam: float) -> tuple[np.ndarray, float]:
    """Solve min_d ||G d - beta e1||^2 + lam^2 ||R_Z d||^2 by stacked dense LS.

    Returns (d, ||G d - beta e1||).  lam = 0 is allowed for oracle use and
    requires the stacked system to have full column rank.
    """
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    G = np.atleast_2d(np.asarray(G, float))
    R_Z = np.atleast_2d(np.asarray(R_Z, float))
    m, k = G.shape
    stacked = np.vstack([G, lam * R_Z])
    rhs = np.zeros(m + k)
    rhs[0] = beta
    d, _, rank, _ = np.linalg.lstsq(stacked, rhs, rcond=None)
    if rank < k:
        if lam == 0:
            raise NumericalError("projected system is rank deficient at lambda = 0")
        raise NumericalError("stacked projected system is rank deficient")
    resid = rhs[:m] - G @ d
    return d, float(np.linalg.norm(resid))


def solve_projected(state: AfgkState, lam: float) -> tuple[np.ndarray, float]:
    """Projected Tikhonov coefficients for the current basis (k >= 1)."""
    if state.k < 1:
        raise ValidationError("projected solve needs at least one basis vector")
    return projected_solve(state.G, state.R_Z, state.beta, lam)


def solve_c(gamma: float, s: float, t: float, alpha: float) -> float:
    """Closed-form minimizer of the scalar warm-direction subproblem:

        c = gamma (t - s) / (gamma^2 + alpha^2),

    with t = y^T b and s = y^T A Z d."""
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    if alpha < 0:
        raise ValidationError("alpha must be >= 0")
    return float(gamma * (t - s) / (gamma**2 + alpha**2))


def factorization_residuals(state: AfgkState, ds: DeflatedSystem) -> dict[str, float]:
    """Dense relation residuals for certification (test-scale systems only).

    Keys: u_orth, v_orth (Frobenius departures from orthonormality),
    forward (||Atil Z - U G||_F), adjoint (||Atil^T U_k - V T||_F),
    deflation (||x_hat^T Z||_inf, 0 when no warm basis),
    qr (||Z - Q_Z R_Z||_F), plus atil_norm (||Atil||_F) for scaling.
    """
    u, v, z = state.U, state.V, state.Z
    n = ds.shape[1]
    atil = np.column_stack([ds.apply_tilde(e) for e in np.eye(n)])
    out = {
        "u_orth": float(np.linalg.norm(u.T @ u - np.eye(u.shape[1]))),
        "v_orth": float(np.linalg.norm(v.T @ v - np.eye(v.shape[1]))),
        "forward": float(np.linalg.norm(atil @ z - u @ state.G)),
        "adjoint": float(np.linalg.norm(atil.T @ u[:, : state.k] - v @ state.T)),
        "qr": float(np.linalg.norm(z - state.Q_Z @ state.R_Z)),
        "atil_norm": float(np.linalg.norm(atil)),
    }
    if ds.x_nn_hat is not None:
        out["deflation"] = float(np.max(np.abs(ds.x_nn_hat @ z)))
    else:
        out["deflation"] = 0.0
    return out
