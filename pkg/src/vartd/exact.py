"""Closed-form solutions: true moments, projected fixed points, diagnostics."""

from dataclasses import dataclass

import numpy as np

from ._validation import check_lambda, weighted_norm
from .exceptions import ConditioningError, NumericalError
from .features import EvalResult
from .mdp import occupancy

COND_LIMIT = 1e12


@dataclass(frozen=True)
class TrueMoments:
    J: np.ndarray
    M: np.ndarray

    @property
    def V(self):
        return self.M - self.J**2

    def to_dict(self):
        return {"J": self.J.tolist(), "M": self.M.tolist(), "V": self.V.tolist()}


def _solve(A, b, what):
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what}: {exc}") from None


def solve_true(chain):
    """Exact value, second moment and variance of the reward-to-go.

    ``J = r + P J`` and ``M = r^2 + 2 r (P J) + P M``.
    """
    n = chain.n
    I_P = np.eye(n) - chain.P
    r = chain.r
    J = _solve(I_P, r, "value equation")
    M = _solve(I_P, r * r + 2.0 * r * (chain.P @ J), "second-moment equation")
    return TrueMoments(J, M)


def multistep_matrix(P, lam):
    """``P^(lam) = (1-lam) sum_l lam^l P^(l+1) = (1-lam) (I - lam P)^-1 P``."""
    n = P.shape[0]
    return (1.0 - lam) * np.linalg.solve(np.eye(n) - lam * P, P)


@dataclass(frozen=True)
class ProjectedSystem:
    """Matrices of ``A w_J = b`` and ``C w_M = d`` (single-step when lam == 0)."""

    lam: float
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    d: np.ndarray
    gram_J: np.ndarray
    gram_M: np.ndarray
    P_lam: np.ndarray
    cond_A: float
    cond_C: float

    def solve(self):
        w_J = np.linalg.solve(self.A, self.b)
        w_M = np.linalg.solve(self.C, self.d)
        return w_J, w_M

    def to_dict(self):
        return {
            "lambda": self.lam,
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "C": self.C.tolist(),
            "d": self.d.tolist(),
            "cond_A": self.cond_A,
            "cond_C": self.cond_C,
        }


def _cond_checked(X, name):
    c = float(np.linalg.cond(X))
    if not np.isfinite(c) or c > COND_LIMIT:
        raise ConditioningError(f"{name} has condition number {c:.3g} > {COND_LIMIT:.0e}")
    return c


def projection_matrix(Phi, q):
    """q-weighted orthogonal projection ``Phi (Phi^T Q Phi)^-1 Phi^T Q``."""
    QPhi = q[:, None] * Phi
    return Phi @ np.linalg.solve(Phi.T @ QPhi, QPhi.T)


def projected_solution(chain, features, lam=0.0, q=None):
    """Solve the (multistep) projected equations exactly.

    Returns the assembled :class:`ProjectedSystem` and the fixed-point
    weights as an :class:`EvalResult`.
    """
    lam = check_lambda(lam)
    if q is None:
        q = occupancy(chain).q
    n = chain.n
    P, r = chain.P, chain.r
    Phi_J, Phi_M = features.Phi_J, features.Phi_M
    I = np.eye(n)

    if lam == 0.0:
        P_lam = P
        K = I
    else:
        K = np.linalg.inv(I - lam * P)
        P_lam = (1.0 - lam) * (K @ P)

    QPhi_J = q[:, None] * Phi_J
    QPhi_M = q[:, None] * Phi_M
    A = QPhi_J.T @ ((I - P_lam) @ Phi_J)
    b = QPhi_J.T @ (K @ r)
    cond_A = _cond_checked(A, "A")
    w_J = np.linalg.solve(A, b)

    C = QPhi_M.T @ ((I - P_lam) @ Phi_M)
    d = QPhi_M.T @ (K @ (r * (r + 2.0 * (P @ (Phi_J @ w_J)))))
    cond_C = _cond_checked(C, "C")
    w_M = np.linalg.solve(C, d)

    system = ProjectedSystem(
        lam=lam,
        A=A,
        b=b,
        C=C,
        d=d,
        gram_J=Phi_J.T @ QPhi_J,
        gram_M=Phi_M.T @ QPhi_M,
        P_lam=P_lam,
        cond_A=cond_A,
        cond_C=cond_C,
    )

    if lam == 0.0:
        # z* must be a fixed point of Pi T
        z_J = Phi_J @ w_J
        z_M = Phi_M @ w_M
        Pi_J = projection_matrix(Phi_J, q)
        Pi_M = projection_matrix(Phi_M, q)
        TJ = r + P @ z_J
        TM = r * r + 2.0 * r * (P @ z_J) + P @ z_M
        resid = max(
            np.linalg.norm(Pi_J @ TJ - z_J) / max(1.0, np.linalg.norm(z_J)),
            np.linalg.norm(Pi_M @ TM - z_M) / max(1.0, np.linalg.norm(z_M)),
        )
        if resid > 1e-8:
            raise NumericalError(f"projected fixed-point residual {resid:.3g} exceeds 1e-8")

    return system, EvalResult.from_weights(features, w_J, w_M)


def joint_transition(chain):
    """The 2n x 2n matrix [[P, 0], [2RP, P]] acting on (z_J, z_M)."""
    n = chain.n
    P = chain.P
    out = np.zeros((2 * n, 2 * n))
    out[:n, :n] = P
    out[n:, :n] = 2.0 * chain.r[:, None] * P
    out[n:, n:] = P
    return out


@dataclass(frozen=True)
class DiagnosticsReport:
    lam: float
    rho_single: float
    rho_J: float
    rho_M: float
    error_bound_lhs: float
    error_bound_rhs: float
    alpha: float = 0.5
    scale: float = 1.0

    @property
    def bound_holds(self):
        # both sides vanish for exact features; allow rounding at the size of z_true
        return self.error_bound_lhs <= self.error_bound_rhs + 1e-12 * self.scale

    def to_dict(self):
        return {
            "lambda": self.lam,
            "rho_single": self.rho_single,
            "rho_J": self.rho_J,
            "rho_M": self.rho_M,
            "alpha": self.alpha,
            "error_bound_lhs": self.error_bound_lhs,
            "error_bound_rhs": self.error_bound_rhs,
            "bound_holds": self.bound_holds,
        }


def _rho(X):
    return float(np.max(np.abs(np.linalg.eigvals(X))))


def diagnostics(chain, features, lam=0.0):
    """Contraction and error-bound diagnostics for the projected operators.

    ``rho_single`` is the spectral radius of ``Pi @ joint_transition``; it is
    below one exactly when the projected joint operator contracts in some
    norm. The error bound is evaluated with the blockwise q-norm at
    ``alpha = 1/2`` using ``rho_single`` as the contraction factor. That
    surrogate inequality is reported, not guaranteed.
    """
    lam = check_lambda(lam)
    q = occupancy(chain).q
    n = chain.n
    Pi_J = projection_matrix(features.Phi_J, q)
    Pi_M = projection_matrix(features.Phi_M, q)
    Pi = np.zeros((2 * n, 2 * n))
    Pi[:n, :n] = Pi_J
    Pi[n:, n:] = Pi_M
    rho_single = _rho(Pi @ joint_transition(chain))

    P_lam = chain.P if lam == 0.0 else multistep_matrix(chain.P, lam)
    rho_J = _rho(Pi_J @ P_lam)
    rho_M = _rho(Pi_M @ P_lam)

    truth = solve_true(chain)
    _, approx = projected_solution(chain, features, 0.0, q=q)
    a = 0.5
    lhs = a * weighted_norm(truth.J - approx.J, q) + (1 - a) * weighted_norm(truth.M - approx.M, q)
    proj_err = a * weighted_norm(truth.J - Pi_J @ truth.J, q) + (1 - a) * weighted_norm(
        truth.M - Pi_M @ truth.M, q
    )
    rhs = proj_err / (1.0 - rho_single) if rho_single < 1 else np.inf
    return DiagnosticsReport(
        lam=lam,
        rho_single=rho_single,
        rho_J=rho_J,
        rho_M=rho_M,
        error_bound_lhs=float(lhs),
        error_bound_rhs=float(rhs),
        alpha=a,
        scale=float(a * weighted_norm(truth.J, q) + (1 - a) * weighted_norm(truth.M, q)),
    )


def td0_mean_field(chain, features, q=None):
    """Drift of episode-batch TD(0): ``E[update] = z + M w`` on (w_J, w_M).

    Returns ``(M, z)`` with ``M = [[Phi_J^T Q (P-I) Phi_J, 0],
    [2 Phi_M^T Q R P Phi_J, Phi_M^T Q (P-I) Phi_M]]`` and
    ``z = (Phi_J^T Q r, Phi_M^T Q R r)``.
    """
    if q is None:
        q = occupancy(chain).q
    P, r = chain.P, chain.r
    Phi_J, Phi_M = features.Phi_J, features.Phi_M
    lJ, lM = Phi_J.shape[1], Phi_M.shape[1]
    QPhi_J = q[:, None] * Phi_J
    QPhi_M = q[:, None] * Phi_M
    Mmat = np.zeros((lJ + lM, lJ + lM))
    Mmat[:lJ, :lJ] = QPhi_J.T @ (P @ Phi_J - Phi_J)
    Mmat[lJ:, :lJ] = 2.0 * QPhi_M.T @ (r[:, None] * (P @ Phi_J))
    Mmat[lJ:, lJ:] = QPhi_M.T @ (P @ Phi_M - Phi_M)
    z = np.concatenate([QPhi_J.T @ r, QPhi_M.T @ (r * r)])
    return Mmat, z
