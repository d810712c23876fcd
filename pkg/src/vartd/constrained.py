"""Second-moment weights under a nonnegative-variance constraint.

The constraint ``phi_M(x)^T w >= (phi_J(x)^T w_J)^2`` at chosen states is
the polyhedron ``H w <= g``. The constrained projected equation is solved
by iterating ``w <- Proj_Xi[w - gamma Xi^-1 (C w - d)]`` where the
projection onto the polyhedron uses Hildreth's dual coordinate ascent.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from ._validation import check_states
from .estimators import LSTDVariance
from .exceptions import InfeasibleError, NonConvergenceError, ProjectionError, StructuralError
from .exact import ProjectedSystem
from .features import EvalResult

KKT_TOL = 1e-10
MAX_SWEEPS = 10**5


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    states: np.ndarray
    H: np.ndarray
    g: np.ndarray
    w_J: np.ndarray

    @property
    def n_constraints(self):
        return self.H.shape[0]

    def slack(self, w):
        """``g - H w``; nonnegative entries mean the constraint holds."""
        return self.g - self.H @ np.asarray(w, dtype=float)

    def is_feasible(self, w, tol=0.0):
        return bool(np.all(self.H @ np.asarray(w, dtype=float) <= self.g + tol))


def build_constraints(states, features, w_J):
    """Rows ``-phi_M(x_i)^T`` and bounds ``-(phi_J(x_i)^T w_J)^2``.

    ``states`` may be ``"all"`` or a sequence of state indices.
    """
    if isinstance(states, str):
        if states != "all":
            raise StructuralError(f"unknown constraint selector {states!r}")
        states = np.arange(features.n)
    states = check_states(states, features.n)
    if states.size == 0:
        raise StructuralError("at least one constrained state is required")
    w_J = np.asarray(w_J, dtype=float)
    H = -features.Phi_M[states]
    g = -((features.Phi_J[states] @ w_J) ** 2)
    return ConstraintSet(states, H, g, w_J)


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    margin: float
    witness: np.ndarray = field(default=None)


def check_feasibility(cs):
    """Look for a strict interior point via ``max s  s.t.  H w + s 1 <= g``.

    ``s`` is capped at 1, so the LP is always bounded; ``margin > 0`` means
    some ``w`` satisfies every constraint strictly.
    """
    H, g = cs.H, cs.g
    m, l = H.shape
    c = np.zeros(l + 1)
    c[-1] = -1.0
    A_ub = np.column_stack([H, np.ones(m)])
    bounds = [(None, None)] * l + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=g, bounds=bounds, method="highs")
    if res.status != 0:
        return FeasibilityReport(False, -np.inf, None)
    s = float(res.x[-1])
    w = res.x[:l]
    strict = s > 0 and bool(np.all(H @ w < g))
    return FeasibilityReport(strict, s, w if strict else None)


@dataclass(frozen=True)
class IterationConfig:
    """Step size, metric and stopping rule for the projected iteration.

    ``xi`` is ``"gram"`` (``Phi_M^T Q Phi_M``), ``"identity"``, or an
    explicit symmetric positive definite matrix. ``gamma`` is the initial
    step; with ``backtrack`` it is halved whenever the step residual grows.
    ``tol`` is relative to ``max(1, ||w||_Xi)``.
    """

    gamma: float = 1.0
    xi: object = "gram"
    tol: float = 1e-9
    max_iters: int = 10**5
    backtrack: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    def metric(self, system):
        if isinstance(self.xi, str):
            if self.xi == "gram":
                Xi = np.asarray(system.gram_M, dtype=float)
            elif self.xi == "identity":
                Xi = np.eye(system.C.shape[0])
            else:
                raise ValueError(f"unknown metric {self.xi!r}")
        else:
            Xi = np.asarray(self.xi, dtype=float)
        if Xi.shape != system.C.shape or not np.allclose(Xi, Xi.T, rtol=1e-12, atol=0):
            raise ValueError("Xi must be symmetric with the shape of C")
        try:
            np.linalg.cholesky(Xi)
        except np.linalg.LinAlgError:
            raise ValueError("Xi must be positive definite") from None
        return 0.5 * (Xi + Xi.T)


class PolyhedronProjector:
    """Projection onto ``{v : H v <= g}`` in the ``Xi``-weighted norm.

    Dual coordinate ascent (Hildreth) with warm-started multipliers; an
    active-set solve polishes the answer once the active set settles.
    """

    def __init__(self, H, g, Xi=None, tol=KKT_TOL, max_sweeps=MAX_SWEEPS):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.g = np.asarray(g, dtype=float).reshape(-1)
        m, l = self.H.shape
        if self.g.shape != (m,):
            raise StructuralError("H and g disagree on the number of constraints")
        Xi = np.eye(l) if Xi is None else np.asarray(Xi, dtype=float)
        self.Xi = Xi
        self.Xi_inv_Ht = np.linalg.solve(Xi, self.H.T)
        self.G = self.H @ self.Xi_inv_Ht
        self.diag = np.diag(self.G).copy()
        if np.any(self.diag <= 0):
            raise StructuralError("constraint rows must be nonzero")
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.mu = np.zeros(m)
        self.sweeps = 0

    def _scale(self, w):
        return 1.0 + np.max(np.abs(self.g)) + np.max(np.abs(self.H @ w))

    def kkt_residual(self, v, mu, w):
        s = self.H @ v - self.g
        primal = max(0.0, float(np.max(s)))
        comp = float(np.max(np.abs(mu * s))) / (1.0 + float(np.max(mu)))
        stat = np.linalg.norm(self.Xi @ (v - w) + self.H.T @ mu)
        stat /= 1.0 + np.linalg.norm(self.H.T @ mu)
        return max(primal, comp, float(stat)) / self._scale(w)

    def _polish(self, w, mu):
        act = np.flatnonzero(mu > 0)
        if act.size == 0:
            return None
        G = self.G[np.ix_(act, act)]
        rhs = self.H[act] @ w - self.g[act]
        sol, *_ = np.linalg.lstsq(G, rhs, rcond=None)
        if np.any(sol < 0):
            return None
        mu2 = np.zeros_like(mu)
        mu2[act] = sol
        v = w - self.Xi_inv_Ht @ mu2
        if self.kkt_residual(v, mu2, w) <= self.tol:
            return v, mu2
        return None

    def __call__(self, w, warm_start=True):
        w = np.asarray(w, dtype=float)
        mu = self.mu.copy() if warm_start else np.zeros_like(self.mu)
        v = w - self.Xi_inv_Ht @ mu
        s = self.H @ v - self.g
        self.sweeps = 0
        for sweep in range(1, self.max_sweeps + 1):
            for i in range(mu.size):
                new = max(0.0, mu[i] + s[i] / self.diag[i])
                delta = new - mu[i]
                if delta != 0.0:
                    mu[i] = new
                    s -= self.G[:, i] * delta
            v = w - self.Xi_inv_Ht @ mu
            self.sweeps = sweep
            if self.kkt_residual(v, mu, w) <= self.tol:
                break
            if sweep % 5 == 0:
                polished = self._polish(w, mu)
                if polished is not None:
                    v, mu = polished
                    break
            s = self.H @ v - self.g
        else:
            raise ProjectionError(
                f"projection did not reach KKT residual {self.tol:.0e} in "
                f"{self.max_sweeps} sweeps (degenerate constraints?)"
            )
        self.mu = mu
        return v


def project_polyhedron(w, cs, Xi=None, tol=KKT_TOL):
    """One-off projection of ``w`` onto the constraint polyhedron."""
    H, g = (cs.H, cs.g) if isinstance(cs, ConstraintSet) else cs
    return PolyhedronProjector(H, g, Xi, tol)(w, warm_start=False)


@dataclass(frozen=True, eq=False)
class ConstrainedResult:
    w_M: np.ndarray
    result: EvalResult
    residuals: list
    gammas: list
    iterations: int

    def to_dict(self):
        out = self.result.to_dict()
        out.update(
            iterations=self.iterations,
            final_residual=self.residuals[-1] if self.residuals else 0.0,
            final_gamma=self.gammas[-1] if self.gammas else None,
        )
        return out


def constrained_step(w, system, projector, Xi, gamma):
    return projector(w - gamma * np.linalg.solve(Xi, system.C @ w - system.d))


def constrained_solve(system, cs, features, cfg=None):
    """Fixed point of the variance-constrained projected equation.

    Requires a multistep system (``lam > 0``) and a constraint set with a
    strict interior. Raises :class:`NonConvergenceError` carrying the
    residual history when ``max_iters`` is exhausted.
    """
    cfg = cfg or IterationConfig()
    if not system.lam > 0:
        raise ValueError("the constrained iteration requires lambda > 0")
    feas = check_feasibility(cs)
    if not feas.feasible:
        raise InfeasibleError("constraint set has no strictly feasible point")
    Xi = cfg.metric(system)
    proj = PolyhedronProjector(cs.H, cs.g, Xi)

    def xnorm(v):
        return float(np.sqrt(max(v @ Xi @ v, 0.0)))

    gamma = cfg.gamma
    w = proj(np.linalg.solve(system.C, system.d), warm_start=False)
    residuals, gammas = [], []
    prev = np.inf
    for it in range(1, cfg.max_iters + 1):
        w_new = constrained_step(w, system, proj, Xi, gamma)
        res = xnorm(w_new - w)
        residuals.append(res)
        gammas.append(gamma)
        w = w_new
        if res <= cfg.tol * max(1.0, xnorm(w)):
            break
        if cfg.backtrack and res > prev:
            gamma *= 0.5
        prev = res
    else:
        raise NonConvergenceError(
            f"constrained iteration did not converge in {cfg.max_iters} steps "
            f"(last residual {residuals[-1]:.3g}); try a smaller gamma",
            residuals,
        )
    result = EvalResult.from_weights(features, cs.w_J, w)
    return ConstrainedResult(w, result, residuals, gammas, it)


def sampled_system(acc):
    """A :class:`ProjectedSystem` built from LSTD(lambda) sample averages."""
    w_J, _ = acc.solve()
    A, C = acc.A_N, acc.C_N
    return ProjectedSystem(
        lam=acc.lam,
        A=A,
        b=acc.b_N,
        C=C,
        d=acc.d_N(w_J),
        gram_J=None,
        gram_M=acc.G_M / acc.n_episodes,
        P_lam=None,
        cond_A=float(np.linalg.cond(A)),
        cond_C=float(np.linalg.cond(C)),
    )


class VarianceConstrainedLSTD(LSTDVariance):
    """LSTD(lambda) whose second-moment weights keep ``M~ - J~^2 >= 0``.

    The constraint uses the sampled ``w_J``; the metric defaults to the
    sampled Gram matrix of ``Phi_M``.
    """

    def __init__(self, features=None, lam=0.9, states="all", gamma=1.0, xi="gram", tol=1e-9, max_iters=10**5):
        super().__init__(features=features, lam=lam)
        self.states = states
        self.gamma = gamma
        self.xi = xi
        self.tol = tol
        self.max_iters = max_iters

    def partial_fit(self, X, y=None):
        super().partial_fit(X)
        system = sampled_system(self.accumulator_)
        self.constraints_ = build_constraints(self.states, self.features, self.w_J_)
        cfg = IterationConfig(gamma=self.gamma, xi=self.xi, tol=self.tol, max_iters=self.max_iters)
        self.solution_ = constrained_solve(system, self.constraints_, self.features, cfg)
        self.unconstrained_w_M_ = self.w_M_
        self.w_M_ = self.solution_.w_M
        return self
