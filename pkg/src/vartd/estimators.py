"""Simulation-based estimators of the value and second-moment weights.

The functional API (:func:`lstd`, :func:`lstd_lambda`, :func:`td0`) does the
work; :class:`LSTDVariance` and :class:`TD0Variance` wrap it as scikit-learn
estimators whose ``fit`` consumes a list of :class:`~vartd.simulator.Trajectory`
and whose ``predict`` maps state indices to value estimates.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_lambda, check_states
from .exceptions import DataDeficiencyError, DivergenceError, ScheduleError, StructuralError
from .features import EvalResult

COND_LIMIT = 1e12


@dataclass(eq=False)
class LstdAccumulator:
    """Running sums behind the LSTD(lambda) estimates.

    ``C_raw2`` is the sum of ``z^M r^2`` and ``D_cross`` the sum of
    ``z^M r phi_J(x_{t+1})^T``, so that ``d = C_raw2 + 2 D_cross w_J`` once
    ``w_J`` is known. ``G_M`` sums ``phi_M(x_t) phi_M(x_t)^T`` and estimates
    the q-weighted Gram matrix. All sums are over episodes; divide by
    ``n_episodes`` for the empirical averages.
    """

    lam: float
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    C_raw2: np.ndarray
    D_cross: np.ndarray
    G_M: np.ndarray
    n_episodes: int = 0

    @classmethod
    def empty(cls, l_J, l_M, lam=0.0):
        return cls(
            lam=check_lambda(lam),
            A=np.zeros((l_J, l_J)),
            b=np.zeros(l_J),
            C=np.zeros((l_M, l_M)),
            C_raw2=np.zeros(l_M),
            D_cross=np.zeros((l_M, l_J)),
            G_M=np.zeros((l_M, l_M)),
        )

    @property
    def A_N(self):
        return self.A / self.n_episodes

    @property
    def b_N(self):
        return self.b / self.n_episodes

    @property
    def C_N(self):
        return self.C / self.n_episodes

    def d_N(self, w_J):
        return (self.C_raw2 + 2.0 * self.D_cross @ w_J) / self.n_episodes

    def merge(self, other):
        if self.lam != other.lam:
            raise StructuralError("cannot merge accumulators with different lambda")
        return LstdAccumulator(
            self.lam,
            self.A + other.A,
            self.b + other.b,
            self.C + other.C,
            self.C_raw2 + other.C_raw2,
            self.D_cross + other.D_cross,
            self.G_M + other.G_M,
            self.n_episodes + other.n_episodes,
        )

    def __add__(self, other):
        return self.merge(other)

    def update(self, trajectories, features):
        """Add a batch of episodes; traces restart at every episode."""
        n = features.n
        FJ, FM = features.extended()
        trajectories = list(trajectories)
        if not trajectories:
            return self
        lam = self.lam
        taus = np.array([tr.tau for tr in trajectories])
        order = np.argsort(-taus, kind="stable")
        T = int(taus.max())
        K = len(trajectories)
        # padded state grid, rows sorted by decreasing length; pad = terminal
        S = np.full((K, T + 1), n, dtype=np.int64)
        R = np.zeros((K, T))
        for row, k in enumerate(order):
            tr = trajectories[k]
            S[row, : tr.tau] = tr.states
            R[row, : tr.tau] = tr.rewards
        # number of episodes still running at step t
        active = np.searchsorted(-taus[order], -np.arange(T), side="left")
        zJ = np.zeros((K, FJ.shape[1]))
        zM = np.zeros((K, FM.shape[1]))
        for t in range(T):
            m = int(active[t])
            x, y = S[:m, t], S[:m, t + 1]
            rt = R[:m, t]
            zJ[:m] = lam * zJ[:m] + FJ[x]
            zM[:m] = lam * zM[:m] + FM[x]
            self.A += zJ[:m].T @ (FJ[x] - FJ[y])
            self.b += zJ[:m].T @ rt
            self.C += zM[:m].T @ (FM[x] - FM[y])
            self.C_raw2 += zM[:m].T @ (rt * rt)
            self.D_cross += (zM[:m] * rt[:, None]).T @ FJ[y]
            self.G_M += FM[x].T @ FM[x]
        self.n_episodes += K
        return self

    def solve(self):
        """Return ``(w_J, w_M)``, raising if the sampled systems are unusable."""
        if self.n_episodes < 1:
            raise DataDeficiencyError("no episodes accumulated", 0)
        A, C = self.A_N, self.C_N
        conds = {"A": float(np.linalg.cond(A)), "C": float(np.linalg.cond(C))}
        bad = {k: v for k, v in conds.items() if not np.isfinite(v) or v > COND_LIMIT}
        if bad:
            raise DataDeficiencyError(
                f"sampled matrices are singular or ill-conditioned after "
                f"N={self.n_episodes} episodes: {bad}",
                self.n_episodes,
                conds,
            )
        w_J = np.linalg.solve(A, self.b_N)
        w_M = np.linalg.solve(C, self.d_N(w_J))
        return w_J, w_M


def lstd_lambda(trajectories, features, lam):
    """LSTD(lambda) estimates of the value and second-moment weights."""
    acc = LstdAccumulator.empty(features.l_J, features.l_M, lam)
    acc.update(trajectories, features)
    w_J, w_M = acc.solve()
    return EvalResult.from_weights(features, w_J, w_M), acc


def lstd(trajectories, features):
    """Single-step LSTD: ``w_J = A_N^-1 b_N`` and ``w_M = C_N^-1 d_N``."""
    return lstd_lambda(trajectories, features, 0.0)


@dataclass(frozen=True)
class StepSchedule:
    """Harmonic step sizes ``xi_k = c / (k + k0)``.

    Only this family is accepted: it satisfies ``sum xi_k = inf`` and
    ``sum xi_k^2 < inf`` for every ``c > 0``, ``k0 > 0``.
    """

    c: float = 0.5
    k0: float = 100.0

    def __post_init__(self):
        if not (math.isfinite(self.c) and self.c > 0):
            raise ScheduleError(f"step scale c must be positive, got {self.c}")
        if not (math.isfinite(self.k0) and self.k0 > 0):
            raise ScheduleError(f"offset k0 must be positive, got {self.k0}")

    def __call__(self, k):
        return self.c / (k + self.k0)

    @classmethod
    def from_spec(cls, spec):
        """Parse ``{"kind": "harmonic", "c": .., "k0": ..}``; other kinds are rejected."""
        kind = spec.get("kind", "harmonic")
        if kind != "harmonic":
            raise ScheduleError(
                f"schedule kind {kind!r} does not satisfy the Robbins-Monro conditions"
            )
        return cls(float(spec.get("c", 0.5)), float(spec.get("k0", 100.0)))


@dataclass(eq=False)
class TdState:
    w_J: np.ndarray
    w_M: np.ndarray
    k: int = 0
    history: list = field(default_factory=list)


def td0_step(state, trajectory, features, xi, FJ=None, FM=None):
    """One episode-batch TD(0) update, in place; both deltas use the old weights."""
    if FJ is None:
        FJ, FM = features.extended()
    n = features.n
    x = trajectory.states
    y = trajectory.next_states(n)
    r = trajectory.rewards
    fJx, fJy = FJ[x], FJ[y]
    fMx, fMy = FM[x], FM[y]
    vJy = fJy @ state.w_J
    delta_J = r + vJy - fJx @ state.w_J
    delta_M = r * r + 2.0 * r * vJy + (fMy - fMx) @ state.w_M
    state.w_J = state.w_J + xi * (fJx.T @ delta_J)
    state.w_M = state.w_M + xi * (fMx.T @ delta_M)
    state.k += 1
    return state


def _reference_norm(trajectories, features):
    try:
        res, _ = lstd(trajectories, features)
        return float(np.linalg.norm(np.concatenate([res.w_J, res.w_M])))
    except DataDeficiencyError:
        return 1.0


def td0(
    episodes,
    features,
    schedule=None,
    k_max=None,
    w0=None,
    record_every=1,
    reference_norm=None,
    state=None,
):
    """Episode-batch TD(0) for the value and second moment.

    ``episodes`` is any iterable of trajectories; at most ``k_max`` of them
    are consumed. The weights are recorded every ``record_every`` episodes
    into ``state.history``. Runs whose weight norm exceeds
    ``1e6 * (1 + reference_norm)`` abort with :class:`DivergenceError`; the
    reference defaults to the norm of an LSTD fit on the first 100 episodes.
    """
    schedule = schedule or StepSchedule()
    if k_max is not None and k_max < 1:
        raise ValueError("k_max must be >= 1")
    FJ, FM = features.extended()
    if state is None:
        if w0 is None:
            w_J, w_M = np.zeros(features.l_J), np.zeros(features.l_M)
        else:
            w_J, w_M = (np.asarray(w, dtype=float).copy() for w in w0)
        state = TdState(w_J, w_M)
        state.history.append((0, state.w_J.copy(), state.w_M.copy()))

    warmup = []
    it = iter(episodes)
    limit = math.inf if k_max is None else k_max
    if reference_norm is None:
        for tr in it:
            warmup.append(tr)
            if len(warmup) >= min(100, limit):
                break
        reference_norm = _reference_norm(warmup, features) if warmup else 1.0
    bound = 1e6 * (1.0 + reference_norm)

    done = 0

    def consume(tr):
        td0_step(state, tr, features, schedule(state.k), FJ, FM)
        norm = math.hypot(np.linalg.norm(state.w_J), np.linalg.norm(state.w_M))
        if not np.isfinite(norm) or norm > bound:
            raise DivergenceError(
                f"TD(0) weights reached norm {norm:.3g} after {state.k} episodes "
                f"(bound {bound:.3g}); the step schedule is likely too aggressive"
            )
        if state.k % record_every == 0:
            state.history.append((state.k, state.w_J.copy(), state.w_M.copy()))

    for tr in warmup:
        if done >= limit:
            break
        consume(tr)
        done += 1
    for tr in it:
        if done >= limit:
            break
        consume(tr)
        done += 1
    return state


def _check_features(features):
    if features is None:
        raise StructuralError("estimator needs a FeatureSet")
    return features


class _MomentsMixin:
    """Shared prediction surface for the variance-aware estimators."""

    def predict(self, states):
        """Approximate value ``J~(x)`` for each state index."""
        check_is_fitted(self, "w_J_")
        x = check_states(states, self.features.n)
        return self.features.Phi_J[x] @ self.w_J_

    def predict_second_moment(self, states):
        check_is_fitted(self, "w_M_")
        x = check_states(states, self.features.n)
        return self.features.Phi_M[x] @ self.w_M_

    def predict_variance(self, states):
        """``M~(x) - J~(x)^2``; may be negative in the unconstrained case."""
        return self.predict_second_moment(states) - self.predict(states) ** 2

    def result(self):
        check_is_fitted(self, "w_J_")
        return EvalResult.from_weights(self.features, self.w_J_, self.w_M_)


class LSTDVariance(_MomentsMixin, BaseEstimator):
    """LSTD(lambda) for the joint value / second-moment projected equation.

    Parameters
    ----------
    features : FeatureSet
    lam : float in [0, 1)
        Trace decay; 0 gives plain LSTD.
    """

    def __init__(self, features=None, lam=0.0):
        self.features = features
        self.lam = lam

    def fit(self, X, y=None):
        """Fit from a list of trajectories (``y`` is ignored)."""
        features = _check_features(self.features)
        self.accumulator_ = LstdAccumulator.empty(features.l_J, features.l_M, self.lam)
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        features = _check_features(self.features)
        if not hasattr(self, "accumulator_"):
            self.accumulator_ = LstdAccumulator.empty(features.l_J, features.l_M, self.lam)
        self.accumulator_.update(X, features)
        self.w_J_, self.w_M_ = self.accumulator_.solve()
        self.n_episodes_ = self.accumulator_.n_episodes
        return self


class TD0Variance(_MomentsMixin, BaseEstimator):
    """Episode-batch TD(0) with harmonic steps ``c / (k + k0)``."""

    def __init__(self, features=None, c=0.5, k0=100.0, record_every=1000):
        self.features = features
        self.c = c
        self.k0 = k0
        self.record_every = record_every

    def fit(self, X, y=None):
        for attr in ("state_", "w_J_", "w_M_"):
            if hasattr(self, attr):
                delattr(self, attr)
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        features = _check_features(self.features)
        state = getattr(self, "state_", None)
        self.state_ = td0(
            X,
            features,
            StepSchedule(self.c, self.k0),
            record_every=self.record_every,
            state=state,
        )
        self.w_J_ = self.state_.w_J
        self.w_M_ = self.state_.w_M
        self.n_episodes_ = self.state_.k
        return self
