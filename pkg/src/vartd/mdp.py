"""Stochastic shortest path chains under a fixed policy.

States are indexed ``0..n-1``. The terminal state is implicit: the
probability of absorbing from state ``x`` is ``1 - P[x].sum()``.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from ._validation import as_float_array
from .exceptions import (
    ImproperChainError,
    NumericalError,
    OccupancyError,
    StructuralError,
)

ROW_SUM_SLACK = 1e-12
PROPER_THRESHOLD = 1.0 - 1e-10
POWER_ITERATIONS = 200


@dataclass(frozen=True)
class ValidationReport:
    n: int
    substochastic: bool
    zeta0_distribution: bool
    proper: bool
    all_states_visited: bool
    spectral_radius: float
    recurrent_class: tuple = ()
    unvisited_states: tuple = ()
    messages: tuple = ()

    @property
    def ok(self):
        return (
            self.substochastic
            and self.zeta0_distribution
            and self.proper
            and self.all_states_visited
        )

    def raise_for_errors(self):
        if not self.substochastic or not self.zeta0_distribution:
            raise StructuralError("; ".join(self.messages))
        if not self.proper:
            raise ImproperChainError(
                f"chain is improper: states {list(self.recurrent_class)} form a "
                f"closed class that never reaches the terminal state "
                f"(spectral radius {self.spectral_radius:.12g})",
                self.recurrent_class,
            )
        if not self.all_states_visited:
            raise OccupancyError(
                f"states {list(self.unvisited_states)} are never visited from zeta0"
            )

    def to_dict(self):
        return {
            "n": self.n,
            "ok": self.ok,
            "substochastic": self.substochastic,
            "zeta0_distribution": self.zeta0_distribution,
            "proper": self.proper,
            "all_states_visited": self.all_states_visited,
            "spectral_radius": self.spectral_radius,
            "recurrent_class": list(self.recurrent_class),
            "unvisited_states": list(self.unvisited_states),
            "messages": list(self.messages),
        }


@dataclass(frozen=True, eq=False)
class SspChain:
    """Policy-induced Markov chain with an implicit absorbing terminal state.

    Parameters
    ----------
    P : (n, n) array
        Row-substochastic transitions, ``P[x, y] = P(y | x)``.
    r : (n,) array
        Deterministic per-state reward.
    zeta0 : (n,) array
        Initial state distribution.
    check : bool
        Run :func:`validate` and raise on any failed assumption.
    """

    P: np.ndarray
    r: np.ndarray
    zeta0: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        P = as_float_array(self.P, "P", ndim=2)
        n = P.shape[0]
        if P.shape != (n, n):
            raise StructuralError(f"P must be square, got shape {P.shape}")
        if n < 1:
            raise StructuralError("chain needs at least one state")
        r = as_float_array(self.r, "r", shape=(n,))
        zeta0 = as_float_array(self.zeta0, "zeta0", shape=(n,))
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "zeta0", zeta0)
        if self.check:
            validate(self).raise_for_errors()

    @property
    def n(self):
        return self.P.shape[0]

    @property
    def terminal_prob(self):
        return np.clip(1.0 - self.P.sum(axis=1), 0.0, 1.0)

    def with_zeta0(self, zeta0):
        return SspChain(self.P, self.r, zeta0, check=self.check)

    def to_dict(self):
        return {
            "n": self.n,
            "P": self.P.tolist(),
            "r": self.r.tolist(),
            "zeta0": self.zeta0.tolist(),
        }

    @classmethod
    def from_dict(cls, data, check=True):
        try:
            n = int(data["n"])
            chain = cls(data["P"], data["r"], data["zeta0"], check=check)
        except KeyError as exc:
            raise StructuralError(f"model file is missing key {exc}") from None
        if chain.n != n:
            raise StructuralError(f"declared n={n} but P has {chain.n} rows")
        return chain


def _spectral_radius_bounds(P):
    """Collatz-Wielandt bounds on rho(|P|) from power iteration."""
    A = np.abs(P)
    x = np.ones(A.shape[0])
    lo, hi = 0.0, np.inf
    for _ in range(POWER_ITERATIONS):
        y = A @ x
        # shift keeps the iterate strictly positive so the ratio bounds apply
        y = y + 1e-300
        ratio = y / x
        lo, hi = max(lo, ratio.min()), min(hi, ratio.max())
        s = y.max()
        if s == 0.0:
            return 0.0, 0.0
        x = y / s
        if hi - lo < 1e-14:
            break
    return lo, hi


def spectral_radius(P):
    lo, hi = _spectral_radius_bounds(P)
    if hi - lo < 1e-9:
        return float(0.5 * (lo + hi))
    # power iteration did not pin it down; settle it exactly (n is desk scale)
    return float(np.max(np.abs(np.linalg.eigvals(P))))


def _reaches_terminal(P, exits):
    """Boolean mask of states with a positive-probability path to the terminal."""
    n = P.shape[0]
    reach = exits.copy()
    frontier = list(np.flatnonzero(reach))
    back = [np.flatnonzero(P[:, y] > 0) for y in range(n)]
    while frontier:
        y = frontier.pop()
        for x in back[y]:
            if not reach[x]:
                reach[x] = True
                frontier.append(x)
    return reach


def _closed_class(P, trapped):
    """A closed communicating class inside the trapped states."""
    idx = np.flatnonzero(trapped)
    sub = (P[np.ix_(idx, idx)] > 0).astype(int)
    _, labels = connected_components(sub, directed=True, connection="strong")
    for lab in np.unique(labels):
        members = idx[labels == lab]
        outside = np.setdiff1d(np.arange(P.shape[0]), members)
        if not np.any(P[np.ix_(members, outside)] > 0):
            return tuple(int(m) for m in members)
    return tuple(int(i) for i in idx)


def validate(chain):
    """Check substochasticity, the initial distribution, properness and occupancy.

    Properness is decided by the spectral radius of ``P`` (power iteration
    on ``|P|``; threshold ``1 - 1e-10``) and cross-checked with reachability
    of the terminal state, which also names an offending closed class.
    """
    P, zeta0 = chain.P, chain.zeta0
    n = P.shape[0]
    messages = []

    rows = P.sum(axis=1)
    substochastic = bool(np.all(P >= 0) and np.all(P <= 1) and np.all(rows <= 1 + ROW_SUM_SLACK))
    if not substochastic:
        messages.append("P must have entries in [0,1] and row sums <= 1")
    zeta_ok = bool(np.all(zeta0 >= 0) and abs(zeta0.sum() - 1.0) <= 1e-12)
    if not zeta_ok:
        messages.append("zeta0 must be a probability distribution")

    rho = spectral_radius(P)
    exits = (1.0 - rows) > ROW_SUM_SLACK
    reach = _reaches_terminal(P, exits)
    proper = bool(rho < PROPER_THRESHOLD and reach.all())
    recurrent = ()
    if not proper:
        trapped = ~reach if not reach.all() else np.ones(n, dtype=bool)
        recurrent = _closed_class(P, trapped)
        messages.append(f"improper: closed class {list(recurrent)}")

    # q(x) > 0 exactly when x is reachable from the support of zeta0
    seen = zeta0 > 0
    frontier = list(np.flatnonzero(seen))
    while frontier:
        x = frontier.pop()
        for y in np.flatnonzero(P[x] > 0):
            if not seen[y]:
                seen[y] = True
                frontier.append(y)
    unvisited = tuple(int(i) for i in np.flatnonzero(~seen))
    if unvisited:
        messages.append(f"states never visited: {list(unvisited)}")

    return ValidationReport(
        n=n,
        substochastic=substochastic,
        zeta0_distribution=zeta_ok,
        proper=proper,
        all_states_visited=not unvisited,
        spectral_radius=rho,
        recurrent_class=recurrent,
        unvisited_states=unvisited,
        messages=tuple(messages),
    )


@dataclass(frozen=True)
class OccupancyWeights:
    """Expected visit counts ``q`` before absorption; ``Q = diag(q)`` implied."""

    q: np.ndarray

    def norm(self, v):
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(np.dot(self.q, v * v)))

    def weigh(self, M):
        """Return ``diag(q) @ M`` without forming the diagonal matrix."""
        M = np.asarray(M, dtype=float)
        return self.q[:, None] * M if M.ndim == 2 else self.q * M


def occupancy(chain):
    n = chain.n
    lhs = np.eye(n) - chain.P.T
    try:
        q = np.linalg.solve(lhs, chain.zeta0)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"occupancy solve failed: {exc}") from None
    resid = np.linalg.norm(lhs @ q - chain.zeta0)
    if resid > 1e-10 * max(np.linalg.norm(chain.zeta0), 1.0) * max(1.0, np.linalg.norm(q)):
        raise NumericalError(f"occupancy residual {resid:.3g} too large")
    # tiny negative round-off only
    q = np.where(q < 0, 0.0, q)
    q.setflags(write=False)
    return OccupancyWeights(q)


@dataclass(frozen=True, eq=False)
class ActionMdp:
    """Finite SSP MDP with ``k`` actions, before a policy is fixed.

    ``P_a`` has shape ``(k, n, n)`` and ``r_a`` shape ``(k, n)``.
    """

    P_a: np.ndarray
    r_a: np.ndarray
    zeta0: np.ndarray

    def __post_init__(self):
        P_a = as_float_array(self.P_a, "P_a", ndim=3)
        k, n, m = P_a.shape
        if n != m:
            raise StructuralError(f"per-action transition matrices must be square, got {P_a.shape}")
        r_a = as_float_array(self.r_a, "r_a", shape=(k, n))
        zeta0 = as_float_array(self.zeta0, "zeta0", shape=(n,))
        if np.any(P_a < 0) or np.any(P_a.sum(axis=2) > 1 + ROW_SUM_SLACK):
            raise StructuralError("every per-action row must be substochastic")
        object.__setattr__(self, "P_a", P_a)
        object.__setattr__(self, "r_a", r_a)
        object.__setattr__(self, "zeta0", zeta0)

    @property
    def n(self):
        return self.P_a.shape[1]

    @property
    def n_actions(self):
        return self.P_a.shape[0]

    def to_dict(self):
        return {
            "n": self.n,
            "actions": self.n_actions,
            "P_a": self.P_a.tolist(),
            "r_a": self.r_a.tolist(),
            "zeta0": self.zeta0.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            mdp = cls(data["P_a"], data["r_a"], data["zeta0"])
        except KeyError as exc:
            raise StructuralError(f"model file is missing key {exc}") from None
        if mdp.n != int(data.get("n", mdp.n)) or mdp.n_actions != int(data.get("actions", mdp.n_actions)):
            raise StructuralError("declared n/actions disagree with P_a")
        return mdp


def compose(mdp, policy):
    """Average an :class:`ActionMdp` under ``policy[x, a] = pi(a | x)``."""
    pi = np.asarray(policy, dtype=float)
    if pi.ndim == 1:
        # deterministic policy given as action indices
        idx = pi.astype(int)
        if not np.all(idx == pi) or idx.min() < 0 or idx.max() >= mdp.n_actions:
            raise StructuralError("deterministic policy must hold action indices")
        pi = np.eye(mdp.n_actions)[idx]
    if pi.shape != (mdp.n, mdp.n_actions):
        raise StructuralError(f"policy must have shape {(mdp.n, mdp.n_actions)}, got {pi.shape}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-12):
        raise StructuralError("policy rows must be probability distributions")
    P = np.einsum("xa,axy->xy", pi, mdp.P_a)
    r = np.einsum("xa,ax->x", pi, mdp.r_a)
    return SspChain(P, r, mdp.zeta0)


def model_from_dict(data, check=True):
    if not isinstance(data, dict):
        raise StructuralError("model must be a JSON object")
    if "P_a" in data or "actions" in data:
        return ActionMdp.from_dict(data)
    return SspChain.from_dict(data, check=check)


def load_model(path, check=True):
    """Read an :class:`SspChain` or :class:`ActionMdp` JSON model file.

    Chains are validated on read unless ``check`` is false.
    """
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise StructuralError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(data, check)


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)
