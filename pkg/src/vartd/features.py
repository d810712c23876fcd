"""Linear architectures for the value and second-moment functions.

A :class:`FeatureSet` holds one matrix per approximated quantity; row ``x``
is the feature vector of state ``x``. The terminal state has the zero
feature vector, exposed through :meth:`FeatureSet.extended` as an extra
row at index ``n``.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_float_array, check_states
from .exceptions import RankError, StructuralError

RANK_RTOL = 1e-8
DEAD_COLUMN_TOL = 1e-12


def _check_rank(Phi, name):
    s = np.linalg.svd(Phi, compute_uv=False)
    if Phi.shape[1] > Phi.shape[0] or s[-1] <= RANK_RTOL * s[0]:
        raise RankError(
            f"{name} has {Phi.shape[1]} columns but numerical rank "
            f"{int(np.sum(s > RANK_RTOL * s[0]))}"
        )


@dataclass(frozen=True, eq=False)
class FeatureSet:
    Phi_J: np.ndarray
    Phi_M: np.ndarray
    columns_J: tuple = field(default=None)
    columns_M: tuple = field(default=None)
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        Phi_J = as_float_array(self.Phi_J, "Phi_J", ndim=2)
        Phi_M = as_float_array(self.Phi_M, "Phi_M", ndim=2)
        if Phi_J.shape[0] != Phi_M.shape[0]:
            raise StructuralError("Phi_J and Phi_M must have one row per state")
        object.__setattr__(self, "Phi_J", Phi_J)
        object.__setattr__(self, "Phi_M", Phi_M)
        if self.columns_J is None:
            object.__setattr__(self, "columns_J", tuple(range(Phi_J.shape[1])))
        if self.columns_M is None:
            object.__setattr__(self, "columns_M", tuple(range(Phi_M.shape[1])))
        if self.check:
            _check_rank(Phi_J, "Phi_J")
            _check_rank(Phi_M, "Phi_M")

    @property
    def n(self):
        return self.Phi_J.shape[0]

    @property
    def l_J(self):
        return self.Phi_J.shape[1]

    @property
    def l_M(self):
        return self.Phi_M.shape[1]

    def phi_J(self, states):
        return self.Phi_J[check_states(states, self.n)]

    def phi_M(self, states):
        return self.Phi_M[check_states(states, self.n)]

    def extended(self):
        """``(Phi_J, Phi_M)`` with a zero row appended for the terminal state."""
        zJ = np.zeros((1, self.l_J))
        zM = np.zeros((1, self.l_M))
        return np.vstack([self.Phi_J, zJ]), np.vstack([self.Phi_M, zM])

    def repaired(self, q):
        """Drop columns that are dead or linearly dependent under weights ``q``.

        A column is dead when its q-weighted norm is below 1e-12. Remaining
        columns are kept greedily left to right while they add rank, so a
        leading constant column survives.
        """
        q = np.asarray(q, dtype=float)
        keep_J = _independent_columns(self.Phi_J, q)
        keep_M = _independent_columns(self.Phi_M, q)
        return FeatureSet(
            self.Phi_J[:, keep_J],
            self.Phi_M[:, keep_M],
            columns_J=tuple(self.columns_J[i] for i in keep_J),
            columns_M=tuple(self.columns_M[i] for i in keep_M),
        )

    def to_dict(self):
        return {"Phi_J": self.Phi_J.tolist(), "Phi_M": self.Phi_M.tolist()}


def _independent_columns(Phi, q):
    w = np.sqrt(np.maximum(q, 0.0))[:, None] * Phi
    norms = np.linalg.norm(w, axis=0)
    keep = []
    basis = np.zeros((Phi.shape[0], 0))
    for j in range(Phi.shape[1]):
        if norms[j] < DEAD_COLUMN_TOL:
            continue
        v = w[:, j]
        if basis.shape[1]:
            v = v - basis @ (basis.T @ v)
            v = v - basis @ (basis.T @ v)
        if np.linalg.norm(v) > RANK_RTOL * norms[j]:
            keep.append(j)
            basis = np.column_stack([basis, v / np.linalg.norm(v)])
    return keep


@dataclass(frozen=True, eq=False)
class EvalResult:
    """Weights plus the per-state approximations they imply."""

    w_J: np.ndarray
    w_M: np.ndarray
    J: np.ndarray
    M: np.ndarray

    @property
    def V(self):
        return self.M - self.J**2

    @classmethod
    def from_weights(cls, features, w_J, w_M):
        w_J = np.asarray(w_J, dtype=float)
        w_M = np.asarray(w_M, dtype=float)
        return cls(w_J, w_M, features.Phi_J @ w_J, features.Phi_M @ w_M)

    def to_dict(self):
        return {
            "w_J": self.w_J.tolist(),
            "w_M": self.w_M.tolist(),
            "J": self.J.tolist(),
            "M": self.M.tolist(),
            "V": self.V.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(*(np.asarray(data[k], dtype=float) for k in ("w_J", "w_M", "J", "M")))


def tabular(n):
    if n < 1:
        raise StructuralError("n must be >= 1")
    eye = np.eye(n)
    return FeatureSet(eye, eye)


def _poly(n, degree):
    if degree < 0:
        raise StructuralError("polynomial degree must be >= 0")
    xbar = np.arange(1, n + 1) / n
    return np.vander(xbar, degree + 1, increasing=True)


def polynomial(n, degree_J, degree_M):
    """Monomials ``(1, x/n, (x/n)^2, ...)`` of the 1-based state index ``x``."""
    return FeatureSet(_poly(n, degree_J), _poly(n, degree_M))


def tile_matrix(coords, bins, low, high):
    """One-hot tile membership for points in an axis-aligned box."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    bins = np.asarray(bins, dtype=int)
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    d = coords.shape[1]
    if bins.shape != (d,) or low.shape != (d,) or high.shape != (d,):
        raise StructuralError("bins, low and high must match the coordinate dimension")
    if np.any(high <= low) or np.any(bins < 1):
        raise StructuralError("tiling box must have positive extent and >= 1 bin per axis")
    if np.any(coords < low) or np.any(coords > high):
        raise StructuralError("state coordinates fall outside the tiling box")
    cell = np.floor((coords - low) / (high - low) * bins).astype(int)
    cell = np.minimum(cell, bins - 1)
    flat = np.ravel_multi_index(cell.T, tuple(bins))
    out = np.zeros((coords.shape[0], int(np.prod(bins))))
    out[np.arange(coords.shape[0]), flat] = 1.0
    return out


def tile_coding(coords, bins, low, high, constant=True):
    """Non-overlapping uniform tiles, same tiling for J and M.

    The returned set is not rank-checked: tiles may be empty, and a constant
    column is always the sum of the tile indicators. Call
    :meth:`FeatureSet.repaired` with occupancy weights before solving.
    Column 0 is the constant feature when ``constant`` is set.
    """
    T = tile_matrix(coords, bins, low, high)
    if constant:
        T = np.column_stack([np.ones(T.shape[0]), T])
    return FeatureSet(T, T, check=False)


def random_features(n, l_J, l_M, rng):
    """Gaussian features, redrawn until full rank (used by property tests)."""
    while True:
        Phi_J = rng.standard_normal((n, l_J))
        Phi_M = rng.standard_normal((n, l_M))
        try:
            return FeatureSet(Phi_J, Phi_M)
        except RankError:
            continue


def from_spec(spec, n=None):
    """Build features from ``{"kind": ..., "params": {...}}``.

    Kinds are ``tabular``, ``polynomial``, ``tile`` and ``explicit`` (the
    matrices ``Phi_J``/``Phi_M`` given row by row).
    """
    kind = spec.get("kind")
    params = dict(spec.get("params", {}))
    if kind == "tabular":
        return tabular(int(params.get("n", n)))
    if kind == "polynomial":
        return polynomial(int(params.get("n", n)), int(params["degree_J"]), int(params["degree_M"]))
    if kind == "tile":
        return tile_coding(
            params["coords"],
            params["bins"],
            params["low"],
            params["high"],
            constant=params.get("constant", True),
        )
    if kind == "explicit":
        return FeatureSet(params["Phi_J"], params["Phi_M"])
    raise StructuralError(f"unknown feature kind {kind!r}")
