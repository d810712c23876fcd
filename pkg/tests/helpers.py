"""Shared builders for the test suite."""

import numpy as np

from vartd.bench import ChainBenchmark
from vartd.mdp import SspChain


def random_chain(rng, n, exit_low=0.05, exit_high=0.5, sparsity=0.0, reward_scale=1.0):
    """Dense random proper chain with uniform start distribution."""
    P = rng.random((n, n))
    if sparsity:
        P *= rng.random((n, n)) >= sparsity
        P[np.arange(n), rng.integers(0, n, n)] += 0.1
    exits = rng.uniform(exit_low, exit_high, n)
    P = P / P.sum(axis=1, keepdims=True) * (1.0 - exits)[:, None]
    r = reward_scale * rng.standard_normal(n)
    return SspChain(P, r, np.full(n, 1.0 / n))


def geometric(p, r=1.0):
    """One state that absorbs with probability ``p`` each step."""
    return SspChain([[1.0 - p]], [r], [1.0])


def chain30(start="first"):
    return ChainBenchmark(start=start).chain()


def two_step(r=(1.0, 2.0)):
    """Deterministic s0 -> s1 -> terminal."""
    return SspChain([[0.0, 1.0], [0.0, 0.0]], list(r), [1.0, 0.0])


def grid_instance(rng, dim):
    """Polyhedron with several nearly active faces at ``c`` and a point ``w`` near ``c``.

    A 1e-3 grid resolves the objective to ~|grad| * 1e-3, so ``w`` stays
    within ~0.02 of a feasible point to keep the oracle's own error < 1e-4.
    """
    c = rng.uniform(-0.5, 0.5, dim)
    m = dim + 2
    H = rng.standard_normal((m, dim))
    H /= np.linalg.norm(H, axis=1, keepdims=True)
    g = H @ c + rng.uniform(0.0, 0.01, m)
    # step past face j so at least one constraint is violated
    j = rng.integers(m)
    u = H[j] + 0.3 * rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    w = c + (g[j] - H[j] @ c + rng.uniform(0.001, 0.005)) / (H[j] @ u) * u
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    Xi = Q @ np.diag(rng.uniform(0.5, 1.5, dim)) @ Q.T
    return w, H, g, Xi


def grid_search(w, H, g, Xi, half=0.03, step=1e-3):
    """Best feasible objective over a grid of spacing ``step`` centred on ``w``."""
    ticks = np.arange(-half, half + step / 2, step)
    best = np.inf
    for a in ticks if len(w) == 3 else [None]:
        axes = np.meshgrid(*([ticks] * 2), indexing="ij")
        pts = np.stack([x.ravel() for x in axes], axis=1)
        if a is not None:
            pts = np.column_stack([np.full(len(pts), a), pts])
        pts = pts + w
        ok = np.all(pts @ H.T <= g, axis=1)
        if ok.any():
            diff = pts[ok] - w
            best = min(best, float(np.min(np.einsum("ij,jk,ik->i", diff, Xi, diff))))
    return best
