"""Episode generation, Monte Carlo moments and empirical feature statistics.

Episodes are produced in fixed-size blocks. Block ``k`` draws from a Philox
(counter-based) generator keyed by ``(seed, k)``, so a fixed ``(seed, N)``
gives the same episodes whatever the number of worker threads.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .exceptions import StructuralError, TruncationError

BLOCK_SIZE = 1024
DEFAULT_MAX_STEPS = 10**6


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x_0 .. x_{tau-1}`` visited before absorption."""

    states: np.ndarray
    rewards: np.ndarray

    @property
    def tau(self):
        return int(self.states.shape[0])

    @property
    def B(self):
        return float(np.sum(self.rewards))

    def next_states(self, n):
        """``x_1 .. x_tau`` with the terminal encoded as index ``n``."""
        return np.append(self.states[1:], n)


def block_rng(seed, block):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def _as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_trajectory(chain, rng=None, max_steps=DEFAULT_MAX_STEPS, start_state=None):
    """Simulate one episode; ``rng`` is a seed or a ``numpy.random.Generator``."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    rng = _as_generator(rng)
    n = chain.n
    cum = np.cumsum(chain.P, axis=1)
    if start_state is None:
        x = int(np.searchsorted(np.cumsum(chain.zeta0), rng.random(), side="right"))
        x = min(x, n - 1)
    else:
        x = int(start_state)
    states = []
    while True:
        states.append(x)
        if len(states) > max_steps:
            raise TruncationError(
                f"episode exceeded max_steps={max_steps} without absorbing", max_steps
            )
        x = int(np.searchsorted(cum[x], rng.random(), side="right"))
        if x >= n:
            break
    states = np.asarray(states, dtype=np.int64)
    return Trajectory(states, chain.r[states])


class _Kernel:
    """Vectorized block simulator shared by every sampling entry point."""

    def __init__(self, chain, max_steps):
        self.n = chain.n
        self.r = chain.r
        cum = np.cumsum(chain.P, axis=1)
        # row-offset trick: one searchsorted over all rows at once
        self.flat = (cum + np.arange(self.n)[:, None]).ravel()
        self.zcum = np.cumsum(chain.zeta0)
        self.max_steps = max_steps

    def _next(self, cur, u):
        pos = np.searchsorted(self.flat, cur + u, side="right") - cur * self.n
        return pos  # == n means terminal

    def run(self, n_eps, rng, start_state=None, record=True):
        if start_state is None:
            cur = np.searchsorted(self.zcum, rng.random(n_eps), side="right")
            cur = np.minimum(cur, self.n - 1)
        else:
            cur = np.full(n_eps, int(start_state), dtype=np.int64)
        cur = cur.astype(np.int64)
        idx = np.arange(n_eps)
        B = np.zeros(n_eps)
        tau = np.zeros(n_eps, dtype=np.int64)
        log_idx, log_state = [], []
        steps = 0
        while idx.size:
            steps += 1
            if steps > self.max_steps:
                raise TruncationError(
                    f"episode exceeded max_steps={self.max_steps} without absorbing",
                    self.max_steps,
                )
            if record:
                log_idx.append(idx)
                log_state.append(cur)
            B[idx] += self.r[cur]
            tau[idx] += 1
            nxt = self._next(cur, rng.random(idx.size))
            alive = nxt < self.n
            idx = idx[alive]
            cur = nxt[alive]
        if not record:
            return B, tau, None
        ep = np.concatenate(log_idx)
        st = np.concatenate(log_state)
        order = np.argsort(ep, kind="stable")
        return B, tau, st[order]


def _blocks(n_episodes):
    full, rest = divmod(n_episodes, BLOCK_SIZE)
    sizes = [BLOCK_SIZE] * full + ([rest] if rest else [])
    return list(enumerate(sizes))


def _run_blocks(chain, n_episodes, seed, start_state, max_steps, record, n_jobs):
    if n_episodes < 0:
        raise ValueError("n_episodes must be >= 0")
    kernel = _Kernel(chain, max_steps)

    def job(item):
        k, size = item
        return kernel.run(size, block_rng(seed, k), start_state, record)

    blocks = _blocks(n_episodes)
    if n_jobs and n_jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(job, blocks))
    return [job(b) for b in blocks]


def simulate(chain, n_episodes, seed=0, start_state=None, max_steps=DEFAULT_MAX_STEPS, n_jobs=None):
    """Return ``n_episodes`` independent :class:`Trajectory` objects."""
    out = []
    for _, tau, states in _run_blocks(chain, n_episodes, seed, start_state, max_steps, True, n_jobs):
        bounds = np.concatenate([[0], np.cumsum(tau)])
        for a, b in zip(bounds[:-1], bounds[1:]):
            s = states[a:b]
            out.append(Trajectory(s, chain.r[s]))
    return out


def sample_returns(chain, n_episodes, seed=0, start_state=None, max_steps=DEFAULT_MAX_STEPS, n_jobs=None):
    """Accumulated rewards ``B`` and lengths ``tau`` without keeping the paths."""
    res = _run_blocks(chain, n_episodes, seed, start_state, max_steps, False, n_jobs)
    if not res:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    return np.concatenate([r[0] for r in res]), np.concatenate([r[1] for r in res])


@dataclass(frozen=True)
class MonteCarloMoments:
    n_episodes: int
    J: float
    M: float
    V: float
    se_J: float
    se_M: float
    se_V: float


def moments_from_returns(B):
    B = np.asarray(B, dtype=float)
    N = B.size
    if N < 2:
        raise ValueError("need at least 2 episodes for sample moments")
    J = B.mean()
    M = np.mean(B * B)
    V = B.var(ddof=1)
    se_J = B.std(ddof=1) / np.sqrt(N)
    se_M = (B * B).std(ddof=1) / np.sqrt(N)
    c = B - J
    m4 = np.mean(c**4)
    m2 = np.mean(c**2)
    # delta-method standard error of the sample variance
    se_V = np.sqrt(max(m4 - m2 * m2 * (N - 3) / (N - 1), 0.0) / N)
    return MonteCarloMoments(N, float(J), float(M), float(V), float(se_J), float(se_M), float(se_V))


def monte_carlo_moments(chain, start_state, n_episodes, seed=0, max_steps=DEFAULT_MAX_STEPS, n_jobs=None):
    """Naive sample moments of the reward-to-go from ``start_state``."""
    B, _ = sample_returns(chain, n_episodes, seed, start_state, max_steps, n_jobs)
    return moments_from_returns(B)


@dataclass(frozen=True, eq=False)
class EmpiricalStats:
    """Episode sums of ``phi1(x_t) phi2(x_t)^T`` and ``phi1(x_t) phi2(x_{t+1})^T``.

    Totals and totals of squares over episodes are stored so that batches
    merge by addition; ``S1``/``S2`` are the per-episode averages.
    """

    n_episodes: int
    sum1: np.ndarray
    sum2: np.ndarray
    sq1: np.ndarray
    sq2: np.ndarray

    @property
    def S1(self):
        return self.sum1 / self.n_episodes

    @property
    def S2(self):
        return self.sum2 / self.n_episodes

    def _se(self, total, sq):
        N = self.n_episodes
        mean = total / N
        var = np.maximum(sq / N - mean * mean, 0.0) * N / max(N - 1, 1)
        return np.sqrt(var / N)

    @property
    def se1(self):
        return self._se(self.sum1, self.sq1)

    @property
    def se2(self):
        return self._se(self.sum2, self.sq2)

    def merge(self, other):
        if self.sum1.shape != other.sum1.shape or self.sum2.shape != other.sum2.shape:
            raise StructuralError("cannot merge statistics of different feature shapes")
        return EmpiricalStats(
            self.n_episodes + other.n_episodes,
            self.sum1 + other.sum1,
            self.sum2 + other.sum2,
            self.sq1 + other.sq1,
            self.sq2 + other.sq2,
        )

    def __add__(self, other):
        return self.merge(other)


def empirical_statistics(trajectories, phi1, phi2):
    """Accumulate :class:`EmpiricalStats` for per-state feature matrices.

    ``phi1`` and ``phi2`` have one row per non-terminal state; the terminal
    state contributes the zero vector.
    """
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    n = phi1.shape[0]
    if phi2.shape[0] != n:
        raise StructuralError("phi1 and phi2 must have the same number of rows")
    phi2x = np.vstack([phi2, np.zeros((1, phi2.shape[1]))])
    shape = (phi1.shape[1], phi2.shape[1])
    sum1, sum2 = np.zeros(shape), np.zeros(shape)
    sq1, sq2 = np.zeros(shape), np.zeros(shape)
    N = 0
    for tr in trajectories:
        x = tr.states
        y = tr.next_states(n)
        F = phi1[x]
        e1 = F.T @ phi2x[x]
        e2 = F.T @ phi2x[y]
        sum1 += e1
        sum2 += e2
        sq1 += e1 * e1
        sq2 += e2 * e2
        N += 1
    if N == 0:
        raise ValueError("need at least one trajectory")
    return EmpiricalStats(N, sum1, sum2, sq1, sq2)


def write_trajectory_log(trajectories, path):
    """One episode per line: ``tau, B, x_0, ..., x_{tau-1}``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for tr in trajectories:
            w.writerow([tr.tau, repr(tr.B), *tr.states.tolist()])


def read_trajectory_log(path, rewards):
    """Read a log written by :func:`write_trajectory_log`; ``rewards`` is ``r``."""
    rewards = np.asarray(rewards, dtype=float)
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            tau = int(row[0])
            states = np.asarray([int(s) for s in row[2:]], dtype=np.int64)
            if states.size != tau or tau < 1:
                raise StructuralError(f"line {lineno}: tau={tau} but {states.size} states")
            if states.min() < 0 or states.max() >= rewards.size:
                raise StructuralError(f"line {lineno}: state index out of range")
            tr = Trajectory(states, rewards[states])
            if not np.isclose(tr.B, float(row[1]), rtol=1e-12, atol=1e-12):
                raise StructuralError(f"line {lineno}: B={row[1]} disagrees with rewards")
            out.append(tr)
    return out
