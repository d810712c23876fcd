"""Benchmarks: the reflecting chain and a noisy gridworld maze.

Each ``run_*`` function returns an artifact bundle (a dict of tables and a
JSON-serializable summary) and can write it to a directory. Outputs are a
pure function of ``(config, seed)``.
"""

import csv
import io
import json
import os
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .constrained import IterationConfig, build_constraints, constrained_solve
from .estimators import lstd_lambda
from .exact import diagnostics, projected_solution, solve_true
from .exceptions import StageError, StructuralError, VarTDError
from .features import polynomial, tabular, tile_coding
from .mdp import ActionMdp, SspChain, compose, occupancy
from .simulator import moments_from_returns, sample_returns, simulate


@dataclass(frozen=True)
class ChainBenchmark:
    """Chain of ``n_states`` states with constant reward.

    From state ``i`` the chain moves forward with probability ``p`` and
    back with probability ``1 - p``; state 0 stays put instead of moving
    back, and a forward move from the last state absorbs. ``start`` is
    ``"first"`` (all episodes begin in state 0) or ``"uniform"``.
    """

    n_states: int = 30
    p: float = 0.7
    lam: float = 0.95
    reward: float = -1.0
    start: str = "first"
    degree_J: int = 1
    degree_M: int = 2
    episodes: int = 10_000
    seed: int = 0
    assert_facts: bool = True

    def chain(self):
        n, p = self.n_states, self.p
        if n < 1 or not 0 < p <= 1:
            raise StructuralError("need n_states >= 1 and 0 < p <= 1")
        P = np.zeros((n, n))
        for i in range(n):
            if i + 1 < n:
                P[i, i + 1] = p
            P[i, max(i - 1, 0)] += 1.0 - p
        if self.start == "first":
            zeta0 = np.eye(n)[0]
        elif self.start == "uniform":
            zeta0 = np.full(n, 1.0 / n)
        else:
            raise StructuralError(f"unknown start distribution {self.start!r}")
        return SspChain(P, np.full(n, float(self.reward)), zeta0)

    def features(self):
        return polynomial(self.n_states, self.degree_J, self.degree_M)

    @classmethod
    def from_config(cls, config):
        config = dict(config or {})
        if "lambda" in config:
            config["lam"] = config.pop("lambda")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(config) - known
        if unknown:
            raise StructuralError(f"unknown chain benchmark keys: {sorted(unknown)}")
        return cls(**config)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except VarTDError as exc:
        raise StageError(name, exc) from exc


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _write_bundle(bundle, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for name, text in bundle["files"].items():
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            fh.write(text)


def run_chain_benchmark(config=None, out_dir=None):
    """Exact, unconstrained, constrained and LSTD(lambda) moments on the chain."""
    bench = config if isinstance(config, ChainBenchmark) else ChainBenchmark.from_config(config)
    chain = _stage("build", bench.chain)
    feats = _stage("features", bench.features)
    truth = _stage("solve_true", solve_true, chain)
    system, proj = _stage("projected_solution", projected_solution, chain, feats, bench.lam)
    cs = _stage("constraints", build_constraints, "all", feats, proj.w_J)
    con = _stage("constrained_solve", constrained_solve, system, cs, feats, IterationConfig())
    trajs = _stage("simulate", simulate, chain, bench.episodes, bench.seed)
    est, _ = _stage("lstd_lambda", lstd_lambda, trajs, feats, bench.lam)
    diag = _stage("diagnostics", diagnostics, chain, feats, bench.lam)

    n = chain.n
    facts = {
        "unconstrained_negative_states": [int(i) for i in np.flatnonzero(proj.V < 0)],
        "last_two_negative": bool(n >= 2 and proj.V[-1] < 0 and proj.V[-2] < 0),
        "constrained_min_variance": float(con.result.V.min()),
        "constrained_nonnegative": bool(con.result.V.min() >= -1e-8),
    }
    if bench.assert_facts and not (facts["last_two_negative"] and facts["constrained_nonnegative"]):
        raise StageError("facts", VarTDError(f"qualitative facts not reproduced: {facts}"))

    header = [
        "state", "J_true", "M_true", "V_true",
        "J_proj", "M_proj", "V_proj", "M_constrained", "V_constrained",
        "J_lstd", "M_lstd", "V_lstd",
    ]
    rows = [
        [x, truth.J[x], truth.M[x], truth.V[x],
         proj.J[x], proj.M[x], proj.V[x], con.result.M[x], con.result.V[x],
         est.J[x], est.M[x], est.V[x]]
        for x in range(n)
    ]
    summary = {
        "benchmark": "chain",
        "version": __version__,
        "config": asdict(bench),
        "projected": proj.to_dict(),
        "constrained": con.to_dict(),
        "lstd_lambda": est.to_dict(),
        "system": {"cond_A": system.cond_A, "cond_C": system.cond_C},
        "diagnostics": diag.to_dict(),
        "facts": facts,
    }
    bundle = {
        "summary": summary,
        "truth": truth,
        "projected": proj,
        "constrained": con,
        "lstd": est,
        "files": {
            "chain.csv": _csv_text(header, rows),
            "chain.json": json.dumps(summary, indent=2, sort_keys=True) + "\n",
        },
    }
    if out_dir is not None:
        _write_bundle(bundle, out_dir)
    return bundle


# --- gridworld maze -------------------------------------------------------

DEFAULT_LAYOUT = (
    "....................",
    "....................",
    "....................",
    "....................",
    "....................",
    "################....",
    "....................",
    "....................",
    "....................",
    "....................",
    "....################",
    "....................",
    "....................",
    "......##............",
    "......##............",
    "################....",
    "....................",
    "..........##........",
    "..........##........",
    "...................G",
)

# up, right, down, left as (drow, dcol)
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass(frozen=True)
class MazeBenchmark:
    """Noisy gridworld: reward ``-1`` per step until the goal cell.

    The intended move succeeds with probability ``1 - noise`` and slips to
    each perpendicular direction with probability ``noise / 2``; moves into
    walls or off the grid leave the agent in place. The policy moves
    greedily along shortest paths to the goal.
    """

    layout: tuple = DEFAULT_LAYOUT
    noise: float = 0.2
    lam: float = 0.9
    tiles: tuple = (10, 10)
    feature_kind: str = "tile"
    episodes: int = 3000
    mc_episodes_per_cell: int = 100
    seed: int = 0
    se_multiplier: float = 3.0
    min_agreement: float = 0.9
    assert_agreement: bool = False

    @classmethod
    def from_config(cls, config):
        config = dict(config or {})
        if "lambda" in config:
            config["lam"] = config.pop("lambda")
        for key in ("layout", "tiles"):
            if key in config:
                config[key] = tuple(config[key])
        known = set(cls.__dataclass_fields__)
        unknown = set(config) - known
        if unknown:
            raise StructuralError(f"unknown maze benchmark keys: {sorted(unknown)}")
        return cls(**config)

    def grid(self):
        rows = [list(r) for r in self.layout]
        if not rows or len({len(r) for r in rows}) != 1:
            raise StructuralError("maze layout must be a non-empty rectangle")
        g = np.array(rows)
        goals = np.argwhere(g == "G")
        if len(goals) != 1:
            raise StructuralError("maze layout needs exactly one goal cell 'G'")
        return g, (int(goals[0][0]), int(goals[0][1]))

    def cells(self):
        """Free non-goal cells as (row, col), in row-major order."""
        g, _ = self.grid()
        return [(int(r), int(c)) for r, c in np.argwhere(g == ".")]

    def distances(self):
        g, goal = self.grid()
        H, W = g.shape
        dist = np.full((H, W), np.inf)
        dist[goal] = 0
        queue = deque([goal])
        while queue:
            r, c = queue.popleft()
            for dr, dc in MOVES:
                rr, cc = r + dr, c + dc
                if 0 <= rr < H and 0 <= cc < W and g[rr, cc] != "#" and dist[rr, cc] == np.inf:
                    dist[rr, cc] = dist[r, c] + 1
                    queue.append((rr, cc))
        return dist

    def action_mdp(self):
        g, goal = self.grid()
        H, W = g.shape
        cells = self.cells()
        index = {c: i for i, c in enumerate(cells)}
        n, k = len(cells), len(MOVES)
        P_a = np.zeros((k, n, n))
        for a in range(k):
            outcomes = ((a, 1.0 - self.noise), ((a + 1) % 4, self.noise / 2), ((a + 3) % 4, self.noise / 2))
            for i, (r, c) in enumerate(cells):
                for move, prob in outcomes:
                    if prob == 0.0:
                        continue
                    dr, dc = MOVES[move]
                    rr, cc = r + dr, c + dc
                    if not (0 <= rr < H and 0 <= cc < W) or g[rr, cc] == "#":
                        rr, cc = r, c
                    if (rr, cc) == goal:
                        continue  # absorbed: mass goes to the terminal state
                    P_a[a, i, index[(rr, cc)]] += prob
        r_a = -np.ones((k, n))
        zeta0 = np.full(n, 1.0 / n)
        return ActionMdp(P_a, r_a, zeta0)

    def policy(self):
        """Deterministic greedy action per cell (first best in up/right/down/left order)."""
        g, _ = self.grid()
        H, W = g.shape
        dist = self.distances()
        acts = []
        for r, c in self.cells():
            best, best_a = np.inf, 0
            for a, (dr, dc) in enumerate(MOVES):
                rr, cc = r + dr, c + dc
                if 0 <= rr < H and 0 <= cc < W and g[rr, cc] != "#" and dist[rr, cc] < best:
                    best, best_a = dist[rr, cc], a
            acts.append(best_a)
        return np.array(acts)

    def chain(self):
        return compose(self.action_mdp(), self.policy())

    def coords(self):
        return np.array([(c + 0.5, r + 0.5) for r, c in self.cells()])

    def features(self, q):
        g, _ = self.grid()
        H, W = g.shape
        if self.feature_kind == "tabular":
            return tabular(len(self.cells()))
        if self.feature_kind != "tile":
            raise StructuralError(f"unknown maze feature kind {self.feature_kind!r}")
        raw = tile_coding(self.coords(), self.tiles, (0.0, 0.0), (float(W), float(H)))
        return raw.repaired(q)


def _grid_csv(cells, shape, values):
    grid = np.full(shape, np.nan)
    for (r, c), v in zip(cells, values):
        grid[r, c] = v
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in grid:
        w.writerow(["" if np.isnan(v) else repr(float(v)) for v in row])
    return buf.getvalue()


def non_monotone_pairs(J, V):
    """Two cell pairs showing ``V`` is neither increasing nor decreasing in ``J``.

    Returns ``(up, down)`` where ``up = (a, b)`` has ``J[a] < J[b]`` and
    ``V[a] < V[b]`` and ``down`` has ``J[a] < J[b]`` and ``V[a] > V[b]``;
    either is ``None`` if no such pair exists.
    """
    order = np.argsort(J, kind="stable")
    up = down = None
    for a, b in zip(order[:-1], order[1:]):
        if J[a] == J[b]:
            continue
        if up is None and V[a] < V[b]:
            up = (int(a), int(b))
        if down is None and V[a] > V[b]:
            down = (int(a), int(b))
        if up and down:
            break
    return up, down


def run_maze_benchmark(config=None, out_dir=None):
    """LSTD(lambda) variance map of the maze against per-cell Monte Carlo."""
    bench = config if isinstance(config, MazeBenchmark) else MazeBenchmark.from_config(config)
    chain = _stage("build", bench.chain)
    q = occupancy(chain).q
    feats = _stage("features", bench.features, q)
    trajs = _stage("simulate", simulate, chain, bench.episodes, bench.seed)
    est, _ = _stage("lstd_lambda", lstd_lambda, trajs, feats, bench.lam)

    visited = np.zeros(chain.n, dtype=bool)
    for tr in trajs:
        visited[tr.states] = True

    n = chain.n
    mc_sd, mc_se = np.full(n, np.nan), np.full(n, np.nan)
    mc_J = np.full(n, np.nan)
    for x in range(n):
        B, _ = sample_returns(chain, bench.mc_episodes_per_cell, seed=bench.seed + 1 + x, start_state=x)
        m = moments_from_returns(B)
        sd = np.sqrt(max(m.V, 0.0))
        mc_J[x] = m.J
        mc_sd[x] = sd
        # delta method: se(sd) = se(var) / (2 sd)
        mc_se[x] = m.se_V / (2.0 * sd) if sd > 0 else 0.0

    sd_hat = np.sqrt(np.maximum(est.V, 0.0))
    within = np.abs(sd_hat - mc_sd) <= bench.se_multiplier * mc_se + 1e-12
    agreement = float(np.mean(within[visited])) if visited.any() else 0.0
    up, down = non_monotone_pairs(est.J, est.V)
    cells = bench.cells()

    summary = {
        "benchmark": "maze",
        "version": __version__,
        "config": asdict(bench),
        "n_states": n,
        "n_features_J": feats.l_J,
        "n_features_M": feats.l_M,
        "visited_cells": int(visited.sum()),
        "agreement_fraction": agreement,
        "non_monotone": {
            "increasing_pair": [list(cells[i]) for i in up] if up else None,
            "decreasing_pair": [list(cells[i]) for i in down] if down else None,
        },
        "lstd_lambda": {"w_J": est.w_J.tolist(), "w_M": est.w_M.tolist()},
    }
    if bench.assert_agreement and agreement < bench.min_agreement:
        raise StageError(
            "agreement", VarTDError(f"only {agreement:.3f} of visited cells agree with Monte Carlo")
        )
    g, _ = bench.grid()
    header = ["row", "col", "J_lstd", "V_lstd", "sd_lstd", "J_mc", "sd_mc", "se_sd_mc", "visited", "within"]
    rows = [
        [r, c, est.J[i], est.V[i], sd_hat[i], mc_J[i], mc_sd[i], mc_se[i], int(visited[i]), int(within[i])]
        for i, (r, c) in enumerate(cells)
    ]
    bundle = {
        "summary": summary,
        "chain": chain,
        "features": feats,
        "lstd": est,
        "mc_sd": mc_sd,
        "mc_se": mc_se,
        "visited": visited,
        "within": within,
        "files": {
            "maze_cells.csv": _csv_text(header, rows),
            "maze_J.csv": _grid_csv(cells, g.shape, est.J),
            "maze_sd.csv": _grid_csv(cells, g.shape, sd_hat),
            "maze_sd_mc.csv": _grid_csv(cells, g.shape, mc_sd),
            "maze.json": json.dumps(summary, indent=2, sort_keys=True) + "\n",
        },
    }
    if out_dir is not None:
        _write_bundle(bundle, out_dir)
    return bundle
