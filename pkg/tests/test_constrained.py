import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import chain30, grid_instance, grid_search
from vartd.constrained import (
    IterationConfig,
    PolyhedronProjector,
    VarianceConstrainedLSTD,
    build_constraints,
    check_feasibility,
    constrained_solve,
    project_polyhedron,
)
from vartd.exact import ProjectedSystem, projected_solution
from vartd.exceptions import InfeasibleError, NonConvergenceError, ProjectionError
from vartd.features import FeatureSet, polynomial
from vartd.simulator import simulate


def _chain_setup(lam=0.95):
    chain = chain30()
    feats = polynomial(30, 1, 2)
    system, res = projected_solution(chain, feats, lam)
    return chain, feats, system, res


def test_single_state_constraint():
    feats = FeatureSet([[1.0]], [[1.0]])
    cs = build_constraints([0], feats, [2.0])
    assert np.array_equal(cs.H, [[-1.0]]) and np.array_equal(cs.g, [-4.0])


def test_chain30_rows():
    _, feats, _, res = _chain_setup()
    cs = build_constraints("all", feats, res.w_J)
    x = np.arange(1, 31) / 30
    assert cs.H.shape == (30, 3)
    assert np.array_equal(cs.H, -np.column_stack([np.ones(30), x, x * x]))
    assert np.all(cs.g <= 0)


def test_positive_variance_is_strictly_feasible():
    _, feats, _, res = _chain_setup()
    cs = build_constraints("all", feats, res.w_J)
    w = res.w_M + np.array([100.0, 0, 0])
    assert np.all(feats.Phi_M @ w - res.J**2 > 0)
    assert np.all(cs.H @ w < cs.g)


def test_constant_column_feasible():
    _, feats, _, res = _chain_setup()
    rep = check_feasibility(build_constraints("all", feats, res.w_J))
    assert rep.feasible and rep.margin > 0


def test_interval_and_degenerate_box():
    class CS:
        pass

    cs = CS()
    cs.H, cs.g = np.array([[1.0]]), np.array([-1.0])
    rep = check_feasibility(cs)
    assert rep.feasible and rep.witness[0] < -1
    cs.H, cs.g = np.array([[1.0], [-1.0]]), np.array([0.0, 0.0])
    rep = check_feasibility(cs)
    assert not rep.feasible and rep.witness is None


def test_feasible_point_unchanged():
    H = np.array([[1.0, 0.0], [0.0, 1.0]])
    g = np.array([1.0, 1.0])
    w = np.array([0.3, -2.0])
    assert np.array_equal(project_polyhedron(w, (H, g)), w)


@settings(max_examples=60, deadline=None)
@given(
    h=st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    w=st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    g=st.floats(-5, 5),
)
def test_halfspace_closed_form(h, w, g):
    h, w = np.array(h), np.array(w)
    if np.linalg.norm(h) < 1e-2:
        return
    expected = w - max(0.0, h @ w - g) * h / (h @ h)
    got = project_polyhedron(w, (h[None], np.array([g])))
    assert np.allclose(got, expected, atol=1e-9 * (1 + np.abs(w).max()))


def test_projection_matches_grid_search():
    rng = np.random.default_rng(0)
    for k in range(10):
        w, H, g, Xi = grid_instance(rng, 2 + k % 2)
        v = project_polyhedron(w, (H, g), Xi)
        obj = (v - w) @ Xi @ (v - w)
        best = grid_search(w, H, g, Xi)
        assert np.all(H @ v <= g + 1e-10)
        assert obj <= best + 1e-12
        assert best - obj <= 1e-4
        assert np.allclose(project_polyhedron(v, (H, g), Xi), v, atol=1e-10)


def test_projection_error_on_sweep_cap():
    # many nearly parallel constraints need more than one sweep
    ang = np.linspace(0, 0.02, 12)
    H = np.column_stack([np.cos(ang), np.sin(ang)])
    g = -np.ones(12) + 0.001 * np.arange(12)
    proj = PolyhedronProjector(H, g, np.eye(2), max_sweeps=1)
    with pytest.raises(ProjectionError):
        proj(np.array([5.0, 5.0]), warm_start=False)


def _synthetic(rng, dim=2, m=3, lam=0.5):
    B = rng.standard_normal((dim, dim))
    C = B @ B.T + dim * np.eye(dim) + 0.3 * (B - B.T)
    d = rng.standard_normal(dim) * 3
    G = np.eye(dim) + 0.2 * np.ones((dim, dim))
    system = ProjectedSystem(lam, None, None, C, d, None, G, None, 1.0, float(np.linalg.cond(C)))
    return system


def _active_set_oracle(C, d, H, g):
    """Enumerate active sets of C w - d + H^T mu = 0, mu >= 0, H w <= g."""
    m, l = H.shape
    sols = []
    for k in range(0, min(m, l) + 1):
        for S in itertools.combinations(range(m), k):
            S = list(S)
            K = np.block([[C, H[S].T], [H[S], np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([d, g[S]]))
            except np.linalg.LinAlgError:
                continue
            w, mu = sol[:l], sol[l:]
            if np.all(mu >= -1e-12) and np.all(H @ w <= g + 1e-10):
                sols.append(w)
    return sols


class _CS:
    def __init__(self, H, g, w_J):
        self.H, self.g, self.w_J = H, g, w_J
        self.states = np.arange(H.shape[0])


def _plain_features(l):
    return FeatureSet(np.eye(l), np.eye(l))


def test_matches_active_set_enumeration():
    rng = np.random.default_rng(3)
    hits = 0
    for _ in range(20):
        system = _synthetic(rng)
        H = rng.standard_normal((3, 2))
        g = H @ rng.uniform(-0.3, 0.3, 2) + rng.uniform(0.05, 0.4, 3)
        cs = _CS(H, g, np.zeros(2))
        res = constrained_solve(system, cs, _plain_features(2), IterationConfig(tol=1e-12))
        sols = _active_set_oracle(system.C, system.d, H, g)
        assert len(sols) == 1
        assert np.allclose(res.w_M, sols[0], atol=1e-6)
        hits += not np.allclose(res.w_M, np.linalg.solve(system.C, system.d))
    assert hits > 0  # some instances do have active constraints


def test_inactive_constraints_give_unconstrained_solution():
    rng = np.random.default_rng(4)
    system = _synthetic(rng)
    w0 = np.linalg.solve(system.C, system.d)
    H = np.eye(2)
    g = w0 + 10.0
    res = constrained_solve(system, _CS(H, g, np.zeros(2)), _plain_features(2))
    assert np.allclose(res.w_M, w0, rtol=1e-9)


def test_chain30_repair():
    _, feats, system, res = _chain_setup()
    assert res.V[-1] < 0 and res.V[-2] < 0
    cs = build_constraints("all", feats, res.w_J)
    out = constrained_solve(system, cs, feats)
    assert out.result.V.min() >= -1e-8
    assert np.all(cs.H @ out.w_M <= cs.g + 1e-8 * (1 + np.abs(cs.g).max()))
    assert np.array_equal(out.result.J, res.J)


def test_step_size_does_not_move_fixed_point():
    _, feats, system, res = _chain_setup()
    cs = build_constraints("all", feats, res.w_J)
    a = constrained_solve(system, cs, feats, IterationConfig(gamma=1.0, tol=1e-12))
    b = constrained_solve(system, cs, feats, IterationConfig(gamma=0.5, tol=1e-12))
    assert np.allclose(a.w_M, b.w_M, rtol=1e-7)


def test_non_convergence_carries_history():
    _, feats, system, res = _chain_setup()
    cs = build_constraints("all", feats, res.w_J)
    with pytest.raises(NonConvergenceError) as err:
        constrained_solve(system, cs, feats, IterationConfig(max_iters=2, tol=1e-15))
    assert len(err.value.residuals) == 2


def test_preconditions():
    chain, feats, _, res = _chain_setup()
    system0, res0 = projected_solution(chain, feats, 0.0)
    cs = build_constraints("all", feats, res0.w_J)
    with pytest.raises(ValueError):
        constrained_solve(system0, cs, feats)
    _, _, system, _ = _chain_setup()
    bad = _CS(np.array([[1.0, 0, 0], [-1.0, 0, 0]]), np.zeros(2), res.w_J)
    with pytest.raises(InfeasibleError):
        constrained_solve(system, bad, feats)
    with pytest.raises(ValueError):
        IterationConfig(gamma=0)
    with pytest.raises(ValueError):
        IterationConfig(xi=-np.eye(3)).metric(system)


def test_sampled_constrained_estimator():
    feats = polynomial(30, 1, 2)
    trajs = simulate(chain30(), 5000, seed=1)
    est = VarianceConstrainedLSTD(features=feats, lam=0.95).fit(trajs)
    V = est.predict_variance(np.arange(30))
    assert V.min() >= -1e-8
    assert (est.result().V == V).all()
    assert est.get_params()["states"] == "all"
