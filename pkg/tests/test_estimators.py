import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from helpers import chain30, random_chain, two_step
from vartd.exact import projected_solution, solve_true
from vartd.exceptions import DataDeficiencyError, DivergenceError, ScheduleError, StructuralError
from vartd.estimators import (
    LSTDVariance,
    LstdAccumulator,
    StepSchedule,
    TD0Variance,
    TdState,
    lstd,
    lstd_lambda,
    td0,
    td0_step,
)
from vartd.features import polynomial, random_features, tabular
from vartd.mdp import SspChain
from vartd.simulator import Trajectory, simulate


def _episode(states, rewards):
    return Trajectory(np.asarray(states), np.asarray(rewards, dtype=float))


def _naive_lstd(trajs, feats, lam):
    """Per-step reference: explicit trace loop, then d with the fitted w_J."""
    FJ, FM = feats.extended()
    n = feats.n
    A = np.zeros((feats.l_J, feats.l_J))
    b = np.zeros(feats.l_J)
    C = np.zeros((feats.l_M, feats.l_M))
    steps = []
    for tr in trajs:
        zJ = np.zeros(feats.l_J)
        zM = np.zeros(feats.l_M)
        nxt = list(tr.states[1:]) + [n]
        for x, y, r in zip(tr.states, nxt, tr.rewards):
            zJ = lam * zJ + FJ[x]
            zM = lam * zM + FM[x]
            A += np.outer(zJ, FJ[x] - FJ[y])
            b += zJ * r
            C += np.outer(zM, FM[x] - FM[y])
            steps.append((zM.copy(), r, y))
    N = len(trajs)
    w_J = np.linalg.solve(A / N, b / N)
    d = sum(z * r * (r + 2 * FJ[y] @ w_J) for z, r, y in steps) / N
    return w_J, np.linalg.solve(C / N, d)


def test_single_episode_hand_sums():
    tr = _episode([0, 1], [1.0, 2.0])
    res, acc = lstd([tr], tabular(2))
    assert np.array_equal(acc.A_N, [[1, -1], [0, 1]])
    assert np.array_equal(acc.b_N, [1, 2])
    assert np.array_equal(acc.C_raw2, [1, 4])
    assert np.array_equal(acc.D_cross, [[0, 1], [0, 0]])
    assert np.allclose(res.J, [3, 2]) and np.allclose(res.M, [9, 4])
    assert np.allclose(res.V, 0)


def test_trace_hand_sums_lambda_half():
    tr = _episode([0, 1, 2], [1.0, 2.0, 3.0])
    _, acc = lstd_lambda([tr], tabular(3), 0.5)
    A = [[1, -0.5, -0.25], [0, 1, -0.5], [0, 0, 1]]
    assert np.allclose(acc.A_N, A, rtol=0, atol=1e-15)
    assert np.allclose(acc.b_N, [2.75, 3.5, 3.0], rtol=0, atol=1e-15)


def test_lambda_zero_is_lstd_bit_for_bit():
    chain = chain30()
    trajs = simulate(chain, 500, seed=3)
    feats = polynomial(30, 1, 2)
    a, acc_a = lstd(trajs, feats)
    b, acc_b = lstd_lambda(trajs, feats, 0.0)
    assert np.array_equal(a.w_J, b.w_J) and np.array_equal(a.w_M, b.w_M)
    assert np.array_equal(acc_a.A, acc_b.A)


@pytest.mark.parametrize("lam", [0.0, 0.4, 0.9])
def test_matches_naive_loop(lam):
    rng = np.random.default_rng(5)
    chain = random_chain(rng, 5)
    feats = random_features(5, 2, 3, rng)
    trajs = simulate(chain, 300, seed=7)
    res, _ = lstd_lambda(trajs, feats, lam)
    w_J, w_M = _naive_lstd(trajs, feats, lam)
    assert np.allclose(res.w_J, w_J, rtol=1e-10)
    assert np.allclose(res.w_M, w_M, rtol=1e-10)


@pytest.mark.parametrize("lam", [0.0, 0.95])
def test_chain30_close_to_projected(lam):
    chain = chain30()
    feats = polynomial(30, 1, 2)
    _, ref = projected_solution(chain, feats, lam)
    res, _ = lstd_lambda(simulate(chain, 10_000, seed=0), feats, lam)
    assert np.linalg.norm(res.w_J - ref.w_J) <= 0.05 * np.linalg.norm(ref.w_J)
    assert np.linalg.norm(res.w_M - ref.w_M) <= 0.05 * np.linalg.norm(ref.w_M)


def test_tabular_consistency():
    chain = random_chain(np.random.default_rng(9), 4)
    t = solve_true(chain)
    res, _ = lstd(simulate(chain, 100_000, seed=1), tabular(4))
    assert np.allclose(res.J, t.J, rtol=0.02, atol=0.02 * np.abs(t.J).max())
    assert np.allclose(res.M, t.M, rtol=0.05, atol=0.05 * np.abs(t.M).max())


def test_merge_matches_joint_fit():
    chain = chain30()
    feats = polynomial(30, 1, 2)
    trajs = simulate(chain, 600, seed=2)
    joint = LstdAccumulator.empty(2, 3, 0.5).update(trajs, feats)
    parts = [LstdAccumulator.empty(2, 3, 0.5).update(trajs[i::3], feats) for i in range(3)]
    merged = (parts[0] + parts[1]) + parts[2]
    assert merged.n_episodes == joint.n_episodes
    for name in ("A", "b", "C", "C_raw2", "D_cross", "G_M"):
        assert np.allclose(getattr(merged, name), getattr(joint, name), rtol=1e-12)
    with pytest.raises(StructuralError):
        joint + LstdAccumulator.empty(2, 3, 0.0)


def test_data_deficiency():
    chain = random_chain(np.random.default_rng(0), 5)
    with pytest.raises(DataDeficiencyError) as err:
        lstd([_episode([0], [1.0])], tabular(5))
    assert err.value.n_episodes == 1
    with pytest.raises(DataDeficiencyError):
        LstdAccumulator.empty(5, 5).solve()


def test_td0_zero_reward_stays_zero():
    chain = SspChain(random_chain(np.random.default_rng(1), 4).P, np.zeros(4), np.full(4, 0.25))
    state = td0(simulate(chain, 300, seed=0), polynomial(4, 1, 2))
    assert np.all(state.w_J == 0) and np.all(state.w_M == 0)


def test_td0_step_hand_deltas():
    tr = _episode([0, 1], [1.0, 2.0])
    state = TdState(np.array([0.5, 1.5]), np.array([2.0, 3.0]))
    td0_step(state, tr, tabular(2), 0.1)
    # delta_J: t0 = 1 + 1.5 - 0.5 = 2; t1 = 2 + 0 - 1.5 = 0.5
    assert np.allclose(state.w_J, [0.5 + 0.2, 1.5 + 0.05])
    # delta_M: t0 = 1 + 2*1*1.5 + (3 - 2) = 5; t1 = 4 + 0 + (0 - 3) = 1
    assert np.allclose(state.w_M, [2.0 + 0.5, 3.0 + 0.1])
    assert state.k == 1


def test_td0_converges_with_larger_steps():
    chain = chain30()
    feats = polynomial(30, 1, 2)
    _, ref = projected_solution(chain, feats, 0.0)
    state = td0(simulate(chain, 200_000, seed=0), feats, StepSchedule(20.0, 100.0), record_every=10**6)
    w = np.concatenate([state.w_J, state.w_M])
    w_ref = np.concatenate([ref.w_J, ref.w_M])
    assert np.linalg.norm(w - w_ref) <= 0.1 * np.linalg.norm(w_ref)


def test_td0_divergence_guard():
    chain = chain30()
    with pytest.raises(DivergenceError):
        td0(simulate(chain, 400, seed=0), polynomial(30, 1, 2), StepSchedule(1e4, 1.0))


def test_td0_history_and_k_max():
    trajs = simulate(chain30(), 50, seed=0)
    state = td0(trajs, polynomial(30, 1, 2), k_max=20, record_every=5)
    assert state.k == 20
    assert [h[0] for h in state.history] == [0, 5, 10, 15, 20]


def test_schedule_contract():
    s = StepSchedule(0.5, 100)
    assert s(0) == 0.005 and s(100) == 0.0025
    for bad in (dict(c=0.0), dict(c=-1.0), dict(k0=0.0), dict(c=float("inf"))):
        with pytest.raises(ScheduleError):
            StepSchedule(**bad)
    with pytest.raises(ScheduleError):
        StepSchedule.from_spec({"kind": "constant", "c": 0.1})
    assert StepSchedule.from_spec({"c": 2, "k0": 5}) == StepSchedule(2.0, 5.0)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(1e-3, 1e3), k0=st.floats(1e-3, 1e4))
def test_harmonic_steps_tail(c, k0):
    s = StepSchedule(c, k0)
    k = np.arange(10**5)
    steps = s(k)
    assert np.all(np.diff(steps) < 0) and np.all(steps > 0)
    # square-summable: tail beyond K is below c^2 / (K + k0 - 1)
    K = 10**5
    assert np.sum(steps[-1000:] ** 2) <= c * c / (K - 1000 + k0 - 1)


def test_estimator_api():
    feats = polynomial(30, 1, 2)
    trajs = simulate(chain30(), 2000, seed=4)
    est = LSTDVariance(features=feats, lam=0.5)
    with pytest.raises(NotFittedError):
        est.predict([0])
    assert est.get_params()["lam"] == 0.5
    est.fit(trajs)
    res, _ = lstd_lambda(trajs, feats, 0.5)
    assert np.allclose(est.predict(np.arange(30)), res.J)
    assert np.allclose(est.predict_variance(np.arange(30)), res.V)
    part = clone(est).partial_fit(trajs[:700]).partial_fit(trajs[700:])
    assert np.allclose(part.w_J_, est.w_J_, rtol=1e-10) and np.allclose(part.w_M_, est.w_M_, rtol=1e-9)

    td = TD0Variance(features=feats, record_every=100).fit(trajs[:500])
    td2 = TD0Variance(features=feats, record_every=100).partial_fit(trajs[:200]).partial_fit(trajs[200:500])
    assert np.allclose(td.w_J_, td2.w_J_) and td.n_episodes_ == 500
