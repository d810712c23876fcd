import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import chain30, geometric, random_chain
from vartd.bench import MazeBenchmark
from vartd.exceptions import ImproperChainError, OccupancyError, StructuralError
from vartd.mdp import (
    ActionMdp,
    SspChain,
    compose,
    load_model,
    occupancy,
    save_model,
    spectral_radius,
    validate,
)
from vartd.simulator import simulate


def test_single_absorbing_state_is_proper():
    for r in (-3.0, 0.0, 7.5):
        rep = validate(SspChain([[0.0]], [r], [1.0]))
        assert rep.ok and rep.proper


def test_single_self_loop_is_improper():
    with pytest.raises(ImproperChainError) as err:
        SspChain([[1.0]], [1.0], [1.0])
    assert err.value.recurrent_class == (0,)
    rep = validate(SspChain([[1.0]], [1.0], [1.0], check=False))
    assert not rep.proper and rep.recurrent_class == (0,)


def test_improper_class_is_named():
    P = [[0.5, 0.5, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
    rep = validate(SspChain(P, [1, 1, 1], [1, 0, 0], check=False))
    assert not rep.proper
    assert set(rep.recurrent_class) == {1, 2}


def test_chain30_is_proper():
    rep = validate(chain30())
    assert rep.ok
    assert rep.spectral_radius < 1


def test_structural_errors():
    with pytest.raises(StructuralError):
        SspChain([[0.5, 0.2]], [1.0], [1.0])
    with pytest.raises(StructuralError):
        SspChain([[0.5]], [1.0, 2.0], [1.0])
    with pytest.raises(StructuralError):
        SspChain([[np.nan]], [1.0], [1.0])


def test_bad_rows_and_start_distribution_reported():
    rep = validate(SspChain([[0.7, 0.6], [0.0, 0.0]], [1, 1], [1, 0], check=False))
    assert not rep.substochastic
    rep = validate(SspChain([[0.0]], [1.0], [0.5], check=False))
    assert not rep.zeta0_distribution


def test_unvisited_state_is_occupancy_error():
    with pytest.raises(OccupancyError):
        SspChain([[0.0, 0.0], [0.0, 0.0]], [1, 1], [1, 0])


def test_occupancy_trivial_and_geometric():
    assert np.allclose(occupancy(SspChain([[0.0]], [1.0], [1.0])).q, [1.0])
    for p in (0.1, 0.5, 0.9):
        assert np.isclose(occupancy(geometric(p)).q[0], 1.0 / p, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8))
def test_occupancy_solves_balance(seed, n):
    chain = random_chain(np.random.default_rng(seed), n)
    q = occupancy(chain).q
    assert np.all(q >= 0)
    resid = (np.eye(n) - chain.P.T) @ q - chain.zeta0
    assert np.linalg.norm(resid) <= 1e-10 * np.linalg.norm(chain.zeta0)


def test_occupancy_matches_visit_counts():
    chain = chain30()
    q = occupancy(chain).q
    N = 100_000
    counts = np.zeros((N, chain.n))
    for i, tr in enumerate(simulate(chain, N, seed=11)):
        counts[i] = np.bincount(tr.states, minlength=chain.n)
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / np.sqrt(N)
    assert np.all(np.abs(mean - q) <= 3 * se + 1e-12)


def test_spectral_radius_matches_eigvals():
    rng = np.random.default_rng(3)
    for _ in range(20):
        chain = random_chain(rng, 6)
        exact = np.max(np.abs(np.linalg.eigvals(chain.P)))
        assert np.isclose(spectral_radius(chain.P), exact, atol=1e-8)


def test_compose_identity_and_mixture():
    rng = np.random.default_rng(0)
    chain = random_chain(rng, 4)
    one = ActionMdp(chain.P[None], chain.r[None], chain.zeta0)
    out = compose(one, np.zeros(4, dtype=int))
    assert np.array_equal(out.P, chain.P) and np.array_equal(out.r, chain.r)

    other = random_chain(rng, 4)
    two = ActionMdp(np.stack([chain.P, other.P]), np.stack([chain.r, other.r]), chain.zeta0)
    mixed = compose(two, np.full((4, 2), 0.5))
    assert np.allclose(mixed.P, (chain.P + other.P) / 2)
    assert np.allclose(mixed.r, (chain.r + other.r) / 2)


def test_compose_rejects_bad_policy():
    chain = random_chain(np.random.default_rng(1), 3)
    mdp = ActionMdp(chain.P[None], chain.r[None], chain.zeta0)
    with pytest.raises(StructuralError):
        compose(mdp, np.full((3, 1), 0.7))
    with pytest.raises(StructuralError):
        compose(mdp, np.array([0, 1, 0]))


def test_maze_chain_is_proper():
    maze = MazeBenchmark()
    chain = maze.chain()
    assert validate(chain).ok
    assert np.all(occupancy(chain).q > 0)


def test_model_file_roundtrip(tmp_path):
    chain = random_chain(np.random.default_rng(5), 4)
    path = tmp_path / "m.json"
    save_model(chain, path)
    back = load_model(path)
    assert np.array_equal(back.P, chain.P) and np.array_equal(back.r, chain.r)

    mdp = ActionMdp(np.stack([chain.P, chain.P]), np.stack([chain.r, -chain.r]), chain.zeta0)
    save_model(mdp, path)
    back = load_model(path)
    assert isinstance(back, ActionMdp) and back.n_actions == 2


def test_model_file_validated_on_read(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"n": 1, "P": [[1.0]], "r": [1.0], "zeta0": [1.0]}')
    with pytest.raises(ImproperChainError):
        load_model(path)
    path.write_text('{"n": 2, "P": [[0.0]], "r": [1.0], "zeta0": [1.0]}')
    with pytest.raises(StructuralError):
        load_model(path)
