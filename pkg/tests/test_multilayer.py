import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spintip.multilayer import (FISSION, FUSION, NEUTRAL, DegenerateNormError, LayerParams,
                                LayerStack, Trajectory, layer_forward, load_stack,
                                pair_separations, propagate)
from spintip.spinspace import DimensionError

from conftest import CONFIGS, TOY

SPINS = np.array(list(TOY.values()))


def unit_tokens(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_identity_alpha_zero_passthrough():
    out = layer_forward(SPINS, LayerParams.identity(3, alpha=0.0, normalize=False))
    assert np.array_equal(out, SPINS)


def test_identical_tokens_fixed_point():
    s = np.array([0.3, -0.4, 0.2])
    out = layer_forward(np.tile(s, (5, 1)), LayerParams.identity(3, alpha=1.0, normalize=False))
    np.testing.assert_allclose(out, np.tile(s, (5, 1)), rtol=0, atol=1e-15)


def test_random_layer_unit_norms():
    stack = LayerStack.random(1, 3, seed=4)
    out = layer_forward(SPINS, stack.layers[0])
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-9)


def test_layer_validation():
    with pytest.raises(ValueError):
        LayerParams.identity(3, alpha=1.5)
    with pytest.raises(ValueError):
        LayerParams(np.eye(2), np.eye(3), np.eye(2))
    with pytest.raises(DimensionError):
        layer_forward(SPINS, LayerParams.identity(4))


def test_zero_vector_cannot_normalize():
    params = LayerParams(np.eye(2), np.eye(2), np.zeros((2, 2)), alpha=1.0)
    with pytest.raises(DegenerateNormError):
        layer_forward(np.array([[1.0, 0.0], [0.0, 1.0]]), params)


def test_depth_zero_and_ten():
    assert propagate(SPINS, LayerStack(())).positions.shape == (1, 4, 3)
    traj = propagate(SPINS, load_stack(CONFIGS / "stack10.json", 3), "ABCD")
    assert traj.positions.shape == (11, 4, 3)
    assert np.array_equal(traj.positions[0], SPINS)


def test_pair_labels_toy():
    traj = propagate(SPINS, load_stack(CONFIGS / "stack10.json", 3), "ABCD")
    seps = pair_separations(traj)
    assert len(seps.pairs) == 6
    assert set(seps.labels.values()) <= {FUSION, FISSION, NEUTRAL}
    assert len(seps.labels) == 6
    assert np.all(seps.distances >= 0)
    assert len(seps.to_csv().splitlines()) == 1 + 11 * 6


def test_alpha_zero_all_neutral():
    stack = LayerStack.random(5, 3, seed=1, alpha=0.0, normalize=False)
    seps = pair_separations(propagate(SPINS, stack))
    assert set(seps.labels.values()) == {NEUTRAL}


def test_identical_tokens_zero_separation():
    x = np.array([[0.6, 0.8, 0.0], [0.6, 0.8, 0.0], [0.0, 1.0, 0.0]])
    seps = pair_separations(propagate(x, LayerStack.random(6, 3, seed=2)))
    assert np.all(seps.distances[:, 0] == 0)


def test_separation_symmetric():
    traj = propagate(unit_tokens(6, 4, 0), LayerStack.random(3, 4, seed=0))
    from spintip.multilayer import distance_matrix
    for state in traj.positions:
        m = distance_matrix(state)
        assert np.array_equal(m, m.T)


def test_shared_and_identity_stacks():
    shared = LayerStack.random(3, 4, seed=5, shared=True)
    assert all(np.array_equal(L.w_q, shared.layers[0].w_q) for L in shared.layers)
    ident = LayerStack.from_document({"depth": 2, "w_init": {"kind": "identity"}}, 4)
    assert np.array_equal(ident.layers[1].w_v, np.eye(4))
    with pytest.raises(ValueError):
        LayerStack.from_document({"depth": 2, "lr": 0.1}, 4)


def test_trajectory_csv_round_trip():
    traj = propagate(SPINS, LayerStack.random(4, 3, seed=8), "ABCD")
    again = Trajectory.from_csv(traj.to_csv())
    assert again.labels == traj.labels
    assert np.array_equal(again.positions, traj.positions)


def test_deterministic_given_seed():
    x = unit_tokens(10, 5, 1)
    a = propagate(x, LayerStack.random(6, 5, seed=3))
    b = propagate(x, LayerStack.random(6, 5, seed=3))
    assert a.positions.tobytes() == b.positions.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 8), st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_unit_norms_every_layer(n, d, seed, alpha):
    traj = propagate(unit_tokens(n, d, seed), LayerStack.random(4, d, seed=seed, alpha=alpha))
    np.testing.assert_allclose(np.linalg.norm(traj.positions[1:], axis=2), 1.0, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_alpha_zero_identity_any_w(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d))
    traj = propagate(x, LayerStack.random(3, d, seed=seed, alpha=0.0, normalize=False))
    assert all(np.array_equal(s, x) for s in traj.positions)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 16), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_permutation_equivariance(n, d, seed):
    rng = np.random.default_rng(seed)
    x = unit_tokens(n, d, seed)
    perm = rng.permutation(n)
    stack = LayerStack.random(3, d, seed=seed)
    a = propagate(x, stack).positions[:, perm]
    b = propagate(x[perm], stack).positions
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
