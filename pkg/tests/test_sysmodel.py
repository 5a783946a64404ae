import json

import numpy as np
import pytest

from riskmpc.errors import CapacityExceeded, ConfigError, InvalidScenario
from riskmpc.sysmodel import build_tree, load_system, make_system, reference_system, simulate_tree, step

REFERENCE_A = [[[2.0, 0.5], [-0.5, 2.0]], [[0.01, 0.1], [0.05, 0.01]], [[0.3, 0.1], [0.1, 0.3]]]


def scalar_config(**over):
    cfg = {"Nx": 1, "Nu": 1, "scenarios": [{"A": [[0.5]], "B": [[1.0]]}], "pmf": [1.0],
           "Q": [[1.0]], "R": [[1.0]]}
    cfg.update(over)
    return cfg


def test_reference_system_loads(reference_sys):
    assert (reference_sys.L, reference_sys.Nx, reference_sys.Nu) == (3, 2, 2)
    assert np.allclose(reference_sys.A[0], REFERENCE_A[0])
    assert np.allclose(reference_sys.B[2], [[2.0, 0.3], [0.3, 2.0]])
    assert np.allclose(reference_sys.pmf, 1.0 / 3.0)
    assert np.allclose(reference_sys.Q, np.eye(2))
    assert np.allclose(reference_sys.R, 1e-4 * np.eye(2))


def test_scalar_system_is_valid():
    sysm = load_system(scalar_config())
    assert (sysm.L, sysm.Nx, sysm.Nu) == (1, 1, 1)


def test_load_from_json_text_and_file(tmp_path):
    cfg = scalar_config()
    path = tmp_path / "sys.json"
    path.write_text(json.dumps(cfg))
    assert load_system(str(path)).L == 1
    assert load_system(json.dumps(cfg)).Nx == 1


@pytest.mark.parametrize("over", [
    {"Q": [[0.0]]},
    {"R": [[-1.0]]},
    {"pmf": [0.5]},
    {"pmf": [0.5, 0.5]},
    {"scenarios": [{"A": [[0.5, 1.0]], "B": [[1.0]]}]},
    {"scenarios": [{"A": [[0.5]], "B": [[1.0], [2.0]]}]},
    {"Nx": 2},
    {"scenarios": []},
])
def test_invalid_configs(over):
    with pytest.raises(ConfigError):
        load_system(scalar_config(**over))


def test_semidefinite_q_rejected():
    with pytest.raises(ConfigError):
        make_system([np.eye(2)], [np.eye(2)], [1.0], np.diag([1.0, 0.0]), np.eye(2))


def test_missing_file():
    with pytest.raises(ConfigError):
        load_system("/nonexistent/system.json")


def test_build_tree_counts(reference_sys, scalar_sys):
    t = build_tree(reference_sys, 3)
    assert (t.n_nodes, t.n_leaves) == (40, 27)
    t = build_tree(scalar_sys, 5)
    assert (t.n_nodes, t.n_leaves) == (6, 1)
    two = make_system([np.eye(1)] * 2, [np.eye(1)] * 2, [0.5, 0.5], [[1.0]], [[1.0]])
    assert build_tree(two, 1).n_nodes == 3


def test_build_tree_capacity(reference_sys):
    with pytest.raises(CapacityExceeded):
        build_tree(reference_sys, 13)  # 3^13 > 1e6
    with pytest.raises(ValueError):
        build_tree(reference_sys, 0)


def test_tree_history_indexing(reference_sys):
    t = build_tree(reference_sys, 3)
    assert t.history(0) == ()
    for node in range(t.n_nodes):
        assert t.node_id(t.history(node)) == node
        for j, child in enumerate(t.children(node)):
            assert t.parent(child) == node
            assert t.history(child) == t.history(node) + (j,)


def test_step_examples(reference_sys, scalar_sys):
    assert np.array_equal(step(reference_sys, np.zeros(2), np.zeros(2), 2), np.zeros(2))
    assert np.isclose(step(scalar_sys, [2.0], [1.0], 1)[0], 2.0)
    # oracle: hand multiplication of the second scenario matrix
    assert np.allclose(step(reference_sys, [1.0, 1.0], [0.0, 0.0], 2), [0.11, 0.06])


@pytest.mark.parametrize("j", [0, 4, -1])
def test_step_index_range(reference_sys, j):
    with pytest.raises(InvalidScenario):
        step(reference_sys, np.zeros(2), np.zeros(2), j)


def test_step_is_linear(reference_sys):
    rng = np.random.default_rng(0)
    for _ in range(100):
        x1, x2, u1, u2 = rng.standard_normal((4, 2))
        j = int(rng.integers(1, 4))
        lhs = step(reference_sys, x1 + x2, u1 + u2, j)
        rhs = step(reference_sys, x1, u1, j) + step(reference_sys, x2, u2, j)
        assert np.abs(lhs - rhs).max() <= 1e-12 * (1 + np.abs(lhs).max())


def test_simulate_tree_follows_histories(reference_sys):
    rng = np.random.default_rng(1)
    t = build_tree(reference_sys, 2)
    U = rng.standard_normal((t.n_internal, 2))
    X = simulate_tree(reference_sys, t, np.array([1.0, -1.0]), U)
    for leaf in t.level_nodes(2):
        x = np.array([1.0, -1.0])
        node = 0
        for j in t.history(leaf):
            x = step(reference_sys, x, U[node], j + 1)
            node = t.children(node)[j]
        assert np.allclose(x, X[leaf], atol=1e-12)
