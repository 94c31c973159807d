import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsloc.graph_core import check_dominance, is_simplex_vector
from dsloc.stqp import (
    ConvergenceError,
    extract_dominant_sets,
    find_equilibrium,
    homogenize,
    payoff_value,
    replicator_equilibrium,
    residual_epsilon,
    select_infective,
)

from conftest import random_symmetric


def block_matrix():
    B = np.zeros((4, 4))
    B[0, 1] = B[1, 0] = 1.0
    return B


def test_block_with_unit_diagonal_is_flat():
    # ones on the diagonal make every point of the {0,1} face optimal,
    # so the dynamics may stop anywhere on it
    B = np.zeros((4, 4))
    B[:2, :2] = 1.0
    res = find_equilibrium(B)
    assert set(res.support()) <= {0, 1}
    assert res.objective == pytest.approx(1.0)


def test_homogenize_constant_scores():
    assert np.array_equal(homogenize(np.zeros((2, 2)), [0.5, 0.5]), np.ones((2, 2)))


def test_homogenize_entrywise():
    assert np.array_equal(homogenize(np.zeros((2, 2)), [1, 3]), [[2, 4], [4, 6]])
    assert np.array_equal(homogenize([[0, 2], [2, 0]], [1, 3]), [[2, 6], [6, 6]])


def test_homogenize_shape_mismatch():
    with pytest.raises(ValueError):
        homogenize(np.zeros((2, 2)), [1, 2, 3])


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 30))
def test_homogenization_identity(seed, n):
    rng = np.random.default_rng(seed)
    A = random_symmetric(rng, n)
    b = rng.random(n)
    x = rng.dirichlet(np.ones(n))
    B = homogenize(A, b)
    assert abs(x @ B @ x - (x @ A @ x + 2 * b @ x)) <= 1e-12 * n


def test_payoff_examples():
    assert payoff_value([[0, 1], [1, 0]], [1.0, 0.0]) == 0.0
    assert payoff_value([[0, 1], [1, 0]], [0.5, 0.5]) == 0.5


def test_residual_zero_at_equilibrium():
    assert residual_epsilon([[0, 1], [1, 0]], [0.5, 0.5]) <= 1e-14


def test_residual_pure_strategy_with_invader():
    B = [[0, 2], [2, 0]]
    # the sign-flipped variant reads 0 even though node 1 invades
    assert residual_epsilon(B, [1.0, 0.0], literal=True) == 0.0
    # f = 0, Bx = (0, 2): min{1, 0}^2 + min{0, -2}^2
    assert residual_epsilon(B, [1.0, 0.0]) == 4.0
    assert residual_epsilon(B, [0.5, 0.5]) == 0.0


def test_residual_detects_non_equilibrium():
    B = np.array([[0, 2], [2, 0]], dtype=float)
    x = np.array([0.9, 0.1])
    # f = 0.36, Bx = (0.2, 1.8): min{0.9, 0.16}^2 + min{0.1, -1.44}^2
    assert residual_epsilon(B, x) == pytest.approx(0.16**2 + 1.44**2)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12))
def test_residual_matches_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    B = B + B.T
    x = rng.dirichlet(np.ones(n))
    f = sum(x[i] * B[i, j] * x[j] for i in range(n) for j in range(n))
    expected = 0.0
    for i in range(n):
        bx_i = sum(B[i, j] * x[j] for j in range(n))
        expected += min(x[i], f - bx_i) ** 2
    assert residual_epsilon(B, x) == pytest.approx(expected, rel=1e-9, abs=1e-15)


def test_select_infective_none_at_equilibrium():
    assert select_infective([[0, 1], [1, 0]], [0.5, 0.5]) is None


def test_select_infective_moves_toward_better_node():
    B = np.array([[0, 2], [2, 0]], dtype=float)
    x = np.array([1.0, 0.0])
    y = select_infective(B, x)
    assert y is not None and y[1] > x[1]
    assert (y - x) @ B @ x > 0


def test_select_infective_at_barycenter(five_nodes):
    x = np.full(5, 0.2)
    y = select_infective(five_nodes, x)
    assert is_simplex_vector(y)
    assert (y - x) @ five_nodes @ x > 0


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 10))
def test_infection_is_strict(seed, n):
    rng = np.random.default_rng(seed)
    B = random_symmetric(rng, n)
    x = rng.dirichlet(np.ones(n) * 0.5)
    y = select_infective(B, x)
    if y is not None:
        assert is_simplex_vector(y)
        assert (y - x) @ B @ x > 0


@pytest.mark.parametrize("solver", [find_equilibrium, replicator_equilibrium])
def test_block_example(solver):
    res = solver(block_matrix())
    assert res.support() == (0, 1)
    assert np.allclose(res.x, [0.5, 0.5, 0, 0], atol=1e-6)


def test_five_node_equilibria(five_nodes):
    a = find_equilibrium(five_nodes)
    b = replicator_equilibrium(five_nodes)
    assert a.support() == b.support() == (0, 1, 2, 3)


def test_rejects_start_outside_simplex():
    with pytest.raises(ValueError):
        find_equilibrium(block_matrix(), x0=[1, 1, 0, 0])


def test_convergence_error_carries_iterate(rng):
    B = random_symmetric(rng, 10)
    with pytest.raises(ConvergenceError) as info:
        find_equilibrium(B, tau=1e-300, max_iter=3)
    assert info.value.result.iterations == 3
    assert not info.value.result.converged
    res = find_equilibrium(B, tau=1e-300, max_iter=3, strict=False)
    assert not res.converged


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 12))
def test_trajectory_stays_on_simplex_and_climbs(seed, n):
    rng = np.random.default_rng(seed)
    A = random_symmetric(rng, n)
    B = homogenize(A, rng.random(n))
    x = np.zeros(n)
    x0 = rng.dirichlet(np.ones(n))
    res = find_equilibrium(B, x0, trace=True)
    assert is_simplex_vector(res.x)
    objectives = [obj for _, obj, _ in res.trace]
    assert all(b >= a - 1e-12 for a, b in zip(objectives, objectives[1:]))
    assert res.residual <= 1e-7


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 10))
def test_replicator_stays_on_simplex(seed, n):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    B = B + B.T
    res = replicator_equilibrium(B, tau=1e-6, trace=True, strict=False)
    assert is_simplex_vector(res.x)


def test_equilibrium_supports_pass_oracle(rng):
    checked = 0
    for _ in range(50):
        B = random_symmetric(rng, int(rng.integers(4, 9)))
        rep = check_dominance(find_equilibrium(B).support(), B, enumerate_subsets=False)
        if rep.dominant is not None:
            checked += 1
            assert rep.dominant
    assert checked > 40


def test_trace_csv(tmp_path, five_nodes):
    res = find_equilibrium(five_nodes, trace=True)
    path = tmp_path / "trace.csv"
    res.write_trace(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,objective,residual"
    assert len(lines) == len(res.trace) + 1
    with pytest.raises(ValueError):
        find_equilibrium(five_nodes).write_trace(path)


def test_peel_three_cliques():
    sizes = (4, 3, 2)
    n = sum(sizes)
    B = np.zeros((n, n))
    start = 0
    blocks = []
    for m in sizes:
        B[start : start + m, start : start + m] = 1.0
        blocks.append(tuple(range(start, start + m)))
        start += m
    np.fill_diagonal(B, 0.0)
    res = extract_dominant_sets(B, 3)
    assert [r.support for r in res] == blocks
    assert [r.rank for r in res] == [1, 2, 3]
    objs = [r.objective for r in res]
    assert objs == sorted(objs, reverse=True)
    for r in res:
        assert sum(r.membership.values()) == pytest.approx(1.0, abs=1e-9)
        assert all(v > 0 for v in r.membership.values())


def test_peel_single_clique():
    B = np.ones((5, 5)) - np.eye(5)
    assert len(extract_dominant_sets(B, 3)) == 1


def test_peel_five_node(five_nodes):
    res = extract_dominant_sets(five_nodes, 2)
    assert len(res) == 1
    assert res[0].support == (0, 1, 2, 3)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 20), k=st.integers(1, 5))
def test_peeled_supports_are_disjoint(seed, n, k):
    rng = np.random.default_rng(seed)
    B = random_symmetric(rng, n)
    seen = set()
    for r in extract_dominant_sets(B, k):
        assert not seen & set(r.support)
        seen |= set(r.support)
