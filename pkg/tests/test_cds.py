import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsloc import cds
from dsloc.matching_graph import CandidateNode, FeatureMatchResult
from dsloc.stqp import DominantSetResult

from conftest import random_symmetric


def test_equal_profiles_get_equal_weights():
    query = {"a": np.zeros(2), "b": np.zeros(2)}
    refs = [{"a": np.array([d, 0.0]), "b": np.array([0.0, d])} for d in (1.0, 2.0, 4.0)]
    w = cds.feature_weights(query, refs, ["a", "b"])
    assert np.allclose(w.weights, [0.5, 0.5])
    assert not w.degenerate


def test_area_arithmetic():
    assert cds.curve_area([0.0, 1.0]) == 0.5
    assert cds.curve_area([1.0, 1.0]) == 1.0
    assert np.allclose(cds.weights_from_areas([0.5, 1.0]), [2 / 3, 1 / 3])


def test_discriminative_feature_outweighs_flat_one():
    query = {"sharp": np.zeros(1), "flat": np.zeros(1)}
    # sharp: one close reference, the rest far; flat: distances spread evenly
    sharp = [0.0, 9.0, 9.5, 10.0]
    flat = [0.0, 3.3, 6.6, 10.0]
    refs = [{"sharp": np.array([s]), "flat": np.array([f])} for s, f in zip(sharp, flat)]
    w = cds.feature_weights(query, refs).as_dict()
    assert w["sharp"] > w["flat"]


def test_degenerate_feature_is_flagged():
    query = {"a": np.zeros(1), "b": np.zeros(1), "c": np.zeros(1)}
    refs = [{"a": np.array([d]), "b": np.array([2 * d]), "c": np.zeros(1)} for d in (1.0, 2.0, 3.0)]
    w = cds.feature_weights(query, refs, ["a", "b", "c"])
    assert w.degenerate == ["c"]
    assert int(np.argmax(w.weights)) == 2
    assert w.weights.sum() == pytest.approx(1.0)


def test_weighting_needs_two_references():
    with pytest.raises(ValueError):
        cds.feature_weights({"a": np.zeros(1)}, [{"a": np.ones(1)}])


def _random_feature_sets(seed, n_feat, n_ref):
    rng = np.random.default_rng(seed)
    names = [f"f{i}" for i in range(n_feat)]
    query = {n: rng.normal(size=3) for n in names}
    refs = [{n: rng.normal(size=3) for n in names} for _ in range(n_ref)]
    return names, query, refs


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_feat=st.integers(1, 5), n_ref=st.integers(2, 8),
       c=st.floats(1e-2, 1e2))
def test_weight_properties(seed, n_feat, n_ref, c):
    names, query, refs = _random_feature_sets(seed, n_feat, n_ref)
    w = cds.feature_weights(query, refs, names)
    assert w.weights.sum() == pytest.approx(1.0, abs=1e-9)
    # permuting features permutes weights
    perm = names[::-1]
    w2 = cds.feature_weights(query, refs, perm)
    assert w2.as_dict() == pytest.approx(w.as_dict(), abs=1e-12)
    # scaling one feature's space leaves every weight unchanged
    name = names[0]
    q2 = dict(query, **{name: c * query[name]})
    r2 = [dict(r, **{name: c * r[name]}) for r in refs]
    assert cds.feature_weights(q2, r2, names).weights == pytest.approx(w.weights, rel=1e-9)


def test_fused_similarity_examples():
    f = {"a": np.array([1.0, 2.0]), "b": np.array([3.0])}
    assert cds.fused_global_similarity(f, f, {"a": 0.5, "b": 0.5}) == pytest.approx(1.0)
    gamma = 3.0
    g = {"a": np.array([1.0 + 2 * gamma, 2.0])}
    assert cds.fused_global_similarity(f, g, {"a": 1.0}, {"a": gamma}) == pytest.approx(math.exp(-2))
    # distances chosen so the per-feature similarities are 0.9 and 0.3
    d_a = math.sqrt(-2 * math.log(0.9))
    d_b = math.sqrt(-2 * math.log(0.3))
    fi = {"a": np.zeros(1), "b": np.zeros(1)}
    fj = {"a": np.array([d_a]), "b": np.array([d_b])}
    assert cds.fused_global_similarity(fi, fj, {"a": 2 / 3, "b": 1 / 3}, 1.0) == pytest.approx(0.7)


def _result(sizes, rng, images=None):
    n = sum(sizes)
    B = random_symmetric(rng, n) + np.diag(rng.random(n))
    clusters, nodes, start = [], [], 0
    for rank, m in enumerate(sizes, 1):
        sup = tuple(range(start, start + m))
        clusters.append(DominantSetResult(sup, {i: 1 / m for i in sup}, 1.0, rank))
        start += m
    for i in range(n):
        img = images[i] if images else f"img{i:02d}"
        nodes.append(CandidateNode(i, 0, i, img, 0, 0.0, 1.0))
    return FeatureMatchResult(clusters, {}, B, nodes)


def _globals(result, rng):
    return {nd.parent_image: {"g": rng.normal(size=2)} for nd in result.nodes}


def test_cds_graph_size_nineteen(rng):
    result = _result((6, 6, 6), rng)
    g = cds.build_cds_graph({"g": np.zeros(2)}, result, _globals(result, rng), {"g": 1.0}, 1.0)
    assert g.Bhat.shape == (19, 19)
    Bhat = g.Bhat
    assert np.array_equal(Bhat, Bhat.T)
    assert np.all(np.diag(Bhat) == 0)
    for i in range(1, 19):
        for j in range(1, 19):
            if g.cluster_of[i] != g.cluster_of[j]:
                assert Bhat[i, j] == 0.0
    assert np.all(Bhat[0, 1:] > 0)


def test_cds_graph_single_pair(rng):
    result = _result((2,), rng)
    refs = _globals(result, rng)
    g = cds.build_cds_graph({"g": np.zeros(2)}, result, refs, {"g": 1.0}, 1.0)
    assert g.Bhat.shape == (3, 3)
    sub = result.B[:2, :2]
    assert g.Bhat[1, 2] == g.Bhat[2, 1] == pytest.approx(sub[0, 1] / sub.max())
    assert np.count_nonzero(g.Bhat) == 6
    for i in (1, 2):
        rho = cds.fused_global_similarity({"g": np.zeros(2)}, refs[g.images[i]], {"g": 1.0}, 1.0)
        assert g.Bhat[0, i] == pytest.approx(rho)


def test_alpha_examples():
    Bhat = np.zeros((3, 3))
    Bhat[1, 2] = Bhat[2, 1] = 1.0
    Bhat[0, 1:] = Bhat[1:, 0] = 0.5
    assert cds.alpha_bound(Bhat, 0) == pytest.approx(1.1)
    assert cds.alpha_bound(np.zeros((3, 3)), 0) == cds.ALPHA_FLOOR


@pytest.mark.parametrize("steps", [0, 5, 50])
def test_alpha_exceeds_largest_eigenvalue(rng, steps):
    for _ in range(20):
        Bhat = random_symmetric(rng, 11)
        lam = np.linalg.eigvalsh(Bhat[1:, 1:]).max()
        assert cds.alpha_bound(Bhat, 0, power_steps=steps) > lam


def test_tightened_alpha_is_not_larger(rng):
    Bhat = random_symmetric(rng, 11)
    assert cds.alpha_bound(Bhat, 0, power_steps=20) <= cds.alpha_bound(Bhat, 0)


def planted_two_clusters(rng):
    Bhat = np.zeros((9, 9))
    for block in (slice(1, 5), slice(5, 9)):
        Bhat[block, block] = 0.5 + 0.5 * rng.random((4, 4))
    Bhat = (Bhat + Bhat.T) / 2
    np.fill_diagonal(Bhat, 0.0)
    Bhat[0, 1:5] = Bhat[1:5, 0] = 0.99
    Bhat[0, 5:] = Bhat[5:, 0] = 0.01
    return Bhat


def test_planted_two_clusters(rng):
    Bhat = planted_two_clusters(rng)
    sol = cds.constrained_dominant_set(Bhat, 0)
    assert 0 in sol.support
    assert set(sol.support) - {0} <= {1, 2, 3, 4}
    images = ["Q", "a", "b", "c", "d", "e", "f", "g", "h"]
    strongest = max(set(sol.support) - {0}, key=lambda i: sol.x[i])
    assert cds.best_match(sol, images).image_id == images[strongest]


@pytest.mark.parametrize("factor", [1, 2, 10])
def test_query_always_in_support(rng, factor):
    from dsloc.verify import random_cds_graph

    for _ in range(100):
        Bhat = random_cds_graph(rng)
        sol = cds.constrained_dominant_set(Bhat, 0, factor * cds.alpha_bound(Bhat, 0))
        assert 0 in sol.support


def test_isolated_query_is_low_confidence(rng):
    Bhat = planted_two_clusters(rng)
    Bhat[0, 1:] = Bhat[1:, 0] = 1e-9
    sol = cds.constrained_dominant_set(Bhat, 0)
    decision = cds.best_match(sol, [f"n{i}" for i in range(9)])
    assert decision.low_confidence


def _solution(x, support):
    return cds.CdsSolution(np.asarray(x, dtype=float), 1.0, 0.0, 0, tuple(support))


def test_best_match_examples():
    sol = _solution([0.4, 0.35, 0.25], (0, 1, 2))
    d = cds.best_match(sol, ["Q", "X", "Y"])
    assert (d.image_id, d.tie, d.low_confidence) == ("X", False, False)
    sol = _solution([0.4, 0.3, 0.3], (0, 1, 2))
    d = cds.best_match(sol, ["Q", "Y", "X"])
    assert (d.image_id, d.tie) == ("X", True)
    d = cds.best_match(_solution([1.0, 0.0], (0,)), ["Q", "X"])
    assert d.image_id is None and d.low_confidence


def test_same_image_twice_is_not_a_tie():
    d = cds.best_match(_solution([0.4, 0.3, 0.3], (0, 1, 2)), ["Q", "X", "X"])
    assert (d.image_id, d.tie) == ("X", False)
