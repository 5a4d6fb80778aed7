import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import unit_rows
from kgalign.errors import DimensionMismatch, MissingQuery
from kgalign.evaluator import evaluate_vectors, hit_at_k, knn_l2, write_ranks, write_report


def brute_knn(q, t, k):
    out = []
    for row in q:
        d = [float(np.sum((x - row) ** 2)) for x in t]
        out.append(sorted(range(len(t)), key=lambda j: (d[j], j))[:k])
    return np.array(out)


def tie_instance(rng, nq, nt, d):
    """Integer grid points with duplicated targets, so exact distance ties are common."""
    t = rng.integers(-2, 3, size=(nt, d)).astype(float)
    t[rng.integers(nt, size=nt // 4)] = t[rng.integers(nt, size=nt // 4)]
    q = rng.integers(-2, 3, size=(nq, d)).astype(float)
    return q, t


def test_exact_match_rank_one():
    rng = np.random.default_rng(0)
    t = rng.standard_normal((20, 5))
    idx, dist = knn_l2(t[7:8], t, 3)
    assert idx[0, 0] == 7 and dist[0, 0] == 0.0


def test_unit_vectors_l2_equals_dot_order():
    rng = np.random.default_rng(1)
    q, t = unit_rows(rng, 30, 6), unit_rows(rng, 200, 6)
    idx, _ = knn_l2(q, t, 10)
    dot_order = np.argsort(-(q @ t.T), axis=1, kind="stable")[:, :10]
    assert np.array_equal(idx, dot_order)


def test_200_by_500_k10_brute_force():
    rng = np.random.default_rng(2)
    q, t = rng.standard_normal((200, 8)), rng.standard_normal((500, 8))
    idx, dist = knn_l2(q, t, 10)
    ref = brute_knn(q, t, 10)
    assert np.array_equal(idx, ref)
    assert np.all(np.diff(dist, axis=1) >= 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.integers(1, 40), st.integers(1, 5), st.integers(0, 2**32 - 1), st.booleans())
def test_knn_matches_brute_force_with_ties(nq, nt, d, seed, ties):
    rng = np.random.default_rng(seed)
    if ties:
        q, t = tie_instance(rng, nq, nt, d)
    else:
        q, t = rng.standard_normal((nq, d)), rng.standard_normal((nt, d))
    k = int(rng.integers(1, nt + 1))
    idx, _ = knn_l2(q, t, k, chunk=4)
    assert np.array_equal(idx, brute_knn(q, t, k))


def test_ties_go_to_smaller_id():
    t = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]])
    idx, _ = knn_l2(np.zeros((1, 2)), t, 4)
    assert idx[0].tolist() == [0, 1, 2, 3]
    idx, _ = knn_l2(np.array([[1.0, 0.0]]), t, 2)
    assert idx[0].tolist() == [0, 3]


def test_knn_errors():
    with pytest.raises(DimensionMismatch):
        knn_l2(np.zeros((1, 2)), np.zeros((3, 3)), 1)
    with pytest.raises(ValueError):
        knn_l2(np.zeros((1, 2)), np.zeros((3, 2)), 4)


def test_identity_alignment_hits_one():
    rng = np.random.default_rng(3)
    v = unit_rows(rng, 50, 8)
    pairs = np.stack([np.arange(50), np.arange(50)], axis=1)
    rep = evaluate_vectors(v, v, pairs)
    assert rep.hit1 == 1.0 and rep.hit10 == 1.0
    assert rep.ranks == [1] * 50


def test_true_target_at_rank_11():
    ranked = np.array([[100 + j for j in range(10)] + [7, 8]])
    rep = hit_at_k([(0, 7)], [0], ranked, ks=(1, 10))
    assert rep.hit1 == 0.0 and rep.hit10 == 0.0 and rep.ranks == [11]


def test_missing_query():
    with pytest.raises(MissingQuery):
        hit_at_k([(3, 1)], [0, 1], np.zeros((2, 10), dtype=int))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**32 - 1), st.sampled_from(["x2y", "y2x"]), st.sampled_from(["test", "full"]))
def test_report_invariants(n, seed, direction, candidates):
    rng = np.random.default_rng(seed)
    vx, vy = unit_rows(rng, n, 4), unit_rows(rng, n + 3, 4)
    m = int(rng.integers(1, n + 1))
    pairs = np.stack([rng.permutation(n)[:m], rng.permutation(n + 3)[:m]], axis=1)
    rep = evaluate_vectors(vx, vy, pairs, direction=direction, candidates=candidates, ks=(1, 2, 5, 10))
    vals = [rep.hits[k] for k in sorted(rep.hits)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert 0 <= rep.hit1 <= 1
    assert all(r is None or r >= 1 for r in rep.ranks)
    assert rep.n_queries == m


def test_direction_and_candidates():
    # x0 sits nearest to y1 which is not a test target; y2x reverses roles
    vx = np.array([[1.0, 0.0], [0.0, 1.0]])
    vy = np.array([[0.8, 0.6], [1.0, 0.0], [0.0, 1.0]])
    pairs = np.array([[0, 0], [1, 2]])
    assert evaluate_vectors(vx, vy, pairs, candidates="test").hit1 == 1.0
    assert evaluate_vectors(vx, vy, pairs, candidates="full").hit1 == 0.5
    assert evaluate_vectors(vx, vy, pairs, direction="y2x").hit1 == 1.0
    with pytest.raises(ValueError):
        evaluate_vectors(vx, vy, pairs, direction="sideways")


def test_report_files(tmp_path):
    v = np.eye(3)
    pairs = np.array([[0, 0], [1, 1], [2, 2]])
    rep = evaluate_vectors(v, v, pairs, ks=(1, 10))
    write_report(tmp_path / "r.tsv", [rep])
    lines = (tmp_path / "r.tsv").read_text().splitlines()
    assert lines == ["split\tk\tvalue\tn_queries", "test\t1\t1.0\t3"]
    write_ranks(tmp_path / "ranks.tsv", rep, ["a", "b", "c"], ["A", "B", "C"])
    assert (tmp_path / "ranks.tsv").read_text().splitlines()[1] == "a\tA\t1"
