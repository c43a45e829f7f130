import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpaa.errors import BoundsError, DataError, ParameterError
from dpaa.graph import (Interaction, build_graph, popularity_split, read_interactions,
                        write_interactions)


def test_build_graph_degrees():
    g = build_graph([(0, 0), (0, 1), (1, 0)], 2, 2)
    assert g.edge_count == 3
    assert g.user_degree.tolist() == [2, 1]
    assert g.item_degree.tolist() == [2, 1]


def test_duplicates_collapse():
    assert build_graph([(0, 0), (0, 0)], 1, 1).edge_count == 1


def test_out_of_range_names_pair():
    with pytest.raises(BoundsError, match=r"\(0, 5\)"):
        build_graph([(0, 5)], 1, 3)
    with pytest.raises(IndexError):
        build_graph([(-1, 0)], 1, 3)


def test_accepts_interaction_tuples():
    g = build_graph([Interaction(1, 2), Interaction(0, 0)], 2, 3)
    assert g.has_edge(1, 2) and g.has_edge(0, 0) and not g.has_edge(0, 2)
    assert g.edge_index(0, 0) == 0 and g.edge_index(1, 2) == 1


def test_edge_index_missing_edge():
    g = build_graph([(0, 0)], 2, 2)
    with pytest.raises(KeyError):
        g.edge_index(1, 1)


pairs_strategy = st.integers(1, 6).flatmap(
    lambda m: st.integers(1, 6).flatmap(
        lambda n: st.tuples(
            st.just(m), st.just(n),
            st.lists(st.tuples(st.integers(0, m - 1), st.integers(0, n - 1)), max_size=30))))


@settings(max_examples=150, deadline=None)
@given(pairs_strategy)
def test_graph_invariants(case):
    M, N, pairs = case
    g = build_graph(pairs, M, N)
    unique = sorted(set(pairs))
    assert g.edge_count == len(unique)
    assert g.user_degree.sum() == g.item_degree.sum() == g.edge_count
    for u in range(M):
        items = g.items_of(u)
        assert len(items) == g.user_degree[u]
        assert np.all(np.diff(items) > 0)
    for i in range(N):
        users = g.users_of(i)
        assert len(users) == g.item_degree[i]
        assert np.all(np.diff(users) > 0)
    seen = set()
    for u, i in unique:
        assert i in g.items_of(u) and u in g.users_of(i)
        e = g.edge_index(u, i)
        assert e == g.edge_index_from_item(i, u)
        assert 0 <= e < g.edge_count
        seen.add(e)
    assert seen == set(range(g.edge_count))


def _train_from_counts(counts):
    return [(k, item) for item, c in enumerate(counts) for k in range(c)]


@pytest.mark.parametrize("counts, popular, coverage", [
    ([5, 3, 1, 1], {0, 1}, 0.8),
    ([10], {0}, 1.0),
    ([1, 1, 1, 1, 1], {0, 1, 2, 3}, 0.8),
])
def test_popularity_split_examples(counts, popular, coverage):
    train = _train_from_counts(counts)
    g = build_graph(train, max(counts), len(counts))
    split = popularity_split(g, train, 0.8)
    assert split.popular == popular
    assert split.coverage == pytest.approx(coverage, abs=1e-12)
    assert split.niche == set(range(len(counts))) - popular


def brute_force_split(counts, threshold):
    """Try every prefix of the (count desc, id asc) order; keep the shortest that covers."""
    order = sorted(range(len(counts)), key=lambda i: (-counts[i], i))
    total = sum(counts)
    for n in range(1, len(order) + 1):
        covered = sum(counts[i] for i in order[:n])
        # exact rational comparison, so no float slack in the oracle
        if covered >= Fraction(str(threshold)) * total:
            return set(order[:n]), covered / total
    raise AssertionError


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=8).filter(lambda c: sum(c) > 0),
       st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.8, 0.9, 1.0]))
def test_popularity_split_matches_brute_force(counts, threshold):
    train = _train_from_counts(counts)
    g = build_graph(train, max(counts), len(counts))
    split = popularity_split(g, train, threshold)
    popular, coverage = brute_force_split(counts, threshold)
    assert split.popular == popular
    assert split.coverage == pytest.approx(coverage, abs=1e-12)
    assert split.popular | split.niche == set(range(len(counts)))
    assert not split.popular & split.niche
    # minimality: dropping the last popular item loses coverage
    if 0 < len(split.popular) < len(counts):
        smaller = sorted(split.popular, key=lambda i: (-counts[i], i))[:-1]
        assert sum(counts[i] for i in smaller) < threshold * sum(counts) - 1e-9


def test_zero_count_items_are_niche():
    train = [(0, 0), (1, 0), (0, 1)]
    g = build_graph(train, 2, 4)
    split = popularity_split(g, train, 0.5)
    assert {2, 3} <= split.niche


def test_popularity_split_errors():
    g = build_graph([(0, 0)], 1, 1)
    with pytest.raises(ParameterError):
        popularity_split(g, [(0, 0)], 0.0)
    with pytest.raises(ParameterError):
        popularity_split(g, [(0, 0)], 1.5)
    with pytest.raises(DataError):
        popularity_split(g, [], 0.8)


def test_interaction_file_roundtrip(tmp_path):
    pairs = np.array([[0, 3], [2, 1], [5, 0]])
    path = tmp_path / "x.tsv"
    write_interactions(path, pairs)
    assert path.read_text() == "0\t3\n2\t1\n5\t0\n"
    with path.open("a") as fh:
        fh.write("# comment\n\n7\t7\n")
    back = read_interactions(path)
    assert back.tolist() == pairs.tolist() + [[7, 7]]


def test_interaction_file_bad_line(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("0\t1\nfoo\n")
    with pytest.raises(DataError, match=":2:"):
        read_interactions(path)


def test_propagation_matrix_is_symmetric(rng):
    from conftest import random_graph
    g = random_graph(rng, 7, 9, 25)
    A = g.propagation_matrix(rng.random(g.edge_count)).toarray()
    np.testing.assert_array_equal(A, A.T)
    # every edge lands in both off-diagonal blocks exactly once
    assert np.count_nonzero(A) == 2 * g.edge_count
    assert not A[:7, :7].any() and not A[7:, 7:].any()


def test_all_pairs_small_exhaustive():
    for M, N in itertools.product(range(1, 3), range(1, 3)):
        every = list(itertools.product(range(M), range(N)))
        g = build_graph(every, M, N)
        assert g.edge_count == M * N
        assert g.user_degree.tolist() == [N] * M
