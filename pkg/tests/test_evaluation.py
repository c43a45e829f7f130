import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpaa.errors import ParameterError
from dpaa.evaluation import (EvalReport, GroupMetrics, RankingTask, evaluate, hr_at_k,
                             ndcg_at_k, rank_topk, recall, recall_at_k, topk_matrix)
from dpaa.graph import PopularitySplit


def embeddings_for_scores(scores):
    """Final embeddings whose user/item dot products reproduce ``scores``:
    users are one-hot rows, items carry their score column."""
    M, N = scores.shape
    final = np.zeros((M + N, M))
    final[:M] = np.eye(M)
    final[M:] = scores.T
    return final


def test_metric_hand_example():
    assert recall_at_k(["a", "x", "b"], {"a", "b"}, 3) == 1.0
    assert hr_at_k(["a", "x", "b"], {"a", "b"}, 3) == 1.0
    expected = (1 + 1 / 2) / (1 + 1 / math.log2(3))
    assert ndcg_at_k(["a", "x", "b"], {"a", "b"}, 3) == pytest.approx(expected)
    assert expected == pytest.approx(0.9197, abs=1e-4)


def test_metrics_no_hits_and_perfect():
    for f in (recall_at_k, hr_at_k, ndcg_at_k):
        assert f([1, 2], {3}, 2) == 0.0
        assert f([3, 4], {3, 4}, 2) == 1.0


def test_rank_topk_masking_restriction_and_ties():
    scores = np.array([[0.9, 0.5, 0.5, 0.1]])
    final = embeddings_for_scores(scores)
    masked = RankingTask.from_pairs([(0, 1)], [(0, 0)], 1, 4)
    assert rank_topk(final, masked, 0, 1).tolist() == [1]
    assert rank_topk(final, masked, 0, 3).tolist() == [1, 2, 3]
    restricted = RankingTask.from_pairs([(0, 1)], [], 1, 4, candidates=[1, 2])
    assert 0 not in rank_topk(final, restricted, 0, 4).tolist()
    with pytest.raises(ParameterError):
        rank_topk(final, masked, 0, 0)


def test_rank_topk_matches_full_sort(rng):
    scores = rng.normal(size=(5, 30))
    final = embeddings_for_scores(scores)
    task = RankingTask.from_pairs([(0, 1)], [(u, i) for u in range(5) for i in range(0, 30, 7)], 5, 30)
    for u in range(5):
        order = sorted((i for i in range(30) if i % 7), key=lambda i: (-scores[u, i], i))
        assert rank_topk(final, task, u, 10).tolist() == order[:10]


def brute_force(scores, relevant, masked, candidates, k, group=None):
    """Per-user loop: rank, then score against the (group-restricted) relevant set."""
    M, N = scores.shape
    rec, nd, hr = [], [], []
    for u in range(M):
        rel = {i for i in relevant.get(u, set()) if group is None or i in group}
        pool = [i for i in range(N) if i not in masked.get(u, set())
                and (candidates is None or i in candidates)]
        if not rel or not pool:
            continue
        ranked = sorted(pool, key=lambda i: (-scores[u, i], i))[:k]
        hits = [1 if i in rel else 0 for i in ranked]
        rec.append(sum(hits) / len(rel))
        hr.append(1.0 if any(hits) else 0.0)
        dcg = sum(h / math.log2(p + 2) for p, h in enumerate(hits))
        idcg = sum(1 / math.log2(j + 2) for j in range(min(k, len(rel))))
        nd.append(dcg / idcg)
    if not rec:
        return 0.0, 0.0, 0.0, 0
    return sum(rec) / len(rec), sum(nd) / len(nd), sum(hr) / len(hr), len(rec)


def _as_sets(pairs):
    out = {}
    for u, i in pairs:
        out.setdefault(u, set()).add(i)
    return out


instance = st.integers(1, 4).flatmap(lambda M: st.integers(1, 6).flatmap(lambda N: st.tuples(
    st.just(M), st.just(N),
    st.lists(st.tuples(st.integers(0, M - 1), st.integers(0, N - 1)), max_size=M * N),
    st.lists(st.tuples(st.integers(0, M - 1), st.integers(0, N - 1)), max_size=M * N),
    st.one_of(st.none(), st.sets(st.integers(0, N - 1), min_size=1)),
    st.sets(st.integers(0, N - 1)),
    st.lists(st.integers(-3, 3), min_size=M * N, max_size=M * N))))


@settings(max_examples=300, deadline=None)
@given(instance)
def test_metrics_match_brute_force(case):
    M, N, relevant, masked, candidates, popular, flat_scores = case
    # small integer scores force plenty of ties
    scores = np.array(flat_scores, dtype=float).reshape(M, N)
    final = embeddings_for_scores(scores)
    task = RankingTask.from_pairs(relevant, masked, M, N,
                                  None if candidates is None else sorted(candidates))
    split = PopularitySplit(frozenset(popular), frozenset(set(range(N)) - popular), 0.0)
    rel, msk = _as_sets(relevant), _as_sets(masked)
    for k in range(1, 7):
        rep = evaluate(final, task, split, k)
        for name, group in (("all", None), ("popular", popular),
                            ("niche", set(range(N)) - popular)):
            want = brute_force(scores, rel, msk, candidates, k, group)
            got = rep[name]
            assert got.num_users == want[3]
            np.testing.assert_allclose([got.recall, got.ndcg, got.hr], want[:3], atol=1e-12)
            assert 0 <= got.recall <= 1 and 0 <= got.ndcg <= 1 + 1e-12 and 0 <= got.hr <= 1


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    M, N = 4, 6
    scores = rng.normal(size=(M, N))
    rel = [(u, i) for u in range(M) for i in range(N) if rng.random() < 0.3]
    task = RankingTask.from_pairs(rel, [(0, 0), (2, 3)], M, N)
    a = evaluate(embeddings_for_scores(scores), task, None, 3)["all"]
    b = evaluate(embeddings_for_scores(np.exp(2 * scores) + 5), task, None, 3)["all"]
    assert a == b


def test_masked_items_never_ranked(rng):
    scores = rng.normal(size=(6, 12))
    masked = [(u, i) for u in range(6) for i in range(12) if (u + i) % 3 == 0]
    task = RankingTask.from_pairs([(0, 1)], masked, 6, 12)
    topk, has_pool = topk_matrix(embeddings_for_scores(scores), task, 12)
    assert has_pool.all()
    for u, i in masked:
        assert i not in topk[u]


def test_per_user_relations(rng):
    scores = rng.normal(size=(20, 15))
    rel = [(u, i) for u in range(20) for i in range(15) if rng.random() < 0.2]
    relset = _as_sets(rel)
    final = embeddings_for_scores(scores)
    task = RankingTask.from_pairs(rel, [], 20, 15)
    pop = set(range(5))
    for u in relset:
        for k in (1, 3, 5):
            ranked = rank_topk(final, task, u, k).tolist()
            r, h, n = (f(ranked, relset[u], k) for f in (recall_at_k, hr_at_k, ndcg_at_k))
            assert h >= r
            first = ranked[:min(k, len(relset[u]))]
            assert (n == pytest.approx(1.0)) == all(i in relset[u] for i in first)
            hits = sum(i in relset[u] for i in ranked)
            assert hits == sum(i in relset[u] & pop for i in ranked) + \
                sum(i in relset[u] - pop for i in ranked)


def test_macro_average_and_group_exclusion():
    scores = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    final = embeddings_for_scores(scores)
    task = RankingTask.from_pairs([(0, 0), (1, 1)], [], 2, 3)
    rep = evaluate(final, task, PopularitySplit(frozenset({0}), frozenset({1, 2}), 0.5), 1)
    assert rep["all"].recall == 0.5 and rep["all"].num_users == 2
    # user 1's only relevant item is niche, so the popular group sees user 0 alone
    assert rep["popular"].num_users == 1 and rep["popular"].recall == 1.0
    assert rep["niche"].num_users == 1 and rep["niche"].recall == 0.0


def test_empty_pool_user_skipped(caplog):
    final = embeddings_for_scores(np.ones((2, 2)))
    task = RankingTask.from_pairs([(0, 0), (1, 0)], [(0, 0), (0, 1)], 2, 2)
    with caplog.at_level(logging.INFO):
        rep = evaluate(final, task, None, 2)
    assert rep["all"].num_users == 1
    assert "empty candidate pool" in caplog.text
    assert recall(final, task, 2) == 1.0


def test_report_outputs(tmp_path):
    rep = EvalReport(k=20, groups={"all": GroupMetrics(0.25, 0.125, 0.5, 10),
                                   "niche": GroupMetrics(0.1, 0.05, 0.2, 4)})
    text = rep.to_csv(tmp_path / "r.csv")
    assert text.splitlines() == ["group,k,recall,ndcg,hr,num_users",
                                 "all,20,0.250000,0.125000,0.500000,10",
                                 "niche,20,0.100000,0.050000,0.200000,4"]
    assert (tmp_path / "r.csv").read_text() == text
    md = rep.to_markdown()
    assert "| all | 0.2500 | 0.1250 | 0.5000 | 10 |" in md and "Recall@20" in md
