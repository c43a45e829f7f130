"""All-ranking top-k evaluation with popular/niche breakdowns."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError
from .graph import PopularitySplit, as_pairs

logger = logging.getLogger(__name__)

GROUPS = ("all", "popular", "niche")


def recall_at_k(ranked, relevant, k: int) -> float:
    relevant = set(relevant)
    hits = sum(1 for i in list(ranked)[:k] if i in relevant)
    return hits / len(relevant)


def hr_at_k(ranked, relevant, k: int) -> float:
    relevant = set(relevant)
    return 1.0 if any(i in relevant for i in list(ranked)[:k]) else 0.0


def ndcg_at_k(ranked, relevant, k: int) -> float:
    relevant = set(relevant)
    dcg = sum(1.0 / math.log2(p + 2) for p, i in enumerate(list(ranked)[:k]) if i in relevant)
    idcg = sum(1.0 / math.log2(j + 2) for j in range(min(k, len(relevant))))
    return dcg / idcg


def _pairs_matrix(pairs, shape) -> sp.csr_matrix:
    pairs = np.unique(as_pairs(pairs), axis=0)
    data = np.ones(pairs.shape[0], dtype=bool)
    return sp.csr_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=shape)


@dataclass
class RankingTask:
    """Relevant and masked items per user, plus an optional global candidate set."""

    num_users: int
    num_items: int
    relevant: sp.csr_matrix
    masked: sp.csr_matrix
    candidates: np.ndarray | None = None

    @classmethod
    def from_pairs(cls, relevant, masked, num_users: int, num_items: int, candidates=None):
        shape = (num_users, num_items)
        cand = None if candidates is None else np.unique(np.asarray(candidates, dtype=np.int64))
        return cls(num_users, num_items, _pairs_matrix(relevant, shape),
                   _pairs_matrix(masked, shape), cand)

    def relevant_items(self, user: int) -> np.ndarray:
        return self.relevant.indices[self.relevant.indptr[user]:self.relevant.indptr[user + 1]]

    def masked_items(self, user: int) -> np.ndarray:
        return self.masked.indices[self.masked.indptr[user]:self.masked.indptr[user + 1]]

    def candidate_mask(self) -> np.ndarray:
        if self.candidates is None:
            return np.ones(self.num_items, dtype=bool)
        m = np.zeros(self.num_items, dtype=bool)
        m[self.candidates] = True
        return m


def rank_topk(final: np.ndarray, task: RankingTask, user: int, k: int) -> np.ndarray:
    """Top-k candidate items for one user, ties broken by ascending item id."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    M = task.num_users
    pool = task.candidate_mask()
    pool[task.masked_items(user)] = False
    items = np.flatnonzero(pool)
    if items.size == 0:
        logger.info("user %d has an empty candidate pool; skipped", user)
        return items
    scores = final[M + items] @ final[user]
    order = np.argsort(-scores, kind="stable")
    return items[order[:k]]


@dataclass
class GroupMetrics:
    recall: float
    ndcg: float
    hr: float
    num_users: int


@dataclass
class EvalReport:
    k: int
    groups: dict = field(default_factory=dict)  # group name -> GroupMetrics

    def __getitem__(self, group: str) -> GroupMetrics:
        return self.groups[group]

    def rows(self):
        for g in GROUPS:
            if g in self.groups:
                m = self.groups[g]
                yield {"group": g, "k": self.k, "recall": m.recall, "ndcg": m.ndcg,
                       "hr": m.hr, "num_users": m.num_users}

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["group", "k", "recall", "ndcg", "hr", "num_users"],
                           lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({**row, **{m: f"{row[m]:.6f}" for m in ("recall", "ndcg", "hr")}})
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_markdown(self) -> str:
        k = self.k
        lines = [f"| group | Recall@{k} | NDCG@{k} | HR@{k} | users |", "|---|---|---|---|---|"]
        for row in self.rows():
            lines.append(f"| {row['group']} | {row['recall']:.4f} | {row['ndcg']:.4f} | "
                         f"{row['hr']:.4f} | {row['num_users']} |")
        return "\n".join(lines) + "\n"


def topk_matrix(final: np.ndarray, task: RankingTask, k: int, chunk: int = 1024):
    """Top-k item ids for every user as an ``(M, k)`` array padded with -1,
    plus a boolean vector of users whose candidate pool is non-empty."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    M, N = task.num_users, task.num_items
    items_emb = final[M:M + N]
    pool = task.candidate_mask()
    out = np.full((M, k), -1, dtype=np.int64)
    has_pool = np.zeros(M, dtype=bool)
    for lo in range(0, M, chunk):
        hi = min(lo + chunk, M)
        scores = final[lo:hi] @ items_emb.T
        allowed = np.broadcast_to(pool, scores.shape).copy()
        sub = task.masked[lo:hi].tocoo()
        allowed[sub.row, sub.col] = False
        scores = np.where(allowed, scores, -np.inf)
        kk = min(k, N)
        order = np.argsort(-scores, axis=1, kind="stable")[:, :kk]
        valid = np.take_along_axis(allowed, order, axis=1)
        out[lo:hi, :kk] = np.where(valid, order, -1)
        has_pool[lo:hi] = allowed.any(axis=1)
    for u in np.flatnonzero(~has_pool):
        logger.info("user %d has an empty candidate pool; skipped", u)
    return out, has_pool


def _group_metrics(topk: np.ndarray, rel: sp.csr_matrix, users: np.ndarray, k: int) -> GroupMetrics:
    n_rel = np.diff(rel.indptr)
    users = users[n_rel[users] > 0]
    if users.size == 0:
        return GroupMetrics(0.0, 0.0, 0.0, 0)
    tk = topk[users]
    safe = np.where(tk >= 0, tk, 0)
    hits = _lookup(rel, users, safe) & (tk >= 0)
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    idcg_table = np.concatenate([[0.0], np.cumsum(discounts)])
    cnt = n_rel[users]
    recall = hits.sum(axis=1) / cnt
    hr = hits.any(axis=1).astype(np.float64)
    ndcg = (hits * discounts[: hits.shape[1]]).sum(axis=1) / idcg_table[np.minimum(cnt, k)]
    return GroupMetrics(float(recall.mean()), float(ndcg.mean()), float(hr.mean()), int(users.size))


def _lookup(rel: sp.csr_matrix, users: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Boolean ``rel[users[r], items[r, c]]`` without densifying ``rel``."""
    coo = rel.tocoo()
    if coo.nnz == 0:
        return np.zeros(items.shape, dtype=bool)
    N = rel.shape[1]
    flat = np.sort(coo.row.astype(np.int64) * N + coo.col)
    q = users[:, None].astype(np.int64) * N + items
    pos = np.minimum(np.searchsorted(flat, q), flat.size - 1)
    return flat[pos] == q


def restrict_relevant(task: RankingTask, item_mask: np.ndarray) -> sp.csr_matrix:
    rel = task.relevant.tocoo()
    keep = item_mask[rel.col]
    return sp.csr_matrix((rel.data[keep], (rel.row[keep], rel.col[keep])), shape=rel.shape)


def evaluate(final: np.ndarray, task: RankingTask, split: PopularitySplit | None = None,
             k: int = 20) -> EvalReport:
    """Macro-averaged Recall/NDCG/HR@k for all users, and per item group
    when a popularity split is supplied.  Group scores keep the full
    ranking and only narrow each user's relevant set."""
    topk, has_pool = topk_matrix(final, task, k)
    users = np.flatnonzero(has_pool)
    report = EvalReport(k=k)
    report.groups["all"] = _group_metrics(topk, task.relevant, users, k)
    if split is not None:
        pop = split.mask(task.num_items)
        report.groups["popular"] = _group_metrics(topk, restrict_relevant(task, pop), users, k)
        report.groups["niche"] = _group_metrics(topk, restrict_relevant(task, ~pop), users, k)
    return report


def recall(final: np.ndarray, task: RankingTask, k: int = 20) -> float:
    """Validation shortcut: all-group Recall@k."""
    return evaluate(final, task, None, k)["all"].recall
