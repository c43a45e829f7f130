"""Bipartite user-item interaction graph.

Edges are stored once, sorted by ``(user, item)``; the position in that
order is the edge's stable index and is shared by both adjacency
directions.  Node rows in the joint embedding table put users at
``[0, M)`` and items at ``[M, M + N)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import BoundsError, DataError, ParameterError

logger = logging.getLogger(__name__)


class Interaction(NamedTuple):
    user: int
    item: int


def as_pairs(interactions) -> np.ndarray:
    """Coerce a sequence of ``(user, item)`` pairs to an ``(n, 2)`` int64 array."""
    arr = np.asarray(interactions, dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DataError(f"expected (n, 2) user/item pairs, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    num_users: int
    num_items: int
    edge_users: np.ndarray
    edge_items: np.ndarray
    user_indptr: np.ndarray
    user_indices: np.ndarray
    user_edge_ids: np.ndarray
    item_indptr: np.ndarray
    item_indices: np.ndarray
    item_edge_ids: np.ndarray
    _sym: dict = field(default_factory=dict, repr=False)

    @property
    def edge_count(self) -> int:
        return int(self.edge_users.shape[0])

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    @property
    def user_degree(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    @property
    def item_degree(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    def items_of(self, user: int) -> np.ndarray:
        return self.user_indices[self.user_indptr[user]:self.user_indptr[user + 1]]

    def users_of(self, item: int) -> np.ndarray:
        return self.item_indices[self.item_indptr[item]:self.item_indptr[item + 1]]

    def has_edge(self, user: int, item: int) -> bool:
        nbrs = self.items_of(user)
        pos = np.searchsorted(nbrs, item)
        return bool(pos < nbrs.size and nbrs[pos] == item)

    def edge_index(self, user: int, item: int) -> int:
        """Stable index of edge ``(user, item)``; KeyError when absent."""
        lo = self.user_indptr[user]
        nbrs = self.items_of(user)
        pos = np.searchsorted(nbrs, item)
        if pos >= nbrs.size or nbrs[pos] != item:
            raise KeyError((user, item))
        return int(self.user_edge_ids[lo + pos])

    def edge_index_from_item(self, item: int, user: int) -> int:
        lo = self.item_indptr[item]
        nbrs = self.users_of(item)
        pos = np.searchsorted(nbrs, user)
        if pos >= nbrs.size or nbrs[pos] != user:
            raise KeyError((user, item))
        return int(self.item_edge_ids[lo + pos])

    def edge_norm(self) -> np.ndarray:
        """Symmetric degree factor ``1 / sqrt(d_u d_i)`` per edge."""
        du = self.user_degree[self.edge_users].astype(np.float64)
        di = self.item_degree[self.edge_items].astype(np.float64)
        return 1.0 / np.sqrt(du * di)

    def _sym_structure(self):
        # joint (M+N)-square CSR: user rows then item rows, neighbours ascending
        if "indptr" not in self._sym:
            E, M = self.edge_count, self.num_users
            self._sym["indptr"] = np.concatenate(
                [self.user_indptr, E + self.item_indptr[1:]]).astype(np.int64)
            self._sym["indices"] = np.concatenate(
                [M + self.user_indices, self.item_indices]).astype(np.int64)
            self._sym["edge_ids"] = np.concatenate([self.user_edge_ids, self.item_edge_ids])
        return self._sym["indptr"], self._sym["indices"], self._sym["edge_ids"]

    def propagation_matrix(self, edge_values: np.ndarray) -> sp.csr_matrix:
        """Symmetric ``(M+N) x (M+N)`` operator whose (u, M+i) and (M+i, u)
        entries both equal ``edge_values[edge_index(u, i)]``."""
        edge_values = np.asarray(edge_values, dtype=np.float64)
        if edge_values.shape != (self.edge_count,):
            raise ParameterError(
                f"need {self.edge_count} edge values, got shape {edge_values.shape}")
        indptr, indices, edge_ids = self._sym_structure()
        n = self.num_nodes
        return sp.csr_matrix((edge_values[edge_ids], indices, indptr), shape=(n, n))


def build_graph(interactions, num_users: int, num_items: int) -> InteractionGraph:
    """Build the graph, collapsing duplicate pairs to a single edge."""
    if num_users < 0 or num_items < 0:
        raise ParameterError("num_users and num_items must be non-negative")
    pairs = as_pairs(interactions)
    bad = (pairs[:, 0] < 0) | (pairs[:, 0] >= num_users) | (pairs[:, 1] < 0) | (pairs[:, 1] >= num_items)
    if bad.any():
        u, i = pairs[np.flatnonzero(bad)[0]]
        raise BoundsError(
            f"interaction ({u}, {i}) out of range for {num_users} users x {num_items} items")

    pairs = np.unique(pairs, axis=0)  # lexicographic (user, item), deduplicated
    users = np.ascontiguousarray(pairs[:, 0])
    items = np.ascontiguousarray(pairs[:, 1])
    E = users.shape[0]
    edge_ids = np.arange(E, dtype=np.int64)

    user_indptr = np.zeros(num_users + 1, dtype=np.int64)
    np.cumsum(np.bincount(users, minlength=num_users), out=user_indptr[1:])

    order = np.lexsort((users, items))  # by item, then user
    item_indptr = np.zeros(num_items + 1, dtype=np.int64)
    np.cumsum(np.bincount(items, minlength=num_items), out=item_indptr[1:])

    return InteractionGraph(
        num_users=int(num_users),
        num_items=int(num_items),
        edge_users=users,
        edge_items=items,
        user_indptr=user_indptr,
        user_indices=items.copy(),
        user_edge_ids=edge_ids,
        item_indptr=item_indptr,
        item_indices=users[order],
        item_edge_ids=edge_ids[order],
    )


@dataclass(frozen=True)
class PopularitySplit:
    popular: frozenset
    niche: frozenset
    coverage: float

    def mask(self, num_items: int) -> np.ndarray:
        """Boolean vector, True for popular items."""
        m = np.zeros(num_items, dtype=bool)
        if self.popular:
            m[np.fromiter(self.popular, dtype=np.int64)] = True
        return m


def item_counts(train, num_items: int) -> np.ndarray:
    pairs = as_pairs(train)
    return np.bincount(pairs[:, 1], minlength=num_items)


def popularity_ranking(counts: np.ndarray) -> np.ndarray:
    """Item ids by descending count; equal counts keep ascending id order."""
    return np.argsort(-np.asarray(counts), kind="stable")


def popularity_split(graph: InteractionGraph, train, threshold: float = 0.8) -> PopularitySplit:
    """Smallest head of the frequency-sorted items covering ``threshold`` of
    the training interactions; everything else is niche."""
    if not 0.0 < threshold <= 1.0:
        raise ParameterError(f"threshold must lie in (0, 1], got {threshold}")
    pairs = as_pairs(train)
    if pairs.shape[0] == 0:
        raise DataError("popularity split needs a non-empty training set")
    counts = item_counts(pairs, graph.num_items)
    total = counts.sum()
    order = popularity_ranking(counts)
    cum = np.cumsum(counts[order])
    # slack absorbs float products such as 0.7 * 10 -> 7.000000000000001
    target = threshold * total
    n_pop = int(np.searchsorted(cum, target - 1e-9 * total, side="left")) + 1
    n_pop = min(n_pop, graph.num_items)
    popular = order[:n_pop]
    coverage = float(cum[n_pop - 1] / total)
    return PopularitySplit(
        popular=frozenset(int(i) for i in popular),
        niche=frozenset(int(i) for i in order[n_pop:]),
        coverage=coverage,
    )


def read_interactions(path) -> np.ndarray:
    """Read ``user<TAB>item`` lines; ``#`` lines and blanks are skipped."""
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                parts = line.split()
            try:
                rows.append((int(parts[0]), int(parts[1])))
            except (ValueError, IndexError):
                raise DataError(f"{path}:{lineno}: cannot parse interaction {line!r}") from None
    return as_pairs(rows)


def write_interactions(path, interactions: Iterable) -> None:
    pairs = as_pairs(interactions)
    with Path(path).open("w", encoding="utf-8") as fh:
        for u, i in pairs:
            fh.write(f"{u}\t{i}\n")
