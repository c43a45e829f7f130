"""Dataset container and on-disk loaders."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import SplitSpec, generate_biased_training, split_pool
from .errors import DataError
from .evaluation import RankingTask
from .graph import as_pairs, build_graph, popularity_split, read_interactions


@dataclass
class Dataset:
    num_users: int
    num_items: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    candidates: np.ndarray | None = None
    name: str = ""

    def graph(self):
        return build_graph(self.train, self.num_users, self.num_items)

    def valid_task(self) -> RankingTask:
        return RankingTask.from_pairs(self.valid, self.train, self.num_users, self.num_items,
                                      self.candidates)

    def test_task(self) -> RankingTask:
        return RankingTask.from_pairs(self.test, self.train, self.num_users, self.num_items,
                                      self.candidates)

    def popularity_split(self, threshold: float = 0.8):
        return popularity_split(self.graph(), self.train, threshold)


def _read_required(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing interaction file: {path}")
    return read_interactions(path)


def read_candidates(path) -> np.ndarray:
    ids = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                ids.append(int(line))
    return np.asarray(ids, dtype=np.int64)


def load_dataset(train_path, valid_path, test_path, candidates_path=None,
                 num_users: int | None = None, num_items: int | None = None,
                 name: str = "") -> Dataset:
    """Load TSV splits; sizes default to one past the largest id seen."""
    train = _read_required(Path(train_path))
    valid = _read_required(Path(valid_path))
    test = _read_required(Path(test_path))
    cand = None
    if candidates_path:
        p = Path(candidates_path)
        if not p.is_file():
            raise FileNotFoundError(f"missing candidate file: {p}")
        cand = read_candidates(p)
    everything = np.concatenate([train, valid, test])
    if everything.shape[0] == 0:
        raise DataError("dataset contains no interactions")
    M = int(everything[:, 0].max()) + 1 if num_users is None else int(num_users)
    N = int(everything[:, 1].max()) + 1 if num_items is None else int(num_items)
    if cand is not None and cand.size:
        N = max(N, int(cand.max()) + 1) if num_items is None else N
    return Dataset(M, N, train, valid, test, cand, name)


def load_dataset_dir(directory, name: str | None = None) -> Dataset:
    """``train.tsv``, ``valid.tsv``, ``test.tsv`` and optional ``candidates.txt``."""
    d = Path(directory)
    cand = d / "candidates.txt"
    return load_dataset(d / "train.tsv", d / "valid.tsv", d / "test.tsv",
                        cand if cand.is_file() else None, name=name or d.name)


def _read_rating_matrix(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing rating matrix: {path}")
    return np.loadtxt(path, dtype=np.int64, ndmin=2)


def load_coat(directory, valid_fraction: float = 0.1, seed: int = 0,
              positive_threshold: int = 3) -> Dataset:
    """Coat from its public ``train.ascii`` / ``test.ascii`` rating matrices.

    Ratings at or above ``positive_threshold`` are positives.  The random-
    exposure test matrix is kept whole for testing; validation is carved
    per user out of the self-selected training positives.
    """
    d = Path(directory)
    tr = _read_rating_matrix(d / "train.ascii")
    te = _read_rating_matrix(d / "test.ascii")
    if tr.shape != te.shape:
        raise DataError(f"train/test matrices differ in shape: {tr.shape} vs {te.shape}")
    M, N = tr.shape
    pos_train = np.argwhere(tr >= positive_threshold)
    pos_test = np.argwhere(te >= positive_threshold)
    valid, train = _carve_validation(pos_train, valid_fraction, seed)
    return Dataset(M, N, train, valid, as_pairs(pos_test), None, "coat")


def _carve_validation(pairs: np.ndarray, fraction: float, seed: int):
    """Move ``round(fraction * n_u)`` of each user's pairs into validation."""
    pairs = np.unique(as_pairs(pairs), axis=0)
    valid, train = [], []
    for u in np.unique(pairs[:, 0]):
        block = pairs[pairs[:, 0] == u]
        rng = np.random.default_rng([seed, int(u)])
        block = block[rng.permutation(block.shape[0])]
        nv = int(round(fraction * block.shape[0]))
        valid.append(block[:nv])
        train.append(block[nv:])
    valid = np.concatenate(valid) if valid else np.empty((0, 2), np.int64)
    train = np.concatenate(train) if train else np.empty((0, 2), np.int64)
    return valid, train


def semi_synthetic(unbiased, severity: float, seed: int, split: SplitSpec | None = None,
                   num_users: int | None = None, num_items: int | None = None,
                   interactions_per_user=None, sample_fraction: float = 0.2) -> Dataset:
    """Split unbiased data, then draw skewed training data from the pool."""

    pairs = as_pairs(unbiased)
    split = split or SplitSpec(seed=seed)
    valid, test, pool = split_pool(pairs, split)
    M = int(pairs[:, 0].max()) + 1 if num_users is None else num_users
    N = int(pairs[:, 1].max()) + 1 if num_items is None else num_items
    train = generate_biased_training(pool, severity, seed, interactions_per_user,
                                     sample_fraction=sample_fraction, num_items=N)
    return Dataset(M, N, train, valid, test, None, f"synthetic-s{severity:g}")
