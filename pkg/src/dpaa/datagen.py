"""Semi-synthetic popularity-skewed training data.

An unbiased interaction set is split per user into validation, test and a
sampling pool.  Training interactions are then drawn from the pool with
item probabilities following a Zipf law over global popularity rank, so
the severity exponent controls how strongly training favours popular
items while validation and test stay unbiased.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError
from .graph import as_pairs, popularity_ranking


@dataclass(frozen=True)
class ZipfDistribution:
    probabilities: np.ndarray
    severity: float


def zipf_probabilities(num_items: int, severity: float) -> ZipfDistribution:
    """P(r) = r^-s / sum_n n^-s for ranks r = 1..N (index 0 is rank 1)."""
    if num_items < 1:
        raise ParameterError(f"num_items must be >= 1, got {num_items}")
    if not severity >= 0:
        raise ParameterError(f"severity must be >= 0, got {severity}")
    ranks = np.arange(1, num_items + 1, dtype=np.float64)
    # log-space keeps large s from underflowing before normalisation
    logw = -severity * np.log(ranks)
    w = np.exp(logw - logw.max())
    return ZipfDistribution(probabilities=w / w.sum(), severity=float(severity))


@dataclass(frozen=True)
class SplitSpec:
    validation_fraction: float = 0.1
    test_fraction: float = 0.2
    pool_fraction: float = 0.7
    seed: int = 0

    def __post_init__(self):
        fr = (self.validation_fraction, self.test_fraction, self.pool_fraction)
        if any(f <= 0 for f in fr) or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise ParameterError(f"split fractions must be positive and sum to 1, got {fr}")


def _group_by_user(pairs: np.ndarray):
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    users, starts = np.unique(pairs[:, 0], return_index=True)
    bounds = np.append(starts, pairs.shape[0])
    return pairs, users, bounds


def _split_sizes(n: int, fractions) -> list[int]:
    # largest-remainder rounding so the parts always sum to n
    raw = [n * f for f in fractions]
    sizes = [int(math.floor(x)) for x in raw]
    rem = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - sizes[k]), k))
    for k in order[:rem]:
        sizes[k] += 1
    return sizes


def split_pool(unbiased, spec: SplitSpec):
    """Per-user stratified split into ``(validation, test, pool)``.

    Each user's interactions are shuffled with a generator seeded by
    ``(seed, user)`` and cut with largest-remainder rounding; leftover
    rounding slack is then settled globally so the overall sizes match
    the fractions as closely as integers allow.
    """
    pairs = as_pairs(unbiased)
    if pairs.shape[0] == 0:
        raise DataError("cannot split an empty interaction set")
    pairs = np.unique(pairs, axis=0)
    pairs, users, bounds = _group_by_user(pairs)
    fractions = (spec.validation_fraction, spec.test_fraction, spec.pool_fraction)
    targets = _split_sizes(pairs.shape[0], fractions)

    # per-user shuffles and fractional cuts
    shuffled, cuts = [], []
    for k, u in enumerate(users):
        block = pairs[bounds[k]:bounds[k + 1]]
        rng = np.random.default_rng([spec.seed, int(u)])
        block = block[rng.permutation(block.shape[0])]
        shuffled.append(block)
        n = block.shape[0]
        cuts.append([n * f for f in fractions])

    # allocate floor counts per user, then hand out the global remainder to
    # the users with the largest fractional parts, part by part
    alloc = np.array([[math.floor(x) for x in c] for c in cuts], dtype=np.int64)
    frac = np.array(cuts) - alloc
    for part in (0, 1):
        need = targets[part] - int(alloc[:, part].sum())
        if need > 0:
            spare = np.array([b.shape[0] for b in shuffled]) - alloc.sum(axis=1)
            cand = np.flatnonzero(spare > 0)
            # ties resolved by a seeded permutation, not by user id
            rng = np.random.default_rng([spec.seed, 0xA110C, part])
            tiebreak = rng.permutation(cand.size)
            pick = cand[np.lexsort((tiebreak, -frac[cand, part]))][:need]
            alloc[pick, part] += 1
    alloc[:, 2] = np.array([b.shape[0] for b in shuffled]) - alloc[:, 0] - alloc[:, 1]

    out = ([], [], [])
    for block, (nv, nt, _) in zip(shuffled, alloc):
        out[0].append(block[:nv])
        out[1].append(block[nv:nv + nt])
        out[2].append(block[nv + nt:])
    parts = tuple(np.concatenate(o) if o else np.empty((0, 2), np.int64) for o in out)
    for name, p in zip(("validation", "test", "pool"), parts):
        if p.shape[0] == 0:
            raise DataError(f"split produced an empty {name} subset")
    return tuple(p[np.lexsort((p[:, 1], p[:, 0]))] for p in parts)


def weighted_sample_without_replacement(rng: np.random.Generator, weights: np.ndarray,
                                        n: int, repeats: int | None = None) -> np.ndarray:
    """Draw ``n`` distinct indices with successive-draw probabilities
    proportional to ``weights`` (exponential-key method).

    With ``repeats`` set, returns ``repeats`` independent samples stacked
    along the first axis.
    """
    weights = np.asarray(weights, dtype=np.float64)
    n = min(int(n), int(np.count_nonzero(weights > 0)))
    shape = weights.shape if repeats is None else (repeats,) + weights.shape
    # key = E / w with E ~ Exp(1); the n smallest keys form the sample
    with np.errstate(divide="ignore"):
        keys = rng.standard_exponential(shape) / weights
    if n <= 0:
        return np.empty(shape[:-1] + (0,), dtype=np.int64)
    idx = np.argpartition(keys, n - 1, axis=-1)[..., :n]
    k = np.take_along_axis(keys, idx, axis=-1)
    return np.take_along_axis(idx, np.argsort(k, axis=-1, kind="stable"), axis=-1)


def pool_ranks(pool: np.ndarray, num_items: int) -> np.ndarray:
    """0-based popularity rank of every item by pool frequency."""
    counts = np.bincount(pool[:, 1], minlength=num_items)
    order = popularity_ranking(counts)
    ranks = np.empty(num_items, dtype=np.int64)
    ranks[order] = np.arange(num_items)
    return ranks


def candidate_probabilities(candidates: np.ndarray, item_prob: np.ndarray) -> np.ndarray:
    """Global item probabilities renormalised over one user's candidates."""
    p = item_prob[candidates]
    return p / p.sum()


def generate_biased_training(pool, severity: float, seed: int,
                             interactions_per_user=None, *, sample_fraction: float = 0.2,
                             num_items: int | None = None) -> np.ndarray:
    """Sample a popularity-skewed training set from ``pool``.

    Every pool item first receives one interaction from a uniformly chosen
    user who has it in their pool.  Each user then draws, without
    replacement, up to their budget from their remaining pool items with
    probabilities proportional to the Zipf probability of each item's
    global pool-popularity rank.

    ``interactions_per_user`` may be an int (same budget for everyone), a
    mapping/array indexed by user id, or None, in which case the budget is
    ``ceil(sample_fraction * n_u)`` for a user with ``n_u`` pool items.
    Exposure picks count towards the budget.
    """
    pairs = as_pairs(pool)
    if pairs.shape[0] == 0:
        raise DataError("cannot sample from an empty pool")
    if not severity >= 0:
        raise ParameterError(f"severity must be >= 0, got {severity}")
    pairs = np.unique(pairs, axis=0)
    n_items = int(pairs[:, 1].max()) + 1 if num_items is None else int(num_items)

    ranks = pool_ranks(pairs, n_items)
    zipf = zipf_probabilities(n_items, severity).probabilities
    item_prob = zipf[ranks]

    # minimum exposure: one uniformly random pool user per item
    rng = np.random.default_rng([seed, 0x5EED])
    by_item = pairs[np.lexsort((pairs[:, 0], pairs[:, 1]))]
    items, starts, counts = np.unique(by_item[:, 1], return_index=True, return_counts=True)
    offs = (rng.random(items.size) * counts).astype(np.int64)
    exposure = by_item[starts + offs]

    pairs, users, bounds = _group_by_user(pairs)
    exp_sorted = exposure[np.lexsort((exposure[:, 1], exposure[:, 0]))]
    exp_users = exp_sorted[:, 0]

    chosen = [exp_sorted]
    for k, u in enumerate(users):
        cand = pairs[bounds[k]:bounds[k + 1], 1]
        n_u = cand.size
        if interactions_per_user is None:
            budget = int(math.ceil(sample_fraction * n_u))
        elif np.isscalar(interactions_per_user):
            budget = int(interactions_per_user)
        else:
            budget = int(interactions_per_user[int(u)])
        lo, hi = np.searchsorted(exp_users, [u, u + 1])
        already = exp_sorted[lo:hi, 1]
        remaining = budget - already.size
        if remaining <= 0:
            continue
        free = cand[~np.isin(cand, already)]
        if free.size == 0:
            continue
        urng = np.random.default_rng([seed, int(u)])
        probs = candidate_probabilities(free, item_prob)
        idx = weighted_sample_without_replacement(urng, probs, remaining)
        picked = free[idx]
        chosen.append(np.column_stack([np.full(picked.size, u, dtype=np.int64), picked]))

    out = np.unique(np.concatenate(chosen), axis=0)
    return out


def synthetic_preference_pool(num_users: int = 500, num_items: int = 800, dim: int = 8,
                              density: float = 0.1, popularity_spread: float = 0.3,
                              seed: int = 0) -> np.ndarray:
    """Dense unbiased preference data from a latent-factor model.

    Affinity is ``<p_u, q_i> + b_i`` with Gaussian factors and a Gaussian
    item appeal ``b_i`` (scale ``popularity_spread``) that gives the pool
    a realistic, non-uniform item popularity.  Each user keeps the top
    ``density`` fraction of items by affinity, so every user has the same
    number of preferences.
    """
    if not 0 < density <= 1:
        raise ParameterError(f"density must lie in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(num_users, dim)) / math.sqrt(dim)
    q = rng.normal(size=(num_items, dim))
    b = popularity_spread * rng.normal(size=num_items)
    affinity = p @ q.T + b
    per_user = max(1, int(round(density * num_items)))
    top = np.argsort(-affinity, axis=1, kind="stable")[:, :per_user]
    users = np.repeat(np.arange(num_users), per_user)
    pairs = np.column_stack([users, top.ravel()])
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
