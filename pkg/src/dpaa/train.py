"""BPR training with Adam, early stopping and the pretraining protocol."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DataError, ParameterError
from .evaluation import RankingTask, recall
from .graph import InteractionGraph
from .model import (Checkpoint, LayerStack, ModelConfig, backpropagate, final_embeddings,
                    init_embeddings, propagate_dpaa, propagate_fixed, propagate_lightgcn, readout)
from .weights import PretrainedIIWCache, embedding_delta, make_cache, stability_beta

logger = logging.getLogger(__name__)


class Triplet(NamedTuple):
    user: int
    pos: int
    neg: int


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 2048
    max_epochs: int = 1000
    patience: int = 50
    reg: float = 1e-4
    eval_k: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ParameterError("learning_rate, batch_size and max_epochs must be positive")
        if not 0 < self.patience <= self.max_epochs:
            raise ParameterError(f"patience must lie in [1, max_epochs], got {self.patience}")
        if self.reg < 0 or self.eval_k < 1:
            raise ParameterError("reg must be >= 0 and eval_k >= 1")


def sample_triplets(graph: InteractionGraph, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Edge-wise BPR sampling: a uniform training edge ``(u, i)`` and a
    uniform non-neighbour ``j`` found by rejection.

    Returns an ``(n, 3)`` array of ``(user, pos, neg)`` rows.  Edges whose
    user has interacted with every item cannot yield a negative and are
    dropped with a warning, so ``n`` may be below ``batch_size``.
    """
    E, N = graph.edge_count, graph.num_items
    if E == 0 or batch_size <= 0:
        return np.empty((0, 3), dtype=np.int64)
    eids = rng.integers(0, E, size=batch_size)
    users = graph.edge_users[eids]
    pos = graph.edge_items[eids]
    full = graph.user_degree[users] >= N
    if full.any():
        logger.warning("dropped %d sampled edges whose users have no negative items",
                       int(full.sum()))
        users, pos = users[~full], pos[~full]
    keys = graph.edge_users * N + graph.edge_items  # ascending, edges are (u, i)-sorted
    neg = rng.integers(0, N, size=users.size)
    todo = np.arange(users.size)
    while todo.size:
        q = users[todo] * N + neg[todo]
        at = np.minimum(np.searchsorted(keys, q), E - 1)
        clash = keys[at] == q
        todo = todo[clash]
        neg[todo] = rng.integers(0, N, size=todo.size)
    return np.column_stack([users, pos, neg]).astype(np.int64)


def bpr_loss(scores_pos, scores_neg, batch_rows, rho: float) -> float:
    """Summed ``-ln sigmoid(pos - neg)`` plus ``rho * ||rows||^2``."""
    diff = np.asarray(scores_pos, dtype=np.float64) - np.asarray(scores_neg, dtype=np.float64)
    rows = np.asarray(batch_rows, dtype=np.float64)
    return float(np.logaddexp(0.0, -diff).sum() + rho * np.square(rows).sum())


def batch_nodes(triplets: np.ndarray, num_users: int) -> np.ndarray:
    """Distinct joint-table rows touched by a batch."""
    return np.unique(np.concatenate([triplets[:, 0], num_users + triplets[:, 1],
                                     num_users + triplets[:, 2]]))


def loss_and_grad(graph: InteractionGraph, stack: LayerStack, triplets: np.ndarray,
                  rho: float) -> tuple[float, np.ndarray]:
    """BPR loss and its gradient w.r.t. the layer-0 table, edge weights frozen."""
    M = graph.num_users
    final = readout(stack)
    u = triplets[:, 0]
    i = M + triplets[:, 1]
    j = M + triplets[:, 2]
    eu, ei, ej = final[u], final[i], final[j]
    x = np.einsum("bd,bd->b", eu, ei - ej)
    nodes = batch_nodes(triplets, M)
    e0 = stack.layers[0]
    loss = bpr_loss(x, np.zeros_like(x), e0[nodes], rho)

    # d/dx of -ln sigmoid(x) = -sigmoid(-x)
    coef = -np.exp(-np.logaddexp(0.0, x))
    g_final = np.zeros_like(final)
    np.add.at(g_final, u, coef[:, None] * (ei - ej))
    np.add.at(g_final, i, coef[:, None] * eu)
    np.add.at(g_final, j, -coef[:, None] * eu)
    grad = backpropagate(graph, stack, g_final)
    grad[nodes] += 2.0 * rho * e0[nodes]
    return loss, grad


def backward(graph: InteractionGraph, config: ModelConfig, table: np.ndarray,
             triplets: np.ndarray, *, cache: PretrainedIIWCache | None = None,
             beta_t: float = 1.0, rho: float = 0.0) -> np.ndarray:
    """Gradient of the batch loss w.r.t. ``table`` with weights derived
    from ``table`` itself and then held constant."""
    return loss_and_grad(graph, forward(graph, config, table, cache, beta_t), triplets, rho)[1]


def forward(graph, config: ModelConfig, table, cache=None, beta_t: float = 1.0) -> LayerStack:
    if config.mode == "lightgcn":
        return propagate_lightgcn(graph, table, config.num_layers)
    return propagate_dpaa(graph, table, config.plan, cache, beta_t)


class Adam:
    def __init__(self, shape, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """In-place update of ``params``."""
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (grad * grad)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainState:
    epoch: int
    table: np.ndarray
    optimizer: Adam
    prev_table: np.ndarray | None = None
    beta_t: float = 1.0
    best_metric: float = -math.inf
    best_epoch: int = 0
    best_table: np.ndarray | None = None
    best_beta: float = 1.0
    since_improvement: int = 0


@dataclass
class FitResult:
    checkpoint: Checkpoint
    best_epoch: int
    best_metric: float
    log: list = field(default_factory=list)
    stopped_epoch: int = 0

    def write_log(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "delta_t", "beta_t", "val_recall"])
            for row in self.log:
                w.writerow([row["epoch"], f"{row['loss']:.6f}", f"{row['delta_t']:.6g}",
                            f"{row['beta_t']:.6g}", f"{row['val_recall']:.6f}"])


def fit(graph: InteractionGraph, valid_task: RankingTask, model_config: ModelConfig,
        train_config: TrainConfig, cache: PretrainedIIWCache | None = None,
        init_table: np.ndarray | None = None) -> FitResult:
    """Train to early stopping on validation Recall@k and return the best model.

    Per epoch: measure the layer-0 change since the previous epoch start,
    set beta, derive the aggregation weights once from the epoch-start
    table, run ``ceil(E / batch)`` BPR batches with those weights frozen,
    then score the validation task.
    """
    dpaa = model_config.mode == "dpaa"
    if dpaa:
        if cache is None:
            raise ParameterError("dpaa training needs a pretrained IIW cache")
        cache.check_plan(model_config.plan, graph.edge_count)
    rng = np.random.default_rng([train_config.seed, 1])
    table = (init_embeddings(graph.num_users, graph.num_items, model_config.dim, train_config.seed)
             if init_table is None else np.array(init_table, dtype=np.float64))
    state = TrainState(epoch=0, table=table,
                       optimizer=Adam(table.shape, lr=train_config.learning_rate))
    n_batches = max(1, math.ceil(graph.edge_count / train_config.batch_size))
    log = []

    for epoch in range(1, train_config.max_epochs + 1):
        state.epoch = epoch
        if state.prev_table is None:
            delta_t, beta_t = 0.0, 1.0
        else:
            delta_t = embedding_delta(state.prev_table, state.table)
            beta_t = stability_beta(delta_t, model_config.plan.C) if dpaa else 1.0
        state.beta_t = beta_t
        state.prev_table = state.table.copy()

        frozen = forward(graph, model_config, state.table, cache, beta_t)
        weights, delta = frozen.edge_weights, frozen.delta

        total = 0.0
        for _ in range(n_batches):
            trip = sample_triplets(graph, train_config.batch_size, rng)
            if trip.shape[0] == 0:
                continue
            stack = propagate_fixed(graph, state.table, weights, delta)
            loss, grad = loss_and_grad(graph, stack, trip, train_config.reg)
            state.optimizer.step(state.table, grad)
            total += loss

        final = final_embeddings(graph, model_config, state.table, cache, beta_t)
        metric = recall(final, valid_task, train_config.eval_k)
        log.append({"epoch": epoch, "loss": total, "delta_t": delta_t, "beta_t": beta_t,
                    "val_recall": metric})
        logger.debug("epoch %d loss %.4f delta %.3g beta %.3g recall %.4f",
                     epoch, total, delta_t, beta_t, metric)

        if metric > state.best_metric:
            state.best_metric = metric
            state.best_epoch = epoch
            state.best_table = state.table.copy()
            state.best_beta = beta_t
            state.since_improvement = 0
        else:
            state.since_improvement += 1
            if state.since_improvement >= train_config.patience:
                break

    ckpt = Checkpoint(graph.num_users, graph.num_items, model_config,
                      state.best_table, beta_t=state.best_beta)
    return FitResult(checkpoint=ckpt, best_epoch=state.best_epoch,
                     best_metric=state.best_metric, log=log, stopped_epoch=state.epoch)


def pretrain_base(graph: InteractionGraph, valid_task: RankingTask, dim: int, num_layers: int,
                  train_config: TrainConfig, cached_layers=(0,)):
    """Train a plain LightGCN to early stopping and derive the frozen IIW
    cache from its per-layer outputs."""
    if valid_task.relevant.nnz == 0:
        raise DataError("pretraining requires a non-empty validation split")
    cfg = ModelConfig(dim=dim, num_layers=num_layers, mode="lightgcn")
    result = fit(graph, valid_task, cfg, train_config)
    stack = propagate_lightgcn(graph, result.checkpoint.table, num_layers)
    cache = make_cache(stack.layers, graph, tuple(cached_layers))
    return result, cache

