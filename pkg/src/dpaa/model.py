"""Embedding propagation for LightGCN and its debiased variant.

Both models share one primitive: a stack of linear propagation steps

    e^(l+1) = A_l (e^(l) + delta * e^(0))

where ``A_l`` is the symmetric user-item operator with per-edge entries
``w_l(u, i) / sqrt(d_u d_i)``.  LightGCN is the case ``w == 1, delta == 0``.
The debiased model derives ``w_l`` from the embeddings themselves (see
:func:`propagate_dpaa`); once derived, the weights are held fixed and the
map from layer-0 embeddings to the output is linear, which is what the
trainer differentiates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError
from .graph import InteractionGraph
from .weights import PretrainedIIWCache, WeightPlan, blend_iiw, edge_iiw

MODES = ("dpaa", "lightgcn")


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 256
    num_layers: int = 2
    plan: WeightPlan = field(default_factory=WeightPlan)
    mode: str = "dpaa"

    def __post_init__(self):
        if self.dim < 1 or self.num_layers < 1:
            raise ParameterError("embedding dim and layer count must be >= 1")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "dpaa" and self.plan.num_layers != self.num_layers:
            raise ParameterError(
                f"plan has {self.plan.num_layers} layers, model has {self.num_layers}")


@dataclass
class LayerStack:
    """Layer outputs ``e^(0) .. e^(L)`` plus the per-step edge weights used."""

    layers: list
    edge_weights: np.ndarray  # (L, E)
    delta: float = 0.0

    @property
    def num_layers(self) -> int:
        return len(self.layers) - 1


def init_embeddings(num_users: int, num_items: int, dim: int, seed: int) -> np.ndarray:
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 0.1, size=(num_users + num_items, dim))


def propagate_fixed(graph: InteractionGraph, table: np.ndarray, edge_weights,
                    delta: float = 0.0) -> LayerStack:
    """Propagate with frozen per-step edge weights (shape ``(L, E)``)."""
    edge_weights = np.asarray(edge_weights, dtype=np.float64)
    norm = graph.edge_norm()
    e0 = np.asarray(table, dtype=np.float64)
    layers = [e0]
    for w in edge_weights:
        A = graph.propagation_matrix(w * norm)
        src = layers[-1] + delta * e0 if delta else layers[-1]
        layers.append(A @ src)
    return LayerStack(layers=layers, edge_weights=edge_weights, delta=float(delta))


def propagate_lightgcn(graph: InteractionGraph, table: np.ndarray, num_layers: int) -> LayerStack:
    return propagate_fixed(graph, table, np.ones((num_layers, graph.edge_count)), 0.0)


def propagate_dpaa(graph: InteractionGraph, table: np.ndarray, plan: WeightPlan,
                   cache: PretrainedIIWCache | None, beta_t: float,
                   iiw_override=None) -> LayerStack:
    """Debiased forward pass.

    At each step the residual input ``e^(l) + delta e^(0)`` supplies both
    the current-model IIW and the messages.  ``iiw_override`` maps a layer
    to a fixed IIW vector and bypasses the blend (used for diagnostics).
    """
    if not 0.0 <= beta_t <= 1.0:
        raise ParameterError(f"beta_t must lie in [0, 1], got {beta_t}")
    if cache is not None:
        cache.check_plan(plan, graph.edge_count)
    elif iiw_override is None and beta_t > 0:
        raise ParameterError("a pretrained IIW cache is required when beta_t > 0")
    M = graph.num_users
    norm = graph.edge_norm()
    lam = plan.normalized_layer_weights
    e0 = np.asarray(table, dtype=np.float64)
    layers = [e0]
    weights = np.empty((plan.num_layers, graph.edge_count))
    for l in range(plan.num_layers):
        src = layers[-1] + plan.delta * e0
        if plan.uses_iiw(l):
            if iiw_override is not None and l in iiw_override:
                r = np.asarray(iiw_override[l], dtype=np.float64)
            else:
                r_cur = edge_iiw(src[graph.edge_users], src[M + graph.edge_items])
                r_pre = cache.layer(l) if cache is not None else 0.0
                r = blend_iiw(r_pre, r_cur, beta_t)
            weights[l] = lam[l] * r
        else:
            weights[l] = lam[l]
        A = graph.propagation_matrix(weights[l] * norm)
        layers.append(A @ src)
    return LayerStack(layers=layers, edge_weights=weights, delta=plan.delta)


def readout(stack: LayerStack) -> np.ndarray:
    """Mean over all layer outputs."""
    out = np.zeros_like(stack.layers[0])
    for layer in stack.layers:
        out += layer
    return out / len(stack.layers)


def backpropagate(graph: InteractionGraph, stack: LayerStack, grad_final: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. the readout back to the layer-0 table.

    The stack's edge weights are treated as constants; operators are
    symmetric so each step's transpose is the operator itself.
    """
    L = stack.num_layers
    norm = graph.edge_norm()
    g_layer = grad_final / (L + 1)
    g0 = g_layer.copy()
    upstream = g_layer.copy()  # dLoss/d e^(l+1), accumulated from readout and later steps
    for l in range(L - 1, -1, -1):
        A = graph.propagation_matrix(stack.edge_weights[l] * norm)
        g_src = A @ upstream  # dLoss/d (e^(l) + delta e^(0))
        if stack.delta:
            g0 += stack.delta * g_src
        if l == 0:
            g0 += g_src
        else:
            upstream = g_layer + g_src
    return g0


def score(final: np.ndarray, user: int, item: int, num_users: int) -> float:
    return float(final[user] @ final[num_users + item])


def score_matrix(final: np.ndarray, num_users: int, users=None) -> np.ndarray:
    U = final[:num_users] if users is None else final[np.asarray(users)]
    return U @ final[num_users:].T


# -- checkpoint file ------------------------------------------------------------

_CKPT_MAGIC = b"DPAACKPT"
_CKPT_VERSION = 1
_CKPT_HEADER = "<IIIIIBddBdd"  # version M N d L mode C eta gamma delta beta


@dataclass
class Checkpoint:
    num_users: int
    num_items: int
    config: ModelConfig
    table: np.ndarray
    beta_t: float = 1.0

    def save(self, path) -> None:
        c, p = self.config, self.config.plan
        header = _CKPT_MAGIC + struct.pack(
            _CKPT_HEADER, _CKPT_VERSION, self.num_users, self.num_items, c.dim, c.num_layers,
            MODES.index(c.mode), p.C, p.eta, p.gamma, p.delta, self.beta_t)
        with Path(path).open("wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.table, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        data = Path(path).read_bytes()
        if data[:8] != _CKPT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        (version, M, N, d, L, mode, C, eta, gamma, delta, beta) = struct.unpack_from(
            _CKPT_HEADER, data, 8)
        if version != _CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        off = 8 + struct.calcsize(_CKPT_HEADER)
        if len(data) - off != 4 * (M + N) * d:
            raise FormatError(f"{path}: truncated embedding table")
        table = np.frombuffer(data, dtype="<f4", offset=off).astype(np.float64).reshape(M + N, d)
        plan = WeightPlan(C=C, eta=eta, gamma=gamma, delta=delta, num_layers=L)
        cfg = ModelConfig(dim=d, num_layers=L, plan=plan, mode=MODES[mode])
        return cls(num_users=M, num_items=N, config=cfg, table=table, beta_t=beta)


def final_embeddings(graph: InteractionGraph, config: ModelConfig, table: np.ndarray,
                     cache: PretrainedIIWCache | None = None, beta_t: float = 1.0) -> np.ndarray:
    """Readout of a trained model's forward pass."""
    if config.mode == "lightgcn":
        return readout(propagate_lightgcn(graph, table, config.num_layers))
    return readout(propagate_dpaa(graph, table, config.plan, cache, beta_t))
