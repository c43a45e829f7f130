"""Edge and layer weights for debiased aggregation.

Per edge ``(u, i)`` and propagation step ``l`` the aggregation weight is

    w = lambda_l * r            if gamma == 0 or l == 0
    w = lambda_l                otherwise (gamma == 1, l > 0)

where ``r`` blends a frozen pretrained inverse interaction weight (IIW)
with one computed from the model being trained, and ``lambda_l`` is the
mean-normalised ``(l + 1) ** eta``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ParameterError


@dataclass(frozen=True)
class WeightPlan:
    C: float = 1e-4
    eta: float = 2.0
    gamma: int = 1
    delta: float = 0.2
    num_layers: int = 2
    normalized_layer_weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.C < 0:
            raise ParameterError(f"C must be >= 0, got {self.C}")
        if self.gamma not in (0, 1):
            raise ParameterError(f"gamma must be 0 or 1, got {self.gamma}")
        if not 0.0 <= self.delta <= 1.0:
            raise ParameterError(f"delta must lie in [0, 1], got {self.delta}")
        object.__setattr__(self, "normalized_layer_weights",
                           layer_weights(self.num_layers, self.eta))

    @property
    def cached_layers(self) -> tuple[int, ...]:
        """Layers whose pretrained IIW the plan consumes."""
        return (0,) if self.gamma == 1 else tuple(range(self.num_layers))

    def uses_iiw(self, layer: int) -> bool:
        return self.gamma == 0 or layer == 0


def inverse_interaction_weight(e_u, e_i) -> float:
    """``1 - cos(e_u, e_i)``; 1.0 when either vector has zero norm."""
    e_u = np.asarray(e_u, dtype=np.float64)
    e_i = np.asarray(e_i, dtype=np.float64)
    if e_u.shape != e_i.shape:
        raise ParameterError(f"dimension mismatch: {e_u.shape} vs {e_i.shape}")
    nu, ni = np.linalg.norm(e_u), np.linalg.norm(e_i)
    if nu == 0.0 or ni == 0.0:
        return 1.0
    return float(1.0 - np.dot(e_u, e_i) / (nu * ni))


def edge_iiw(user_rows: np.ndarray, item_rows: np.ndarray) -> np.ndarray:
    """Row-wise IIW for aligned ``(E, d)`` user and item matrices."""
    dots = np.einsum("ij,ij->i", user_rows, item_rows)
    norms = np.linalg.norm(user_rows, axis=1) * np.linalg.norm(item_rows, axis=1)
    out = np.ones(dots.shape[0])
    ok = norms > 0
    out[ok] = 1.0 - dots[ok] / norms[ok]
    return out


def stability_beta(delta_t: float, C: float) -> float:
    if delta_t < 0 or C < 0:
        raise ParameterError(f"delta_t and C must be >= 0, got {delta_t}, {C}")
    if C == 0:
        return 1.0
    return float(delta_t / (delta_t + C))


def blend_iiw(r_pretrained, r_current, beta_t: float):
    if not 0.0 <= beta_t <= 1.0:
        raise ParameterError(f"beta_t must lie in [0, 1], got {beta_t}")
    return beta_t * r_pretrained + (1.0 - beta_t) * r_current


def layer_weights(num_layers: int, eta: float) -> np.ndarray:
    """``(l + 1) ** eta`` for ``l < num_layers``, rescaled to mean 1."""
    if num_layers < 1:
        raise ParameterError(f"num_layers must be >= 1, got {num_layers}")
    if eta < 0:
        raise ParameterError(f"eta must be >= 0, got {eta}")
    raw = np.arange(1, num_layers + 1, dtype=np.float64) ** eta
    return raw / raw.mean()


def combined_weight(plan: WeightPlan, layer: int, iiw):
    if not 0 <= layer < plan.num_layers:
        raise ParameterError(f"layer {layer} outside [0, {plan.num_layers})")
    lam = plan.normalized_layer_weights[layer]
    if plan.uses_iiw(layer):
        return lam * iiw
    return lam * np.ones_like(iiw) if isinstance(iiw, np.ndarray) else lam * 1.0


def embedding_delta(prev_table: np.ndarray, curr_table: np.ndarray) -> float:
    """Mean per-node L2 change between two layer-0 tables."""
    prev_table = np.asarray(prev_table)
    curr_table = np.asarray(curr_table)
    if prev_table.shape != curr_table.shape:
        raise ParameterError(f"shape mismatch: {prev_table.shape} vs {curr_table.shape}")
    if prev_table.shape[0] == 0:
        return 0.0
    return float(np.linalg.norm(curr_table - prev_table, axis=1).mean())


def lemma1_reduction(d_p, d_q, norm_p, norm_q, rbar_p, rbar_q) -> float:
    """Drop in the popular/long-tail message-contribution ratio caused by IIW.

    Contribution of an item is ``degree * mean IIW * norm`` (unweighted:
    ``degree * norm``); the closed form is
    ``(1 - rbar_p / rbar_q) * (d_p * norm_p) / (d_q * norm_q)``.
    """
    for name, v in (("d_p", d_p), ("d_q", d_q), ("norm_p", norm_p),
                    ("norm_q", norm_q), ("rbar_p", rbar_p), ("rbar_q", rbar_q)):
        if not v > 0:
            raise ParameterError(f"{name} must be > 0, got {v}")
    if not rbar_p < rbar_q:
        raise ParameterError(f"requires rbar_p < rbar_q, got {rbar_p} >= {rbar_q}")
    return (1.0 - rbar_p / rbar_q) * (d_p * norm_p) / (d_q * norm_q)


def message_contribution(degree, norm, rbar=1.0) -> float:
    return degree * rbar * norm


# -- pretrained IIW cache -----------------------------------------------------

_CACHE_MAGIC = b"DPAAIIW\x00"
_CACHE_VERSION = 1


@dataclass(frozen=True, eq=False)
class PretrainedIIWCache:
    """Frozen per-layer, per-edge IIW from the pretrained baseline."""

    layers: tuple[int, ...]
    values: np.ndarray  # (len(layers), edge_count)

    @property
    def edge_count(self) -> int:
        return int(self.values.shape[1])

    def layer(self, layer: int) -> np.ndarray:
        try:
            return self.values[self.layers.index(layer)]
        except ValueError:
            raise ConfigError(
                f"pretrained IIW cache holds layers {list(self.layers)}, layer {layer} missing") from None

    def check_plan(self, plan: WeightPlan, edge_count: int) -> None:
        missing = [l for l in plan.cached_layers if l not in self.layers]
        if missing:
            raise ConfigError(
                f"cache lacks layers {missing} required by gamma={plan.gamma}, L={plan.num_layers}")
        if self.edge_count != edge_count:
            raise ConfigError(
                f"cache covers {self.edge_count} edges but the graph has {edge_count}")

    def save(self, path) -> None:
        header = _CACHE_MAGIC + struct.pack("<IQI", _CACHE_VERSION, self.edge_count, len(self.layers))
        header += struct.pack(f"<{len(self.layers)}I", *self.layers)
        with Path(path).open("wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.values, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "PretrainedIIWCache":
        data = Path(path).read_bytes()
        if data[:8] != _CACHE_MAGIC:
            raise FormatError(f"{path}: not a pretrained IIW cache")
        version, edge_count, n_layers = struct.unpack_from("<IQI", data, 8)
        if version != _CACHE_VERSION:
            raise FormatError(f"{path}: unsupported cache version {version}")
        off = 8 + struct.calcsize("<IQI")
        layers = struct.unpack_from(f"<{n_layers}I", data, off)
        off += 4 * n_layers
        expected = 4 * n_layers * edge_count
        if len(data) - off != expected:
            raise FormatError(f"{path}: expected {expected} payload bytes, found {len(data) - off}")
        vals = np.frombuffer(data, dtype="<f4", offset=off).astype(np.float64)
        return cls(layers=tuple(int(l) for l in layers), values=vals.reshape(n_layers, edge_count))

    def export_text(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for k, layer in enumerate(self.layers):
                for e, v in enumerate(self.values[k].astype(np.float32)):
                    fh.write(f"{e}\t{layer}\t{float(v):.9g}\n")


def make_cache(layer_rows, graph, layers) -> PretrainedIIWCache:
    """IIW of every edge from pretrained per-layer embeddings.

    ``layer_rows[l]`` is the ``(M + N, d)`` layer-``l`` output of the
    pretrained model.  Values are rounded through float32 so an in-memory
    cache behaves exactly like one read back from disk.
    """
    M = graph.num_users
    vals = []
    for l in layers:
        rows = layer_rows[l]
        r = edge_iiw(rows[graph.edge_users], rows[M + graph.edge_items])
        vals.append(r.astype(np.float32).astype(np.float64))
    values = np.vstack(vals) if vals else np.empty((0, graph.edge_count))
    return PretrainedIIWCache(layers=tuple(layers), values=values)
