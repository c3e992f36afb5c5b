"""Dynamic mixture layer: one expert per block, gated per node.

Experts are numbered 1..t like the blocks they serve; column ``j - 1`` of
every (rows, t) array belongs to expert ``j``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Literal, Optional, Tuple, Union

import numpy as np

from framework import diffmath as dm
from framework.diffmath import EPS, DiffValue
from framework.errors import RangeError, ShapeError
from services.expert_layer import ExpertParams, expert_forward_batch
from services.sampling import LayerBlock

logger = logging.getLogger(__name__)

DOT = "dot"
GAUSSIAN = "gaussian"
Similarity = Literal["dot", "gaussian"]
SeedLike = Union[int, np.random.Generator, None]


@dataclass
class DyMoELayerState:
    width: int
    shared_projection: DiffValue
    k: int = 3
    mlp_layers: int = 2
    similarity: Similarity = DOT
    sigma: float = 1.0
    experts: List[ExpertParams] = field(default_factory=list)
    gate_vectors: List[DiffValue] = field(default_factory=list)
    noise_vectors: List[DiffValue] = field(default_factory=list)
    arrival_vectors: List[DiffValue] = field(default_factory=list)
    frozen_below: int = 0

    @classmethod
    def create(
        cls,
        width: int,
        k: int,
        rng: np.random.Generator,
        mlp_layers: int = 2,
        similarity: Similarity = DOT,
        sigma: float = 1.0,
        name: str = "layer",
    ) -> "DyMoELayerState":
        bound = 1.0 / math.sqrt(width)
        return cls(
            width=width,
            shared_projection=dm.uniform_parameter((width, width), bound, rng, f"{name}.shared_projection"),
            k=k,
            mlp_layers=mlp_layers,
            similarity=similarity,
            sigma=sigma,
        )

    @property
    def t(self) -> int:
        return len(self.experts)

    @property
    def effective_k(self) -> int:
        return max(1, min(self.k, self.t))

    def check_expert(self, j: int) -> None:
        if not 1 <= j <= self.t:
            raise RangeError(f"expert {j} outside [1, {self.t}]")

    def gate_matrix(self) -> DiffValue:
        return dm.stack_rows(self.gate_vectors)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, DiffValue]]:
        """Declaration order: shared projection, then per expert its weights and its three vectors."""
        yield f"{prefix}shared_projection", self.shared_projection
        for j, expert in enumerate(self.experts, start=1):
            yield f"{prefix}expert{j}.w_q", expert.w_q
            yield f"{prefix}expert{j}.w_k", expert.w_k
            yield f"{prefix}expert{j}.w_v", expert.w_v
            for i, (weight, bias) in enumerate(expert.mlp):
                yield f"{prefix}expert{j}.mlp{i}.weight", weight
                yield f"{prefix}expert{j}.mlp{i}.bias", bias
            yield f"{prefix}gate{j}", self.gate_vectors[j - 1]
            yield f"{prefix}noise{j}", self.noise_vectors[j - 1]
            yield f"{prefix}arrival{j}", self.arrival_vectors[j - 1]

    def parameters(self) -> List[DiffValue]:
        return [p for _, p in self.named_parameters()]


@dataclass
class GateDecision:
    """Gate outcome for a batch of rows.

    ``alphas`` is zero outside ``selected``; ``raw_logits`` are the noise-free
    similarities s(x, g_j) for every expert.
    """

    alphas: DiffValue
    selected: np.ndarray
    raw_logits: DiffValue

    def experts(self, row: int = 0) -> Tuple[int, ...]:
        return tuple(int(j) + 1 for j in np.flatnonzero(self.selected[row]))

    def alpha_row(self, row: int = 0) -> np.ndarray:
        return self.alphas.data[row].copy()


@dataclass
class LayerOutput:
    h: DiffValue
    gates: GateDecision
    beta: Optional[DiffValue]


# -----------------------------------------------------------------------------
# Similarity and gates
# -----------------------------------------------------------------------------
def _as_rows(x) -> DiffValue:
    x = dm.as_value(x)
    return dm.reshape(x, (1, -1)) if x.data.ndim == 1 else x


def similarity_rows(x: DiffValue, g: DiffValue, mode: Similarity = DOT, sigma: float = 1.0) -> DiffValue:
    """(m, n) rows against (t, n) vectors -> (m, t) similarity logits."""
    if x.shape[-1] != g.shape[-1]:
        raise ShapeError(f"similarity: width {x.shape[-1]} vs {g.shape[-1]}")
    dots = x @ dm.transpose(g)
    if mode == DOT:
        return dots
    x_sq = dm.sum_rows(x * x)
    g_sq = dm.reshape(dm.sum_rows(g * g), (1, -1))
    sq_dist = x_sq - dm.scale(dots, 2.0) + g_sq
    return dm.scale(sq_dist, -1.0 / (2.0 * sigma * sigma))


def similarity(x, g, mode: Similarity = DOT, sigma: float = 1.0) -> float:
    """g . x, or -||x - g||^2 / (2 sigma^2) in Gaussian mode."""
    return similarity_rows(_as_rows(x), _as_rows(g), mode, sigma).item()


def _raw_logits(h: DiffValue, layer: DyMoELayerState) -> DiffValue:
    return similarity_rows(h, layer.gate_matrix(), layer.similarity, layer.sigma)


def gate_dense_rows(h: DiffValue, layer: DyMoELayerState) -> GateDecision:
    raw = _raw_logits(h, layer)
    return GateDecision(dm.row_softmax(raw), np.ones(raw.shape, dtype=bool), raw)


def top_k_mask(logits: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest entries per row; ties go to the lower column."""
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    mask = np.zeros(logits.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def gate_sparse_rows(h: DiffValue, layer: DyMoELayerState, training: bool, rng: SeedLike = None) -> GateDecision:
    raw = _raw_logits(h, layer)
    noisy = raw
    if training:
        rng = np.random.default_rng(rng)
        spread = dm.softplus(similarity_rows(h, dm.stack_rows(layer.noise_vectors), layer.similarity, layer.sigma))
        noisy = raw + spread * dm.tensor(rng.standard_normal(raw.shape))
    k = layer.effective_k
    if k >= layer.t:
        return GateDecision(dm.row_softmax(noisy), np.ones(raw.shape, dtype=bool), raw)
    mask = top_k_mask(noisy.data, k)
    return GateDecision(dm.row_softmax(noisy, mask=mask), mask, raw)


def forced_gate_rows(h: DiffValue, layer: DyMoELayerState, expert: int) -> GateDecision:
    layer.check_expert(expert)
    raw = _raw_logits(h, layer)
    mask = np.zeros(raw.shape, dtype=bool)
    mask[:, expert - 1] = True
    return GateDecision(dm.tensor(mask.astype(np.float64)), mask, raw)


def gate_dense(x, layer: DyMoELayerState) -> GateDecision:
    return gate_dense_rows(_as_rows(x), layer)


def gate_sparse(x, layer: DyMoELayerState, training: bool, rng: SeedLike = None) -> GateDecision:
    return gate_sparse_rows(_as_rows(x), layer, training, rng)


# -----------------------------------------------------------------------------
# Arrival gates
# -----------------------------------------------------------------------------
def arrival_gate_rows(h: DiffValue, layer: DyMoELayerState) -> DiffValue:
    """beta[u, j] = sigmoid(p_j . (W^P h_u)) in [EPS, 1 - EPS], shape (rows, t)."""
    projected = h @ layer.shared_projection
    return dm.clamp(dm.sigmoid(projected @ dm.transpose(dm.stack_rows(layer.arrival_vectors))), EPS, 1.0 - EPS)


def arrival_gate(h_u, j: int, layer: DyMoELayerState) -> DiffValue:
    layer.check_expert(j)
    return arrival_gate_rows(_as_rows(h_u), layer)[0, j - 1]


def exact_arrival(src_blocks: np.ndarray, t: int) -> np.ndarray:
    """Multi-hot arrival pattern with zeros replaced by EPS: 1 where j >= b(u)."""
    experts = np.arange(1, t + 1)
    return np.where(experts[None, :] >= np.asarray(src_blocks)[:, None], 1.0, EPS)


# -----------------------------------------------------------------------------
# Forward
# -----------------------------------------------------------------------------
def layer_forward(
    layer: DyMoELayerState,
    block: LayerBlock,
    h_src: DiffValue,
    mode: str = "sparse",
    training: bool = False,
    rng: SeedLike = None,
    force_expert: Optional[int] = None,
    force_beta: bool = False,
    use_arrival_gate: bool = True,
) -> LayerOutput:
    """Mix the selected experts' outputs for every destination row of ``block``.

    ``h_src`` holds the layer-input representation of ``block.src_nodes``;
    destinations are its first ``block.num_dst`` rows.
    """
    if layer.t == 0:
        raise RangeError("layer has no experts yet")
    if h_src.shape != (len(block.src_nodes), layer.width):
        raise ShapeError(f"layer input {h_src.shape} vs {len(block.src_nodes)} nodes of width {layer.width}")
    m = block.num_dst
    h_dst = dm.gather_rows(h_src, np.arange(m))

    if force_expert is not None:
        gates = forced_gate_rows(h_dst, layer, force_expert)
    elif mode == "dense":
        gates = gate_dense_rows(h_dst, layer)
    else:
        gates = gate_sparse_rows(h_dst, layer, training, rng)

    beta: Optional[DiffValue] = None
    log_beta: Optional[DiffValue] = None
    if force_beta:
        log_beta = dm.tensor(np.log(exact_arrival(block.src_blocks, layer.t)))
    elif use_arrival_gate:
        beta = arrival_gate_rows(h_src, layer)
        log_beta = dm.log(beta)

    combined: Optional[DiffValue] = None
    for j in range(layer.t):
        rows = np.flatnonzero(gates.selected[:, j])
        if rows.size == 0:
            continue
        column = None if log_beta is None else log_beta[:, j : j + 1]
        out = expert_forward_batch(
            layer.experts[j],
            dm.gather_rows(h_dst, rows),
            h_src,
            block.nbr_pos[rows],
            block.nbr_mask[rows],
            column,
        )
        weighted = dm.gather_rows(gates.alphas[:, j : j + 1], rows) * out
        part = dm.scatter_rows(weighted, rows, m)
        combined = part if combined is None else combined + part
    if combined is None:
        combined = dm.tensor(np.zeros((m, layer.width)))
    return LayerOutput(combined, gates, beta)


# -----------------------------------------------------------------------------
# Growth
# -----------------------------------------------------------------------------
def add_expert(layer: DyMoELayerState, init_gate: Optional[np.ndarray], rng: np.random.Generator, name: str = "layer") -> None:
    """Append expert t+1 and freeze every earlier expert's weights."""
    n = layer.width
    j = layer.t + 1
    expert = ExpertParams.init(n, rng, layer.mlp_layers, name=f"{name}.expert{j}")
    if init_gate is None:
        gate = rng.uniform(-1.0 / math.sqrt(n), 1.0 / math.sqrt(n), size=n)
    else:
        gate = np.array(init_gate, dtype=np.float64).reshape(-1)
        if gate.size != n:
            raise ShapeError(f"gate init of width {gate.size} for a layer of width {n}")
    for old in layer.experts:
        old.set_trainable(False)
    layer.experts.append(expert)
    layer.gate_vectors.append(dm.parameter(gate, name=f"{name}.gate{j}"))
    layer.noise_vectors.append(dm.parameter(rng.normal(0.0, 0.01, size=n), name=f"{name}.noise{j}"))
    layer.arrival_vectors.append(dm.parameter(rng.normal(0.0, 0.01, size=n), name=f"{name}.arrival{j}"))
    layer.frozen_below = j - 1
    logger.debug("%s: expert %d added, %d frozen", name, j, layer.frozen_below)


def trainable_params(layer: DyMoELayerState) -> List[DiffValue]:
    """Newest expert plus all gating apparatus; earlier experts stay out."""
    if layer.t == 0:
        raise RangeError("layer has no experts yet")
    params = list(layer.experts[-1].parameters())
    params.extend(layer.gate_vectors)
    params.extend(layer.noise_vectors)
    params.extend(layer.arrival_vectors)
    params.append(layer.shared_projection)
    return params
