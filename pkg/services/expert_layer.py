"""Transformer-style graph convolution used as a single expert.

Row-vector convention throughout: a node representation is a row ``h`` and a
projection is ``h @ W``, the transpose of the column form ``W h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from framework import diffmath as dm
from framework.diffmath import EPS, DiffValue
from framework.errors import ShapeError

# neighbors whose log gate is at or below this are removed
LOG_EPS = math.log(EPS) + 1e-9


@dataclass
class ExpertParams:
    w_q: DiffValue
    w_k: DiffValue
    w_v: DiffValue
    mlp: List[Tuple[DiffValue, DiffValue]] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def init(cls, width: int, rng: np.random.Generator, mlp_layers: int = 2, name: str = "expert") -> "ExpertParams":
        bound = 1.0 / math.sqrt(width)
        square = (width, width)
        return cls(
            w_q=dm.uniform_parameter(square, bound, rng, f"{name}.w_q"),
            w_k=dm.uniform_parameter(square, bound, rng, f"{name}.w_k"),
            w_v=dm.uniform_parameter(square, bound, rng, f"{name}.w_v"),
            mlp=[
                (
                    dm.uniform_parameter(square, bound, rng, f"{name}.mlp{i}.weight"),
                    dm.uniform_parameter((width,), bound, rng, f"{name}.mlp{i}.bias"),
                )
                for i in range(mlp_layers)
            ],
        )

    def parameters(self) -> List[DiffValue]:
        params = [self.w_q, self.w_k, self.w_v]
        for weight, bias in self.mlp:
            params.extend([weight, bias])
        return params

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag
            p.zero_grad()


def _check_width(params: ExpertParams, *values: DiffValue) -> None:
    for value in values:
        if value.shape[-1] != params.width:
            raise ShapeError(f"representation width {value.shape[-1]} does not match expert width {params.width}")


# -----------------------------------------------------------------------------
# Batched forms
# -----------------------------------------------------------------------------
def attention_batch(
    params: ExpertParams,
    h_dst: DiffValue,
    h_src: DiffValue,
    nbr_pos: np.ndarray,
    nbr_mask: np.ndarray,
    log_beta_src: Optional[DiffValue] = None,
) -> DiffValue:
    """Softmax(q K^T / sqrt(n) + log beta) V per destination row.

    ``log_beta_src`` is an (s, 1) column over source rows. Neighbors whose
    gate sits at the EPS floor are removed from the softmax, and a
    destination left without neighbors receives the zero vector.
    """
    _check_width(params, h_dst, h_src)
    m, fan = nbr_pos.shape
    flat = nbr_pos.reshape(-1)
    owner = np.repeat(np.arange(m), fan)

    q = h_dst @ params.w_q
    keys = dm.gather_rows(h_src @ params.w_k, flat)
    values = dm.gather_rows(h_src @ params.w_v, flat)
    scores = dm.scale(dm.sum_rows(dm.gather_rows(q, owner) * keys), 1.0 / math.sqrt(params.width))
    if log_beta_src is not None:
        gathered = dm.gather_rows(log_beta_src, flat)
        scores = scores + gathered
        nbr_mask = np.asarray(nbr_mask, dtype=bool) & (gathered.data.reshape(m, fan) > LOG_EPS)
    weights = dm.row_softmax(dm.reshape(scores, (m, fan)), mask=nbr_mask)
    messages = dm.reshape(weights, (m * fan, 1)) * values
    return dm.scatter_rows(messages, owner, m)


def mlp_forward(params: ExpertParams, h: DiffValue) -> DiffValue:
    last = len(params.mlp) - 1
    for i, (weight, bias) in enumerate(params.mlp):
        h = h @ weight + bias
        if i < last:
            h = dm.relu(h)
    return h


def expert_forward_batch(
    params: ExpertParams,
    h_dst: DiffValue,
    h_src: DiffValue,
    nbr_pos: np.ndarray,
    nbr_mask: np.ndarray,
    log_beta_src: Optional[DiffValue] = None,
) -> DiffValue:
    """MLP(h_v + Att(h_v, neighbors)) for every destination row."""
    return mlp_forward(params, h_dst + attention_batch(params, h_dst, h_src, nbr_pos, nbr_mask, log_beta_src))


# -----------------------------------------------------------------------------
# Single-node forms
# -----------------------------------------------------------------------------
BetaLike = Union[DiffValue, Sequence[float], np.ndarray]


def _single(h_v: DiffValue, h_n: DiffValue) -> Tuple[DiffValue, DiffValue, np.ndarray, np.ndarray]:
    h_v = dm.as_value(h_v)
    h_n = dm.as_value(h_n)
    if h_n.data.ndim == 1 and h_n.size == 0:
        h_n = dm.as_value(np.zeros((0, h_v.shape[-1])))
    d = h_n.shape[0]
    return dm.reshape(h_v, (1, -1)), h_n, np.arange(d).reshape(1, d), np.ones((1, d), dtype=bool)


def _log_beta(beta: BetaLike, d: int) -> DiffValue:
    beta = dm.as_value(beta)
    if beta.size != d:
        raise ShapeError(f"{beta.size} arrival gates for {d} neighbors")
    return dm.log(dm.clamp(dm.reshape(beta, (d, 1)), EPS, 1.0))


def attention(params: ExpertParams, h_v: DiffValue, h_n: DiffValue) -> DiffValue:
    row, h_n, pos, mask = _single(h_v, h_n)
    return dm.reshape(attention_batch(params, row, h_n, pos, mask), (-1,))


def masked_attention(params: ExpertParams, h_v: DiffValue, h_n: DiffValue, beta: BetaLike) -> DiffValue:
    row, h_n, pos, mask = _single(h_v, h_n)
    return dm.reshape(attention_batch(params, row, h_n, pos, mask, _log_beta(beta, h_n.shape[0])), (-1,))


def expert_forward(params: ExpertParams, h_v: DiffValue, h_n: DiffValue, beta: Optional[BetaLike] = None) -> DiffValue:
    row, h_n, pos, mask = _single(h_v, h_n)
    log_beta = None if beta is None else _log_beta(beta, h_n.shape[0])
    return dm.reshape(expert_forward_batch(params, row, h_n, pos, mask, log_beta), (-1,))
