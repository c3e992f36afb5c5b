from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from framework import diffmath as dm
from framework.diffmath import DiffValue
from framework.errors import RangeError, ShapeError
from models.config import LossConfig


def _check_blocks(b, t: int) -> np.ndarray:
    b = np.atleast_1d(np.asarray(b, dtype=np.int64))
    if b.size and (b.min() < 1 or b.max() > t):
        raise RangeError(f"block index outside [1, {t}]")
    return b


def one_hot(j: int, t: int) -> np.ndarray:
    _check_blocks(j, t)
    out = np.zeros(t)
    out[j - 1] = 1.0
    return out


def multi_hot_arrival(b, t: int) -> np.ndarray:
    """l[j] = 1 iff j >= b: expert j may look at a node that arrived in block b.

    A vector of blocks gives one row per node.
    """
    blocks = _check_blocks(b, t)
    rows = (np.arange(1, t + 1)[None, :] >= blocks[:, None]).astype(np.float64)
    return rows[0] if np.ndim(b) == 0 else rows


def _as_matrix(value) -> DiffValue:
    value = dm.as_value(value)
    return dm.reshape(value, (1, -1)) if value.data.ndim == 1 else value


def block_guided_loss(raw_logits, b) -> DiffValue:
    """Cross-entropy of softmax(raw gate logits) against expert b(x), averaged over rows."""
    logits = _as_matrix(raw_logits)
    blocks = _check_blocks(b, logits.shape[1])
    return dm.cross_entropy(logits, blocks - 1)


def graph_block_guided_loss(beta, b) -> DiffValue:
    """Mean BCE between arrival gates and the multi-hot arrival pattern of each node."""
    beta = _as_matrix(beta)
    blocks = np.atleast_1d(np.asarray(b, dtype=np.int64))
    if blocks.size != beta.shape[0]:
        raise ShapeError(f"{beta.shape[0]} arrival-gate rows for {blocks.size} nodes")
    target = multi_hot_arrival(blocks, beta.shape[1]).reshape(beta.shape)
    return dm.binary_cross_entropy(beta, target)


@dataclass
class LossTerm:
    """A mean loss over ``count`` items; pooled with other terms by count."""

    value: DiffValue
    count: int = 1


TermLike = Union[LossTerm, DiffValue, float]


@dataclass
class LossBreakdown:
    total: DiffValue
    cls: float
    bl: float
    gbl: float


def pooled_mean(terms: Sequence[TermLike]) -> Optional[DiffValue]:
    terms = [t if isinstance(t, LossTerm) else LossTerm(dm.as_value(t), 1) for t in terms]
    terms = [t for t in terms if t.count > 0]
    weight = sum(t.count for t in terms)
    if weight == 0:
        return None
    acc = None
    for term in terms:
        part = dm.scale(term.value, term.count / weight)
        acc = part if acc is None else acc + part
    return acc


def combine_losses(
    cls,
    bl_terms: Sequence[TermLike],
    gbl_terms: Sequence[TermLike],
    cfg: LossConfig,
) -> LossBreakdown:
    cls = dm.as_value(cls)
    total = cls
    bl = pooled_mean(bl_terms) if cfg.gamma > 0 else None
    gbl = pooled_mean(gbl_terms) if cfg.delta > 0 else None
    if bl is not None:
        total = total + dm.scale(bl, cfg.gamma)
    if gbl is not None:
        total = total + dm.scale(gbl, cfg.delta)
    return LossBreakdown(
        total=total,
        cls=cls.item(),
        bl=0.0 if bl is None else bl.item(),
        gbl=0.0 if gbl is None else gbl.item(),
    )


def total_loss(cls, bl_terms: Sequence[TermLike], gbl_terms: Sequence[TermLike], cfg: LossConfig) -> DiffValue:
    """L_cls + gamma * mean(BL) + delta * mean(GBL); a zero weight drops its term entirely."""
    return combine_losses(cls, bl_terms, gbl_terms, cfg).total
