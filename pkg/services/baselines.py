"""Pretrain, online and retrain baselines on a single-expert backbone."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

from framework.errors import ShapeError
from framework.optim import AdamW
from middleware.access_audit import AccessAudit
from models.config import LossConfig, TrainConfig
from services.graph_store import GraphBlockSequence, snapshot
from services.model import ModelState
from services.trainer import RunResult, add_block_expert, evaluation_loop, fit, prepare_block
from utils.logs import TrainLog
from utils.rng import stream

logger = logging.getLogger(__name__)

NO_GATE_LOSS = LossConfig(gamma=0.0, delta=0.0)


def _single_expert(seq: GraphBlockSequence, cfg: TrainConfig, block: int = 1) -> ModelState:
    return ModelState.create(seq.feature_dim, cfg, stream(cfg.seed, "baseline", "init", block), use_arrival_gate=False)


def _fit(model: ModelState, view, nodes: np.ndarray, cfg: TrainConfig, log: Optional[TrainLog], block: int) -> List[float]:
    optimizer = AdamW(cfg.learning_rate, cfg.weight_decay)
    seconds = fit(model, view, nodes, cfg.epochs, cfg, NO_GATE_LOSS, optimizer, log, block, 1, "baseline")
    model.blocks_trained = block
    return seconds


def pretrain_run(
    seq: GraphBlockSequence,
    cfg: TrainConfig,
    out_dir: Optional[Path] = None,
    audit: Optional[AccessAudit] = None,
    log: Optional[TrainLog] = None,
    threads: int = 1,
) -> RunResult:
    """Train on block 1 only; every block is scored once, on arrival."""
    audit = audit or AccessAudit()
    model = _single_expert(seq, cfg)

    def train(i: int, audit: AccessAudit, log: Optional[TrainLog]) -> List[float]:
        if i > 1:
            return []
        view = snapshot(seq, 1, audit)
        nodes = prepare_block(model, seq, view, 1, cfg)
        add_block_expert(model, view, nodes, cfg, 1)
        return _fit(model, view, nodes, cfg, log, 1)

    return evaluation_loop(seq, cfg, lambda: model, train, audit, out_dir, log, threads, score_on_arrival=True)


def online_run(
    seq: GraphBlockSequence,
    cfg: TrainConfig,
    out_dir: Optional[Path] = None,
    audit: Optional[AccessAudit] = None,
    log: Optional[TrainLog] = None,
    threads: int = 1,
) -> RunResult:
    """Fine-tune every parameter on each new block's training nodes; no memory."""
    audit = audit or AccessAudit()
    model = _single_expert(seq, cfg)

    def train(i: int, audit: AccessAudit, log: Optional[TrainLog]) -> List[float]:
        view = snapshot(seq, i, audit)
        nodes = prepare_block(model, seq, view, i, cfg)
        if model.t == 0:
            add_block_expert(model, view, nodes, cfg, i)
        return _fit(model, view, nodes, cfg, log, i)

    return evaluation_loop(seq, cfg, lambda: model, train, audit, out_dir, log, threads)


def retrain_run(
    seq: GraphBlockSequence,
    cfg: TrainConfig,
    out_dir: Optional[Path] = None,
    audit: Optional[AccessAudit] = None,
    log: Optional[TrainLog] = None,
    threads: int = 1,
) -> RunResult:
    """A fresh model per block, trained on all training nodes of snapshot(i)."""
    audit = audit or AccessAudit()
    holder = {"model": _single_expert(seq, cfg)}

    def train(i: int, audit: AccessAudit, log: Optional[TrainLog]) -> List[float]:
        model = _single_expert(seq, cfg, i)
        view = snapshot(seq, i, audit)
        for b in range(1, i + 1):
            prepare_block(model, seq, view, b, cfg)
        nodes = np.concatenate([seq.nodes_in_block(b, "train") for b in range(1, i + 1)])
        add_block_expert(model, view, nodes, cfg, i)
        holder["model"] = model
        return _fit(model, view, nodes, cfg, log, i)

    return evaluation_loop(seq, cfg, lambda: holder["model"], train, audit, out_dir, log, threads)


def pi_combine(f1_logits, f2_logits) -> np.ndarray:
    """softmax(f1 + f2) along the last axis."""
    f1, f2 = np.asarray(f1_logits, dtype=np.float64), np.asarray(f2_logits, dtype=np.float64)
    if f1.shape != f2.shape:
        raise ShapeError(f"logit shapes {f1.shape} and {f2.shape} differ")
    z = f1 + f2
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


RUNNERS = {
    "pretrain": pretrain_run,
    "online": online_run,
    "retrain": retrain_run,
}
