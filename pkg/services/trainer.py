"""Incremental training: one expert per block, two-stage schedule with replay memory."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from framework import diffmath as dm
from framework.errors import EmptyBlockError, InvariantError, SequencingError
from framework.optim import AdamW
from middleware.access_audit import AccessAudit
from models.config import LossConfig, TrainConfig
from models.metrics import MetricsMatrix, WallTimes
from services.checkpoint import save_checkpoint
from services.dymoe_layer import add_expert
from services.evalx import evaluate, record
from services.graph_store import GraphBlockSequence, GraphView, snapshot
from services.losses import LossTerm, block_guided_loss, combine_losses, graph_block_guided_loss
from services.memory_bank import MemoryBank, select_memory, training_mix
from services.model import ModelState
from services.sampling import EgoBatch, NeighborSampler
from utils.logs import TrainLog
from utils.rng import stream

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    model: ModelState
    matrix: MetricsMatrix
    wall_times: WallTimes = field(default_factory=WallTimes)
    bank: Optional[MemoryBank] = None
    checkpoints: List[Path] = field(default_factory=list)
    audit: AccessAudit = field(default_factory=AccessAudit)


# -----------------------------------------------------------------------------
# Optimisation loop
# -----------------------------------------------------------------------------
def batch_loss(model: ModelState, batch: EgoBatch, loss_cfg: LossConfig, rng: np.random.Generator):
    """Forward one batch in training mode and combine the three loss terms."""
    result = model.forward(batch, training=True, rng=rng)
    cls = dm.cross_entropy(result.logits, model.label_columns(batch.labels))
    bl_terms: List[LossTerm] = []
    gbl_terms: List[LossTerm] = []
    if loss_cfg.gamma > 0:
        for gates, block in zip(result.gates, batch.layers):
            bl_terms.append(LossTerm(block_guided_loss(gates.raw_logits, block.dst_blocks), block.num_dst))
    if loss_cfg.delta > 0:
        for beta, block in zip(result.betas, batch.layers):
            if beta is not None:
                gbl_terms.append(LossTerm(graph_block_guided_loss(beta, block.src_blocks), len(block.src_nodes)))
    return combine_losses(cls, bl_terms, gbl_terms, loss_cfg)


def fit(
    model: ModelState,
    view: GraphView,
    nodes: Sequence[int],
    epochs: int,
    cfg: TrainConfig,
    loss_cfg: LossConfig,
    optimizer: AdamW,
    log: Optional[TrainLog] = None,
    block: int = 1,
    stage: int = 1,
    purpose: str = "train",
) -> List[float]:
    """Minibatch passes over ``nodes``; returns wall seconds per epoch."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0 or epochs == 0:
        return []
    params = model.trainable_params()
    seconds: List[float] = []
    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        order = stream(cfg.seed, purpose, "shuffle", block, stage, epoch).permutation(nodes)
        sampler = NeighborSampler(view, cfg.fanout, stream(cfg.seed, purpose, "sample", block, stage, epoch))
        noise = stream(cfg.seed, purpose, "noise", block, stage, epoch)
        sums = np.zeros(4)
        batches = 0
        for start in range(0, order.size, cfg.batch_size):
            batch = sampler.build_batch(order[start : start + cfg.batch_size], len(model.layers))
            parts = batch_loss(model, batch, loss_cfg, noise)
            dm.backward(parts.total)
            optimizer.step(params)
            optimizer.zero_grad(params)
            sums += (parts.cls, parts.bl, parts.gbl, parts.total.item())
            batches += 1
        seconds.append(time.perf_counter() - started)
        means = sums / max(batches, 1)
        if log is not None:
            log.write(block, stage, epoch, *means)
    logger.info(
        "block %d stage %d: %d epochs over %d nodes, final loss %.4f (%.2fs)",
        block, stage, epochs, nodes.size, means[3], sum(seconds),
    )
    return seconds


# -----------------------------------------------------------------------------
# Block preparation
# -----------------------------------------------------------------------------
def _gate_batches(model: ModelState, view: GraphView, nodes: np.ndarray, cfg: TrainConfig, block: int) -> List[EgoBatch]:
    sampler = NeighborSampler(view, cfg.fanout, stream(cfg.seed, "gate-init", block))
    return [sampler.build_batch(nodes[s : s + cfg.eval_batch_size], len(model.layers)) for s in range(0, nodes.size, cfg.eval_batch_size)]


def add_block_expert(model: ModelState, view: GraphView, nodes: np.ndarray, cfg: TrainConfig, block: int) -> None:
    """Grow every layer by one expert whose gate starts at the new block's mean layer input.

    The first block grows layer by layer, since a layer's input is only defined
    once the layers below it have an expert.
    """
    rng = stream(cfg.seed, "grow", block)
    batches = _gate_batches(model, view, nodes, cfg, block)
    if model.t == 0:
        for l, layer in enumerate(model.layers):
            add_expert(layer, model.layer_input_means(batches)[l], rng, name=f"layer{l}")
    else:
        model.grow(model.layer_input_means(batches), rng)


def prepare_block(model: ModelState, seq: GraphBlockSequence, view: GraphView, block: int, cfg: TrainConfig) -> np.ndarray:
    train_nodes = seq.nodes_in_block(block, "train")
    if train_nodes.size == 0:
        raise EmptyBlockError(f"block {block} has no training nodes")
    model.widen_readout(seq.classes_per_block[block - 1], stream(cfg.seed, "readout", block))
    return train_nodes


# -----------------------------------------------------------------------------
# Public operations
# -----------------------------------------------------------------------------
def train_block(
    model: ModelState,
    seq: GraphBlockSequence,
    t: int,
    bank: MemoryBank,
    cfg: TrainConfig,
    audit: Optional[AccessAudit] = None,
    log: Optional[TrainLog] = None,
) -> List[float]:
    """Grow, run stage 1, pick block-t memory, run stage 2; returns epoch wall times."""
    if t != model.blocks_trained + 1:
        raise SequencingError(f"block {t} offered after block {model.blocks_trained}")
    view = snapshot(seq, t, audit)
    new_train = prepare_block(model, seq, view, t, cfg)
    if t > 1 and not model.input_frozen:
        model.freeze_input()
    add_block_expert(model, view, new_train, cfg, t)

    stage1 = training_mix(bank, new_train, 1, t)
    if t > 1 and bank.union(t - 1).size == 0:
        raise InvariantError(f"stage-1 mix of block {t} carries no memory")
    optimizer = AdamW(cfg.learning_rate, cfg.weight_decay)
    seconds = fit(model, view, stage1, cfg.epochs, cfg, cfg.loss, optimizer, log, t, 1)

    chosen, quotas = select_memory(model, view, new_train, cfg.p, cfg.fanout, cfg.eval_batch_size, cfg.seed)
    bank.store(t, chosen, quotas)

    stage2 = training_mix(bank, new_train, 2, t)
    seconds += fit(model, view, stage2, cfg.balancing_epochs_for(seq.task_kind), cfg, cfg.loss, optimizer, log, t, 2)
    model.blocks_trained = t
    return seconds


BlockTrainer = Callable[[int, AccessAudit, Optional[TrainLog]], List[float]]


def evaluation_loop(
    seq: GraphBlockSequence,
    cfg: TrainConfig,
    current_model: Callable[[], ModelState],
    train: BlockTrainer,
    audit: AccessAudit,
    out_dir: Optional[Path] = None,
    log: Optional[TrainLog] = None,
    threads: int = 1,
    score_on_arrival: bool = False,
) -> RunResult:
    """Train block by block and fill column i of the accuracy matrix after each block.

    With ``score_on_arrival`` every cell of row j is scored on snapshot(j), the
    graph as it stood when block j arrived, with the same sampling stream as
    the diagonal. A model that no longer changes then scores the same in every
    column, and any drift is raised as an InvariantError.
    """
    t = seq.num_blocks
    matrix = MetricsMatrix.empty(t)
    times = WallTimes()
    checkpoints: List[Path] = []
    arrival_counts: Dict[int, Tuple[int, int]] = {}
    for i in range(1, t + 1):
        started = time.perf_counter()
        epoch_seconds = train(i, audit, log)
        times.train_seconds.append(time.perf_counter() - started)
        times.epoch_seconds.append(float(np.mean(epoch_seconds)) if epoch_seconds else 0.0)
        model = current_model()
        if out_dir is not None:
            checkpoints.append(save_checkpoint(model, Path(out_dir) / "checkpoints" / f"block_{i}.npz"))

        started = time.perf_counter()
        for j in range(1, i + 1):
            correct, total = evaluate(model, seq, j, j if score_on_arrival else i, cfg, audit, threads)
            if score_on_arrival:
                first = arrival_counts.setdefault(j, (correct, total))
                if first != (correct, total):
                    raise InvariantError(f"block {j} scored {first} on arrival but {(correct, total)} after block {i}")
            record(matrix, j, i, correct, total)
        times.inference_seconds.append(time.perf_counter() - started)
        logger.info("after block %d: diagonal %.4f", i, matrix.cells[i - 1][i - 1])
    audit.assert_clean()
    return RunResult(model=current_model(), matrix=matrix, wall_times=times, checkpoints=checkpoints, audit=audit)


def run_incremental(
    seq: GraphBlockSequence,
    cfg: TrainConfig,
    out_dir: Optional[Path] = None,
    audit: Optional[AccessAudit] = None,
    log: Optional[TrainLog] = None,
    threads: int = 1,
) -> RunResult:
    """Train and evaluate the mixture model over every block of ``seq``."""
    audit = audit or AccessAudit()
    model = ModelState.create(seq.feature_dim, cfg, stream(cfg.seed, "init"))
    bank = MemoryBank(cfg.p)

    def train(i: int, audit: AccessAudit, log: Optional[TrainLog]) -> List[float]:
        return train_block(model, seq, i, bank, cfg, audit, log)

    result = evaluation_loop(seq, cfg, lambda: model, train, audit, out_dir, log, threads)
    result.bank = bank
    if out_dir is not None:
        bank.write_manifest(Path(out_dir) / "memory.tsv", seq.external_ids)
    return result
