"""Accuracy-matrix bookkeeping, AA/AF and routing diagnostics."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from framework.diffmath import no_grad
from framework.errors import CompletenessError, DegenerateSplitError, InvariantError, RangeError
from middleware.access_audit import AccessAudit
from models.config import TrainConfig
from models.metrics import MetricsMatrix, MetricsReport, WallTimes
from services.graph_store import GraphBlockSequence, GraphView, snapshot
from services.sampling import NeighborSampler
from utils.rng import stream

logger = logging.getLogger(__name__)


# -----------------------------------------------------------------------------
# Matrix
# -----------------------------------------------------------------------------
def record(matrix: MetricsMatrix, i: int, j: int, correct: int, total: int) -> float:
    """Write a[i][j] = correct / total once; 1 <= i <= j <= t."""
    if not 1 <= i <= j <= matrix.t:
        raise RangeError(f"cell ({i}, {j}) outside the lower triangle of a {matrix.t}-block matrix")
    if total <= 0:
        raise DegenerateSplitError(f"block {i} has no evaluation nodes")
    if not 0 <= correct <= total:
        raise RangeError(f"{correct} correct out of {total}")
    if matrix.cells[i - 1][j - 1] is not None:
        raise InvariantError(f"cell ({i}, {j}) already recorded")
    value = correct / total
    matrix.cells[i - 1][j - 1] = value
    return value


def _require(matrix: MetricsMatrix, cells: Sequence[Tuple[int, int]]) -> None:
    missing = [(i + 1, j + 1) for i, j in cells if matrix.cells[i][j] is None]
    if missing:
        raise CompletenessError(f"undefined cells {missing}")


def average_accuracy(matrix: MetricsMatrix) -> float:
    _require(matrix, [(i, i) for i in range(matrix.t)])
    return sum(matrix.cells[i][i] for i in range(matrix.t)) / matrix.t


def final_accuracy(matrix: MetricsMatrix) -> float:
    """Mean of a[i][t] over every block after the last one is learned."""
    last = matrix.t - 1
    _require(matrix, [(i, last) for i in range(matrix.t)])
    return sum(matrix.cells[i][last] for i in range(matrix.t)) / matrix.t


def average_forgetting(matrix: MetricsMatrix) -> float:
    """(1/t) sum_j (1/j) sum_{i<=j} (a[i][j] - a[i][i])."""
    _require(matrix, [(i, j) for j in range(matrix.t) for i in range(j + 1)])
    a = matrix.cells
    total = 0.0
    for j in range(matrix.t):
        total += sum(a[i][j] - a[i][i] for i in range(j + 1)) / (j + 1)
    return total / matrix.t


# -----------------------------------------------------------------------------
# Evaluation
# -----------------------------------------------------------------------------
def eval_threads() -> int:
    return max(1, int(os.environ.get("DYMOE_THREADS", "1")))


def count_correct(
    model,
    view: GraphView,
    nodes: Sequence[int],
    cfg: TrainConfig,
    purpose: Tuple[Any, ...],
    threads: int = 1,
    **forward_kwargs,
) -> Tuple[int, int]:
    """Noise-free predictions for ``nodes`` on ``view`` in fixed batches.

    Each batch samples with its own stream, so the count does not depend on
    how batches are spread over worker threads.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    starts = list(range(0, nodes.size, cfg.eval_batch_size))

    def run(index: int) -> int:
        chunk = nodes[starts[index] : starts[index] + cfg.eval_batch_size]
        sampler = NeighborSampler(view, cfg.fanout, stream(cfg.seed, *purpose, index))
        batch = sampler.build_batch(chunk, len(model.layers))
        return int(np.count_nonzero(model.predict(batch, **forward_kwargs) == batch.labels))

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(run, range(len(starts))))
    else:
        counts = [run(index) for index in range(len(starts))]
    return int(sum(counts)), int(nodes.size)


def evaluate(
    model,
    seq: GraphBlockSequence,
    i: int,
    j: int,
    cfg: TrainConfig,
    audit: Optional[AccessAudit] = None,
    threads: int = 1,
) -> Tuple[int, int]:
    """Score the test nodes of block i on snapshot j."""
    nodes = seq.nodes_in_block(i, "test")
    return count_correct(model, snapshot(seq, j, audit), nodes, cfg, ("eval", i, j), threads)


def expert_specialization(
    model,
    seq: GraphBlockSequence,
    cfg: TrainConfig,
    audit: Optional[AccessAudit] = None,
    threads: int = 1,
) -> List[List[float]]:
    """table[e-1][b-1]: accuracy on block b's test nodes with every gate forced onto expert e."""
    t = model.t
    view = snapshot(seq, t, audit)
    table = [[0.0] * t for _ in range(t)]
    for e in range(1, t + 1):
        for b in range(1, t + 1):
            nodes = seq.nodes_in_block(b, "test")
            correct, total = count_correct(model, view, nodes, cfg, ("specialization", e, b), threads, force_expert=e)
            table[e - 1][b - 1] = correct / total if total else 0.0
    return table


def specialization_hits(table: List[List[float]]) -> float:
    """Fraction of blocks b whose best expert on b is expert b."""
    arr = np.asarray(table)
    return float(np.mean(np.argmax(arr, axis=0) == np.arange(arr.shape[1])))


def gate_accuracy(model, seq: GraphBlockSequence, cfg: TrainConfig, audit: Optional[AccessAudit] = None) -> float:
    """Share of test nodes whose first-layer gate prefers the expert of their own block."""
    t = model.t
    if t == 1:
        return 1.0
    view = snapshot(seq, t, audit)
    nodes = np.concatenate([seq.nodes_in_block(b, "test") for b in range(1, t + 1)])
    if nodes.size == 0:
        return 1.0
    hits = 0
    for index, start in enumerate(range(0, nodes.size, cfg.eval_batch_size)):
        chunk = nodes[start : start + cfg.eval_batch_size]
        batch = NeighborSampler(view, cfg.fanout, stream(cfg.seed, "gate-accuracy", index)).build_batch(chunk, len(model.layers))
        with no_grad():
            raw = model.forward(batch, training=False).gates[0].raw_logits.data[: chunk.size]
        hits += int(np.count_nonzero(np.argmax(raw, axis=1) + 1 == view.blocks(chunk)))
    return hits / nodes.size


# -----------------------------------------------------------------------------
# Reports
# -----------------------------------------------------------------------------
def build_report(
    method: str,
    seed: int,
    matrix: MetricsMatrix,
    wall_times: Optional[WallTimes] = None,
    settings: Optional[Dict[str, Any]] = None,
    gate_acc: Optional[float] = None,
    leakage_violations: int = 0,
) -> MetricsReport:
    return MetricsReport(
        method=method,
        seed=seed,
        t=matrix.t,
        matrix=matrix.defined_cells(),
        cells=matrix.cells,
        AA=average_accuracy(matrix),
        AF=average_forgetting(matrix),
        final_AA=final_accuracy(matrix),
        diagonal=[float(v) for v in matrix.diagonal()],
        wall_times=wall_times or WallTimes(),
        settings=settings or {},
        gate_accuracy=gate_acc,
        leakage_violations=leakage_violations,
    )


def write_specialization(table: List[List[float]], path: Path) -> Path:
    path = Path(path)
    t = len(table)
    fieldnames = ["expert"] + [f"block_{b}" for b in range(1, t + 1)]
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for e, row in enumerate(table, start=1):
            writer.writerow({"expert": e, **{f"block_{b}": f"{v:.6f}" for b, v in enumerate(row, start=1)}})
    return path
