"""Per-block replay memory chosen by closeness to the class mean embedding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from framework.errors import EmptyBlockError, EmptyClassError, RangeError, ShapeError
from services.graph_store import GraphView
from services.sampling import NeighborSampler
from utils.rng import stream

logger = logging.getLogger(__name__)


@dataclass
class MemoryBank:
    p: float
    memories: Dict[int, np.ndarray] = field(default_factory=dict)
    quotas: Dict[int, Dict[int, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 < self.p < 1.0:
            raise RangeError(f"memory fraction p={self.p} outside (0, 1)")

    def store(self, block: int, nodes: np.ndarray, quotas: Dict[int, int]) -> None:
        self.memories[block] = np.sort(np.asarray(nodes, dtype=np.int64))
        self.quotas[block] = dict(quotas)

    def union(self, through: Optional[int] = None) -> np.ndarray:
        parts = [ids for block, ids in sorted(self.memories.items()) if through is None or block <= through]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)

    def size(self) -> int:
        return sum(len(ids) for ids in self.memories.values())

    def write_manifest(self, path: Path, external_ids: Optional[Sequence[str]] = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for block, ids in sorted(self.memories.items()):
                for v in ids:
                    name = external_ids[v] if external_ids is not None else str(v)
                    handle.write(f"{block}\t{name}\n")
        return path


def class_representative(embeddings: np.ndarray) -> np.ndarray:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise EmptyClassError("class has no training nodes to average")
    return embeddings.mean(axis=0)


def representativeness(f_x: np.ndarray, x_c: np.ndarray) -> float:
    f_x, x_c = np.asarray(f_x, dtype=np.float64), np.asarray(x_c, dtype=np.float64)
    if f_x.shape != x_c.shape:
        raise ShapeError(f"embedding {f_x.shape} vs representative {x_c.shape}")
    return -float(np.linalg.norm(f_x - x_c))


def quota(p: float, class_size: int) -> int:
    """max(1, round(p * |X_c|)) with halves rounded up."""
    return max(1, int(np.floor(p * class_size + 0.5)))


def choose_representatives(
    embeddings: np.ndarray,
    node_ids: Sequence[int],
    labels: Sequence[int],
    p: float,
) -> tuple:
    """Keep the ``quota`` nodes closest to each class mean; equal scores keep the lower id.

    Returns (sorted node ids, {class: quota}).
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    node_ids = np.asarray(node_ids, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if node_ids.size == 0:
        raise EmptyBlockError("block has no training nodes")
    if embeddings.shape[0] != node_ids.size or labels.size != node_ids.size:
        raise ShapeError(f"{embeddings.shape[0]} embeddings for {node_ids.size} nodes and {labels.size} labels")
    chosen: List[np.ndarray] = []
    quotas: Dict[int, int] = {}
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        centre = class_representative(embeddings[members])
        scores = -np.linalg.norm(embeddings[members] - centre, axis=1)
        order = np.lexsort((node_ids[members], -scores))
        quotas[int(c)] = min(quota(p, members.size), members.size)
        chosen.append(node_ids[members[order[: quotas[int(c)]]]])
    return np.sort(np.concatenate(chosen)), quotas


def select_memory(
    model,
    view: GraphView,
    nodes: Sequence[int],
    p: float,
    fanout: int,
    batch_size: int,
    seed: int,
) -> tuple:
    """Score the block's training nodes with final-layer embeddings on ``view``."""
    nodes = np.sort(np.asarray(nodes, dtype=np.int64))
    if nodes.size == 0:
        raise EmptyBlockError(f"block {view.limit} has no training nodes")
    sampler = NeighborSampler(view, fanout, stream(seed, "memory", view.limit))
    parts = []
    for start in range(0, nodes.size, batch_size):
        batch = sampler.build_batch(nodes[start : start + batch_size], len(model.layers))
        parts.append(model.embed(batch))
    chosen, quotas = choose_representatives(np.concatenate(parts), nodes, view.labels(nodes), p)
    logger.info("memory for block %d: %d of %d training nodes", view.limit, chosen.size, nodes.size)
    return chosen, quotas


def training_mix(bank: MemoryBank, new_block_train: Sequence[int], stage: int, block: Optional[int] = None) -> np.ndarray:
    """Stage 1: earlier memories plus the new block's training nodes. Stage 2: every memory so far."""
    if stage == 1:
        earlier = bank.union(None if block is None else block - 1)
        return np.union1d(earlier, np.asarray(new_block_train, dtype=np.int64))
    if stage == 2:
        return bank.union(block)
    raise RangeError(f"training stage {stage} is neither 1 nor 2")
