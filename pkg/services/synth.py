from __future__ import annotations

import logging
from typing import List

import numpy as np

from framework.errors import ConfigError, RangeError
from models.config import SynthConfig
from services.graph_store import CLASS_INCREMENTAL, GraphBlockSequence, assign_splits
from utils.rng import stream

logger = logging.getLogger(__name__)


def class_ids_for_block(cfg: SynthConfig, i: int) -> List[int]:
    if cfg.task_kind == CLASS_INCREMENTAL:
        return [(i - 1) * cfg.classes_per_block + c for c in range(cfg.classes_per_block)]
    return list(range(cfg.classes_per_block))


def class_means(cfg: SynthConfig) -> np.ndarray:
    total = cfg.classes_per_block * (cfg.num_blocks if cfg.task_kind == CLASS_INCREMENTAL else 1)
    if cfg.means is not None:
        means = np.asarray(cfg.means, dtype=np.float64)
        if means.shape != (total, cfg.feature_dim):
            raise ConfigError(f"means must be {total} x {cfg.feature_dim}, got {means.shape}", key="means")
        return means
    return stream(cfg.seed, "synth", "means").normal(0.0, cfg.mean_scale, size=(total, cfg.feature_dim))


def synth_gaussian_sequence(cfg: SynthConfig) -> GraphBlockSequence:
    """Gaussian class clusters arriving block by block, joined by random edges.

    Intra-block pairs connect with ``p_intra``; a node connects to each node of
    an earlier block with ``p_inter`` and that edge arrives with the later node.
    """
    for name in ("p_intra", "p_inter"):
        value = getattr(cfg, name)
        if not 0.0 <= value <= 1.0:
            raise RangeError(f"{name}={value} is not a probability")
    if cfg.sigma <= 0:
        raise RangeError(f"sigma={cfg.sigma} must be positive")

    means = class_means(cfg)
    blocks: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    features: List[np.ndarray] = []
    edges: List[np.ndarray] = []
    m = cfg.nodes_per_block

    for i in range(1, cfg.num_blocks + 1):
        rng = stream(cfg.seed, "synth", "block", i)
        ids = np.asarray(class_ids_for_block(cfg, i))
        label = ids[rng.integers(0, len(ids), size=m)]
        row_means = means[label]
        if cfg.task_kind != CLASS_INCREMENTAL and i > 1:
            row_means = row_means + rng.normal(0.0, cfg.block_drift, size=cfg.feature_dim)
        feats = row_means + cfg.sigma * rng.standard_normal((m, cfg.feature_dim))

        offset = (i - 1) * m
        upper = np.triu(rng.random((m, m)) < cfg.p_intra, k=1)
        a, b = np.nonzero(upper)
        edges.append(np.stack([a + offset, b + offset, np.full(a.size, i)], axis=1))
        if offset and cfg.p_inter > 0:
            new, old = np.nonzero(rng.random((m, offset)) < cfg.p_inter)
            edges.append(np.stack([new + offset, old, np.full(new.size, i)], axis=1))

        blocks.append(np.full(m, i))
        labels.append(label)
        features.append(feats)

    block_arr = np.concatenate(blocks)
    fractions = (cfg.train_frac, cfg.valid_frac, 1.0 - cfg.train_frac - cfg.valid_frac)
    seq = GraphBlockSequence(
        blocks=block_arr,
        labels=np.concatenate(labels),
        features=np.concatenate(features),
        splits=assign_splits(block_arr, [None] * len(block_arr), cfg.seed, fractions),
        edges=np.concatenate(edges).astype(np.int64) if edges else np.zeros((0, 3), np.int64),
        task_kind=cfg.task_kind,
    )
    logger.info("synthesized %d blocks, %d nodes, %d edges", seq.num_blocks, seq.num_nodes, len(seq.edges))
    return seq
