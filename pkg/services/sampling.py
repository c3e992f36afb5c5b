from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from services.graph_store import GraphView


@dataclass
class LayerBlock:
    """Message-passing frontier for one layer.

    Destination nodes are the first ``num_dst`` entries of ``src_nodes``;
    ``nbr_pos[r, f]`` is the position in ``src_nodes`` of the f-th sampled
    neighbor of destination r (padding where ``nbr_mask`` is False).
    """

    src_nodes: np.ndarray
    num_dst: int
    nbr_pos: np.ndarray
    nbr_mask: np.ndarray
    src_blocks: np.ndarray

    @property
    def dst_nodes(self) -> np.ndarray:
        return self.src_nodes[: self.num_dst]

    @property
    def dst_blocks(self) -> np.ndarray:
        return self.src_blocks[: self.num_dst]

    def neighbor_lists(self) -> List[List[int]]:
        return [self.src_nodes[row[mask]].tolist() for row, mask in zip(self.nbr_pos, self.nbr_mask)]


@dataclass
class EgoBatch:
    """Targets plus their sampled multi-hop neighborhoods; ``layers[0]`` feeds the first layer."""

    targets: np.ndarray
    layers: List[LayerBlock]
    features: np.ndarray
    labels: np.ndarray
    snapshot: int = 0

    @property
    def input_nodes(self) -> np.ndarray:
        return self.layers[0].src_nodes


class NeighborSampler:
    """Uniform fan-out sampler bound to one snapshot; owns its random state."""

    def __init__(self, view: GraphView, fanout: int, rng: np.random.Generator):
        self.view = view
        self.fanout = fanout
        self.rng = rng

    def sample(self, v: int) -> np.ndarray:
        nbrs = self.view.neighbors(v)
        if nbrs.size <= self.fanout:
            return nbrs.copy()
        return np.sort(self.rng.choice(nbrs, size=self.fanout, replace=False))

    def build_batch(self, targets: np.ndarray, layer_count: int) -> EgoBatch:
        targets = np.asarray(targets, dtype=np.int64)
        dst = targets
        stacked: List[LayerBlock] = []
        for _ in range(layer_count):
            position: Dict[int, int] = {int(v): r for r, v in enumerate(dst)}
            src = list(dst.tolist())
            sampled = [self.sample(int(v)) for v in dst]
            width = max((s.size for s in sampled), default=0)
            nbr_pos = np.zeros((len(dst), width), dtype=np.int64)
            nbr_mask = np.zeros((len(dst), width), dtype=bool)
            for r, nbrs in enumerate(sampled):
                for f, u in enumerate(nbrs):
                    u = int(u)
                    if u not in position:
                        position[u] = len(src)
                        src.append(u)
                    nbr_pos[r, f] = position[u]
                    nbr_mask[r, f] = True
            src_arr = np.asarray(src, dtype=np.int64)
            stacked.append(LayerBlock(src_arr, len(dst), nbr_pos, nbr_mask, self.view.blocks(src_arr)))
            dst = src_arr
        stacked.reverse()
        inputs = stacked[0].src_nodes
        return EgoBatch(
            targets=targets,
            layers=stacked,
            features=self.view.features(inputs),
            labels=self.view.labels(targets),
            snapshot=self.view.limit,
        )


def sample_neighbors(view: GraphView, v: int, fanout: int, seed: int) -> List[int]:
    """Uniform sample without replacement; every neighbor when degree <= fanout."""
    return NeighborSampler(view, fanout, np.random.default_rng(seed)).sample(v).tolist()
