from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from framework import diffmath as dm
from framework.diffmath import DiffValue
from framework.errors import DataError, ShapeError
from models.config import TrainConfig
from services.dymoe_layer import DyMoELayerState, GateDecision, SeedLike, add_expert, layer_forward, trainable_params
from services.sampling import EgoBatch

logger = logging.getLogger(__name__)


@dataclass
class ForwardResult:
    logits: DiffValue
    embeddings: DiffValue
    gates: List[GateDecision]
    betas: List[Optional[DiffValue]]


@dataclass
class ModelState:
    """Input projection, T stacked mixture layers and a growing readout."""

    n_features: int
    width: int
    input_weight: DiffValue
    input_bias: DiffValue
    layers: List[DyMoELayerState]
    readout_weight: DiffValue
    readout_bias: DiffValue
    class_ids: List[int] = field(default_factory=list)
    mode: str = "sparse"
    use_arrival_gate: bool = True
    input_frozen: bool = False
    blocks_trained: int = 0

    @classmethod
    def create(cls, n_features: int, cfg: TrainConfig, rng: np.random.Generator, use_arrival_gate: Optional[bool] = None) -> "ModelState":
        n = cfg.embedding_dim
        in_bound = 1.0 / math.sqrt(n_features)
        return cls(
            n_features=n_features,
            width=n,
            input_weight=dm.uniform_parameter((n_features, n), in_bound, rng, "input.weight"),
            input_bias=dm.uniform_parameter((n,), in_bound, rng, "input.bias"),
            layers=[DyMoELayerState.create(n, cfg.k, rng, cfg.mlp_layers, name=f"layer{l}") for l in range(cfg.layer_count)],
            readout_weight=dm.parameter(np.zeros((n, 0)), "readout.weight"),
            readout_bias=dm.parameter(np.zeros(0), "readout.bias"),
            mode=cfg.mode,
            use_arrival_gate=cfg.use_arrival_gate if use_arrival_gate is None else use_arrival_gate,
        )

    # ------------------------------------------------------------------
    # Shape bookkeeping
    # ------------------------------------------------------------------
    @property
    def t(self) -> int:
        return self.layers[0].t

    @property
    def k(self) -> int:
        return self.layers[0].k

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    def widen_readout(self, class_ids: Iterable[int], rng: np.random.Generator) -> List[int]:
        """Append readout columns for class ids not seen before; returns the new ids.

        The readout parameters are widened in place, so optimizer state keyed
        by their ``node_id`` carries over.
        """
        new = [int(c) for c in dict.fromkeys(int(c) for c in class_ids) if int(c) not in self.class_ids]
        if not new:
            return []
        bound = 1.0 / math.sqrt(self.width)
        weight = np.concatenate([self.readout_weight.data, rng.uniform(-bound, bound, (self.width, len(new)))], axis=1)
        bias = np.concatenate([self.readout_bias.data, rng.uniform(-bound, bound, len(new))])
        for param, data in ((self.readout_weight, weight), (self.readout_bias, bias)):
            param.data = data
            param.zero_grad()
        self.class_ids.extend(new)
        logger.debug("readout widened to %d classes", self.num_classes)
        return new

    def label_columns(self, labels: Sequence[int]) -> np.ndarray:
        column: Dict[int, int] = {c: i for i, c in enumerate(self.class_ids)}
        try:
            return np.asarray([column[int(c)] for c in labels], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"class {exc.args[0]} has no readout column") from None

    def grow(self, init_gates: Sequence[Optional[np.ndarray]], rng: np.random.Generator) -> None:
        if len(init_gates) != len(self.layers):
            raise ShapeError(f"{len(init_gates)} gate inits for {len(self.layers)} layers")
        for l, (layer, gate) in enumerate(zip(self.layers, init_gates)):
            add_expert(layer, gate, rng, name=f"layer{l}")

    def freeze_input(self) -> None:
        self.input_frozen = True
        for p in (self.input_weight, self.input_bias):
            p.requires_grad = False
            p.zero_grad()

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------
    def named_parameters(self) -> Iterator[Tuple[str, DiffValue]]:
        yield "input.weight", self.input_weight
        yield "input.bias", self.input_bias
        for l, layer in enumerate(self.layers):
            yield from layer.named_parameters(prefix=f"layer{l}.")
        yield "readout.weight", self.readout_weight
        yield "readout.bias", self.readout_bias

    def parameters(self) -> List[DiffValue]:
        return [p for _, p in self.named_parameters()]

    def trainable_params(self) -> List[DiffValue]:
        params: List[DiffValue] = []
        if not self.input_frozen:
            params.extend([self.input_weight, self.input_bias])
        for layer in self.layers:
            params.extend(trainable_params(layer))
        params.extend([self.readout_weight, self.readout_bias])
        return params

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------
    def project(self, features: np.ndarray) -> DiffValue:
        return dm.tensor(features) @ self.input_weight + self.input_bias

    def forward(
        self,
        batch: EgoBatch,
        training: bool = False,
        rng: SeedLike = None,
        force_expert: Optional[int] = None,
        force_beta: bool = False,
        mode: Optional[str] = None,
    ) -> ForwardResult:
        if len(batch.layers) != len(self.layers):
            raise ShapeError(f"batch sampled for {len(batch.layers)} layers, model has {len(self.layers)}")
        rng = np.random.default_rng(rng)
        h = self.project(batch.features)
        gates: List[GateDecision] = []
        betas: List[Optional[DiffValue]] = []
        for layer, block in zip(self.layers, batch.layers):
            out = layer_forward(
                layer,
                block,
                h,
                mode=mode or self.mode,
                training=training,
                rng=rng,
                force_expert=force_expert,
                force_beta=force_beta,
                use_arrival_gate=self.use_arrival_gate,
            )
            gates.append(out.gates)
            betas.append(out.beta)
            h = out.h
        logits = h @ self.readout_weight + self.readout_bias
        return ForwardResult(logits, h, gates, betas)

    def layer_input_means(self, batches: Iterable[EgoBatch]) -> List[Optional[np.ndarray]]:
        """Mean layer-input representation of the batch targets, per layer.

        Layers past the first one without experts cannot be reached and get None.
        """
        sums: List[np.ndarray] = [np.zeros(self.width) for _ in self.layers]
        count = 0
        reachable = len(self.layers)
        with dm.no_grad():
            for batch in batches:
                m = len(batch.targets)
                h = self.project(batch.features)
                for l, (layer, block) in enumerate(zip(self.layers, batch.layers)):
                    sums[l] += h.data[:m].sum(axis=0)
                    if layer.t == 0:
                        reachable = min(reachable, l + 1)
                        break
                    h = layer_forward(layer, block, h, mode="sparse", training=False, use_arrival_gate=self.use_arrival_gate).h
                count += m
        if count == 0:
            return [None] * len(self.layers)
        return [sums[l] / count if l < reachable else None for l in range(len(self.layers))]

    def predict(self, batch: EgoBatch, **kwargs) -> np.ndarray:
        """Predicted class ids for the batch targets (noise-free)."""
        with dm.no_grad():
            logits = self.forward(batch, training=False, **kwargs).logits.data
        return np.asarray(self.class_ids, dtype=np.int64)[np.argmax(logits, axis=1)]

    def embed(self, batch: EgoBatch) -> np.ndarray:
        """Final-layer representation under noise-free sparse gating."""
        with dm.no_grad():
            return self.forward(batch, training=False, mode="sparse").embeddings.data


def parameter_checksum(params: Iterable[DiffValue]) -> str:
    digest = hashlib.blake2b(digest_size=16)
    for p in params:
        digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.hexdigest()
