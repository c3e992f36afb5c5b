"""Model checkpoints as ``.npz`` archives.

Layout: ``header`` = [format_version, n, t, k, layer_count, n_features,
n_classes]; ``class_ids``; ``flags`` = [use_arrival_gate, input_frozen,
blocks_trained, mode_is_dense]; then one array per parameter named
``pNNN_<path>`` where NNN is the position in declaration order.
"""

from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from framework import diffmath as dm
from framework.errors import DataError, InvariantError
from services.dymoe_layer import DyMoELayerState
from services.expert_layer import ExpertParams
from services.model import ModelState

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_ENTRY = re.compile(r"^p(\d{3,})_(.+)$")


def save_checkpoint(model: ModelState, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.array(
        [FORMAT_VERSION, model.width, model.t, model.k, len(model.layers), model.n_features, model.num_classes],
        dtype=np.int64,
    )
    flags = np.array(
        [int(model.use_arrival_gate), int(model.input_frozen), model.blocks_trained, int(model.mode == "dense")],
        dtype=np.int64,
    )
    arrays: Dict[str, np.ndarray] = {"header": header, "class_ids": np.asarray(model.class_ids, dtype=np.int64), "flags": flags}
    for index, (name, value) in enumerate(model.named_parameters()):
        arrays[f"p{index:03d}_{name}"] = value.data
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)
    logger.debug("checkpoint with %d parameters written to %s", len(arrays) - 3, path)
    return path


def _entries(archive) -> List[Tuple[str, np.ndarray]]:
    found = []
    for key in archive.files:
        match = _ENTRY.match(key)
        if match:
            found.append((int(match.group(1)), match.group(2), archive[key]))
    found.sort()
    return [(name, data) for _, name, data in found]


def load_checkpoint(path: Path) -> ModelState:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint {path} not found")
    with np.load(path) as archive:
        header = archive["header"].tolist()
        class_ids = archive["class_ids"].tolist()
        flags = archive["flags"].tolist()
        entries = dict(_entries(archive))
    version, n, t, k, layer_count, n_features, n_classes = header
    if version != FORMAT_VERSION:
        raise DataError(f"checkpoint format {version} is not {FORMAT_VERSION}")
    use_gate, input_frozen, blocks_trained, dense = flags

    def take(name: str, trainable: bool = True) -> dm.DiffValue:
        if name not in entries:
            raise DataError(f"checkpoint {path} lacks parameter {name}")
        return dm.tensor(entries[name], requires_grad=trainable, name=name)

    mlp_layers = len({key for key in entries if key.startswith("layer0.expert1.mlp") and key.endswith(".weight")})
    layers = []
    for l in range(layer_count):
        prefix = f"layer{l}."
        layer = DyMoELayerState(width=n, shared_projection=take(prefix + "shared_projection"), k=k, mlp_layers=mlp_layers)
        for j in range(1, t + 1):
            base = f"{prefix}expert{j}."
            frozen = j < t
            layer.experts.append(
                ExpertParams(
                    w_q=take(base + "w_q", not frozen),
                    w_k=take(base + "w_k", not frozen),
                    w_v=take(base + "w_v", not frozen),
                    mlp=[(take(f"{base}mlp{i}.weight", not frozen), take(f"{base}mlp{i}.bias", not frozen)) for i in range(mlp_layers)],
                )
            )
            layer.gate_vectors.append(take(f"{prefix}gate{j}"))
            layer.noise_vectors.append(take(f"{prefix}noise{j}"))
            layer.arrival_vectors.append(take(f"{prefix}arrival{j}"))
        layer.frozen_below = max(t - 1, 0)
        layers.append(layer)

    model = ModelState(
        n_features=n_features,
        width=n,
        input_weight=take("input.weight", not input_frozen),
        input_bias=take("input.bias", not input_frozen),
        layers=layers,
        readout_weight=take("readout.weight"),
        readout_bias=take("readout.bias"),
        class_ids=[int(c) for c in class_ids],
        mode="dense" if dense else "sparse",
        use_arrival_gate=bool(use_gate),
        input_frozen=bool(input_frozen),
        blocks_trained=int(blocks_trained),
    )
    if model.num_classes != n_classes or model.readout_weight.shape != (n, n_classes):
        raise InvariantError(f"checkpoint {path}: readout does not match {n_classes} classes")
    if len(model.parameters()) != len(entries):
        raise InvariantError(f"checkpoint {path}: {len(entries)} stored parameters, model declares {len(model.parameters())}")
    return model
