from __future__ import annotations

from typing import Annotated, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, BeforeValidator, Field, model_validator

TaskKind = Literal["class-incremental", "instance-incremental"]
GateMode = Literal["dense", "sparse"]


def _split_floats(value):
    if isinstance(value, str):
        return [float(part) for part in value.replace(";", ",").split(",") if part.strip()]
    return value


FloatList = Annotated[List[float], BeforeValidator(_split_floats)]


class SynthConfig(BaseModel):
    num_blocks: int = Field(
        5,
        ge=1,
        description="Number of data blocks t.",
        json_schema_extra={"example": 5},
    )
    classes_per_block: int = Field(
        2,
        ge=1,
        description="Label classes introduced per block (class-incremental) or shared by all blocks (instance-incremental).",
        json_schema_extra={"example": 2},
    )
    nodes_per_block: int = Field(
        200,
        ge=1,
        description="Nodes arriving with each block.",
        json_schema_extra={"example": 200},
    )
    feature_dim: int = Field(
        16,
        ge=1,
        description="Width of the raw node feature vectors.",
        json_schema_extra={"example": 16},
    )
    sigma: float = Field(
        1.0,
        gt=0,
        description="Shared per-coordinate standard deviation of every class Gaussian.",
        json_schema_extra={"example": 1.0},
    )
    mean_scale: float = Field(
        1.0,
        ge=0,
        description="Class means are drawn from N(0, mean_scale^2 I) unless given explicitly.",
        json_schema_extra={"example": 1.0},
    )
    means: Optional[List[List[float]]] = Field(
        None,
        description="Explicit class means, one row per class id (overrides mean_scale).",
        json_schema_extra={"example": [[0.0, 0.0], [3.0, 0.0]]},
    )
    block_drift: float = Field(
        0.5,
        ge=0,
        description="Instance-incremental only: scale of the per-block random shift added to every class mean.",
        json_schema_extra={"example": 0.5},
    )
    p_intra: float = Field(
        0.02,
        description="Edge probability between two nodes of the same block.",
        json_schema_extra={"example": 0.02},
    )
    p_inter: float = Field(
        0.005,
        description="Edge probability between a node and a node of an earlier block.",
        json_schema_extra={"example": 0.005},
    )
    task_kind: TaskKind = Field(
        "class-incremental",
        description="class-incremental: disjoint classes per block; instance-incremental: shared classes.",
        json_schema_extra={"example": "class-incremental"},
    )
    train_frac: float = Field(0.6, gt=0, lt=1, description="Per-block train share.", json_schema_extra={"example": 0.6})
    valid_frac: float = Field(0.2, ge=0, lt=1, description="Per-block validation share.", json_schema_extra={"example": 0.2})
    seed: int = Field(0, description="Generator seed.", json_schema_extra={"example": 0})

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {
            "examples": [
                {
                    "num_blocks": 5,
                    "classes_per_block": 2,
                    "nodes_per_block": 200,
                    "feature_dim": 16,
                    "sigma": 1.0,
                    "p_intra": 0.02,
                    "p_inter": 0.005,
                    "task_kind": "class-incremental",
                    "seed": 0,
                }
            ]
        },
    }

    @model_validator(mode="after")
    def _check_fractions(self) -> "SynthConfig":
        if self.train_frac + self.valid_frac >= 1.0:
            raise ValueError("train_frac + valid_frac must leave room for a test split")
        return self


class LossConfig(BaseModel):
    gamma: float = Field(
        1.0,
        ge=0,
        description="Weight of the block-guided gate loss.",
        json_schema_extra={"example": 1.0},
    )
    delta: float = Field(
        5.0,
        ge=0,
        description="Weight of the graph block-guided arrival-gate loss.",
        json_schema_extra={"example": 5.0},
    )

    model_config = {"extra": "forbid", "json_schema_extra": {"examples": [{"gamma": 1.0, "delta": 5.0}]}}


class TrainConfig(BaseModel):
    learning_rate: float = Field(1e-4, gt=0, description="Adam step size.", json_schema_extra={"example": 1e-4})
    weight_decay: float = Field(1e-3, ge=0, description="Decoupled weight decay.", json_schema_extra={"example": 1e-3})
    epochs: int = Field(40, ge=1, description="Stage-1 epochs per block.", json_schema_extra={"example": 40})
    balancing_epochs: Optional[int] = Field(
        None,
        ge=0,
        description="Stage-2 (memory balancing) epochs; defaults to 10 class-incremental, 5 instance-incremental.",
        json_schema_extra={"example": 10},
    )
    batch_size: int = Field(128, ge=1, description="Target nodes per minibatch.", json_schema_extra={"example": 128})
    embedding_dim: int = Field(128, ge=1, description="Layer embedding width n.", json_schema_extra={"example": 128})
    layer_count: int = Field(2, ge=1, description="Stacked DyMoE layers T.", json_schema_extra={"example": 2})
    mlp_layers: int = Field(2, ge=1, description="Affine maps in each expert MLP.", json_schema_extra={"example": 2})
    fanout: int = Field(10, ge=0, description="Sampled neighbors per hop.", json_schema_extra={"example": 10})
    k: int = Field(3, ge=1, description="Active experts per node in sparse mode.", json_schema_extra={"example": 3})
    gamma: float = Field(1.0, ge=0, description="Block-guided loss weight.", json_schema_extra={"example": 1.0})
    delta: float = Field(5.0, ge=0, description="Graph block-guided loss weight.", json_schema_extra={"example": 5.0})
    p: float = Field(0.05, gt=0, lt=1, description="Memory budget fraction per block.", json_schema_extra={"example": 0.05})
    mode: GateMode = Field("sparse", description="Gate routing: dense softmax or noisy top-k.", json_schema_extra={"example": "sparse"})
    use_arrival_gate: bool = Field(
        True,
        description="Mask attention with the learned arrival gates (beta).",
        json_schema_extra={"example": True},
    )
    eval_batch_size: int = Field(256, ge=1, description="Target nodes per inference batch.", json_schema_extra={"example": 256})
    seed: int = Field(0, description="Root seed for every random stream.", json_schema_extra={"example": 0})

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {
            "examples": [
                {
                    "learning_rate": 1e-4,
                    "weight_decay": 1e-3,
                    "epochs": 40,
                    "batch_size": 128,
                    "embedding_dim": 128,
                    "k": 3,
                    "gamma": 1.0,
                    "delta": 5.0,
                    "p": 0.05,
                    "mode": "sparse",
                    "seed": 0,
                }
            ]
        },
    }

    @property
    def loss(self) -> LossConfig:
        return LossConfig(gamma=self.gamma, delta=self.delta)

    def balancing_epochs_for(self, task_kind: str) -> int:
        if self.balancing_epochs is not None:
            return self.balancing_epochs
        return 10 if task_kind == "class-incremental" else 5


class MixtureSpec(BaseModel):
    dims: int = Field(8, ge=1, description="Feature dimensionality.", json_schema_extra={"example": 8})
    separation: float = Field(4.0, gt=0, description="Mean separation B = |mu1 - mu2|.", json_schema_extra={"example": 4.0})
    sigma: float = Field(1.0, gt=0, description="Shared standard deviation.", json_schema_extra={"example": 1.0})
    radius: float = Field(1.0, ge=0, description="Label threshold distance d.", json_schema_extra={"example": 1.0})
    mu1: Optional[FloatList] = Field(None, description="Component-1 mean (default origin).", json_schema_extra={"example": None})
    mu2: Optional[FloatList] = Field(None, description="Component-2 mean (default B along the first axis).", json_schema_extra={"example": None})
    train_samples: int = Field(2000, ge=2, description="Samples used to train each expert.", json_schema_extra={"example": 2000})
    eval_samples: int = Field(10000, ge=2, description="Fresh Monte-Carlo samples for the loss comparison.", json_schema_extra={"example": 10000})
    hidden: int = Field(32, ge=1, description="Hidden width of each expert MLP.", json_schema_extra={"example": 32})
    epochs: int = Field(200, ge=1, description="Expert training epochs.", json_schema_extra={"example": 200})
    learning_rate: float = Field(1e-3, gt=0, description="Expert Adam step size.", json_schema_extra={"example": 1e-3})
    batch_size: int = Field(128, ge=1, description="Expert training minibatch.", json_schema_extra={"example": 128})
    bootstrap: int = Field(1000, ge=1, description="Bootstrap resamples for the standard error of the gap.", json_schema_extra={"example": 1000})
    sweep_ratios: FloatList = Field(
        default_factory=lambda: [1.0, 2.0, 4.0],
        description="d/sigma grid for the sweep (sigma = d / ratio).",
        json_schema_extra={"example": [1.0, 2.0, 4.0]},
    )
    seed: int = Field(0, description="Root seed.", json_schema_extra={"example": 0})

    model_config = {
        "extra": "forbid",
        "json_schema_extra": {
            "examples": [{"dims": 8, "separation": 4.0, "sigma": 1.0, "radius": 1.0, "eval_samples": 10000, "seed": 0}]
        },
    }

    @model_validator(mode="after")
    def _check_geometry(self) -> "MixtureSpec":
        for name in ("mu1", "mu2"):
            mean = getattr(self, name)
            if mean is not None and len(mean) != self.dims:
                raise ValueError(f"{name} has {len(mean)} coordinates, expected {self.dims}")
        if self.mu1 is not None and self.mu2 is not None:
            distance = float(np.linalg.norm(np.subtract(self.mu1, self.mu2)))
            if abs(distance - self.separation) > 1e-9 * max(1.0, distance):
                raise ValueError(f"separation {self.separation} disagrees with |mu1 - mu2| = {distance}")
        if 2.0 * self.radius > self.separation:
            raise ValueError(f"radius d={self.radius} violates 2d <= B with B={self.separation}")
        return self

    def means(self) -> tuple:
        mu1 = np.zeros(self.dims) if self.mu1 is None else np.asarray(self.mu1, dtype=np.float64)
        if self.mu2 is not None:
            mu2 = np.asarray(self.mu2, dtype=np.float64)
        else:
            mu2 = mu1.copy()
            mu2[0] += self.separation
        return mu1, mu2
