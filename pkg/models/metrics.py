from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class MetricsMatrix(BaseModel):
    """Accuracy matrix a[i][j] (1-based in prose, 0-based here) for i <= j.

    Row i is the block whose test nodes are scored, column j the block after
    whose training the score was taken. Cells above the diagonal stay None.
    """

    t: int = Field(..., ge=1, description="Block count.", json_schema_extra={"example": 2})
    cells: List[List[Optional[float]]] = Field(
        default_factory=list,
        description="Row-major t x t matrix; only cells with i <= j are defined.",
        json_schema_extra={"example": [[1.0, 0.8], [None, 0.9]]},
    )

    model_config = {"json_schema_extra": {"examples": [{"t": 2, "cells": [[1.0, 0.8], [None, 0.9]]}]}}

    @classmethod
    def empty(cls, t: int) -> "MetricsMatrix":
        return cls(t=t, cells=[[None] * t for _ in range(t)])

    def get(self, i: int, j: int) -> Optional[float]:
        """1-based access."""
        return self.cells[i - 1][j - 1]

    def defined_cells(self) -> List[float]:
        return [self.cells[i][j] for i in range(self.t) for j in range(i, self.t) if self.cells[i][j] is not None]

    def diagonal(self) -> List[Optional[float]]:
        return [self.cells[i][i] for i in range(self.t)]


class WallTimes(BaseModel):
    train_seconds: List[float] = Field(default_factory=list, description="Training wall time per block.", json_schema_extra={"example": [3.2, 4.1]})
    epoch_seconds: List[float] = Field(default_factory=list, description="Mean wall time of one training epoch, per block.", json_schema_extra={"example": [0.08, 0.1]})
    inference_seconds: List[float] = Field(default_factory=list, description="Evaluation wall time per block.", json_schema_extra={"example": [0.4, 0.6]})


class MetricsReport(BaseModel):
    """Content of metrics.json."""

    method: str = Field(..., description="dymoe, pretrain, online or retrain.", json_schema_extra={"example": "dymoe"})
    seed: int = Field(..., description="Root seed of the run.", json_schema_extra={"example": 0})
    t: int = Field(..., ge=1, description="Block count.", json_schema_extra={"example": 5})
    matrix: List[float] = Field(..., description="Defined cells in row-major order.", json_schema_extra={"example": [1.0, 0.8, 0.9]})
    cells: List[List[Optional[float]]] = Field(..., description="Full matrix with None above the diagonal.")
    AA: float = Field(..., description="Average accuracy over the diagonal.", json_schema_extra={"example": 0.95})
    AF: float = Field(..., description="Average forgetting (signed drift of old-block accuracy).", json_schema_extra={"example": -0.05})
    final_AA: Optional[float] = Field(None, description="Mean accuracy over all blocks after the last one is learned.", json_schema_extra={"example": 0.85})
    diagonal: List[float] = Field(..., description="a[i][i] per block.", json_schema_extra={"example": [1.0, 0.9]})
    wall_times: WallTimes = Field(default_factory=WallTimes, description="Timing per block.")
    settings: Dict[str, Any] = Field(default_factory=dict, description="k, p, mode, gamma, delta and friends.", json_schema_extra={"example": {"k": 3, "p": 0.05}})
    gate_accuracy: Optional[float] = Field(None, description="Layer-1 routing accuracy on test nodes (dymoe only).", json_schema_extra={"example": 0.87})
    evaluation: str = Field(
        "sampled neighborhoods, same fan-out as training",
        description="How neighborhoods were formed at evaluation time.",
    )
    leakage_violations: int = Field(0, ge=0, description="Accesses to future blocks seen by the audit.", json_schema_extra={"example": 0})
