from __future__ import annotations

from typing import List, Literal, Optional

from pydantic import BaseModel, Field

from .config import MixtureSpec


class SweepPoint(BaseModel):
    ratio: float = Field(..., description="d / sigma at this point.", json_schema_extra={"example": 2.0})
    sigma: float = Field(..., description="Standard deviation used.", json_schema_extra={"example": 0.5})
    e_pi: float = Field(..., description="Mean loss of the summed-logit combiner.", json_schema_extra={"example": 1.9})
    e_dy: float = Field(..., description="Mean loss of the gated combiner.", json_schema_extra={"example": 0.2})
    delta: float = Field(..., description="e_pi - e_dy.", json_schema_extra={"example": 1.7})
    stderr: float = Field(..., description="Bootstrap standard error of delta.", json_schema_extra={"example": 0.01})


class TheoremReport(BaseModel):
    """Content of theorem_report.json."""

    spec: MixtureSpec = Field(..., description="Mixture setup that was run.")
    e_pi: float = Field(..., description="Monte-Carlo mean cross-entropy of softmax(f1 + f2).", json_schema_extra={"example": 1.93})
    e_dy: float = Field(..., description="Monte-Carlo mean cross-entropy of softmax(a1 f1 + a2 f2).", json_schema_extra={"example": 0.21})
    delta: float = Field(..., description="e_pi - e_dy.", json_schema_extra={"example": 1.72})
    stderr: float = Field(..., description="Bootstrap standard error of delta.", json_schema_extra={"example": 0.012})
    verdict: Literal["holds", "inconclusive", "violated"] = Field(
        ...,
        description="holds: delta > 3 stderr; violated: delta < -3 stderr; otherwise inconclusive.",
        json_schema_extra={"example": "holds"},
    )
    variance_source: str = Field(
        "generator sigma (known), not a batch-normalization estimate",
        description="Where the gate's sigma comes from.",
    )
    sweep: List[SweepPoint] = Field(default_factory=list, description="Per-point gap table for the d/sigma sweep.")
    sweep_monotone: Optional[bool] = Field(
        None,
        description="Whether delta is nondecreasing over the sweep within one standard error.",
        json_schema_extra={"example": True},
    )


class ReportRow(BaseModel):
    """One row of the combined report CSV."""

    run: str = Field(..., description="Run directory name.", json_schema_extra={"example": "dymoe_seed0"})
    method: str = Field(..., description="Method name.", json_schema_extra={"example": "dymoe"})
    seed: int = Field(..., description="Root seed.", json_schema_extra={"example": 0})
    k: Optional[int] = Field(None, description="Active experts.", json_schema_extra={"example": 3})
    p: Optional[float] = Field(None, description="Memory fraction.", json_schema_extra={"example": 0.05})
    mode: Optional[str] = Field(None, description="Gate mode.", json_schema_extra={"example": "sparse"})
    AA: float = Field(..., description="Average accuracy.", json_schema_extra={"example": 0.81})
    AF: float = Field(..., description="Average forgetting.", json_schema_extra={"example": -0.04})
    diagonal: List[float] = Field(default_factory=list, description="a[i][i] per block.")
    wall_seconds: float = Field(0.0, description="Total training wall time.", json_schema_extra={"example": 42.0})
    final_AA: Optional[float] = Field(None, description="Mean accuracy after the last block.", json_schema_extra={"example": 0.78})
