from __future__ import annotations

from typing import List, Literal, Optional

from pydantic import BaseModel, Field

SplitTag = Literal["train", "valid", "test"]


class NodeRecord(BaseModel):
    """One row of nodes.tsv."""

    node_id: str = Field(
        ...,
        description="External node id; dense integer ids are assigned in file order.",
        json_schema_extra={"example": "17"},
    )
    block: int = Field(
        ...,
        ge=1,
        description="Block index b(v) in which the node first appears.",
        json_schema_extra={"example": 2},
    )
    label: int = Field(
        ...,
        ge=0,
        description="Class label.",
        json_schema_extra={"example": 3},
    )
    split: Optional[SplitTag] = Field(
        None,
        description="train/valid/test tag; absent means a 60/20/20 per-block split is drawn.",
        json_schema_extra={"example": "train"},
    )
    features: List[float] = Field(
        ...,
        min_length=1,
        description="Feature vector x.",
        json_schema_extra={"example": [0.1, -1.3, 2.0]},
    )


class EdgeRecord(BaseModel):
    """One row of edges.tsv."""

    src: str = Field(..., description="External id of one endpoint.", json_schema_extra={"example": "17"})
    dst: str = Field(..., description="External id of the other endpoint.", json_schema_extra={"example": "4"})
    block: Optional[int] = Field(
        None,
        ge=1,
        description="Arrival block; defaults to the later endpoint's block.",
        json_schema_extra={"example": 2},
    )
