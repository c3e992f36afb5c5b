from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class RunManifest(BaseModel):
    """Provenance record written next to every command's outputs."""

    status: int = Field(description="Numeric status (0 for success, else the exit code).")
    status_message: str = Field(description="Human-readable status message.")
    timestamp: str = Field(description="Timestamp in ISO 8601 format (UTC).")
    host: str = Field(description="Host name of the machine that produced the outputs.")
    command: str = Field(description="synth, run, theorem or report.")
    seed: Optional[int] = Field(default=None, description="Root seed echoed from the config.")
    settings: Dict[str, Any] = Field(default_factory=dict, description="Validated configuration that was used.")
    outputs: List[str] = Field(default_factory=list, description="Files written by the command.")

    model_config = {
        "json_schema_extra": {
            "example": {
                "status": 0,
                "status_message": "OK",
                "timestamp": "2025-09-02T12:34:56Z",
                "host": "desk-01",
                "command": "synth",
                "seed": 7,
                "settings": {"num_blocks": 5},
                "outputs": ["nodes.tsv", "edges.tsv"],
            }
        }
    }
