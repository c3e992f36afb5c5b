from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Optional, TextIO

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

TRAIN_LOG_COLUMNS = ["block", "stage", "epoch", "l_cls", "l_bl", "l_gbl", "total"]


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


class TrainLog:
    """One CSV row per epoch. Without a path it only keeps rows in memory."""

    def __init__(self, path: Optional[Path] = None):
        self.rows: list = []
        self._handle: Optional[TextIO] = None
        self._writer = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = open(path, "w", newline="", encoding="utf-8")
            self._writer = csv.writer(self._handle)
            self._writer.writerow(TRAIN_LOG_COLUMNS)

    def write(self, block: int, stage: int, epoch: int, l_cls: float, l_bl: float, l_gbl: float, total: float) -> None:
        row = [block, stage, epoch, f"{l_cls:.6f}", f"{l_bl:.6f}", f"{l_gbl:.6f}", f"{total:.6f}"]
        self.rows.append(row)
        if self._writer is not None:
            self._writer.writerow(row)
            self._handle.flush()

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __enter__(self) -> "TrainLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
