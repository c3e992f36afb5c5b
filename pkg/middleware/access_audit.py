"""No-future-leakage instrumentation around graph access.

Every graph view carries a block limit. Views report the block index of
each node and edge they hand out; the audit counts anything beyond the limit.
"""

from __future__ import annotations

import logging
import threading

import numpy as np

from framework.errors import LeakageError

logger = logging.getLogger(__name__)


class AccessAudit:
    def __init__(self) -> None:
        self.accesses = 0
        self.violations = 0
        self.max_block_seen = 0
        self._lock = threading.Lock()

    def observe(self, blocks: np.ndarray, limit: int, what: str = "node") -> None:
        blocks = np.asarray(blocks)
        if blocks.size == 0:
            return
        beyond = int(np.count_nonzero(blocks > limit))
        with self._lock:
            self.accesses += int(blocks.size)
            self.violations += beyond
            self.max_block_seen = max(self.max_block_seen, int(blocks.max()))
        if beyond:
            logger.error("%d %s access(es) beyond block %d", beyond, what, limit)

    def assert_clean(self) -> None:
        if self.violations:
            raise LeakageError(f"{self.violations} access(es) to nodes or edges from future blocks")

    def reset(self) -> None:
        with self._lock:
            self.accesses = self.violations = self.max_block_seen = 0
