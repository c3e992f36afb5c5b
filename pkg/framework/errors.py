from __future__ import annotations

from typing import Optional


class DyMoEError(Exception):
    """Base error. Carries the process exit code the CLI reports for it."""

    exit_code: int = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


# -----------------------------------------------------------------------------
# Configuration (exit 2)
# -----------------------------------------------------------------------------
class ConfigError(DyMoEError):
    exit_code = 2

    def __init__(self, detail: str, key: Optional[str] = None):
        super().__init__(detail)
        self.key = key


# -----------------------------------------------------------------------------
# Data (exit 3)
# -----------------------------------------------------------------------------
class DataError(DyMoEError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, detail: str, path: str = "", line: int = 0):
        super().__init__(f"{path}:{line}: {detail}" if path else detail)
        self.path = path
        self.line = line


class NodeReferenceError(DataError):
    pass


class EmptyClassError(DataError):
    pass


class EmptyBlockError(DataError):
    pass


class DegenerateSplitError(DataError):
    pass


# -----------------------------------------------------------------------------
# Invariants and numerics (exit 4)
# -----------------------------------------------------------------------------
class InvariantError(DyMoEError):
    exit_code = 4


class SequencingError(InvariantError):
    pass


class CompletenessError(InvariantError):
    pass


class LeakageError(InvariantError):
    pass


class ShapeError(InvariantError, ValueError):
    pass


class NumericError(InvariantError, ArithmeticError):
    pass


class RangeError(InvariantError, IndexError):
    """Block, expert, class or target index outside its valid range."""
