"""Exception hierarchy shared across the kit.

Each error carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""

from __future__ import annotations


class RasaError(Exception):
    exit_code = 1


class UsageError(RasaError):
    exit_code = 2


# graph-core
class IndexOutOfRange(RasaError, IndexError):
    pass


class DuplicateEdge(RasaError, ValueError):
    pass


# numerics
class ShapeMismatch(RasaError, ValueError):
    pass


class TapeReplayed(RasaError, RuntimeError):
    pass


class NonFinite(RasaError, FloatingPointError):
    pass


# attention
class EmptyTraceList(RasaError, ValueError):
    pass


# model
class InvalidConfig(UsageError, ValueError):
    pass


class EmptyGoldSet(RasaError, ValueError):
    pass


# data
class DegreeInfeasible(RasaError, ValueError):
    exit_code = 3


class GenerationStalled(RasaError, RuntimeError):
    exit_code = 3


class ParseError(RasaError, ValueError):
    exit_code = 5

    def __init__(self, message: str, line_number: int | None = None, line: str | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}: {line!r}"
        super().__init__(message)
        self.line_number = line_number
        self.line = line


class UnknownEntity(RasaError, KeyError):
    exit_code = 5

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown entity"


# train-eval / cli
class EmptySplit(RasaError, ValueError):
    pass


class ArtifactMismatch(RasaError, ValueError):
    exit_code = 4
