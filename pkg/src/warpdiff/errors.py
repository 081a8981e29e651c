"""Exception hierarchy shared by all warpdiff modules."""

from __future__ import annotations


class WarpDiffError(Exception):
    """Base class; the CLI maps any uncaught subclass to exit code 2."""


# core model / analysis
class NonPositiveEntry(WarpDiffError, ValueError):
    pass


class TooFewRuntimes(WarpDiffError, ValueError):
    pass


class DuplicateId(WarpDiffError, ValueError):
    pass


class EmptyMatrix(WarpDiffError, ValueError):
    pass


class DimensionMismatch(WarpDiffError, ValueError):
    pass


class DegenerateOracle(WarpDiffError, ValueError):
    pass


class MissingCase(WarpDiffError, KeyError):
    pass


class MissingRuntime(WarpDiffError, KeyError):
    pass


class AllStagesNonPositive(WarpDiffError, ValueError):
    pass


# executor
class SpawnFailure(WarpDiffError, OSError):
    pass


class ProbeParseFailure(WarpDiffError, ValueError):
    pass


# corpus
class ParseError(WarpDiffError, ValueError):
    pass


class ValidationError(WarpDiffError, ValueError):
    """Manifest content is invalid. ``path`` locates the offending field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class CompilerSpawnFailure(WarpDiffError, OSError):
    pass


class CompileFailure(WarpDiffError):
    def __init__(self, case_id: str, returncode: int, stderr: str):
        self.case_id = case_id
        self.returncode = returncode
        self.stderr = stderr
        super().__init__(f"compiling {case_id!r} failed with exit code {returncode}")


# simulator
class IndexOutOfRange(WarpDiffError, IndexError):
    pass
