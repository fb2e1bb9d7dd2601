"""Exception types shared across the package."""

from __future__ import annotations


class CellcovError(Exception):
    """Base class for domain failures (as opposed to usage errors)."""


class IngestError(CellcovError):
    """Raised when an input file cannot be ingested at all.

    Row-level problems (bad timestamp, bad number) are counted in the
    ingest stats instead and do not raise.
    """


class DegenerateHullError(CellcovError):
    """Raised when a convex hull does not exist for the input.

    Carries the number of input points so callers can report why the
    hull baseline was skipped.
    """

    def __init__(self, n_points: int):
        self.n_points = int(n_points)
        super().__init__(
            f"convex hull undefined for {self.n_points} point(s): "
            "need at least 3 non-collinear points"
        )


class ConvergenceError(CellcovError):
    """Raised when the dual solver exhausts its iteration budget."""

    def __init__(self, iterations: int, gap: float, tol: float):
        self.iterations = int(iterations)
        self.gap = float(gap)
        self.tol = float(tol)
        super().__init__(
            f"solver did not converge in {self.iterations} iterations: "
            f"KKT gap {self.gap:.3e} > tol {self.tol:.3e}"
        )


class ModelFormatError(CellcovError):
    """Raised for corrupt or structurally invalid model payloads."""


class ModelVersionError(ModelFormatError):
    """Raised when a model file declares an unsupported format version."""

    def __init__(self, found: str, expected: str):
        self.found = found
        self.expected = expected
        super().__init__(
            f"model format version mismatch: file has {found!r}, "
            f"this build reads {expected!r}"
        )


class EvaluationError(CellcovError):
    """Raised when an evaluation has no defined result at all."""
