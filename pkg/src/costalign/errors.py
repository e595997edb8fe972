"""Domain exceptions shared across the toolkit.

Every error carries a short machine-readable ``code`` plus an optional
``context`` dict so the CLI can emit structured diagnostics without
string-matching messages.
"""

from __future__ import annotations


class CostalignError(Exception):
    """Base class for all domain errors raised by this package."""

    code = "Error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = dict(context)

    def to_json_dict(self) -> dict:
        return {"code": self.code, "message": str(self), "context": self.context}


class EmptyInput(CostalignError):
    code = "EmptyInput"


class PairMismatch(CostalignError):
    code = "PairMismatch"


class DegenerateGeometry(CostalignError):
    code = "DegenerateGeometry"


class InvalidParams(CostalignError):
    code = "InvalidParams"


class MissingBranch(CostalignError):
    code = "MissingBranch"


class EmptyAfterFilter(CostalignError):
    code = "EmptyAfterFilter"


class AmbiguousSide(CostalignError):
    code = "AmbiguousSide"


class MissingSide(CostalignError):
    code = "MissingSide"


class MissingSternum(CostalignError):
    code = "MissingSternum"


class GraphMismatch(CostalignError):
    code = "GraphMismatch"


class SparseNeighborhood(CostalignError):
    code = "SparseNeighborhood"


class NumericalFailure(CostalignError):
    code = "NumericalFailure"


class DimensionMismatch(CostalignError):
    code = "DimensionMismatch"


class ManifoldStarved(CostalignError):
    code = "ManifoldStarved"


class UndefinedBoundary(CostalignError):
    code = "UndefinedBoundary"


class UndefinedMetric(CostalignError):
    code = "UndefinedMetric"


class MissingFile(CostalignError):
    code = "MissingFile"
