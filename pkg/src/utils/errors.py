"""
Exception types for the gripper co-design toolkit.

QP-level failures are reported through result statuses instead of exceptions;
the classes below cover malformed input, geometry that cannot be
parameterised, and pipeline outcomes the CLI maps to exit codes.
"""

from typing import Any, Dict, List, Optional


class GripperDesignError(Exception):
    """Base class for all toolkit errors."""


class GeometryError(GripperDesignError):
    """Invalid polygon, degenerate edge, or missing contacts."""


class ThetaBoundsError(GripperDesignError):
    """No orientation admits a squeeze grasp for the given contact assignment."""


class StructuralFailure(GripperDesignError):
    """
    A configuration for which the QP matrices cannot be formed.

    Raised for horizontal contact tangents and contacts outside the grid span.
    The violation magnitude feeds the finite penalty used by the outer search.
    """

    def __init__(self, message: str, violation: float = 1.0):
        super().__init__(message)
        self.violation = float(violation)


class ProblemParseError(GripperDesignError):
    """A problem or solution file is not valid line-delimited JSON."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ProblemValidationError(GripperDesignError):
    """A parsed record violates the schema or a geometric invariant."""

    def __init__(self, message: str, field_path: str = ""):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field_path = field_path


class SchemaVersionError(GripperDesignError):
    """The file declares a schema version this build cannot read."""


class RenderError(GripperDesignError):
    """Unknown render mode or unrenderable solution."""


class NoSurvivingCandidateError(GripperDesignError):
    """Every multi-start run failed structurally."""

    def __init__(self, message: str, diagnostics: Optional[List[Dict[str, Any]]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
