"""
Utilities package for Gripper Co-Design.
Contains configuration, errors, problem and solution files, run state and rendering helpers.
"""

from .config import OptimizationParams, ParameterConfig, default_parameters, load_parameters
from .errors import (
    GripperDesignError,
    NoSurvivingCandidateError,
    ProblemParseError,
    ProblemValidationError,
    SchemaVersionError,
    StructuralFailure,
    ThetaBoundsError,
)
from .state_models import (
    RunState,
    ProcessingError,
    create_initial_state,
    update_stage_status,
    add_error,
    add_warning,
    is_processing_complete,
    has_errors,
    calculate_progress,
    get_processing_summary,
)

__all__ = [
    # Configuration
    "OptimizationParams",
    "ParameterConfig",
    "default_parameters",
    "load_parameters",

    # Errors
    "GripperDesignError",
    "NoSurvivingCandidateError",
    "ProblemParseError",
    "ProblemValidationError",
    "SchemaVersionError",
    "StructuralFailure",
    "ThetaBoundsError",

    # Run State
    "RunState",
    "ProcessingError",
    "create_initial_state",
    "update_stage_status",
    "add_error",
    "add_warning",
    "is_processing_complete",
    "has_errors",
    "calculate_progress",
    "get_processing_summary",
]
