"""
State models for the gripper co-design LangGraph workflow.
Each pipeline stage reads from and writes to the run state.
"""

from typing import TypedDict, Optional, List, Dict, Any
from datetime import datetime
import logging

logger = logging.getLogger(__name__)

STAGES = ("multistart_optimizer", "contact_repair", "surface_refiner", "solution_writer")

EXIT_SUCCESS = 0
EXIT_VALIDATION = 2
EXIT_NO_SURVIVOR = 3
EXIT_INTERNAL = 4


class RunState(TypedDict):
    """
    State object that flows through the LangGraph workflow.
    """

    # ================================
    # INPUT DATA
    # ================================
    problem: Any                                  # GraspProblem with its parameters
    output_dir: Optional[str]                     # Where solution files are written
    problem_source: Optional[str]                 # Problem file path or sample name

    # ================================
    # STAGE 1: MULTI-START OPTIMIZER OUTPUTS
    # ================================
    candidates: Optional[List[Dict[str, Any]]]    # Ranked candidates, best first

    # ================================
    # STAGE 2: CONTACT REPAIR OUTPUTS
    # ================================
    repaired: Optional[List[Dict[str, Any]]]      # Candidates after Stage A (failures kept, flagged)

    # ================================
    # STAGE 3: SURFACE REFINER OUTPUTS
    # ================================
    survivors: Optional[List[Dict[str, Any]]]     # Candidates with refined surfaces

    # ================================
    # STAGE 4: SOLUTION WRITER OUTPUTS
    # ================================
    written_files: Optional[List[str]]            # Solution files and manifests
    exit_code: Optional[int]

    # ================================
    # WORKFLOW METADATA AND CONTROL
    # ================================
    processing_status: Optional[str]
    current_stage: Optional[str]
    stage_statuses: Optional[Dict[str, str]]
    progress_percentage: Optional[int]

    # ================================
    # ERROR HANDLING AND LOGGING
    # ================================
    errors: Optional[List[Dict[str, Any]]]
    warnings: Optional[List[Dict[str, str]]]
    processing_log: Optional[List[Dict[str, Any]]]

    # ================================
    # PERFORMANCE AND TIMING
    # ================================
    processing_time: Optional[float]
    stage_processing_times: Optional[Dict[str, float]]
    timestamp: Optional[str]
    completion_timestamp: Optional[str]


class ProcessingError(TypedDict):
    """Structure for processing errors."""
    stage: str
    error_type: str
    message: str
    timestamp: str
    recoverable: bool


# ================================
# STATE MANAGEMENT FUNCTIONS
# ================================

def create_initial_state(problem: Any, output_dir: Optional[str] = None, problem_source: str = "unknown") -> RunState:
    """
    Create initial state object for the workflow.

    Args:
        problem: GraspProblem to solve (carries its parameters)
        output_dir: Directory for solution files, or None to skip writing
        problem_source: Where the problem came from

    Returns:
        Initial RunState with all fields initialized
    """
    return RunState(
        problem=problem,
        output_dir=output_dir,
        problem_source=problem_source,

        candidates=None,
        repaired=None,
        survivors=None,
        written_files=[],
        exit_code=None,

        processing_status="initialized",
        current_stage=STAGES[0],
        stage_statuses={stage: "waiting" for stage in STAGES},
        progress_percentage=0,

        errors=[],
        warnings=[],
        processing_log=[],

        processing_time=None,
        stage_processing_times={},
        timestamp=datetime.now().isoformat(),
        completion_timestamp=None,
    )


def update_stage_status(
    state: RunState,
    stage_name: str,
    status: str,
    processing_time: Optional[float] = None
) -> RunState:
    """
    Update the status of a pipeline stage.

    Args:
        state: Current state object
        stage_name: Stage to update
        status: New status (waiting, processing, complete, skipped, error)
        processing_time: Time taken by this stage

    Returns:
        Updated state object
    """
    new_state = state.copy()
    new_state["stage_statuses"] = dict(state.get("stage_statuses") or {})
    new_state["stage_statuses"][stage_name] = status
    new_state["current_stage"] = stage_name
    new_state["progress_percentage"] = calculate_progress(new_state)

    if processing_time is not None:
        new_state["stage_processing_times"] = dict(state.get("stage_processing_times") or {})
        new_state["stage_processing_times"][stage_name] = processing_time

    new_state["processing_log"] = list(state.get("processing_log") or []) + [{
        "timestamp": datetime.now().isoformat(),
        "stage": stage_name,
        "status": status,
        "progress": new_state["progress_percentage"],
    }]

    logger.info(f"Stage {stage_name} status updated to {status} ({new_state['progress_percentage']}%)")
    return new_state


def add_error(
    state: RunState,
    stage_name: str,
    error_type: str,
    error_message: str,
    recoverable: bool = True
) -> RunState:
    """
    Add an error to the state; non-recoverable errors mark the run as failed.
    """
    new_state = state.copy()
    entry = ProcessingError(
        stage=stage_name,
        error_type=error_type,
        message=error_message,
        timestamp=datetime.now().isoformat(),
        recoverable=recoverable,
    )
    new_state["errors"] = list(state.get("errors") or []) + [entry]

    if not recoverable:
        new_state["processing_status"] = "error"
        new_state["stage_statuses"] = dict(state.get("stage_statuses") or {})
        new_state["stage_statuses"][stage_name] = "error"

    logger.error(f"Error in {stage_name}: {error_message}")
    return new_state


def add_warning(state: RunState, stage_name: str, warning_message: str) -> RunState:
    """Add a warning message to the state."""
    new_state = state.copy()
    new_state["warnings"] = list(state.get("warnings") or []) + [{
        "stage": stage_name,
        "message": warning_message,
        "timestamp": datetime.now().isoformat(),
    }]
    logger.warning(f"Warning from {stage_name}: {warning_message}")
    return new_state


def calculate_progress(state: RunState) -> int:
    """
    Overall progress from stage statuses.

    Returns:
        Progress percentage (0-100)
    """
    statuses = state.get("stage_statuses")
    if not statuses:
        return 0
    weights = {"waiting": 0, "processing": 0.5, "complete": 1.0, "skipped": 1.0, "error": 0}
    total = sum(weights.get(status, 0) for status in statuses.values())
    return min(int(total / len(statuses) * 100), 100)


def has_errors(state: RunState) -> bool:
    """Check if there are any non-recoverable errors."""
    return any(not error.get("recoverable", True) for error in state.get("errors") or [])


def is_processing_complete(state: RunState) -> bool:
    return (
        state.get("exit_code") is not None
        and state.get("processing_status") not in ("error", "cancelled")
        and calculate_progress(state) == 100
    )


def get_processing_summary(state: RunState) -> Dict[str, Any]:
    """
    Machine-readable summary of a run, written next to the solution files.

    Args:
        state: Final state object

    Returns:
        Dictionary with statuses, timings, counts and errors
    """
    return {
        "status": state.get("processing_status", "unknown"),
        "exit_code": state.get("exit_code"),
        "progress": calculate_progress(state),
        "stage_statuses": state.get("stage_statuses", {}),
        "total_time": state.get("processing_time") or 0.0,
        "stage_times": state.get("stage_processing_times", {}),
        "candidate_count": len(state.get("candidates") or []),
        "survivor_count": len(state.get("survivors") or []),
        "errors": list(state.get("errors") or []),
        "warnings": list(state.get("warnings") or []),
        "completed": is_processing_complete(state),
    }
