

import logging
import time

from core.alm import multistart_optimize
from utils.errors import NoSurvivingCandidateError
from utils.state_models import EXIT_NO_SURVIVOR, RunState, add_error, add_warning

logger = logging.getLogger(__name__)


def run_multistart(state: RunState) -> RunState:
    """
    Main optimization phase: independent augmented Lagrangian runs from randomised starts.

    Args:
        state: Current workflow state containing the problem

    Returns:
        Updated state with candidates ranked best first; when every start
        fails structurally the candidate list is empty and the exit code is set
    """
    logger.info("🚀 Multi-start optimizer starting...")
    problem = state["problem"]
    params = problem.params
    started = time.time()

    try:
        candidates = multistart_optimize(problem)
    except NoSurvivingCandidateError as e:
        result_state = state.copy()
        result_state["candidates"] = []
        result_state["exit_code"] = EXIT_NO_SURVIVOR
        for diagnostic in e.diagnostics:
            logger.debug(f"start {diagnostic['start_index']}: {diagnostic['message']}")
        return add_error(result_state, "multistart_optimizer", "no_surviving_candidate", str(e), recoverable=True)

    result_state = state.copy()
    result_state["candidates"] = candidates

    failed = sum(1 for c in candidates if c["structural"])
    if failed:
        result_state = add_warning(
            result_state, "multistart_optimizer", f"{failed} of {params.starts} starts ended in a structural failure"
        )

    best = candidates[0]
    logger.info(
        f"✅ {len(candidates) - failed} candidates in {time.time() - started:.2f}s; "
        f"best L*={best['value']:.6g} (start {best['start_index']})"
    )
    return result_state
