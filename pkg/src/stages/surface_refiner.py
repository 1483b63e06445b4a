

import logging
import time

from core.postprocess import FAILURE, REFINED, stage_b
from utils.state_models import RunState, add_warning

logger = logging.getLogger(__name__)


def refine_surfaces(state: RunState) -> RunState:
    """
    Stage B: exact surface re-solve for every candidate that passed contact repair.

    Args:
        state: Current workflow state with repaired candidates

    Returns:
        Updated state whose survivors carry the refined surface and its diagnostics
    """
    logger.info("📐 Surface refiner starting...")
    problem = state["problem"]
    result_state = state.copy()
    survivors = []

    for candidate in state.get("repaired") or []:
        if candidate.get("repair_status") == FAILURE:
            continue
        refined = dict(candidate)
        started = time.time()
        refinement = stage_b(refined["z"], problem, refined.get("surface"))
        refined["refinement"] = refinement
        refined["postprocess_time"] = refined.get("postprocess_time", 0.0) + time.time() - started
        if refinement["status"] != REFINED:
            result_state = add_warning(
                result_state, "surface_refiner",
                f"Candidate {refined['rank']} discarded: {refinement['message']}",
            )
            continue
        refined["refined_surface"] = refinement["surface"]
        if not refinement["contact_exact"]:
            refined["message"] = refinement["message"]
            result_state = add_warning(result_state, "surface_refiner",
                                       f"Candidate {refined['rank']}: {refinement['message']}")
        logger.debug(
            f"candidate {refined['rank']}: contact residual {refinement['contact_residual']:.2e}, "
            f"bound violation {refinement['bound_violation']:.2e}"
        )
        survivors.append(refined)

    logger.info(f"✅ {len(survivors)} candidates survived post-processing")
    result_state["survivors"] = survivors
    return result_state
