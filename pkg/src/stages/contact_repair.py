

import logging
import time

from core.postprocess import FAILURE, stage_a
from utils.state_models import RunState, add_warning

logger = logging.getLogger(__name__)

SKIPPED = "skipped"


def repair_contacts(state: RunState) -> RunState:
    """
    Stage A on the top post_process candidates.

    With post_process = 0 the stage is skipped and every non-failed candidate
    moves on unchanged. Candidates whose repair fails are kept in the list,
    flagged, and dropped by the surface refiner.
    """
    logger.info("🔧 Contact repair starting...")
    problem = state["problem"]
    params = problem.params
    pool = [dict(c) for c in state.get("candidates") or [] if not c["structural"]]

    result_state = state.copy()
    if params.post_process == 0:
        for candidate in pool:
            candidate["repair_status"] = SKIPPED
        result_state["repaired"] = pool
        return add_warning(result_state, "contact_repair", "Contact repair skipped (post_process = 0)")

    repaired = []
    for candidate in pool[:params.post_process]:
        started = time.time()
        result = stage_a(candidate["z"], problem, params, params.rho_final)
        candidate["repair_status"] = result["status"]
        candidate["min_clearance"] = result["min_clearance"]
        candidate["postprocess_time"] = time.time() - started
        if result["status"] == FAILURE:
            candidate["message"] = result["message"]
            result_state = add_warning(
                result_state, "contact_repair",
                f"Candidate {candidate['rank']} discarded: {result['message']}",
            )
        else:
            candidate["z"] = result["z"]
        repaired.append(candidate)

    kept = sum(1 for c in repaired if c["repair_status"] != FAILURE)
    logger.info(f"✅ Contact repair kept {kept} of {len(repaired)} candidates")
    result_state["repaired"] = repaired
    return result_state
