

import logging
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

from utils.problem_io import atomic_write_text, build_solution, save_solution
from utils.state_models import EXIT_NO_SURVIVOR, EXIT_SUCCESS, RunState

logger = logging.getLogger(__name__)

RANKING_COLUMNS = [
    "rank", "start_index", "seed", "value", "residual", "grasp_quality", "shape_cost",
    "stage_a", "stage_b", "survived", "solution_file", "optimize_time", "postprocess_time",
]


def solution_filename(rank: int) -> str:
    return f"solution_{rank}.jsonl"


def ranking_table(state: RunState) -> pd.DataFrame:
    """One row per multi-start candidate with its post-processing outcome."""
    processed = {c["rank"]: c for c in state.get("repaired") or []}
    survivors = {c["rank"]: c for c in state.get("survivors") or []}
    rows: List[Dict[str, Any]] = []
    for candidate in state.get("candidates") or []:
        rank = candidate["rank"]
        final = survivors.get(rank) or processed.get(rank) or candidate
        refinement = final.get("refinement") or {}
        rows.append({
            "rank": rank,
            "start_index": candidate["start_index"],
            "seed": candidate["seed"],
            "value": candidate["value"],
            "residual": candidate["residual"],
            "grasp_quality": candidate["grasp_quality_total"],
            "shape_cost": candidate["shape_cost"],
            "stage_a": final.get("repair_status", "structural_failure" if candidate["structural"] else "not_selected"),
            "stage_b": refinement.get("status", "not_run"),
            "survived": rank in survivors,
            "solution_file": solution_filename(rank) if rank in survivors else "",
            "optimize_time": candidate["elapsed"],
            "postprocess_time": final.get("postprocess_time", 0.0),
        })
    return pd.DataFrame(rows, columns=RANKING_COLUMNS)


def write_solutions(state: RunState) -> RunState:
    """
    Persist survivors and the ranking manifest, and settle the exit code.

    Args:
        state: Workflow state after post-processing

    Returns:
        Updated state with written file paths and exit code
    """
    logger.info("💾 Solution writer starting...")
    problem = state["problem"]
    survivors = state.get("survivors") or []
    result_state = state.copy()
    written = list(state.get("written_files") or [])

    output_dir = state.get("output_dir")
    if output_dir:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for candidate in survivors:
            solution = build_solution(candidate, problem)
            written.append(str(save_solution(solution, out / solution_filename(candidate["rank"]))))
        table = ranking_table(state)
        written.append(str(atomic_write_text(out / "ranking.csv", table.to_csv(index=False))))
        logger.info(f"📝 Wrote {len(survivors)} solution files to {out}")

    result_state["written_files"] = written
    if survivors:
        result_state["exit_code"] = EXIT_SUCCESS
    elif state.get("exit_code") is None:
        result_state["exit_code"] = EXIT_NO_SURVIVOR
    return result_state
