

import json
import logging
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, Optional

from langgraph.graph import StateGraph, END

from core.problem import GraspProblem
from utils.problem_io import atomic_write_text
from utils.state_models import (
    EXIT_INTERNAL,
    RunState,
    STAGES,
    add_error,
    create_initial_state,
    get_processing_summary,
    has_errors,
    update_stage_status,
)
from stages.multistart_optimizer import run_multistart
from stages.contact_repair import repair_contacts
from stages.surface_refiner import refine_surfaces
from stages.solution_writer import write_solutions

logger = logging.getLogger(__name__)


class GripperDesignWorkflow:
    """
    LangGraph workflow for gripper co-design.
    Runs the multi-start search, contact repair, surface refinement and output stages.
    """

    def __init__(self):
        self.graph = None
        self.compiled_workflow = None
        self._setup_workflow()

    def _setup_workflow(self):
        logger.info("Setting up gripper design LangGraph workflow...")

        self.graph = StateGraph(RunState)

        self.graph.add_node("multistart_optimizer", self._multistart_node)
        self.graph.add_node("contact_repair", self._contact_repair_node)
        self.graph.add_node("surface_refiner", self._surface_refiner_node)
        self.graph.add_node("solution_writer", self._solution_writer_node)

        # Nothing to post-process: go straight to the writer
        self.graph.add_conditional_edges(
            "multistart_optimizer",
            self._route_after_optimizer,
            {"repair": "contact_repair", "write": "solution_writer"},
        )
        self.graph.add_edge("contact_repair", "surface_refiner")
        self.graph.add_edge("surface_refiner", "solution_writer")
        self.graph.add_edge("solution_writer", END)

        self.graph.set_entry_point("multistart_optimizer")

        try:
            self.compiled_workflow = self.graph.compile()
            logger.info("✅ LangGraph workflow compiled successfully")
        except Exception as e:
            logger.error(f"❌ Failed to compile workflow: {e}")
            raise

    @staticmethod
    def _route_after_optimizer(state: RunState) -> str:
        return "repair" if state.get("candidates") else "write"

    def _run_stage(
        self,
        state: RunState,
        stage_name: str,
        stage: Callable[[RunState], RunState],
        icon: str,
    ) -> RunState:
        """Node wrapper: status bookkeeping, timing and error capture around one stage."""
        logger.info(f"{icon} Starting {stage_name}")
        start_time = time.time()

        try:
            state = update_stage_status(state, stage_name, "processing")
            result_state = stage(state)
            processing_time = time.time() - start_time
            result_state = update_stage_status(result_state, stage_name, "complete", processing_time)
            logger.info(f"✅ {stage_name} completed in {processing_time:.2f}s")
            return result_state

        except Exception as e:
            logger.error(f"❌ {stage_name} failed: {e}")
            return add_error(state, stage_name, "processing_error", str(e), recoverable=False)

    def _multistart_node(self, state: RunState) -> RunState:
        return self._run_stage(state, "multistart_optimizer", run_multistart, "🚀")

    def _contact_repair_node(self, state: RunState) -> RunState:
        return self._run_stage(state, "contact_repair", repair_contacts, "🔧")

    def _surface_refiner_node(self, state: RunState) -> RunState:
        return self._run_stage(state, "surface_refiner", refine_surfaces, "📐")

    def _solution_writer_node(self, state: RunState) -> RunState:
        result_state = state.copy()
        for stage_name in ("contact_repair", "surface_refiner"):
            if (state.get("stage_statuses") or {}).get(stage_name) == "waiting":
                result_state = update_stage_status(result_state, stage_name, "skipped")
        result_state = self._run_stage(result_state, "solution_writer", write_solutions, "💾")

        if result_state.get("processing_status") != "error":
            result_state["processing_status"] = "complete"
        result_state["completion_timestamp"] = datetime.now().isoformat()
        result_state["processing_time"] = sum((result_state.get("stage_processing_times") or {}).values())
        return result_state

    def run(self, problem: GraspProblem, output_dir: Optional[str] = None, problem_source: str = "api") -> RunState:
        """
        Run the complete pipeline on one problem.

        Args:
            problem: Problem with its resolved parameters
            output_dir: Directory for solution files and manifests, or None
            problem_source: Where the problem came from, for the run summary

        Returns:
            Final state; exit_code is always set
        """
        logger.info(f"🚀 Starting gripper design workflow for {problem.name!r}")
        initial_state = create_initial_state(problem, output_dir, problem_source)

        try:
            final_state = self.compiled_workflow.invoke(initial_state)
        except Exception as e:
            logger.error(f"❌ Workflow execution failed: {e}")
            final_state = add_error(initial_state, "workflow", "execution_error", str(e), False)

        if has_errors(final_state):
            final_state["exit_code"] = EXIT_INTERNAL
        elif final_state.get("exit_code") is None:
            final_state["exit_code"] = EXIT_INTERNAL

        summary = get_processing_summary(final_state)
        if output_dir:
            path = Path(output_dir) / "run_summary.json"
            atomic_write_text(path, json.dumps(summary, indent=2, default=str))
            final_state["written_files"] = list(final_state.get("written_files") or []) + [str(path)]

        if final_state["exit_code"] == 0:
            logger.info(f"✅ Workflow completed: {summary['survivor_count']} survivors in {summary['total_time']:.2f}s")
        else:
            logger.warning(f"⚠️ Workflow finished with exit code {final_state['exit_code']}")
        return final_state

    def get_workflow_info(self) -> Dict[str, Any]:
        return {
            "stages": list(STAGES),
            "workflow_type": "sequential with early exit",
            "total_nodes": len(STAGES),
            "entry_point": STAGES[0],
            "compiled": self.compiled_workflow is not None,
        }


# ================================
# GLOBAL WORKFLOW INSTANCE
# ================================

_workflow_instance = None


def get_workflow() -> GripperDesignWorkflow:
    """
    Get or create the global workflow instance.

    Returns:
        GripperDesignWorkflow instance
    """
    global _workflow_instance
    if _workflow_instance is None:
        _workflow_instance = GripperDesignWorkflow()
    return _workflow_instance


def run_design_pipeline(
    problem: GraspProblem,
    output_dir: Optional[str] = None,
    problem_source: str = "api",
) -> RunState:
    """Convenience function: run the shared workflow on a problem."""
    return get_workflow().run(problem, output_dir, problem_source)
