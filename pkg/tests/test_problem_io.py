"""
Tests for problem and solution files.
"""

import json
import math

import numpy as np
import pytest

from utils.errors import ProblemParseError, ProblemValidationError, SchemaVersionError
from utils.problem_io import (
    load_problem,
    load_solution,
    parse_problem,
    problem_to_spec,
    read_problem,
    save_problem,
    save_solution,
)

HEADER = {"record": "header", "schema_version": 1, "name": "demo", "parameters": {"mu": 0.4}}
SQUARE = {"record": "object", "name": "block", "vertices": [[-1, -1], [1, -1], [1, 1], [-1, 1]]}


def _lines(*records):
    return [json.dumps(r) for r in records]


def _contacts(left_edge=3, right_edge=1, name="block"):
    return [
        {"record": "contact", "object": name, "edge": left_edge, "jaw": "L"},
        {"record": "contact", "object": name, "edge": right_edge, "jaw": "R"},
    ]


def test_parse_valid_problem():
    spec, warnings = parse_problem(_lines(HEADER, SQUARE, *_contacts()))
    assert warnings == []
    assert spec.name == "demo"
    assert [c.index for c in spec.contacts] == [0, 1]

    problem = spec.to_problem(use_environment=False)
    assert problem.params.mu == 0.4
    assert problem.n_objects == 1
    assert [c.jaw for c in problem.objects[0].contacts] == ["L", "R"]


def test_blank_lines_are_skipped():
    lines = ["", *_lines(HEADER), "   ", *_lines(SQUARE, *_contacts())]
    spec, _ = parse_problem(lines)
    assert len(spec.objects) == 1


def test_edge_out_of_range_names_the_field():
    with pytest.raises(ProblemValidationError) as info:
        parse_problem(_lines(HEADER, SQUARE, *_contacts(right_edge=7)))
    assert info.value.field_path == "contacts[1].edge"
    assert "references edge 7 but the polygon has 4 edges" in str(info.value)


def test_clockwise_polygon_is_reversed_with_warning():
    clockwise = dict(SQUARE, vertices=[[-1, -1], [-1, 1], [1, 1], [1, -1]])
    spec, warnings = parse_problem(_lines(HEADER, clockwise, *_contacts(left_edge=0, right_edge=2)))
    assert len(warnings) == 1 and "reversed" in warnings[0]
    assert [c.edge for c in spec.contacts] == [2, 0]

    problem = spec.to_problem(use_environment=False)
    polygon = problem.objects[0].polygon
    assert polygon.is_ccw()
    a, b = polygon.edge(2)
    assert a[0] == b[0] == -1.0


def test_schema_version_is_checked():
    with pytest.raises(SchemaVersionError):
        parse_problem(_lines(dict(HEADER, schema_version=2), SQUARE, *_contacts()))


def test_invalid_json_reports_line_number():
    lines = _lines(HEADER) + ["{not json"]
    with pytest.raises(ProblemParseError) as info:
        parse_problem(lines)
    assert info.value.line == 2


def test_header_must_come_first():
    with pytest.raises(ProblemParseError):
        parse_problem(_lines(SQUARE, HEADER))
    with pytest.raises(ProblemParseError):
        parse_problem([])


def test_unknown_fields_are_rejected():
    with pytest.raises(ProblemValidationError):
        parse_problem(_lines(HEADER, dict(SQUARE, colour="red"), *_contacts()))


def test_each_object_needs_both_jaws():
    one_jaw = [{"record": "contact", "object": "block", "edge": 3, "jaw": "L"}]
    with pytest.raises(ProblemValidationError) as info:
        parse_problem(_lines(HEADER, SQUARE, *one_jaw))
    assert "both jaws" in str(info.value)


def test_degenerate_polygon_is_rejected():
    bowtie = dict(SQUARE, vertices=[[0, 0], [1, 1], [1, 0], [0, 1]])
    with pytest.raises(ProblemValidationError) as info:
        parse_problem(_lines(HEADER, bowtie, *_contacts()))
    assert info.value.field_path == "objects[0].vertices"


def test_bad_parameter_value_names_the_parameter():
    with pytest.raises(ProblemValidationError) as info:
        parse_problem(_lines(dict(HEADER, parameters={"mu": -1.0}), SQUARE, *_contacts()))
    assert info.value.field_path == "parameters.mu"


def test_bounds_become_theta_overrides():
    bounds = {"record": "bounds", "object": "block", "theta_deg": [-10.0, 20.0]}
    spec, _ = parse_problem(_lines(HEADER, SQUARE, *_contacts(), bounds))
    problem = spec.to_problem(use_environment=False)
    low, high = problem.theta_bounds()[0]
    assert math.isclose(low, math.radians(-10.0))
    assert math.isclose(high, math.radians(20.0))


def test_problem_file_round_trip(tmp_path):
    obstacle = {"record": "obstacle", "object": "block", "vertices": [[-0.5, 1.5], [0.5, 1.5], [0.0, 2.0]]}
    spec, _ = parse_problem(_lines(HEADER, SQUARE, obstacle, *_contacts()))
    path = save_problem(spec, tmp_path / "demo.jsonl")

    loaded = load_problem(path)
    assert loaded == spec
    first_line = json.loads(path.read_text().splitlines()[0])
    assert first_line["record"] == "header" and first_line["schema_version"] == 1


def test_problem_to_spec_matches_in_memory_problem(two_rectangles, tmp_path):
    spec = problem_to_spec(two_rectangles)
    path = save_problem(spec, tmp_path / "two.jsonl")
    reread, warnings = read_problem(path)
    assert warnings == []
    rebuilt = reread.to_problem(use_environment=False)
    assert [o.name for o in rebuilt.objects] == ["wide", "narrow"]
    assert np.allclose(rebuilt.objects[1].world_origin, two_rectangles.objects[1].world_origin)


def test_missing_file_is_a_parse_error(tmp_path):
    with pytest.raises(ProblemParseError):
        read_problem(tmp_path / "missing.jsonl")


def test_solution_round_trip(square_solution, square_problem, tmp_path):
    path = save_solution(square_solution, tmp_path / "solution_0.jsonl")
    loaded = load_solution(path)

    assert loaded.header.kind == "solution"
    assert loaded.header.rank == 0 and loaded.header.seed == 99
    assert np.allclose(loaded.z(), square_solution.z())
    assert loaded.params == square_problem.params
    assert loaded.surface().phase == "main"
    assert loaded.surface("refined") is None
    assert np.allclose(loaded.surface().V, square_solution.surface().V)
    assert loaded.objective.grasp_quality_total is None
    assert loaded.status.stage_a == "skipped"

    rebuilt = loaded.to_problem()
    assert rebuilt.objects[0].name == "square"
    assert rebuilt.params == square_problem.params


def test_problem_file_is_not_a_solution(tmp_path):
    spec, _ = parse_problem(_lines(HEADER, SQUARE, *_contacts()))
    path = save_problem(spec, tmp_path / "demo.jsonl")
    with pytest.raises(ProblemValidationError):
        load_solution(path)
