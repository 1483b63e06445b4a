"""
Problem and solution files.

Both are JSON Lines. The first line is a header record carrying the schema
version; every other line is a record typed by its "record" field. Solution
files embed the problem records so they can be re-rendered without the
original problem file.
"""

import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError
from typing_extensions import Annotated

from core.geometry import ContactAssignment, Polygon, Pose2D, validate_polygon
from core.problem import GraspObject, GraspProblem
from utils.config import OptimizationParams, ParameterConfig, load_parameters
from utils.errors import GeometryError, ProblemParseError, ProblemValidationError, SchemaVersionError

logger = logging.getLogger(__name__)

Point2 = Tuple[float, float]


class _Record(BaseModel):
    model_config = ConfigDict(extra="forbid")


class HeaderRecord(_Record):
    record: Literal["header"] = "header"
    schema_version: int
    kind: Literal["problem", "solution"] = "problem"
    name: str = "problem"
    parameters: Dict[str, Any] = Field(default_factory=dict)
    rank: Optional[int] = None
    start_index: Optional[int] = None
    seed: Optional[int] = None


class ObjectRecord(_Record):
    record: Literal["object"] = "object"
    name: str
    vertices: List[Point2] = Field(min_length=3)
    origin: Point2 = (0.0, 0.0)
    pose: Tuple[float, float, float] = (0.0, 0.0, 0.0)


class ObstacleRecord(_Record):
    record: Literal["obstacle"] = "obstacle"
    object: str
    vertices: List[Point2] = Field(min_length=3)


class ContactRecord(_Record):
    record: Literal["contact"] = "contact"
    object: str
    edge: int = Field(ge=0)
    jaw: Literal["L", "R"]
    index: Optional[int] = None


class BoundsRecord(_Record):
    record: Literal["bounds"] = "bounds"
    object: str
    theta_deg: Point2


class GraspRecord(_Record):
    record: Literal["grasp"] = "grasp"
    object: str
    position: Point2
    theta: float
    gamma: float
    d: List[float]
    contacts: List[Dict[str, Any]] = Field(default_factory=list)


class SurfaceRecord(_Record):
    record: Literal["surface"] = "surface"
    phase: Literal["main", "refined"]
    y: List[float]
    V: List[float]
    M: List[float]


class ObjectiveRecord(_Record):
    record: Literal["objective"] = "objective"
    value: Optional[float] = None
    grasp_quality: List[Dict[str, Any]] = Field(default_factory=list)
    grasp_quality_total: Optional[float] = None
    shape_cost: Optional[float] = None
    refined_shape_cost: Optional[float] = None


class ResidualsRecord(_Record):
    record: Literal["residuals"] = "residuals"
    alm_residual: Optional[float] = None
    contact_residual: Optional[float] = None
    bound_violation: Optional[float] = None
    min_clearance: Optional[float] = None
    violations_before: Optional[int] = None
    violations_after: Optional[int] = None


class StatusRecord(_Record):
    record: Literal["status"] = "status"
    stage_a: str
    stage_b: str
    message: str = ""


AnyRecord = Annotated[
    Union[HeaderRecord, ObjectRecord, ObstacleRecord, ContactRecord, BoundsRecord,
          GraspRecord, SurfaceRecord, ObjectiveRecord, ResidualsRecord, StatusRecord],
    Field(discriminator="record"),
]
_record_adapter = TypeAdapter(AnyRecord)


class ProblemSpec(BaseModel):
    """Validated content of a problem file."""

    model_config = ConfigDict(extra="forbid")

    name: str = "problem"
    parameters: Dict[str, Any] = Field(default_factory=dict)
    objects: List[ObjectRecord]
    obstacles: List[ObstacleRecord] = Field(default_factory=list)
    contacts: List[ContactRecord]
    bounds: List[BoundsRecord] = Field(default_factory=list)

    def object_names(self) -> List[str]:
        return [o.name for o in self.objects]

    def params(
        self,
        preset: Optional[str] = None,
        overrides: Optional[Dict[str, Any]] = None,
        use_environment: bool = True,
    ) -> OptimizationParams:
        """File parameters over preset and environment, explicit overrides on top."""
        merged = dict(self.parameters)
        merged.update(overrides or {})
        return load_parameters(merged, preset=preset, use_environment=use_environment)

    def to_problem(
        self,
        preset: Optional[str] = None,
        overrides: Optional[Dict[str, Any]] = None,
        use_environment: bool = True,
    ) -> GraspProblem:
        names = self.object_names()
        objects = []
        for k, record in enumerate(self.objects):
            polygon = Polygon(record.vertices, record.origin, record.name)
            contacts = [
                ContactAssignment(k, c.edge, c.jaw, c.index)
                for c in self.contacts if c.object == record.name
            ]
            attached = [o for o in self.obstacles if o.object == record.name]
            obstacles = [
                Polygon(o.vertices, record.origin, f"{record.name}:obstacle{i}") for i, o in enumerate(attached)
            ]
            objects.append(GraspObject(polygon, contacts, Pose2D(*record.pose), obstacles))
        overrides_by_index = {
            names.index(b.object): (math.radians(b.theta_deg[0]), math.radians(b.theta_deg[1]))
            for b in self.bounds
        }
        return GraspProblem(objects, self.params(preset, overrides, use_environment), self.name, overrides_by_index)

    def records(self) -> List[BaseModel]:
        header = HeaderRecord(schema_version=ParameterConfig.SCHEMA_VERSION, kind="problem",
                              name=self.name, parameters=self.parameters)
        return [header, *self.objects, *self.obstacles, *self.contacts, *self.bounds]


def problem_to_spec(problem: GraspProblem, parameters: Optional[Dict[str, Any]] = None) -> ProblemSpec:
    """Problem file content for an in-memory problem (contact indices made explicit)."""
    objects, obstacles, contacts, bounds = [], [], [], []
    for k, obj in enumerate(problem.objects):
        objects.append(ObjectRecord(
            name=obj.name,
            vertices=[tuple(map(float, v)) for v in obj.polygon.vertices],
            origin=tuple(map(float, obj.polygon.origin)),
            pose=tuple(map(float, obj.pose)),
        ))
        obstacles += [ObstacleRecord(object=obj.name, vertices=[tuple(map(float, v)) for v in o.vertices])
                      for o in obj.obstacles]
        contacts += [ContactRecord(object=obj.name, edge=c.edge, jaw=c.jaw, index=c.contact_index)
                     for c in obj.contacts]
        if k in problem.theta_overrides:
            low, high = problem.theta_overrides[k]
            bounds.append(BoundsRecord(object=obj.name, theta_deg=(math.degrees(low), math.degrees(high))))
    return ProblemSpec(name=problem.name, parameters=dict(parameters or {}), objects=objects,
                       obstacles=obstacles, contacts=contacts, bounds=bounds)


# ================================
# PARSING AND VALIDATION
# ================================

def _parse_records(lines: Iterable[str]) -> List[BaseModel]:
    records = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise ProblemParseError(f"invalid JSON ({e.msg})", line=number) from e
        if not isinstance(data, dict) or "record" not in data:
            raise ProblemParseError("every line must be an object with a 'record' field", line=number)
        if not records:
            if data.get("record") != "header":
                raise ProblemParseError("the first record must be the header", line=number)
            version = data.get("schema_version")
            if version != ParameterConfig.SCHEMA_VERSION:
                raise SchemaVersionError(
                    f"Unsupported schema version {version!r}; this build reads version {ParameterConfig.SCHEMA_VERSION}"
                )
        try:
            records.append(_record_adapter.validate_python(data))
        except ValidationError as e:
            first = e.errors()[0]
            path = ".".join(str(part) for part in first["loc"])
            raise ProblemValidationError(f"{first['msg']} (line {number})", f"{data.get('record')}.{path}") from e
    if not records:
        raise ProblemParseError("file is empty")
    return records


def _validate_spec(spec: ProblemSpec) -> Tuple[ProblemSpec, List[str]]:
    """Geometric checks; clockwise polygons are reversed and their contact edges remapped."""
    warnings: List[str] = []
    names = spec.object_names()
    if len(set(names)) != len(names):
        raise ProblemValidationError("object names must be unique", "objects")

    objects = []
    remap: Dict[str, int] = {}
    for i, record in enumerate(spec.objects):
        polygon = Polygon(record.vertices, record.origin, record.name)
        try:
            validate_polygon(polygon)
        except GeometryError as e:
            raise ProblemValidationError(str(e), f"objects[{i}].vertices") from e
        if not polygon.is_ccw():
            remap[record.name] = polygon.n_edges
            record = record.model_copy(update={"vertices": [tuple(v) for v in polygon.vertices[::-1].tolist()]})
            warnings.append(f"Polygon {record.name!r} was clockwise and has been reversed")
        objects.append(record)

    for i, record in enumerate(spec.obstacles):
        if record.object not in names:
            raise ProblemValidationError(f"unknown object {record.object!r}", f"obstacles[{i}].object")
        try:
            validate_polygon(Polygon(record.vertices, name=f"obstacle {i}"))
        except GeometryError as e:
            raise ProblemValidationError(str(e), f"obstacles[{i}].vertices") from e

    edge_counts = {o.name: len(o.vertices) for o in objects}
    contacts = []
    next_index: Dict[str, int] = {}
    for j, contact in enumerate(spec.contacts):
        if contact.object not in names:
            raise ProblemValidationError(f"unknown object {contact.object!r}", f"contacts[{j}].object")
        n_edges = edge_counts[contact.object]
        if contact.edge >= n_edges:
            raise ProblemValidationError(
                f"contact {j} on {contact.object!r} references edge {contact.edge} "
                f"but the polygon has {n_edges} edges",
                f"contacts[{j}].edge",
            )
        update: Dict[str, Any] = {}
        if contact.object in remap:
            update["edge"] = (n_edges - 2 - contact.edge) % n_edges
        if contact.index is None:
            update["index"] = next_index.get(contact.object, 0)
        contact = contact.model_copy(update=update)
        next_index[contact.object] = max(next_index.get(contact.object, 0), contact.index + 1)
        contacts.append(contact)

    for name in names:
        own = [c for c in contacts if c.object == name]
        jaws = {c.jaw for c in own}
        if jaws != {"L", "R"}:
            raise ProblemValidationError(f"object {name!r} needs contacts on both jaws", "contacts")
        if sorted(c.index for c in own) != list(range(len(own))):
            raise ProblemValidationError(f"contact indices of {name!r} must be 0..{len(own) - 1}", "contacts")

    for i, bound in enumerate(spec.bounds):
        if bound.object not in names:
            raise ProblemValidationError(f"unknown object {bound.object!r}", f"bounds[{i}].object")
        if bound.theta_deg[0] >= bound.theta_deg[1]:
            raise ProblemValidationError("theta bounds must be increasing", f"bounds[{i}].theta_deg")

    try:
        load_parameters(spec.parameters, use_environment=False)
    except ValidationError as e:
        first = e.errors()[0]
        path = ".".join(str(part) for part in first["loc"]) or "parameters"
        raise ProblemValidationError(first["msg"], f"parameters.{path}") from e

    validated = spec.model_copy(update={"objects": objects, "contacts": contacts})
    return validated, warnings


def parse_problem(lines: Iterable[str]) -> Tuple[ProblemSpec, List[str]]:
    """
    Parse and validate problem records.

    Returns:
        The validated spec and the warnings raised while normalising it

    Raises:
        ProblemParseError, SchemaVersionError, ProblemValidationError
    """
    records = _parse_records(lines)
    header = records[0]
    if header.kind != "problem":
        raise ProblemValidationError("expected a problem file", "header.kind")
    spec = ProblemSpec(
        name=header.name,
        parameters=header.parameters,
        objects=[r for r in records if isinstance(r, ObjectRecord)],
        obstacles=[r for r in records if isinstance(r, ObstacleRecord)],
        contacts=[r for r in records if isinstance(r, ContactRecord)],
        bounds=[r for r in records if isinstance(r, BoundsRecord)],
    )
    if not spec.objects:
        raise ProblemValidationError("a problem needs at least one object", "objects")
    return _validate_spec(spec)


def read_problem(path: Union[str, Path]) -> Tuple[ProblemSpec, List[str]]:
    path = Path(path)
    if not path.exists():
        raise ProblemParseError(f"{path} does not exist")
    with path.open("r", encoding="utf-8") as handle:
        return parse_problem(handle)


def load_problem(path: Union[str, Path]) -> ProblemSpec:
    """Load a problem file, logging normalisation warnings."""
    spec, warnings = read_problem(path)
    for warning in warnings:
        logger.warning(f"⚠️ {warning}")
    logger.info(f"📂 Loaded problem {spec.name!r}: {len(spec.objects)} objects, {len(spec.contacts)} contacts")
    return spec


# ================================
# WRITING
# ================================

def _clean(value: Any) -> Any:
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def _dump(record: BaseModel) -> str:
    return json.dumps(_clean(record.model_dump(mode="python", exclude_none=True)), sort_keys=False)


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Write to a temporary file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_records(path: Union[str, Path], records: Iterable[BaseModel]) -> Path:
    return atomic_write_text(path, "".join(_dump(r) + "\n" for r in records))


def save_problem(spec: ProblemSpec, path: Union[str, Path]) -> Path:
    return write_records(path, spec.records())


# ================================
# SOLUTION FILES
# ================================

class SolutionFile(BaseModel):
    """Everything needed to re-render one surviving candidate."""

    model_config = ConfigDict(extra="forbid")

    header: HeaderRecord
    problem: ProblemSpec
    grasps: List[GraspRecord]
    surfaces: List[SurfaceRecord]
    objective: ObjectiveRecord
    residuals: ResidualsRecord
    status: StatusRecord

    @property
    def params(self) -> OptimizationParams:
        return OptimizationParams(**self.header.parameters)

    def to_problem(self) -> GraspProblem:
        problem = self.problem.to_problem(overrides=self.header.parameters, use_environment=False)
        return problem

    def z(self) -> np.ndarray:
        parts = [np.concatenate([g.position, [g.theta, g.gamma], g.d]) for g in self.grasps]
        return np.concatenate(parts)

    def surface(self, phase: Optional[str] = None) -> Optional[SurfaceRecord]:
        """Requested phase, or the refined surface when present and the main one otherwise."""
        by_phase = {s.phase: s for s in self.surfaces}
        if phase is not None:
            return by_phase.get(phase)
        return by_phase.get("refined") or by_phase.get("main")

    def records(self) -> List[BaseModel]:
        problem_records = self.problem.records()[1:]
        return [self.header, *problem_records, *self.grasps, *self.surfaces,
                self.objective, self.residuals, self.status]


def build_solution(candidate: Dict[str, Any], problem: GraspProblem, spec: Optional[ProblemSpec] = None) -> SolutionFile:
    """Assemble a SolutionFile from a post-processed candidate."""
    from core.shape import grasp_geometry

    spec = spec or problem_to_spec(problem)
    z = np.asarray(candidate["z"], dtype=float)
    geometry = grasp_geometry(z, problem)

    grasps = []
    for k, (obj, z_k) in enumerate(zip(problem.objects, problem.layout.split(z))):
        contacts = []
        for contact in geometry["contacts"]:
            if contact["object"] != k:
                continue
            edge = obj.contacts[contact["index"]].edge
            contacts.append({"index": contact["index"], "jaw": contact["jaw"], "edge": edge,
                             "point": contact["point"].tolist()})
        grasps.append(GraspRecord(object=obj.name, position=tuple(z_k.position.tolist()), theta=z_k.theta,
                                  gamma=z_k.gamma, d=z_k.d.tolist(), contacts=contacts))

    surfaces = []
    for phase, key in (("main", "surface"), ("refined", "refined_surface")):
        surface = candidate.get(key)
        if surface is not None:
            surfaces.append(SurfaceRecord(phase=phase, y=surface.y.tolist(), V=surface.V.tolist(), M=surface.M.tolist()))

    refinement = candidate.get("refinement") or {}
    grasp_quality = [
        {"object": problem.objects[entry["object"]].name, "sign": entry["sign"], "value": entry["value"]}
        for entry in candidate.get("grasp_quality", [])
    ]
    header = HeaderRecord(
        schema_version=ParameterConfig.SCHEMA_VERSION,
        kind="solution",
        name=problem.name,
        parameters=problem.params.model_dump(),
        rank=candidate.get("rank"),
        start_index=candidate.get("start_index"),
        seed=candidate.get("seed"),
    )
    return SolutionFile(
        header=header,
        problem=spec.model_copy(update={"parameters": {}}),
        grasps=grasps,
        surfaces=surfaces,
        objective=ObjectiveRecord(
            value=_clean(candidate.get("value")),
            grasp_quality=_clean(grasp_quality),
            grasp_quality_total=_clean(candidate.get("grasp_quality_total")),
            shape_cost=_clean(candidate.get("shape_cost")),
            refined_shape_cost=_clean(refinement.get("cost")),
        ),
        residuals=ResidualsRecord(
            alm_residual=_clean(candidate.get("residual")),
            contact_residual=_clean(refinement.get("contact_residual")),
            bound_violation=_clean(refinement.get("bound_violation")),
            min_clearance=_clean(candidate.get("min_clearance")),
            violations_before=refinement.get("violations_before"),
            violations_after=refinement.get("violations_after"),
        ),
        status=StatusRecord(
            stage_a=candidate.get("repair_status", "skipped"),
            stage_b=refinement.get("status", "skipped"),
            message=candidate.get("message", ""),
        ),
    )


def save_solution(solution: SolutionFile, path: Union[str, Path]) -> Path:
    return write_records(path, solution.records())


def load_solution(path: Union[str, Path]) -> SolutionFile:
    """
    Raises:
        ProblemParseError, SchemaVersionError, ProblemValidationError
    """
    path = Path(path)
    if not path.exists():
        raise ProblemParseError(f"{path} does not exist")
    with path.open("r", encoding="utf-8") as handle:
        records = _parse_records(handle)
    header = records[0]
    if header.kind != "solution":
        raise ProblemValidationError("expected a solution file", "header.kind")

    def single(kind):
        found = [r for r in records if isinstance(r, kind)]
        if len(found) != 1:
            raise ProblemValidationError(f"expected exactly one {kind.model_fields['record'].default} record",
                                         kind.model_fields["record"].default)
        return found[0]

    problem = ProblemSpec(
        name=header.name,
        objects=[r for r in records if isinstance(r, ObjectRecord)],
        obstacles=[r for r in records if isinstance(r, ObstacleRecord)],
        contacts=[r for r in records if isinstance(r, ContactRecord)],
        bounds=[r for r in records if isinstance(r, BoundsRecord)],
    )
    return SolutionFile(
        header=header,
        problem=problem,
        grasps=[r for r in records if isinstance(r, GraspRecord)],
        surfaces=[r for r in records if isinstance(r, SurfaceRecord)],
        objective=single(ObjectiveRecord),
        residuals=single(ResidualsRecord),
        status=single(StatusRecord),
    )
