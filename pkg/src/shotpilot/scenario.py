"""Declarative scenario files and the closed-loop runner.

A scenario document (JSON, schema shipped in ``shotpilot/schema``)
describes the lens, the initial drone and camera state, scripted
targets, and a timed sequence of shot directives.  ``run`` steps the
world, calls the controller every tick, and captures one trace record
per tick.

Unit conventions in documents: meters and seconds, except focal length
and circle of confusion (and the focal-length rate limit), which carry a
``_mm`` suffix; angles are degrees.  Everything is converted to meters
and radians at parse time.
"""

from __future__ import annotations

import bisect
import copy
import json
import logging
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .costs import (
    CostBreakdown,
    DofGoal,
    ImageTerm,
    PoseTerm,
    ShotDirective,
    stage_cost,
)
from .geometry import Pose, camera_yaw_rotation, relative_yaw_rotation
from .mpc import ControlPlan, ControllerState, SolverConfig, control_step
from .optics import CameraIntrinsics, LensConstants, OpticsDomainError, dof_interval
from .trace import TargetTrace, TraceRecord
from .world import (
    DroneState,
    IntrinsicsLimits,
    TargetState,
    Waypoint,
    measure_targets,
    step_camera,
    step_drone,
    step_targets,
)

__all__ = [
    "ScenarioError",
    "SimulationNumericError",
    "Scenario",
    "parse_scenario",
    "load_scenario",
    "scenario_defaults",
    "run",
]

logger = logging.getLogger(__name__)

MM = 1e-3

SCENARIO_DEFAULTS = {"name": "", "seed": 0, "dt": 0.2, "noise_sigma": 0.0}
LENS_DEFAULTS = {"circle_of_confusion_mm": 0.03, "skew": 0.0}
DRONE_DEFAULTS = {"velocity": [0.0, 0.0, 0.0], "yaw_deg": 0.0}
SOLVER_DEFAULTS = {
    "horizon": 10,
    "max_iterations": 150,
    "gradient_tolerance": 1e-6,
    "stall_tolerance": 1e-5,
    "stall_iterations": 10,
    "max_acceleration": 3.0,
    "max_gimbal_rate": 1.0,
    "max_focal_rate_mm": 10.0,
    "max_focus_rate": 5.0,
    "max_aperture_rate": 4.0,
    "focal_range_mm": [20.0, 200.0],
    "focus_range": [0.5, 100.0],
    "aperture_range": [1.4, 22.0],
    "min_target_distance": 1.5,
    "clamp_penalty_weight": 1e4,
    "distance_penalty_weight": 1e6,
}


class ScenarioError(ValueError):
    """A scenario document is malformed; ``path`` locates the offender."""

    def __init__(self, message: str, path: str = "$") -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


class SimulationNumericError(RuntimeError):
    """The closed loop hit a non-finite value; carries the partial trace."""

    def __init__(self, message: str, records: list[TraceRecord]) -> None:
        super().__init__(message)
        self.records = records


def scenario_defaults() -> dict:
    """The values filled in when a scenario document omits them."""
    return {
        **copy.deepcopy(SCENARIO_DEFAULTS),
        "lens": copy.deepcopy(LENS_DEFAULTS),
        "drone": copy.deepcopy(DRONE_DEFAULTS),
        "solver": copy.deepcopy(SOLVER_DEFAULTS),
    }


@dataclass(eq=False)
class Scenario:
    """A fully validated scenario plus its normalized source document."""

    document: dict
    lens: LensConstants
    drone: DroneState
    camera: CameraIntrinsics
    targets: list[TargetState]
    start_times: list[float]
    directives: list[ShotDirective]
    solver: SolverConfig
    noise_sigma: float
    seed: int
    duration: float
    dt: float

    @property
    def name(self) -> str:
        return self.document["name"]

    def dump(self) -> dict:
        """Normalized document: the input with every default made explicit."""
        return copy.deepcopy(self.document)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        return self.document == other.document


def _schema() -> dict:
    text = (
        resources.files("shotpilot").joinpath("schema/scenario.schema.json")
    ).read_text()
    return json.loads(text)


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def parse_scenario(document: dict) -> Scenario:
    """Validate a scenario document, fill defaults, and build the runtime
    objects.  Raises :class:`ScenarioError` with a document path on any
    violation; unknown keys are rejected."""
    if not isinstance(document, dict):
        raise ScenarioError("scenario document must be a JSON object")

    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ScenarioError(err.message, _json_path(err.absolute_path))

    doc = copy.deepcopy(document)
    for key, value in SCENARIO_DEFAULTS.items():
        doc.setdefault(key, copy.deepcopy(value))
    for key, value in LENS_DEFAULTS.items():
        doc["lens"].setdefault(key, value)
    doc["lens"].setdefault(
        "principal_point",
        [doc["lens"]["image_width"] / 2.0, doc["lens"]["image_height"] / 2.0],
    )
    for key, value in DRONE_DEFAULTS.items():
        doc["drone"].setdefault(key, copy.deepcopy(value))
    solver_doc = doc.setdefault("solver", {})
    for key, value in SOLVER_DEFAULTS.items():
        solver_doc.setdefault(key, copy.deepcopy(value))
    for t_i, tgt in enumerate(doc["targets"]):
        tgt.setdefault("features", {})
        for w in tgt["waypoints"]:
            w.setdefault("yaw_deg", 0.0)
    for seq in doc["sequences"]:
        seq.setdefault("name", "")
        d = seq["directive"]
        d.setdefault("near", {"weight": 0.0})
        d.setdefault("far", {"weight": 0.0})
        d["near"].setdefault("weight", 0.0)
        d["far"].setdefault("weight", 0.0)
        d.setdefault("image", [])
        d.setdefault("depth", [])
        d.setdefault("rotation", [])

    # --- semantic checks the schema cannot express -----------------------
    ids: set[str] = set()
    for t_i, tgt in enumerate(doc["targets"]):
        if tgt["id"] in ids:
            raise ScenarioError(
                f"duplicate target id {tgt['id']!r}", _json_path(["targets", t_i, "id"])
            )
        ids.add(tgt["id"])
        times = [w["time"] for w in tgt["waypoints"]]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ScenarioError(
                f"waypoint times of target {tgt['id']!r} must be strictly increasing",
                _json_path(["targets", t_i, "waypoints"]),
            )

    starts = [seq["start_time"] for seq in doc["sequences"]]
    if starts[0] != 0:
        raise ScenarioError(
            "first sequence must start at time 0", _json_path(["sequences", 0, "start_time"])
        )
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise ScenarioError(
            "sequence start times must be strictly increasing", _json_path(["sequences"])
        )
    if doc["duration"] <= starts[-1]:
        raise ScenarioError(
            "duration must extend past the last sequence start", _json_path(["duration"])
        )

    features_by_id = {t["id"]: t["features"] for t in doc["targets"]}
    for s_i, seq in enumerate(doc["sequences"]):
        d = seq["directive"]
        seq_path = ["sequences", s_i, "directive"]
        weights = [d["near"]["weight"], d["far"]["weight"]]
        for kind in ("image", "depth", "rotation"):
            seen: set[str] = set()
            for e_i, entry in enumerate(d[kind]):
                weights.append(entry["weight"])
                path = seq_path + [kind, e_i]
                if entry["target"] not in ids:
                    raise ScenarioError(
                        f"unknown target id {entry['target']!r}",
                        _json_path(path + ["target"]),
                    )
                if kind == "image":
                    feature = entry.get("feature")
                    if feature is not None and feature not in features_by_id[entry["target"]]:
                        raise ScenarioError(
                            f"target {entry['target']!r} has no feature {feature!r}",
                            _json_path(path + ["feature"]),
                        )
                    key = f"{entry['target']}/{feature}"
                else:
                    key = entry["target"]
                if key in seen:
                    raise ScenarioError(
                        f"duplicate {kind} entry for {key!r}", _json_path(path)
                    )
                seen.add(key)
        for end, goal in (("near", d["near"]), ("far", d["far"])):
            if goal["weight"] > 0 and ("distance" in goal) == ("target" in goal):
                raise ScenarioError(
                    "a weighted focus goal needs exactly one of distance or target",
                    _json_path(seq_path + [end]),
                )
            if goal.get("target") is not None and goal["target"] not in ids:
                raise ScenarioError(
                    f"unknown target id {goal['target']!r}",
                    _json_path(seq_path + [end, "target"]),
                )
        if not any(w > 0 for w in weights):
            raise ScenarioError(
                "directive needs at least one positive weight", _json_path(seq_path)
            )

    # --- build runtime objects -------------------------------------------
    lens_doc = doc["lens"]
    try:
        lens = LensConstants(
            circle_of_confusion=lens_doc["circle_of_confusion_mm"] * MM,
            sensor_width=lens_doc["sensor_width"],
            sensor_height=lens_doc["sensor_height"],
            image_width=lens_doc["image_width"],
            image_height=lens_doc["image_height"],
            skew=lens_doc["skew"],
            principal_point=tuple(lens_doc["principal_point"]),
        )
    except OpticsDomainError as exc:
        raise ScenarioError(str(exc), _json_path(["lens"])) from exc

    drone = DroneState(
        position=np.array(doc["drone"]["position"], dtype=float),
        velocity=np.array(doc["drone"]["velocity"], dtype=float),
        rotation=camera_yaw_rotation(math.radians(doc["drone"]["yaw_deg"])),
    )
    try:
        camera = CameraIntrinsics(
            focal_length=doc["camera"]["focal_length_mm"] * MM,
            focus_distance=doc["camera"]["focus_distance"],
            aperture=doc["camera"]["aperture"],
        )
    except OpticsDomainError as exc:
        raise ScenarioError(str(exc), _json_path(["camera"])) from exc

    targets = []
    for tgt in doc["targets"]:
        script = [
            Waypoint(w["time"], np.array(w["position"], dtype=float),
                     math.radians(w["yaw_deg"]))
            for w in tgt["waypoints"]
        ]
        targets.append(
            TargetState(
                id=tgt["id"],
                pose=Pose(script[0].position.copy(),
                          camera_yaw_rotation(script[0].yaw)),
                script=script,
                features=dict(tgt["features"]),
            )
        )

    directives = []
    for seq in doc["sequences"]:
        d = seq["directive"]
        pose_terms: dict[str, dict] = {}
        for entry in d["depth"]:
            pose_terms.setdefault(entry["target"], {})["depth"] = entry["distance"]
            pose_terms[entry["target"]]["depth_weight"] = entry["weight"]
        for entry in d["rotation"]:
            pose_terms.setdefault(entry["target"], {})["rotation"] = relative_yaw_rotation(
                math.radians(entry["relative_yaw_deg"])
            )
            pose_terms[entry["target"]]["rotation_weight"] = entry["weight"]
        directives.append(
            ShotDirective(
                near=_goal_from_doc(d["near"]),
                far=_goal_from_doc(d["far"]),
                image=tuple(
                    ImageTerm(
                        target=e["target"],
                        pixel=(e["pixel"][0], e["pixel"][1]),
                        weight=e["weight"],
                        offset=features_by_id[e["target"]][e["feature"]]
                        if "feature" in e
                        else 0.0,
                        feature=e.get("feature"),
                    )
                    for e in d["image"]
                ),
                pose=tuple(
                    PoseTerm(target=tid, **kwargs) for tid, kwargs in pose_terms.items()
                ),
                name=seq["name"],
            )
        )

    sdoc = doc["solver"]
    try:
        limits = IntrinsicsLimits(
            focal_range=(sdoc["focal_range_mm"][0] * MM, sdoc["focal_range_mm"][1] * MM),
            focus_range=tuple(sdoc["focus_range"]),
            aperture_range=tuple(sdoc["aperture_range"]),
        )
        solver = SolverConfig(
            horizon=sdoc["horizon"],
            dt=doc["dt"],
            max_iterations=sdoc["max_iterations"],
            gradient_tolerance=sdoc["gradient_tolerance"],
            stall_tolerance=sdoc["stall_tolerance"],
            stall_iterations=sdoc["stall_iterations"],
            max_acceleration=sdoc["max_acceleration"],
            max_gimbal_rate=sdoc["max_gimbal_rate"],
            max_focal_rate=sdoc["max_focal_rate_mm"] * MM,
            max_focus_rate=sdoc["max_focus_rate"],
            max_aperture_rate=sdoc["max_aperture_rate"],
            limits=limits,
            min_target_distance=sdoc["min_target_distance"],
            workspace_lower=np.array(sdoc["workspace_lower"], dtype=float)
            if "workspace_lower" in sdoc
            else None,
            workspace_upper=np.array(sdoc["workspace_upper"], dtype=float)
            if "workspace_upper" in sdoc
            else None,
            clamp_penalty_weight=sdoc["clamp_penalty_weight"],
            distance_penalty_weight=sdoc["distance_penalty_weight"],
        )
    except ValueError as exc:
        raise ScenarioError(str(exc), _json_path(["solver"])) from exc

    cam_arr = camera.as_array()
    clipped, mask = limits.clamp(cam_arr)
    if mask.any():
        logger.warning(
            "initial camera state %s lies outside the solver's intrinsic box",
            cam_arr,
        )

    return Scenario(
        document=doc,
        lens=lens,
        drone=drone,
        camera=camera,
        targets=targets,
        start_times=starts,
        directives=directives,
        solver=solver,
        noise_sigma=doc["noise_sigma"],
        seed=doc["seed"],
        duration=doc["duration"],
        dt=doc["dt"],
    )


def _goal_from_doc(goal: dict) -> DofGoal:
    return DofGoal(
        weight=goal["weight"],
        distance=goal.get("distance"),
        target=goal.get("target"),
    )


def load_scenario(path: str | Path) -> Scenario:
    """Read and parse a scenario JSON file."""
    text = Path(path).read_text()
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}:{exc.colno}"
        ) from exc
    return parse_scenario(document)


def active_directive_index(start_times: list[float], t: float) -> int:
    """Index of the last sequence with start_time <= t."""
    return max(bisect.bisect_right(start_times, t) - 1, 0)


def run(scenario: Scenario, progress=None) -> list[TraceRecord]:
    """Closed-loop simulation: one trace record per control tick.

    Deterministic for a given (scenario document, seed).  On a non-finite
    state or objective the loop aborts with
    :class:`SimulationNumericError` carrying the partial trace.
    """
    cfg = scenario.solver
    lens = scenario.lens
    dt = scenario.dt
    drone = scenario.drone
    camera = scenario.camera
    rng = np.random.default_rng(scenario.seed)
    controller = ControllerState(ControlPlan.zeros(cfg.slots))
    records: list[TraceRecord] = []
    n_steps = int(round(scenario.duration / dt))

    for i in range(n_steps):
        t = i * dt
        targets = step_targets(scenario.targets, t)
        measured = measure_targets(targets, scenario.noise_sigma, rng)
        index = active_directive_index(scenario.start_times, t)
        directive = scenario.directives[index]

        u_drone, u_cam, result, controller = control_step(
            drone, camera, measured, directive, controller, cfg, lens
        )
        resolved = directive.resolve(drone, measured)
        breakdown = stage_cost(drone, camera, measured, lens, directive=resolved)
        dof = dof_interval(camera, lens)

        next_drone = step_drone(drone, u_drone, dt)
        next_camera, clamped = step_camera(camera, u_cam, dt, cfg.limits)

        records.append(
            TraceRecord(
                time=t,
                directive_index=index,
                position=tuple(drone.position),
                velocity=tuple(drone.velocity),
                rotation=tuple(drone.rotation.ravel()),
                focal_length=camera.focal_length,
                focus_distance=camera.focus_distance,
                aperture=camera.aperture,
                near=dof.near,
                far=dof.far,
                desired_near=resolved.near.distance if resolved.near.active else None,
                desired_far=resolved.far.distance if resolved.far.active else None,
                j_dof=breakdown.j_dof,
                j_im=breakdown.j_im,
                j_p=breakdown.j_p,
                total=breakdown.total,
                acceleration=tuple(u_drone.acceleration),
                gimbal_rate=tuple(u_drone.gimbal_rate),
                camera_rates=tuple(u_cam.as_array()),
                iterations=result.iterations,
                converged=result.converged,
                objective=result.objective,
                penalty=result.penalty,
                clamped=bool(clamped.any()),
                targets={
                    tgt.id: TargetTrace(
                        true_position=tuple(tgt.pose.position),
                        measured_position=tuple(measured[tgt.id].position),
                    )
                    for tgt in targets
                },
            )
        )

        finite = (
            np.isfinite(result.objective)
            and np.all(np.isfinite(next_drone.position))
            and np.all(np.isfinite(next_drone.velocity))
            and np.all(np.isfinite(next_camera.as_array()))
        )
        if not finite:
            raise SimulationNumericError(
                f"non-finite state or objective at t={t:.3f} s", records
            )

        drone, camera = next_drone, next_camera
        if progress is not None:
            progress(i, n_steps, records[-1])

    return records
