"""Discrete-time world model: drone+gimbal dynamics, lens dynamics,
scripted target motion, and the noisy measurement channel that stands in
for a perception pipeline.

All step operations are pure (state in, state out) and safe to call from
a single stepping loop while snapshots are shared elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, camera_yaw_rotation, exp_map
from .optics import FOCUS_MARGIN, CameraIntrinsics

__all__ = [
    "DroneState",
    "DroneInput",
    "IntrinsicsInput",
    "IntrinsicsLimits",
    "Waypoint",
    "TargetState",
    "TargetObservation",
    "Measurement",
    "RolloutArrays",
    "rollout_arrays",
    "step_drone",
    "step_camera",
    "step_targets",
    "measure_targets",
]


@dataclass(frozen=True, eq=False)
class DroneState:
    """Drone position [m], velocity [m/s], and gimbal (camera) rotation."""

    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))

    @property
    def pose(self) -> Pose:
        return Pose(self.position, self.rotation)


@dataclass(frozen=True, eq=False)
class DroneInput:
    """Drone acceleration [m/s^2] and gimbal angular velocity [rad/s]."""

    acceleration: np.ndarray
    gimbal_rate: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "acceleration", np.asarray(self.acceleration, dtype=float)
        )
        object.__setattr__(
            self, "gimbal_rate", np.asarray(self.gimbal_rate, dtype=float)
        )

    @staticmethod
    def zero() -> "DroneInput":
        return DroneInput(np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class IntrinsicsInput:
    """Rates of change of the lens state: focal length [m/s], focus
    distance [m/s], aperture [f-stop/s]."""

    v_focal: float = 0.0
    v_focus: float = 0.0
    v_aperture: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.v_focal, self.v_focus, self.v_aperture])


@dataclass(frozen=True)
class IntrinsicsLimits:
    """Admissible box for the lens state (the X_c constraint set)."""

    focal_range: tuple[float, float] = (0.02, 0.20)
    focus_range: tuple[float, float] = (0.5, 100.0)
    aperture_range: tuple[float, float] = (1.4, 22.0)

    def __post_init__(self) -> None:
        for name, (lo, hi) in (
            ("focal_range", self.focal_range),
            ("focus_range", self.focus_range),
            ("aperture_range", self.aperture_range),
        ):
            if not lo <= hi:
                raise ValueError(f"{name} is empty: {lo!r} > {hi!r}")
        if self.focal_range[0] <= 0:
            raise ValueError("focal_range must be positive")
        # keep the thin-lens formulas away from their F = f singularity
        if self.focus_range[0] < self.focal_range[1] * (1.0 + FOCUS_MARGIN):
            raise ValueError(
                "focus_range lower bound must exceed the focal_range upper "
                "bound by the safety margin"
            )

    @property
    def lower(self) -> np.ndarray:
        return np.array(
            [self.focal_range[0], self.focus_range[0], self.aperture_range[0]]
        )

    @property
    def upper(self) -> np.ndarray:
        return np.array(
            [self.focal_range[1], self.focus_range[1], self.aperture_range[1]]
        )

    def clamp(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Clip values into the box; second result flags clipped entries."""
        clipped = np.clip(values, self.lower, self.upper)
        return clipped, clipped != values


@dataclass
class Waypoint:
    """One scripted sample of a target trajectory."""

    time: float
    position: np.ndarray
    yaw: float

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float)


@dataclass(eq=False)
class TargetState:
    """A scripted scene subject.

    ``features`` maps feature names (e.g. "face") to vertical offsets in
    meters from the centroid; the centroid itself is feature offset 0.
    """

    id: str
    pose: Pose
    script: list[Waypoint] = field(default_factory=list)
    features: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        times = [w.time for w in self.script]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"target {self.id!r}: waypoint times must increase")


@dataclass(frozen=True, eq=False)
class TargetObservation:
    """One measured target: noisy position, exact rotation."""

    position: np.ndarray
    rotation: np.ndarray


Measurement = dict[str, TargetObservation]


def step_drone(state: DroneState, u: DroneInput, dt: float) -> DroneState:
    """Double-integrator translation plus exponential-map gimbal update."""
    a = u.acceleration
    return DroneState(
        position=state.position + state.velocity * dt + 0.5 * a * dt * dt,
        velocity=state.velocity + a * dt,
        rotation=state.rotation @ exp_map(u.gimbal_rate, dt),
    )


def step_camera(
    state: CameraIntrinsics,
    u: IntrinsicsInput,
    dt: float,
    limits: IntrinsicsLimits,
) -> tuple[CameraIntrinsics, np.ndarray]:
    """Euler-integrate the lens rates and clamp into the admissible box.

    Returns the new state and a per-component flag marking which of
    (focal, focus, aperture) hit a box limit.
    """
    raw = state.as_array() + u.as_array() * dt
    clipped, clamped = limits.clamp(raw)
    return CameraIntrinsics(*clipped), clamped


def _wrap_angle(angle: float) -> float:
    return math.remainder(angle, math.tau)


def _pose_at(script: list[Waypoint], t: float) -> tuple[np.ndarray, float]:
    if not script:
        raise ValueError("target script is empty")
    if t <= script[0].time:
        return script[0].position.copy(), script[0].yaw
    if t >= script[-1].time:
        return script[-1].position.copy(), script[-1].yaw
    for a, b in zip(script, script[1:]):
        if t <= b.time:
            frac = (t - a.time) / (b.time - a.time)
            pos = a.position + frac * (b.position - a.position)
            yaw = a.yaw + frac * _wrap_angle(b.yaw - a.yaw)
            return pos, yaw
    return script[-1].position.copy(), script[-1].yaw


def step_targets(targets: list[TargetState], t: float) -> list[TargetState]:
    """Advance every scripted target to time t.

    Positions interpolate piecewise linearly between waypoints, yaw along
    the shortest arc; targets hold their last waypoint after the script
    ends and their first before it starts.
    """
    out = []
    for tgt in targets:
        pos, yaw = _pose_at(tgt.script, t)
        out.append(
            TargetState(
                id=tgt.id,
                pose=Pose(pos, camera_yaw_rotation(yaw)),
                script=tgt.script,
                features=tgt.features,
            )
        )
    return out


@dataclass(eq=False)
class RolloutArrays:
    """Array form of a predicted trajectory, kept flat for the cost and
    gradient sweeps.

    ``exps`` holds the per-step gimbal rotation increments, ``pass_mask``
    marks lens components that integrated without clamping (their
    sensitivity survives the step), and ``violations`` the signed
    pre-clamp box excess feeding the clamp penalty.
    """

    positions: np.ndarray  # (n+1, 3)
    velocities: np.ndarray  # (n+1, 3)
    rotations: np.ndarray  # (n+1, 3, 3)
    cams: np.ndarray  # (n+1, 3) rows (focal, focus, aperture)
    exps: np.ndarray  # (n, 3, 3)
    pass_mask: np.ndarray  # (n, 3)
    violations: np.ndarray  # (n, 3)


def rollout_arrays(
    drone: DroneState,
    intr: CameraIntrinsics,
    drone_inputs: np.ndarray,
    cam_inputs: np.ndarray,
    dt: float,
    limits: IntrinsicsLimits,
) -> RolloutArrays:
    """Propagate the dynamics through input slots 0..n-1 of an
    (n+1)-slot plan, producing the n+1 states the stage costs see.

    The final input slot exists only for warm-start continuity; it moves
    no state inside the costed window.
    """
    n = len(drone_inputs) - 1
    positions = np.empty((n + 1, 3))
    velocities = np.empty((n + 1, 3))
    rotations = np.empty((n + 1, 3, 3))
    cams = np.empty((n + 1, 3))
    exps = np.empty((n, 3, 3))
    pass_mask = np.empty((n, 3))
    violations = np.empty((n, 3))

    positions[0] = drone.position
    velocities[0] = drone.velocity
    rotations[0] = drone.rotation
    cams[0] = intr.as_array()
    lo, hi = limits.lower, limits.upper

    for k in range(n):
        a = drone_inputs[k, :3]
        positions[k + 1] = positions[k] + velocities[k] * dt + 0.5 * a * dt * dt
        velocities[k + 1] = velocities[k] + a * dt
        exps[k] = exp_map(drone_inputs[k, 3:], dt)
        rotations[k + 1] = rotations[k] @ exps[k]

        raw = cams[k] + cam_inputs[k] * dt
        clipped = np.clip(raw, lo, hi)
        cams[k + 1] = clipped
        pass_mask[k] = (raw > lo) & (raw < hi)
        violations[k] = np.maximum(raw - hi, 0.0) + np.minimum(raw - lo, 0.0)

    return RolloutArrays(
        positions, velocities, rotations, cams, exps, pass_mask, violations
    )


def measure_targets(
    targets: list[TargetState],
    noise_sigma: float,
    rng: np.random.Generator | int,
) -> Measurement:
    """Observe targets: zero-mean Gaussian position noise, exact rotations.

    ``rng`` is a numpy Generator (pass one seeded generator per run so
    the whole measurement sequence is reproducible) or a seed.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    gen = np.random.default_rng(rng) if isinstance(rng, int) else rng
    out: Measurement = {}
    for tgt in targets:
        noise = gen.normal(0.0, noise_sigma, 3) if noise_sigma > 0 else np.zeros(3)
        out[tgt.id] = TargetObservation(
            position=tgt.pose.position + noise,
            rotation=tgt.pose.rotation.copy(),
        )
    return out
