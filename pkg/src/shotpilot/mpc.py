"""Receding-horizon solver.

Each control step transcribes the shot objective over an N-step horizon
as a box-constrained program in the control inputs (single shooting),
minimizes it with a projected limited-memory quasi-Newton method, applies
the first input, and keeps the shifted plan as the next warm start.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .costs import (
    CostBreakdown,
    PenaltyConfig,
    PlanEvaluator,
    ShotDirective,
    ViolationReport,
)
from .optics import CameraIntrinsics, LensConstants
from .world import (
    DroneInput,
    DroneState,
    IntrinsicsInput,
    IntrinsicsLimits,
    Measurement,
    rollout_arrays,
)

__all__ = [
    "ControlPlan",
    "SolverConfig",
    "SolveResult",
    "ControllerState",
    "rollout",
    "solve",
    "shift_warm_start",
    "control_step",
]

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ControlPlan:
    """Horizon-length input sequences.

    ``drone`` rows are (accel x, y, z, gimbal rate x, y, z); ``camera``
    rows are (focal, focus, aperture) rates.  A plan for horizon N has
    N + 1 slots; slot k shapes predicted state k + 1, and the final slot
    only becomes effective after the warm-start shift.
    """

    drone: np.ndarray
    camera: np.ndarray

    def __post_init__(self) -> None:
        self.drone = np.asarray(self.drone, dtype=float)
        self.camera = np.asarray(self.camera, dtype=float)
        if self.drone.ndim != 2 or self.drone.shape[1] != 6:
            raise ValueError("drone inputs must have shape (N+1, 6)")
        if self.camera.shape != (self.drone.shape[0], 3):
            raise ValueError("camera inputs must have shape (N+1, 3)")

    @property
    def slots(self) -> int:
        return self.drone.shape[0]

    @staticmethod
    def zeros(slots: int) -> "ControlPlan":
        return ControlPlan(np.zeros((slots, 6)), np.zeros((slots, 3)))

    def copy(self) -> "ControlPlan":
        return ControlPlan(self.drone.copy(), self.camera.copy())

    def first_inputs(self) -> tuple[DroneInput, IntrinsicsInput]:
        return (
            DroneInput(self.drone[0, :3].copy(), self.drone[0, 3:].copy()),
            IntrinsicsInput(*self.camera[0]),
        )


@dataclass(frozen=True, eq=False)
class SolverConfig:
    """Horizon, optimizer settings, and the constraint boxes U_d, U_c,
    X_c plus the workspace/min-distance description of X_d."""

    horizon: int = 10
    dt: float = 0.2
    max_iterations: int = 150
    gradient_tolerance: float = 1e-6
    stall_tolerance: float = 1e-5
    stall_iterations: int = 10
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30
    memory: int = 10
    max_acceleration: float = 3.0
    max_gimbal_rate: float = 1.0
    max_focal_rate: float = 0.01
    max_focus_rate: float = 5.0
    max_aperture_rate: float = 4.0
    limits: IntrinsicsLimits = field(default_factory=IntrinsicsLimits)
    min_target_distance: float = 1.5
    workspace_lower: np.ndarray | None = None
    workspace_upper: np.ndarray | None = None
    clamp_penalty_weight: float = 1e4
    distance_penalty_weight: float = 1e6

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.gradient_tolerance <= 0:
            raise ValueError("gradient_tolerance must be > 0")
        for name in (
            "max_acceleration",
            "max_gimbal_rate",
            "max_focal_rate",
            "max_focus_rate",
            "max_aperture_rate",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if (self.workspace_lower is None) != (self.workspace_upper is None):
            raise ValueError("workspace bounds must be given together")
        if self.workspace_lower is not None:
            lo = np.asarray(self.workspace_lower, dtype=float)
            hi = np.asarray(self.workspace_upper, dtype=float)
            if lo.shape != (3,) or hi.shape != (3,) or np.any(lo > hi):
                raise ValueError("workspace box is malformed")
            object.__setattr__(self, "workspace_lower", lo)
            object.__setattr__(self, "workspace_upper", hi)

    @property
    def slots(self) -> int:
        return self.horizon + 1

    def drone_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        hi = np.tile(
            np.array([self.max_acceleration] * 3 + [self.max_gimbal_rate] * 3),
            (self.slots, 1),
        )
        return -hi, hi

    def camera_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        hi = np.tile(
            np.array(
                [self.max_focal_rate, self.max_focus_rate, self.max_aperture_rate]
            ),
            (self.slots, 1),
        )
        return -hi, hi

    def penalties(self) -> PenaltyConfig:
        return PenaltyConfig(
            clamp_weight=self.clamp_penalty_weight,
            distance_weight=self.distance_penalty_weight,
            min_target_distance=self.min_target_distance,
            workspace_lower=self.workspace_lower,
            workspace_upper=self.workspace_upper,
        )


@dataclass(eq=False)
class SolveResult:
    """Outcome of one horizon solve."""

    plan: ControlPlan
    cost: CostBreakdown
    per_step: list[CostBreakdown]
    objective: float
    penalty: float
    iterations: int
    converged: bool
    violations: ViolationReport


@dataclass(eq=False)
class ControllerState:
    """What the controller carries between steps: the shifted plan."""

    warm: ControlPlan


def rollout(
    drone: DroneState,
    intr: CameraIntrinsics,
    plan: ControlPlan,
    dt: float,
    limits: IntrinsicsLimits,
) -> tuple[list[DroneState], list[CameraIntrinsics]]:
    """Predicted state sequence (length N+1) under the plan."""
    ro = rollout_arrays(drone, intr, plan.drone, plan.camera, dt, limits)
    drones = [
        DroneState(ro.positions[k], ro.velocities[k], ro.rotations[k])
        for k in range(plan.slots)
    ]
    cams = [CameraIntrinsics(*ro.cams[k]) for k in range(plan.slots)]
    return drones, cams


def shift_warm_start(prev: ControlPlan) -> ControlPlan:
    """Drop the applied first input, duplicate the last slot."""
    return ControlPlan(
        np.vstack([prev.drone[1:], prev.drone[-1:]]),
        np.vstack([prev.camera[1:], prev.camera[-1:]]),
    )


def _two_loop(grad: np.ndarray, mem: list[tuple[np.ndarray, np.ndarray, float]]):
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    if mem:
        s, y, _ = mem[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def solve(
    drone: DroneState,
    intr: CameraIntrinsics,
    measurements: Measurement,
    directive: ShotDirective,
    warm: ControlPlan,
    cfg: SolverConfig,
    lens: LensConstants,
) -> SolveResult:
    """Minimize the horizon objective over the input boxes, starting from
    the warm plan.

    Monotone by construction: a trial point is accepted only when it
    lowers the objective, so the returned plan never costs more than the
    warm start.  Returns the best plan found with a non-converged flag
    rather than failing when the iteration cap is reached.
    """
    if warm.slots != cfg.slots:
        raise ValueError(
            f"warm plan has {warm.slots} slots, config wants {cfg.slots}"
        )
    if not directive.resolved:
        raise ValueError("directive must be resolved before solving")

    cam_arr = intr.as_array()
    clipped, mask = cfg.limits.clamp(cam_arr)
    if mask.any():
        logger.warning(
            "initial intrinsics %s outside X_c; projected to %s", cam_arr, clipped
        )
        intr = CameraIntrinsics(*clipped)

    d_lo, d_hi = cfg.drone_bounds()
    c_lo, c_hi = cfg.camera_bounds()
    lo = np.concatenate([d_lo.ravel(), c_lo.ravel()])
    hi = np.concatenate([d_hi.ravel(), c_hi.ravel()])
    n_drone = d_lo.size
    slots = cfg.slots
    penalties = cfg.penalties()

    evaluator = PlanEvaluator(
        drone, intr, measurements, lens, directive, cfg.dt, cfg.limits, penalties
    )

    def unpack(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[:n_drone].reshape(slots, 6), x[n_drone:].reshape(slots, 3)

    def eval_full(x: np.ndarray):
        ev = evaluator.evaluate(*unpack(x), want_grad=True)
        g = np.concatenate([ev.grad_drone.ravel(), ev.grad_camera.ravel()])
        return ev, g

    def eval_value(x: np.ndarray) -> float:
        return evaluator.evaluate(*unpack(x)).objective

    x = np.clip(np.concatenate([warm.drone.ravel(), warm.camera.ravel()]), lo, hi)
    ev, g = eval_full(x)
    fx = ev.objective
    mem: list[tuple[np.ndarray, np.ndarray, float]] = []
    iterations = 0
    converged = False
    stalled = 0

    def line_search(direction: np.ndarray, first_scale: float):
        step = first_scale
        for _ in range(cfg.max_backtracks):
            x_t = np.clip(x + step * direction, lo, hi)
            delta = x_t - x
            if not delta.any():
                return None
            f_t = eval_value(x_t)
            decrease = cfg.armijo * min(float(g @ delta), 0.0)
            if f_t <= fx + decrease and f_t < fx:
                return x_t, f_t
            step *= cfg.backtrack
        return None

    for _ in range(cfg.max_iterations):
        pg = x - np.clip(x - g, lo, hi)
        if float(np.max(np.abs(pg))) <= cfg.gradient_tolerance:
            converged = True
            break

        direction = -_two_loop(g, mem)
        steepest = not np.all(np.isfinite(direction)) or float(direction @ g) >= 0.0
        if steepest:
            direction = -g
        scale = 1.0
        if not mem:
            gmax = float(np.max(np.abs(g)))
            scale = min(1.0, 1.0 / gmax) if gmax > 1.0 else 1.0

        found = line_search(direction, scale)
        if found is None and not steepest:
            found = line_search(-g, scale)
        if found is None:
            # no descent possible at line-search resolution; stop here
            break
        x_new, f_new = found
        ev_new, g_new = eval_full(x_new)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            mem.append((s, y, 1.0 / sy))
            if len(mem) > cfg.memory:
                mem.pop(0)
        improvement = fx - f_new
        x, fx, g, ev = x_new, f_new, g_new, ev_new
        iterations += 1
        # near the non-smooth floor of the rotation term the projected
        # gradient cannot reach tolerance; stop once progress dries up
        if improvement <= cfg.stall_tolerance * max(1.0, abs(fx)):
            stalled += 1
            if stalled >= cfg.stall_iterations:
                break
        else:
            stalled = 0

    ud, uc = unpack(x)
    final = evaluator.evaluate(ud, uc, want_steps=True)
    return SolveResult(
        plan=ControlPlan(ud.copy(), uc.copy()),
        cost=final.cost,
        per_step=final.per_step,
        objective=final.objective,
        penalty=final.penalty,
        iterations=iterations,
        converged=converged,
        violations=final.violations,
    )


def control_step(
    drone: DroneState,
    intr: CameraIntrinsics,
    measurements: Measurement,
    directive: ShotDirective,
    state: ControllerState,
    cfg: SolverConfig,
    lens: LensConstants,
) -> tuple[DroneInput, IntrinsicsInput, SolveResult, ControllerState]:
    """One closed-loop controller tick.

    Resolves target-anchored focus limits against the latest measurement,
    solves the horizon problem from the stored warm start, applies only
    the first input, and shifts the plan for the next tick.
    """
    resolved = directive.resolve(drone, measurements)
    result = solve(drone, intr, measurements, resolved, state.warm, cfg, lens)
    u_drone, u_cam = result.plan.first_inputs()
    return u_drone, u_cam, result, ControllerState(shift_warm_start(result.plan))
