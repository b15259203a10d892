"""Shot-objective cost terms and their gradients.

Three terms are summed per predicted step: a depth-of-field term (near
and far focus limits vs. desired values), an image-composition term
(projected target features vs. desired pixel positions) and a shot term
(target depth and camera-to-target rotation vs. desired values).

Gradients with respect to every control input over the horizon are
computed analytically by a reverse sweep through the rolled-out
dynamics; the test suite checks them against central finite differences.

The single-state operations (:func:`j_dof`, :func:`j_im`, :func:`j_p`,
:func:`stage_cost`, :func:`total_cost`) are the readable reference path.
:class:`PlanEvaluator` is the solver's hot path, vectorized across the
horizon; a test pins the two paths together.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import optics
from .optics import CameraIntrinsics, LensConstants
from .world import DroneState, IntrinsicsLimits, Measurement

__all__ = [
    "FAR_SATURATION",
    "BEHIND_CAMERA_PENALTY",
    "DofGoal",
    "ImageTerm",
    "PoseTerm",
    "ShotDirective",
    "CostBreakdown",
    "PenaltyConfig",
    "ViolationReport",
    "PlanEvaluation",
    "PlanEvaluator",
    "j_dof",
    "j_im",
    "j_p",
    "stage_cost",
    "total_cost",
    "evaluate_plan",
    "cost_gradient",
]

logger = logging.getLogger(__name__)

# Far limits are squashed through D_max * tanh(x / D_max) before
# differencing: beyond a kilometer "in focus" is indistinguishable from
# infinity, and the squash keeps the objective finite and smooth when the
# focus distance crosses the hyperfocal point.
FAR_SATURATION = 1000.0

# Soft penalty charged per weighted term whose target falls behind the
# camera, instead of failing the whole evaluation.
BEHIND_CAMERA_PENALTY = 1e8

# Smoothing floor for the rotation-distance kink at exact coincidence;
# small enough to be invisible at test tolerances, large enough to keep
# the gradient finite everywhere.
_ROT_EPS = 1e-9


def _batch_right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Right Jacobians of the rotation exponential, one per row of phi."""
    n = len(phi)
    theta2 = np.einsum("ki,ki->k", phi, phi)
    theta = np.sqrt(theta2)
    small = theta < 1e-4
    safe2 = np.where(small, 1.0, theta2)
    a = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / safe2)
    b = np.where(
        small,
        1.0 / 6.0 - theta2 / 120.0,
        (theta - np.sin(theta)) / (safe2 * np.sqrt(safe2)),
    )
    k_mat = np.zeros((n, 3, 3))
    k_mat[:, 0, 1] = -phi[:, 2]
    k_mat[:, 0, 2] = phi[:, 1]
    k_mat[:, 1, 0] = phi[:, 2]
    k_mat[:, 1, 2] = -phi[:, 0]
    k_mat[:, 2, 0] = -phi[:, 1]
    k_mat[:, 2, 1] = phi[:, 0]
    return (
        np.eye(3)
        - a[:, None, None] * k_mat
        + b[:, None, None] * np.einsum("kij,kjl->kil", k_mat, k_mat)
    )


def _sat(x: float) -> float:
    if not math.isfinite(x):
        return FAR_SATURATION
    return FAR_SATURATION * math.tanh(x / FAR_SATURATION)


def _sat_grad(x: float) -> float:
    if not math.isfinite(x):
        return 0.0
    t = math.tanh(x / FAR_SATURATION)
    return 1.0 - t * t


@dataclass(frozen=True)
class DofGoal:
    """One end of the desired in-focus interval.

    Either a fixed distance in meters or a reference to a target's live
    axial depth (resolved against the latest measurement each control
    step, then frozen over the prediction horizon).
    """

    weight: float = 0.0
    distance: float | None = None
    target: str | None = None

    def __post_init__(self) -> None:
        if self.weight < 0:
            raise ValueError("DofGoal weight must be >= 0")
        if self.weight > 0 and (self.distance is None) == (self.target is None):
            raise ValueError(
                "a weighted DofGoal needs exactly one of distance or target"
            )
        if self.distance is not None and self.distance <= 0:
            raise ValueError("desired focus limit must be > 0")

    @property
    def active(self) -> bool:
        return self.weight > 0

    @property
    def resolved(self) -> bool:
        return not self.active or self.distance is not None


@dataclass(frozen=True)
class ImageTerm:
    """Desired pixel position for one target feature point."""

    target: str
    pixel: tuple[float, float]
    weight: float
    offset: float = 0.0  # vertical offset of the feature from the centroid [m]
    feature: str | None = None

    def __post_init__(self) -> None:
        if self.weight < 0:
            raise ValueError("ImageTerm weight must be >= 0")


@dataclass(frozen=True, eq=False)
class PoseTerm:
    """Desired axial depth and/or relative rotation for one target."""

    target: str
    depth: float | None = None
    depth_weight: float = 0.0
    rotation: np.ndarray | None = None
    rotation_weight: float = 0.0

    def __post_init__(self) -> None:
        if self.depth_weight < 0 or self.rotation_weight < 0:
            raise ValueError("PoseTerm weights must be >= 0")
        if self.depth_weight > 0 and self.depth is None:
            raise ValueError("a depth-weighted PoseTerm needs a depth")
        if self.rotation_weight > 0 and self.rotation is None:
            raise ValueError("a rotation-weighted PoseTerm needs a rotation")


@dataclass(frozen=True, eq=False)
class ShotDirective:
    """All desired values and weights for one scene sequence."""

    near: DofGoal = DofGoal()
    far: DofGoal = DofGoal()
    image: tuple[ImageTerm, ...] = ()
    pose: tuple[PoseTerm, ...] = ()
    name: str = ""

    @property
    def resolved(self) -> bool:
        return self.near.resolved and self.far.resolved

    def target_ids(self) -> set[str]:
        ids = {t.target for t in self.image} | {t.target for t in self.pose}
        for goal in (self.near, self.far):
            if goal.target is not None:
                ids.add(goal.target)
        return ids

    def resolve(self, drone: DroneState, observations: Measurement) -> "ShotDirective":
        """Pin target-anchored focus limits to the targets' current
        measured axial depths."""
        return replace(
            self,
            near=_resolve_goal(self.near, drone, observations),
            far=_resolve_goal(self.far, drone, observations),
        )


_MIN_RESOLVED_DEPTH = 0.01


def _resolve_goal(
    goal: DofGoal, drone: DroneState, observations: Measurement
) -> DofGoal:
    if not goal.active or goal.target is None:
        return goal
    obs = observations[goal.target]
    depth = float(drone.rotation.T[2] @ (obs.position - drone.position))
    if depth < _MIN_RESOLVED_DEPTH:
        logger.warning(
            "target %r is not in front of the camera (depth %.3g m); "
            "clamping its anchored focus limit",
            goal.target,
            depth,
        )
        depth = _MIN_RESOLVED_DEPTH
    return DofGoal(weight=goal.weight, distance=depth, target=None)


@dataclass(frozen=True)
class CostBreakdown:
    """Per-term cost values; total is their sum by construction."""

    j_dof: float = 0.0
    j_im: float = 0.0
    j_p: float = 0.0

    @property
    def total(self) -> float:
        return self.j_dof + self.j_im + self.j_p

    def __add__(self, other: "CostBreakdown") -> "CostBreakdown":
        return CostBreakdown(
            self.j_dof + other.j_dof,
            self.j_im + other.j_im,
            self.j_p + other.j_p,
        )


@dataclass(frozen=True, eq=False)
class PenaltyConfig:
    """Soft-constraint weights for the solver objective.

    The clamp term charges pre-clamp excursions of the lens state outside
    its box; the distance term is a smooth hinge keeping the drone at
    least ``min_target_distance`` from every target (and inside the
    workspace box when one is set).
    """

    clamp_weight: float = 1e4
    distance_weight: float = 1e6
    min_target_distance: float = 1.5
    workspace_lower: np.ndarray | None = None
    workspace_upper: np.ndarray | None = None


@dataclass(eq=False)
class ViolationReport:
    """Worst soft-constraint excursions seen over a predicted plan."""

    behind_camera: int = 0
    clamp: float = 0.0
    min_target_distance: float = math.inf
    workspace: float = 0.0


@dataclass(eq=False)
class PlanEvaluation:
    """Everything the solver needs from one plan evaluation."""

    objective: float
    cost: CostBreakdown
    per_step: list[CostBreakdown]
    penalty: float
    violations: ViolationReport
    grad_drone: np.ndarray | None = None
    grad_camera: np.ndarray | None = None


# ---------------------------------------------------------------------------
# reference single-state operations


def j_dof(
    intr: CameraIntrinsics, lens: LensConstants, directive: ShotDirective
) -> float:
    """Squared mismatch of the near/far focus limits vs. their targets.

    The far-limit difference is taken in saturated space (both sides
    squashed), so an unbounded actual far limit against a finite desired
    one costs a large finite amount instead of blowing up.
    """
    _require_resolved(directive)
    value = 0.0
    if directive.near.active or directive.far.active:
        lim = optics._limits_core(
            intr.focal_length,
            intr.focus_distance,
            intr.aperture,
            lens.circle_of_confusion,
        )
        if directive.near.active:
            e = lim.near - directive.near.distance
            value += directive.near.weight * e * e
        if directive.far.active:
            e = _sat(lim.far) - _sat(directive.far.distance)
            value += directive.far.weight * e * e
    return value


def j_im(
    drone: DroneState,
    targets: Measurement,
    f: float,
    lens: LensConstants,
    directive: ShotDirective,
    behind_penalty: float = BEHIND_CAMERA_PENALTY,
) -> float:
    """Weighted squared pixel error of every target feature point.

    A weighted feature behind the camera charges ``behind_penalty``
    instead of raising, so the optimizer sees a finite objective wherever
    its line search probes; the event is logged and counted.
    """
    beta = lens.pixels_per_meter
    cu, cv = lens.principal_point
    rot_t = drone.rotation.T
    value = 0.0
    for term in directive.image:
        if term.weight == 0.0:
            continue
        point = targets[term.target].position + np.array([0.0, 0.0, term.offset])
        pc = rot_t @ (point - drone.position)
        if pc[2] <= 0.0:
            logger.debug("image feature of %r is behind the camera", term.target)
            value += behind_penalty
            continue
        bf = beta * f
        eu = cu + (bf * pc[0] + lens.skew * pc[1]) / pc[2] - term.pixel[0]
        ev = cv + bf * pc[1] / pc[2] - term.pixel[1]
        value += term.weight * (eu * eu + ev * ev)
    return value


def j_p(
    drone: DroneState,
    targets: Measurement,
    directive: ShotDirective,
    behind_penalty: float = BEHIND_CAMERA_PENALTY,
) -> float:
    """Weighted depth and relative-rotation mismatch over all targets."""
    rot = drone.rotation
    value = 0.0
    for term in directive.pose:
        obs = targets[term.target]
        if term.depth_weight > 0.0:
            z = float(rot.T[2] @ (obs.position - drone.position))
            if z <= 0.0:
                logger.debug("depth target %r is behind the camera", term.target)
                value += behind_penalty
            else:
                e = z - term.depth
                value += term.depth_weight * e * e
        if term.rotation_weight > 0.0:
            diff = obs.rotation.T @ rot @ term.rotation - np.eye(3)
            phi = float(np.sum(diff * diff))
            value += term.rotation_weight * (
                math.sqrt(phi + _ROT_EPS * _ROT_EPS) - _ROT_EPS
            )
    return value


def stage_cost(
    drone: DroneState,
    intr: CameraIntrinsics,
    targets: Measurement,
    lens: LensConstants,
    directive: ShotDirective,
) -> CostBreakdown:
    """All three cost terms at one world state."""
    return CostBreakdown(
        j_dof(intr, lens, directive),
        j_im(drone, targets, intr.focal_length, lens, directive),
        j_p(drone, targets, directive),
    )


def total_cost(
    drone_states: list[DroneState],
    cam_states: list[CameraIntrinsics],
    targets: Measurement,
    lens: LensConstants,
    directive: ShotDirective,
) -> tuple[CostBreakdown, list[CostBreakdown]]:
    """Per-step cost terms summed over a predicted state sequence."""
    per_step = [
        stage_cost(drone, intr, targets, lens, directive)
        for drone, intr in zip(drone_states, cam_states)
    ]
    return sum(per_step, CostBreakdown()), per_step


def _require_resolved(directive: ShotDirective) -> None:
    if not directive.resolved:
        raise ValueError(
            "directive still carries target-anchored focus limits; call "
            "resolve() with the current measurement first"
        )


# ---------------------------------------------------------------------------
# vectorized trajectory evaluation (value + adjoint gradient)


class PlanEvaluator:
    """Evaluates cost, penalties and input gradients for candidate plans
    against one frozen measurement set.

    Build one per solve; the directive and measurements are flattened
    into arrays once, and every candidate-plan evaluation is vectorized
    across the horizon.
    """

    def __init__(
        self,
        drone: DroneState,
        intr: CameraIntrinsics,
        targets: Measurement,
        lens: LensConstants,
        directive: ShotDirective,
        dt: float,
        limits: IntrinsicsLimits,
        penalties: PenaltyConfig | None = None,
        behind_penalty: float = BEHIND_CAMERA_PENALTY,
    ) -> None:
        _require_resolved(directive)
        self.p0 = np.asarray(drone.position, dtype=float)
        self.v0 = np.asarray(drone.velocity, dtype=float)
        self.r0 = np.asarray(drone.rotation, dtype=float)
        self.c0 = intr.as_array()
        self.dt = float(dt)
        self.coc = lens.circle_of_confusion
        self.beta = lens.pixels_per_meter
        self.skew = lens.skew
        self.cu, self.cv = lens.principal_point
        self.behind_penalty = behind_penalty
        self.limits_lo = limits.lower
        self.limits_hi = limits.upper
        self.pen = penalties

        self.w_near = directive.near.weight
        self.near_star = directive.near.distance if directive.near.active else 0.0
        self.w_far = directive.far.weight
        self.sat_far_star = (
            _sat(directive.far.distance) if directive.far.active else 0.0
        )

        img = [t for t in directive.image if t.weight > 0.0]
        self.img_points = np.array(
            [targets[t.target].position + [0.0, 0.0, t.offset] for t in img]
        ).reshape(-1, 3)
        self.img_star = np.array([t.pixel for t in img]).reshape(-1, 2)
        self.img_w = np.array([t.weight for t in img])

        dep = [t for t in directive.pose if t.depth_weight > 0.0]
        self.dep_points = np.array(
            [targets[t.target].position for t in dep]
        ).reshape(-1, 3)
        self.dep_star = np.array([t.depth for t in dep])
        self.dep_w = np.array([t.depth_weight for t in dep])

        rot = [t for t in directive.pose if t.rotation_weight > 0.0]
        self.rot_left = np.array(
            [targets[t.target].rotation.T for t in rot]
        ).reshape(-1, 3, 3)
        self.rot_star = np.array([t.rotation for t in rot]).reshape(-1, 3, 3)
        self.rot_w = np.array([t.rotation_weight for t in rot])

        self.obstacles = np.array(
            [obs.position for obs in targets.values()]
        ).reshape(-1, 3)
        self._eye = np.eye(3)

    # -- dynamics ---------------------------------------------------------

    def _rollout(self, ud: np.ndarray, uc: np.ndarray):
        dt = self.dt
        n = len(ud) - 1
        accel = ud[:n, :3]
        vel = np.empty((n + 1, 3))
        vel[0] = self.v0
        np.cumsum(accel * dt, axis=0, out=vel[1:])
        vel[1:] += self.v0
        pos = np.empty((n + 1, 3))
        pos[0] = self.p0
        np.cumsum(vel[:n] * dt + (0.5 * dt * dt) * accel, axis=0, out=pos[1:])
        pos[1:] += self.p0

        phi = ud[:n, 3:] * dt
        theta2 = np.einsum("ki,ki->k", phi, phi)
        theta = np.sqrt(theta2)
        small = theta < 1e-10
        safe2 = np.where(small, 1.0, theta2)
        a = np.where(small, 1.0, np.sin(theta) / np.sqrt(safe2))
        b = np.where(small, 0.5, (1.0 - np.cos(theta)) / safe2)
        k_mat = np.zeros((n, 3, 3))
        k_mat[:, 0, 1] = -phi[:, 2]
        k_mat[:, 0, 2] = phi[:, 1]
        k_mat[:, 1, 0] = phi[:, 2]
        k_mat[:, 1, 2] = -phi[:, 0]
        k_mat[:, 2, 0] = -phi[:, 1]
        k_mat[:, 2, 1] = phi[:, 0]
        exps = (
            self._eye
            + a[:, None, None] * k_mat
            + b[:, None, None] * np.einsum("kij,kjl->kil", k_mat, k_mat)
        )
        rots = np.empty((n + 1, 3, 3))
        rots[0] = self.r0
        for k in range(n):
            np.matmul(rots[k], exps[k], out=rots[k + 1])

        lo, hi = self.limits_lo, self.limits_hi
        cams = np.empty((n + 1, 3))
        cams[0] = self.c0
        path = self.c0 + np.cumsum(uc[:n] * dt, axis=0)
        inside = (path > lo) & (path < hi)
        if inside.all():
            # nothing clamps along the way, so the unclamped cumulative
            # integration is the exact trajectory
            cams[1:] = path
            pass_mask = np.ones((n, 3))
            violations = np.zeros((n, 3))
        else:
            pass_mask = np.empty((n, 3))
            violations = np.empty((n, 3))
            for k in range(n):
                raw = cams[k] + uc[k] * dt
                clipped = np.minimum(np.maximum(raw, lo), hi)
                cams[k + 1] = clipped
                pass_mask[k] = (raw > lo) & (raw < hi)
                violations[k] = np.maximum(raw - hi, 0.0) + np.minimum(raw - lo, 0.0)
        return pos, vel, rots, exps, cams, pass_mask, violations

    # -- evaluation -------------------------------------------------------

    def evaluate(
        self,
        ud: np.ndarray,
        uc: np.ndarray,
        want_grad: bool = False,
        want_steps: bool = False,
    ) -> PlanEvaluation:
        dt = self.dt
        n = len(ud) - 1
        pos, vel, rots, exps, cams, pass_mask, violations = self._rollout(ud, uc)
        report = ViolationReport()
        rots_t = rots.transpose(0, 2, 1)
        f = cams[:, 0]
        stage_jd = np.zeros(n + 1)
        stage_jim = np.zeros(n + 1)
        stage_jp = np.zeros(n + 1)

        gp = np.zeros((n + 1, 3)) if want_grad else None
        geps = np.zeros((n + 1, 3)) if want_grad else None
        gc = np.zeros((n + 1, 3)) if want_grad else None

        # depth-of-field term
        if self.w_near > 0.0 or self.w_far > 0.0:
            big_f, ap = cams[:, 1], cams[:, 2]
            h = f * f / (ap * self.coc) + f
            bounded = big_f < h
            if self.w_near > 0.0:
                wn = h + big_f - 2.0 * f
                near = big_f * (h - f) / wn
                e = near - self.near_star
                stage_jd += self.w_near * e * e
            if self.w_far > 0.0:
                wf = np.where(bounded, h - big_f, 1.0)
                far = np.where(bounded, big_f * (h - f) / wf, np.inf)
                t = np.tanh(far / FAR_SATURATION)
                e = FAR_SATURATION * t - self.sat_far_star
                stage_jd += self.w_far * e * e
            if want_grad:
                dh_df = 2.0 * f / (ap * self.coc) + 1.0
                dh_da = -f * f / (ap * ap * self.coc)
                if self.w_near > 0.0:
                    dn_dh = big_f * (big_f - f) / (wn * wn)
                    coef = 2.0 * self.w_near * (near - self.near_star)
                    gc[:, 0] += coef * (big_f * (h - big_f) / (wn * wn) + dn_dh * dh_df)
                    gc[:, 1] += coef * ((h - f) * (h - 2.0 * f) / (wn * wn))
                    gc[:, 2] += coef * (dn_dh * dh_da)
                if self.w_far > 0.0:
                    sat_g = np.where(bounded, 1.0 - t * t, 0.0)
                    df_dh = big_f * (f - big_f) / (wf * wf)
                    coef = 2.0 * self.w_far * e * sat_g * bounded
                    gc[:, 0] += coef * (-big_f / wf + df_dh * dh_df)
                    gc[:, 1] += coef * ((h - f) * h / (wf * wf))
                    gc[:, 2] += coef * (df_dh * dh_da)

        # image-composition term
        if len(self.img_w):
            delta = self.img_points[None, :, :] - pos[:, None, :]
            pc = np.einsum("kab,kmb->kma", rots_t, delta)
            z = pc[..., 2]
            front = z > 0.0
            behind = np.count_nonzero(~front)
            if behind:
                report.behind_camera += int(behind)
            zs = np.where(front, z, 1.0)
            bf = self.beta * f
            num_u = bf[:, None] * pc[..., 0] + self.skew * pc[..., 1]
            eu = self.cu + num_u / zs - self.img_star[:, 0]
            ev = self.cv + bf[:, None] * pc[..., 1] / zs - self.img_star[:, 1]
            term = np.where(
                front,
                self.img_w * (eu * eu + ev * ev),
                self.behind_penalty,
            )
            stage_jim += term.sum(axis=1)
            if want_grad:
                gu = np.where(front, 2.0 * self.img_w * eu, 0.0)
                gv = np.where(front, 2.0 * self.img_w * ev, 0.0)
                gpc = np.empty_like(pc)
                gpc[..., 0] = gu * bf[:, None] / zs
                gpc[..., 1] = (gu * self.skew + gv * bf[:, None]) / zs
                gpc[..., 2] = -(gu * num_u + gv * bf[:, None] * pc[..., 1]) / (
                    zs * zs
                )
                gp -= np.einsum("kab,kmb->ka", rots, gpc)
                geps += np.cross(gpc, pc).sum(axis=1)
                gc[:, 0] += (
                    ((gu * pc[..., 0] + gv * pc[..., 1]) / zs).sum(axis=1) * self.beta
                )

        # canonical-shot term: depth part
        if len(self.dep_w):
            delta = self.dep_points[None, :, :] - pos[:, None, :]
            pc = np.einsum("kab,kmb->kma", rots_t, delta)
            z = pc[..., 2]
            front = z > 0.0
            behind = np.count_nonzero(~front)
            if behind:
                report.behind_camera += int(behind)
            e = z - self.dep_star
            stage_jp += np.where(
                front, self.dep_w * e * e, self.behind_penalty
            ).sum(axis=1)
            if want_grad:
                gz = np.where(front, 2.0 * self.dep_w * e, 0.0)
                gpc = np.zeros_like(pc)
                gpc[..., 2] = gz
                gp -= np.einsum("kab,kmb->ka", rots, gpc)
                geps += np.cross(gpc, pc).sum(axis=1)

        # canonical-shot term: relative-rotation part
        if len(self.rot_w):
            a_mat = np.einsum(
                "rab,kbc,rcd->krad", self.rot_left, rots, self.rot_star
            )
            diff = a_mat - np.eye(3)
            phi = np.einsum("krab,krab->kr", diff, diff)
            s = np.sqrt(phi + _ROT_EPS * _ROT_EPS)
            stage_jp += (self.rot_w * (s - _ROT_EPS)).sum(axis=1)
            if want_grad:
                m = np.einsum(
                    "rab,krcb,rcd,kde->krae",
                    self.rot_star,
                    diff,
                    self.rot_left,
                    rots,
                )
                ax = np.stack(
                    [
                        m[..., 1, 2] - m[..., 2, 1],
                        m[..., 2, 0] - m[..., 0, 2],
                        m[..., 0, 1] - m[..., 1, 0],
                    ],
                    axis=-1,
                )
                geps += ((self.rot_w / s)[..., None] * ax).sum(axis=1)

        if report.behind_camera:
            logger.debug(
                "%d weighted target terms fell behind the camera during a "
                "plan evaluation",
                report.behind_camera,
            )

        # soft penalties
        penalty = 0.0
        gpen = np.zeros((n + 1, 3)) if want_grad else None
        if self.pen is not None:
            pen = self.pen
            if len(self.obstacles):
                delta = pos[:, None, :] - self.obstacles[None, :, :]
                dist = np.sqrt(np.einsum("kma,kma->km", delta, delta))
                report.min_target_distance = float(dist.min())
                gap = pen.min_target_distance - dist
                active = gap > 0.0
                if active.any():
                    h = np.where(active, gap, 0.0)
                    penalty += pen.distance_weight * float(np.sum(h * h))
                    if want_grad:
                        safe = np.where(dist > 1e-9, dist, 1.0)
                        coef = np.where(
                            dist > 1e-9, -2.0 * pen.distance_weight * h / safe, 0.0
                        )
                        gpen += np.einsum("km,kma->ka", coef, delta)
            if pen.workspace_lower is not None:
                excess = np.maximum(pos - pen.workspace_upper, 0.0) + np.minimum(
                    pos - pen.workspace_lower, 0.0
                )
                if excess.any():
                    report.workspace = float(np.max(np.abs(excess)))
                    penalty += pen.distance_weight * float(np.sum(excess * excess))
                    if want_grad:
                        gpen += 2.0 * pen.distance_weight * excess
            report.clamp = float(np.max(np.abs(violations), initial=0.0))
            penalty += self.pen.clamp_weight * float(np.sum(violations * violations))

        cost = CostBreakdown(
            float(stage_jd.sum()), float(stage_jim.sum()), float(stage_jp.sum())
        )
        per_step = []
        if want_steps:
            per_step = [
                CostBreakdown(float(a), float(b), float(c))
                for a, b, c in zip(stage_jd, stage_jim, stage_jp)
            ]
        result = PlanEvaluation(
            objective=cost.total + penalty,
            cost=cost,
            per_step=per_step,
            penalty=penalty,
            violations=report,
        )
        if not want_grad:
            return result

        if gpen is not None:
            gp = gp + gpen

        grad_drone = np.zeros_like(ud)
        grad_camera = np.zeros_like(uc)
        lam_p = gp[n].copy()
        lam_v = np.zeros(3)
        g_eps = geps[n].copy()
        lam_c = gc[n].copy()
        clamp_w = self.pen.clamp_weight if self.pen is not None else 0.0
        jr_t = _batch_right_jacobian(ud[:n, 3:] * dt).transpose(0, 2, 1)
        for k in range(n - 1, -1, -1):
            grad_drone[k, :3] = (0.5 * dt * dt) * lam_p + dt * lam_v
            grad_drone[k, 3:] = dt * (jr_t[k] @ g_eps)
            masked = pass_mask[k] * lam_c
            grad_camera[k] = dt * masked
            if clamp_w:
                pen_raw = (2.0 * clamp_w) * violations[k]
                grad_camera[k] += dt * pen_raw
            lam_v = lam_v + dt * lam_p
            lam_p = lam_p + gp[k]
            g_eps = exps[k] @ g_eps + geps[k]
            lam_c = masked + gc[k]
            if clamp_w:
                lam_c = lam_c + pen_raw

        result.grad_drone = grad_drone
        result.grad_camera = grad_camera
        return result


def evaluate_plan(
    drone: DroneState,
    intr: CameraIntrinsics,
    drone_inputs: np.ndarray,
    cam_inputs: np.ndarray,
    targets: Measurement,
    lens: LensConstants,
    directive: ShotDirective,
    dt: float,
    limits: IntrinsicsLimits,
    penalties: PenaltyConfig | None = None,
    want_grad: bool = False,
    behind_penalty: float = BEHIND_CAMERA_PENALTY,
) -> PlanEvaluation:
    """One-shot plan evaluation (builds a throwaway :class:`PlanEvaluator`).

    Input slot k shapes predicted state k+1; the final slot therefore has
    zero gradient (it only matters after the warm-start shift).
    """
    ev = PlanEvaluator(
        drone, intr, targets, lens, directive, dt, limits, penalties, behind_penalty
    )
    return ev.evaluate(drone_inputs, cam_inputs, want_grad, want_steps=True)


def cost_gradient(
    drone: DroneState,
    intr: CameraIntrinsics,
    drone_inputs: np.ndarray,
    cam_inputs: np.ndarray,
    targets: Measurement,
    lens: LensConstants,
    directive: ShotDirective,
    dt: float,
    limits: IntrinsicsLimits,
    penalties: PenaltyConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the summed trajectory cost (plus penalties when given)
    with respect to the drone and lens input slots."""
    ev = evaluate_plan(
        drone,
        intr,
        drone_inputs,
        cam_inputs,
        targets,
        lens,
        directive,
        dt,
        limits,
        penalties,
        want_grad=True,
    )
    return ev.grad_drone, ev.grad_camera
