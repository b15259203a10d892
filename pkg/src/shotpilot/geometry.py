"""Rotations, poses, camera projection and relative-pose quantities.

Frame conventions (used consistently everywhere):

- World frame: right handed, z up.
- Camera frame: x right, y down, z forward (the usual computer-vision
  convention), so a point with positive third component is in front of
  the camera and its axial depth is that component.
- A camera/gimbal rotation is world-from-camera: columns are the camera
  axes expressed in world coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .optics import LensConstants

__all__ = [
    "BehindCameraError",
    "Pose",
    "skew",
    "vee",
    "exp_map",
    "right_jacobian",
    "is_rotation",
    "camera_yaw_rotation",
    "relative_yaw_rotation",
    "relative_position",
    "calibration_matrix",
    "project",
    "relative_rotation",
    "target_depth",
    "rotation_distance",
]

_SMALL_ANGLE = 1e-10


class BehindCameraError(ValueError):
    """A projected point has non-positive depth."""


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix [v]x with [v]x @ w == cross(v, w)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def vee(w_mat: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` for a skew-symmetric matrix."""
    return np.array([w_mat[2, 1], w_mat[0, 2], w_mat[1, 0]])


def exp_map(omega: np.ndarray, dt: float = 1.0) -> np.ndarray:
    """Rodrigues rotation for the angular-velocity step omega * dt.

    Falls back to the second-order series below 1e-10 rad, where the
    closed form would divide by ~0.
    """
    phi = np.asarray(omega, dtype=float) * dt
    theta = float(np.linalg.norm(phi))
    w_mat = skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + w_mat + 0.5 * (w_mat @ w_mat)
    s = math.sin(theta) / theta
    c = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + s * w_mat + c * (w_mat @ w_mat)


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian of the rotation exponential at phi.

    Maps a perturbation of the rotation vector to the equivalent body-frame
    perturbation of the resulting rotation:
    exp(phi + d) = exp(phi) exp(J_r(phi) d) to first order.
    """
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    w_mat = skew(phi)
    if theta < 1e-4:
        # series: (1 - cos)/t^2 ~ 1/2 - t^2/24, (t - sin)/t^3 ~ 1/6 - t^2/120
        a = 0.5 - theta * theta / 24.0
        b = 1.0 / 6.0 - theta * theta / 120.0
    else:
        a = (1.0 - math.cos(theta)) / (theta * theta)
        b = (theta - math.sin(theta)) / (theta ** 3)
    return np.eye(3) - a * w_mat + b * (w_mat @ w_mat)


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    """True when r is orthonormal with determinant +1 within tol."""
    r = np.asarray(r)
    if r.shape != (3, 3):
        return False
    ortho = np.linalg.norm(r.T @ r - np.eye(3)) <= tol
    return bool(ortho and abs(np.linalg.det(r) - 1.0) <= tol)


@dataclass(frozen=True, eq=False)
class Pose:
    """Position [m, world] plus world-from-body rotation."""

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))


def camera_yaw_rotation(yaw: float) -> np.ndarray:
    """World-from-camera rotation for a level camera looking along the
    horizontal direction (cos yaw, sin yaw, 0)."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    # columns: camera x (image right), y (image down), z (forward) in world
    return np.array(
        [
            [sy, 0.0, cy],
            [-cy, 0.0, sy],
            [0.0, -1.0, 0.0],
        ]
    )


def relative_yaw_rotation(delta: float) -> np.ndarray:
    """Camera-to-target relative rotation produced by a pure yaw offset.

    For poses built with :func:`camera_yaw_rotation`,
    relative_rotation(C(a), C(b)) == relative_yaw_rotation(b - a).
    """
    return exp_map(np.array([0.0, -delta, 0.0]))


def relative_position(drone: Pose, target_pos: np.ndarray) -> np.ndarray:
    """Target position expressed in the camera frame: R^T (p_t - p_d)."""
    return drone.rotation.T @ (np.asarray(target_pos, dtype=float) - drone.position)


def calibration_matrix(f: float, lens: LensConstants) -> np.ndarray:
    """Pinhole calibration matrix with focal length converted to pixels."""
    bf = lens.pixels_per_meter * f
    cu, cv = lens.principal_point
    return np.array(
        [
            [bf, lens.skew, cu],
            [0.0, bf, cv],
            [0.0, 0.0, 1.0],
        ]
    )


def project(p_dt: np.ndarray, f: float, lens: LensConstants) -> np.ndarray:
    """Perspective projection of a camera-frame point to pixels.

    The homogeneous scale is normalized away, so project(k p) == project(p)
    for any k > 0.
    """
    x, y, z = float(p_dt[0]), float(p_dt[1]), float(p_dt[2])
    if z <= 0.0:
        raise BehindCameraError(f"point depth {z!r} is not in front of the camera")
    bf = lens.pixels_per_meter * f
    cu, cv = lens.principal_point
    return np.array(
        [
            cu + (bf * x + lens.skew * y) / z,
            cv + bf * y / z,
        ]
    )


def relative_rotation(drone: Pose, target: Pose) -> np.ndarray:
    """Camera-to-target rotation R_d^T R_t."""
    return drone.rotation.T @ target.rotation


def target_depth(p_dt: np.ndarray) -> float:
    """Axial depth of a camera-frame point (its forward component)."""
    z = float(p_dt[2])
    if z <= 0.0:
        raise BehindCameraError(f"point depth {z!r} is not in front of the camera")
    return z


def rotation_distance(r: np.ndarray, r_star: np.ndarray) -> float:
    """Chordal distance ||R^T R* - I||_F.

    Zero exactly when the rotations coincide, maximal (2 sqrt 2) at 180
    degrees separation, and invariant to a common left rotation.
    """
    return float(np.linalg.norm(r.T @ r_star - np.eye(3)))
