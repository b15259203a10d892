"""Thin-lens depth-of-field math.

Hyperfocal distance, near/far focus limits and their partial derivatives
with respect to the controllable lens state (focal length, focus
distance, aperture).

Everything here works in meters.  Scenario files may quote focal length
and circle of confusion in millimeters; that conversion happens at parse
time, never in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "OpticsDomainError",
    "LensConstants",
    "CameraIntrinsics",
    "DofInterval",
    "DofPartials",
    "hyperfocal",
    "near_distance",
    "far_distance",
    "dof_interval",
    "dof_partials",
]

# Conventional full-frame circle of confusion, used when a scenario omits it.
DEFAULT_CIRCLE_OF_CONFUSION = 3.0e-5

# Relative safety margin: focus distance must stay above f * (1 + margin).
FOCUS_MARGIN = 1e-6


class OpticsDomainError(ValueError):
    """A lens state left the domain of the thin-lens formulas."""


@dataclass(frozen=True)
class LensConstants:
    """Fixed lens/sensor constants shared by optics and projection.

    Attributes
    ----------
    circle_of_confusion : largest blur-spot diameter still read as sharp [m].
    sensor_width, sensor_height : physical sensor size [m].
    image_width, image_height : image size [px].
    skew : calibration-matrix skew term [px], normally 0.
    principal_point : optical center (c_u, c_v) [px]; defaults to the
        image center.
    """

    circle_of_confusion: float
    sensor_width: float
    sensor_height: float
    image_width: int
    image_height: int
    skew: float = 0.0
    principal_point: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.circle_of_confusion <= 0:
            raise OpticsDomainError("circle_of_confusion must be > 0")
        if self.sensor_width <= 0 or self.sensor_height <= 0:
            raise OpticsDomainError("sensor dimensions must be > 0")
        if self.image_width <= 0 or self.image_height <= 0:
            raise OpticsDomainError("image dimensions must be > 0")
        rows = self.image_height / self.sensor_height
        cols = self.image_width / self.sensor_width
        if abs(rows - cols) > 1e-9 * max(rows, cols):
            raise OpticsDomainError(
                "sensor and image aspect ratios disagree; the pixel/meter "
                f"ratio is ill defined ({rows:.6g} px/m vs {cols:.6g} px/m)"
            )
        if self.principal_point is None:
            object.__setattr__(
                self,
                "principal_point",
                (self.image_width / 2.0, self.image_height / 2.0),
            )

    @property
    def pixels_per_meter(self) -> float:
        """Sensor-to-image scale (the beta ratio) [px/m]."""
        return self.image_height / self.sensor_height


@dataclass(frozen=True)
class CameraIntrinsics:
    """Controllable lens state: focal length [m], focus distance [m],
    aperture (dimensionless f-stop)."""

    focal_length: float
    focus_distance: float
    aperture: float

    def __post_init__(self) -> None:
        if self.focal_length <= 0:
            raise OpticsDomainError("focal_length must be > 0")
        if self.aperture <= 0:
            raise OpticsDomainError("aperture must be > 0")
        if self.focus_distance <= self.focal_length:
            raise OpticsDomainError(
                f"focus_distance ({self.focus_distance!r}) must exceed "
                f"focal_length ({self.focal_length!r})"
            )

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.focal_length, self.focus_distance, self.aperture], dtype=float
        )


@dataclass(frozen=True)
class DofInterval:
    """Axial in-focus interval [near, far] in meters; far may be inf."""

    near: float
    far: float

    def __post_init__(self) -> None:
        if self.near <= 0:
            raise OpticsDomainError("near limit must be > 0")
        if not self.far > self.near:
            raise OpticsDomainError("far limit must exceed near limit")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.far)


@dataclass(frozen=True)
class DofPartials:
    """Partial derivatives of the focus limits.

    ``near`` and ``far`` hold d(limit)/d(focal_length, focus_distance,
    aperture), in that order.
    """

    near: np.ndarray
    far: np.ndarray


def hyperfocal(intr: CameraIntrinsics, lens: LensConstants) -> float:
    """Hyperfocal distance H = f^2 / (A c) + f."""
    f = intr.focal_length
    a = intr.aperture
    c = lens.circle_of_confusion
    if f <= 0 or a <= 0 or c <= 0:
        raise OpticsDomainError("hyperfocal needs f, A, c all > 0")
    return f * f / (a * c) + f


def near_distance(intr: CameraIntrinsics, lens: LensConstants) -> float:
    """Near focus limit D_n = F (H - f) / (H + F - 2 f)."""
    f = intr.focal_length
    big_f = intr.focus_distance
    if big_f <= f:
        raise OpticsDomainError("focus distance must exceed focal length")
    h = hyperfocal(intr, lens)
    return big_f * (h - f) / (h + big_f - 2.0 * f)


def far_distance(intr: CameraIntrinsics, lens: LensConstants) -> float:
    """Far focus limit D_f = F (H - f) / (H - F); inf once F reaches H.

    The raw formula turns negative past the hyperfocal distance, where
    physically everything out to infinity is in focus, so that branch
    reports an unbounded limit instead.
    """
    f = intr.focal_length
    big_f = intr.focus_distance
    if big_f <= f:
        raise OpticsDomainError("focus distance must exceed focal length")
    h = hyperfocal(intr, lens)
    if big_f >= h:
        return math.inf
    return big_f * (h - f) / (h - big_f)


def dof_interval(intr: CameraIntrinsics, lens: LensConstants) -> DofInterval:
    """Near and far limits as one interval."""
    return DofInterval(near_distance(intr, lens), far_distance(intr, lens))


def dof_partials(intr: CameraIntrinsics, lens: LensConstants) -> DofPartials:
    """Analytic d(D_n)/d(f, F, A) and d(D_f)/d(f, F, A).

    Requires a bounded far limit (F < H); at or past the hyperfocal
    distance the far-limit derivative does not exist.
    """
    values = _limits_with_partials(intr, lens)
    if values.far_partials is None:
        raise OpticsDomainError(
            "far-limit partials are singular at or beyond the hyperfocal distance"
        )
    return DofPartials(near=values.near_partials, far=values.far_partials)


@dataclass(frozen=True)
class _LimitEval:
    """Shared evaluation used by both the public partials and the cost
    gradients (which must tolerate the unbounded-far branch)."""

    near: float
    far: float
    near_partials: np.ndarray
    far_partials: np.ndarray | None


def _limits_with_partials(intr: CameraIntrinsics, lens: LensConstants) -> _LimitEval:
    return _limits_core(
        intr.focal_length,
        intr.focus_distance,
        intr.aperture,
        lens.circle_of_confusion,
    )


def _limits_core(f: float, big_f: float, a: float, c: float) -> _LimitEval:
    if big_f <= f:
        raise OpticsDomainError("focus distance must exceed focal length")

    h = f * f / (a * c) + f
    dh_df = 2.0 * f / (a * c) + 1.0
    dh_da = -f * f / (a * a * c)

    wn = h + big_f - 2.0 * f
    near = big_f * (h - f) / wn
    dn_dh = big_f * (big_f - f) / (wn * wn)
    near_partials = np.array(
        [
            big_f * (h - big_f) / (wn * wn) + dn_dh * dh_df,
            (h - f) * (h - 2.0 * f) / (wn * wn),
            dn_dh * dh_da,
        ]
    )

    if big_f >= h:
        return _LimitEval(near, math.inf, near_partials, None)

    wf = h - big_f
    far = big_f * (h - f) / wf
    df_dh = big_f * (f - big_f) / (wf * wf)
    far_partials = np.array(
        [
            -big_f / wf + df_dh * dh_df,
            (h - f) * h / (wf * wf),
            df_dh * dh_da,
        ]
    )
    return _LimitEval(near, far, near_partials, far_partials)
