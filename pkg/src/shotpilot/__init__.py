"""shotpilot: closed-loop control of a drone-mounted thin-lens cinema
camera.

A receding-horizon controller jointly drives the camera carrier (drone
position and gimbal orientation) and the lens state (focal length, focus
distance, aperture) to satisfy scripted shot directives: desired
depth-of-field limits, image composition, target depth, and filming
angle.  A deterministic simulator closes the loop against scripted
scenes.
"""

from .costs import (
    CostBreakdown,
    DofGoal,
    ImageTerm,
    PoseTerm,
    ShotDirective,
)
from .geometry import Pose
from .mpc import ControlPlan, ControllerState, SolveResult, SolverConfig
from .optics import CameraIntrinsics, DofInterval, LensConstants
from .scenario import Scenario, load_scenario, parse_scenario, run
from .trace import TraceRecord, read_trace, render_plots, write_trace
from .world import DroneInput, DroneState, IntrinsicsInput, IntrinsicsLimits, TargetState

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "ControlPlan",
    "ControllerState",
    "CostBreakdown",
    "DofGoal",
    "DofInterval",
    "DroneInput",
    "DroneState",
    "ImageTerm",
    "IntrinsicsInput",
    "IntrinsicsLimits",
    "LensConstants",
    "Pose",
    "PoseTerm",
    "Scenario",
    "ShotDirective",
    "SolveResult",
    "SolverConfig",
    "TargetState",
    "TraceRecord",
    "load_scenario",
    "parse_scenario",
    "read_trace",
    "render_plots",
    "run",
    "write_trace",
]
