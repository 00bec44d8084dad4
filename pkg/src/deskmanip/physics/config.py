"""Simulation configuration and the static scene (ground plane + table)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# static collision boxes as CCW vertex lists (world frame)
GROUND_TOP = 0.0
TABLE_TOP = 0.45
TABLE_HALF = (0.80, 0.225)
TABLE_CENTER = (0.0, 0.225)


def _box(cx: float, cy: float, hx: float, hy: float) -> np.ndarray:
    return np.array([
        [cx - hx, cy - hy], [cx + hx, cy - hy],
        [cx + hx, cy + hy], [cx - hx, cy + hy],
    ])


def static_polys() -> list[np.ndarray]:
    """Ground slab and table box, in solver order."""
    return [_box(0.0, -0.5, 6.0, 0.5), _box(*TABLE_CENTER, *TABLE_HALF)]


@dataclass(frozen=True)
class SimConfig:
    """Solver + contact parameters. Defaults are the tested configuration."""

    substep_hz: float = 120.0
    decimation: int = 4
    gravity: float = 9.81
    # grasp sandwiches (finger-object-finger through the arm chain) need
    # well over 16 Gauss-Seidel sweeps before friction stops creeping
    solver_iters: int = 32
    baumgarte: float = 0.2
    contact_slop: float = 0.0005
    friction: float = 1.5
    restitution: float = 0.7           # object contacts only
    restitution_threshold: float = 0.5
    max_depenetration_speed: float = 100.0
    joint_projection_passes: int = 2
    arm_gravity_comp: bool = True
    # per-joint-kind PD gains; kd is derived as sqrt(kp * I_about_joint),
    # i.e. half critical damping: moving-target lag scales with kd/kp and
    # full critical damping drags tracking several cm behind a moving
    # reference at these speeds
    kp_by_kind: dict = field(default_factory=lambda: {
        "shoulder": 400.0, "elbow": 300.0, "wrist": 60.0, "finger": 12.0})
    tau_by_kind: dict = field(default_factory=lambda: {
        "shoulder": 40.0, "elbow": 25.0, "wrist": 8.0, "finger": 3.0})
    cart_kp: float = 1200.0
    cart_fmax: float = 250.0

    def __post_init__(self):
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")
        if self.substep_hz <= 0:
            raise ValueError("substep_hz must be positive")

    @property
    def substep_dt(self) -> float:
        return 1.0 / self.substep_hz

    @property
    def control_dt(self) -> float:
        return self.decimation / self.substep_hz

    @property
    def control_hz(self) -> float:
        return self.substep_hz / self.decimation
