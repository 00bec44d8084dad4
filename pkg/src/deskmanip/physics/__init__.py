from .config import (GROUND_TOP, TABLE_CENTER, TABLE_HALF, TABLE_TOP,
                     SimConfig, static_polys)
from .engine import ContactReport, Sim, StepDiagnostics, WorldState
from .morphology import (ACTION_DIM, BODY_NAMES, CART_LIMIT, FINGER_BODIES,
                         FINGER_RADIUS, PALM_RADIUS,
                         HAND_BODIES, JOINT_NAMES, NUM_ARM_JOINTS, NUM_BODIES,
                         OBJ, PALM_BODIES, TORSO_HEIGHT, Morphology, canonical,
                         finger_angle_for_gap, forward_kinematics, grip_gap,
                         joint_angles_from_poses, joint_velocities_from_bodies,
                         pad_world)

__all__ = [
    "ACTION_DIM", "BODY_NAMES", "CART_LIMIT", "ContactReport", "FINGER_BODIES",
    "FINGER_RADIUS", "PALM_RADIUS",
    "GROUND_TOP", "HAND_BODIES", "JOINT_NAMES", "Morphology", "NUM_ARM_JOINTS",
    "NUM_BODIES", "OBJ", "PALM_BODIES", "Sim", "SimConfig", "StepDiagnostics",
    "TABLE_CENTER", "TABLE_HALF", "TABLE_TOP", "TORSO_HEIGHT", "WorldState",
    "canonical", "finger_angle_for_gap", "forward_kinematics", "grip_gap",
    "joint_angles_from_poses", "joint_velocities_from_bodies", "pad_world",
    "static_polys",
]
