from .clip import Dataset, FrameRef, MotionClip, load_dataset, save_dataset
from .ik import arm_joint_angles, ik_2link
from .retarget import (RetargetResult, filter_clip, retarget_object,
                       retarget_objective, solve_frame_offset)
from .templates import (TEMPLATES, build_dataset, generate_clip,
                        smoke_dataset)

__all__ = [
    "Dataset", "FrameRef", "MotionClip", "RetargetResult", "TEMPLATES",
    "arm_joint_angles", "build_dataset", "filter_clip", "generate_clip",
    "smoke_dataset",
    "ik_2link", "load_dataset", "retarget_object", "retarget_objective",
    "save_dataset", "solve_frame_offset",
]
