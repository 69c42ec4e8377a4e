"""Prior-aware SE(3)^N diffusion refinement for multiview point-cloud registration."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DegenerateInputError,
    DomainError,
    GenerationError,
    GraphError,
    InvalidArgumentError,
    NumericalError,
    PoseDiffError,
    SurrogateError,
)
from .lie import PoseSet, RigidTransform, pose_interpolate, project_to_so3, se3_exp, se3_log, so3_exp, so3_log  # noqa: E402

__all__ = [
    "DegenerateInputError",
    "DomainError",
    "GenerationError",
    "GraphError",
    "InvalidArgumentError",
    "NumericalError",
    "PoseDiffError",
    "PoseSet",
    "RigidTransform",
    "SurrogateError",
    "pose_interpolate",
    "project_to_so3",
    "se3_exp",
    "se3_log",
    "so3_exp",
    "so3_log",
]
