from gator.numerics.adam import AdamState, adam_step
from gator.numerics.gradcheck import GradCheckResult, finite_diff_check
from gator.numerics.params import ModelParams, xavier_uniform
from gator.numerics.tensor import Tensor, backward, build_tape, no_grad

__all__ = [
    "AdamState", "adam_step", "GradCheckResult", "finite_diff_check",
    "ModelParams", "xavier_uniform", "Tensor", "backward", "build_tape", "no_grad",
]
