from .tensor import Tensor, Tape, no_tape, active_tape, backward, DEFAULT_DTYPE
from .optim import SGD
from . import ops

__all__ = ["Tensor", "Tape", "no_tape", "active_tape", "backward", "DEFAULT_DTYPE", "SGD", "ops"]
