"""Dense-tensor core with tape-based reverse-mode autodiff.

Tensors wrap numpy arrays (float32 by default, float64 preserved for
verification runs). Operations record themselves on the innermost active
Tape when any input requires gradients; `backward` replays the tape in
reverse and returns a gradient map keyed by tensor id.
"""

import itertools
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractViolation, NumericError

DEFAULT_DTYPE = np.float32

_uid_counter = itertools.count()

# Stack of recording scopes. The top element is the active tape; None marks
# an explicit no-recording scope (see no_tape).
_tape_stack: list = []


class Tensor:
    """A dense array plus autodiff bookkeeping. Data is treated as immutable
    by every op; only the optimizer mutates parameter data in place."""

    __slots__ = ("data", "requires_grad", "grad", "uid")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.uid = next(_uid_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item: tensor has shape {self.shape}, not scalar")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # light sugar; the functional API in ops.py is the primary surface
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


class _Entry:
    """One recorded operation: inputs, output, and its backward rule."""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: tuple, output: Tensor, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations for one backward pass. Use as a context
    manager; tapes are single-threaded and never shared across steps."""

    def __init__(self):
        self.entries: list[_Entry] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def __len__(self):
        return len(self.entries)


class no_tape:
    """Context that suspends recording even inside an active tape."""

    def __enter__(self):
        _tape_stack.append(None)
        return self

    def __exit__(self, *exc):
        _tape_stack.pop()
        return False


def active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


def record(op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn: Callable) -> Tensor:
    """Attach `output` to the active tape when any input requires grad."""
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        tape.entries.append(_Entry(op, tuple(inputs), output, backward_fn))
    return output


def check_finite(op: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op}: non-finite output")
    return arr


def same_dtype(op: str, *tensors: Tensor):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ContractViolation(f"{op}: mixed dtypes {dt} and {t.data.dtype}")
    return dt


def backward(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    """Reverse the tape from `loss`, returning uid -> gradient for every
    requires-grad tensor reached. Leaf tensors also get `.grad` set."""
    if loss.data.size != 1:
        raise ContractViolation(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    produced = {e.output.uid for e in tape.entries}
    for entry in reversed(tape.entries):
        g_out = grads.get(entry.output.uid)
        if g_out is None:
            continue
        in_grads = entry.backward_fn(g_out)
        for t, g in zip(entry.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            if t.uid in grads:
                grads[t.uid] = grads[t.uid] + g
            else:
                grads[t.uid] = g
    out: dict[int, Tensor] = {}
    for entry in tape.entries:
        for t in entry.inputs + (entry.output,):
            if t.uid in grads and t.uid not in out:
                out[t.uid] = Tensor(grads[t.uid])
                if t.requires_grad and t.uid not in produced:
                    t.grad = out[t.uid]
    if loss.uid not in out:
        out[loss.uid] = Tensor(grads[loss.uid])
    return out
