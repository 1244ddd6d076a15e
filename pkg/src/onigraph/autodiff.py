"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything differentiable in this package is built from the primitives in
this module. A :class:`Tensor` wraps a rank-0/1/2 numpy array; operations
executed inside a ``with Tape():`` block record their backward rules in
execution order (define-by-run, so the tape is rebuilt on every forward
pass), and :func:`backward` walks the tape once in reverse, accumulating
gradients additively into ``Tensor.grad``.

Outside a tape context the same functions run as plain forward numerics,
which is how evaluation-mode inference avoids recording anything.
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

Array = np.ndarray

_MODES = ("train", "eval")


def _as_f64(values) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim > 2:
        raise DimensionError(f"tensors are rank 0, 1 or 2, got shape {arr.shape}")
    return arr


class Tensor:
    """Rank-0/1/2 float64 array, optionally tracked for gradients.

    ``grad`` accumulates across backward passes (gradients of a sum of
    losses equal the sum of gradients) until zeroed, which the optimizer
    does at the end of each step.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_f64(values)
        self.requires_grad = requires_grad
        self.grad: Array | None = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


# A backward rule maps the gradient at the op's output to per-input
# gradient contributions (None for inputs that need no gradient).
BackwardRule = Callable[[Array], Sequence[Array | None]]


@dataclass
class TapeEntry:
    output: Tensor
    inputs: tuple[Tensor, ...]
    rule: BackwardRule


class Tape:
    """Ordered op record; inputs of an entry always precede it."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _tape_stack().pop()
        return False


_LOCAL = threading.local()


def _tape_stack() -> list[Tape]:
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = []
        _LOCAL.tapes = stack
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def record_op(output: Tensor, inputs: tuple[Tensor, ...], rule: BackwardRule) -> Tensor:
    """Attach ``rule`` for ``output`` to the active tape, if recording."""
    tape = active_tape()
    if tape is not None and output.requires_grad:
        tape.entries.append(TapeEntry(output, inputs, rule))
    return output


def _make_output(data: Array, *inputs: Tensor) -> Tensor:
    assert np.all(np.isfinite(data)), "non-finite value produced by a tensor op"
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``grad`` for every tensor that
    requires gradients and is reachable from ``loss``; then clear the tape.

    Each tape entry is consumed exactly once, in reverse execution order.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward must run inside the Tape block that recorded the loss")
    if not loss.requires_grad or not tape.entries:
        raise RuntimeError("loss was not produced by any recorded operation")

    pending: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for entry in reversed(tape.entries):
        grad_out = pending.pop(id(entry.output), None)
        holders.pop(id(entry.output), None)
        if grad_out is None:
            continue
        out = entry.output
        out.grad = grad_out if out.grad is None else out.grad + grad_out
        for tensor, contrib in zip(entry.inputs, entry.rule(grad_out)):
            if contrib is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in pending:
                pending[key] = pending[key] + contrib
            else:
                pending[key] = contrib
                holders[key] = tensor
    for key, grad in pending.items():
        tensor = holders[key]
        tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
    tape.entries.clear()


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; backward: dA = dC @ B^T, dB = A^T @ dC."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = _make_output(a.data @ b.data, a, b)

    def rule(g: Array):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return record_op(out, (a, b), rule)


def block_matmul(a: Tensor, z: Tensor, block_rows: int) -> Tensor:
    """Apply the square matrix ``a`` to each consecutive ``block_rows``-row
    block of ``z``. Used to run one shared adjacency over a stacked batch
    of per-sample node matrices.
    """
    n = block_rows
    if a.data.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != n:
        raise DimensionError(f"block_matmul needs a {n}x{n} matrix, got {a.shape}")
    if z.data.ndim != 2 or z.shape[0] % n != 0:
        raise DimensionError(f"block_matmul rows {z.shape} not a multiple of {n}")
    batch = z.shape[0] // n
    blocks = z.data.reshape(batch, n, z.shape[1])
    out_data = np.einsum("ij,bjd->bid", a.data, blocks).reshape(z.shape)
    out = _make_output(out_data, a, z)

    def rule(g: Array):
        g3 = g.reshape(batch, n, z.shape[1])
        da = np.einsum("bid,bjd->ij", g3, blocks) if a.requires_grad else None
        dz = (
            np.einsum("ji,bjd->bid", a.data, g3).reshape(z.shape)
            if z.requires_grad
            else None
        )
        return (da, dz)

    return record_op(out, (a, z), rule)


def _sigmoid(x: Array) -> Array:
    # exp of a non-positive argument only, so no overflow
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


_ACTIVATIONS = {
    "tanh": (
        lambda x: np.tanh(x),
        lambda g, x, y: g * (1.0 - y * y),
    ),
    "sigmoid": (
        _sigmoid,
        lambda g, x, y: g * y * (1.0 - y),
    ),
    # exp(x) - 1 on the negative branch (unit scale), identity elsewhere
    "elu": (
        lambda x: np.where(x > 0.0, x, np.expm1(x)),
        lambda g, x, y: np.where(x > 0.0, g, g * (y + 1.0)),
    ),
    "identity": (
        lambda x: x.copy(),
        lambda g, x, y: g,
    ),
}


def unary_activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise activation: tanh, sigmoid, elu, or identity."""
    try:
        fwd, bwd = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}") from None
    out = _make_output(fwd(x.data), x)

    def rule(g: Array):
        return (bwd(g, x.data, out.data),)

    return record_op(out, (x,), rule)


@dataclass
class RunningStats:
    """Exponential-moving batch statistics for one normalized width."""

    mean: Array
    var: Array
    momentum: float = 0.1

    @classmethod
    def initial(cls, width: int, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(width), np.ones(width), momentum)

    def copy(self) -> "RunningStats":
        return RunningStats(self.mean.copy(), self.var.copy(), self.momentum)


def batchnorm_features(
    z: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
    mode: str = "train",
    running: RunningStats | None = None,
) -> Tensor:
    """Standardize each feature column over the rows of ``z``, then scale
    by ``gamma`` and shift by ``beta``.

    In train mode the batch mean and population variance are used and the
    running statistics are updated in place; in eval mode the running
    statistics are used and nothing is mutated.
    """
    if mode not in _MODES:
        raise ConfigError(f"mode must be one of {_MODES}, got {mode!r}")
    if z.data.ndim != 2:
        raise DimensionError(f"batchnorm input must be rank 2, got {z.shape}")
    n, width = z.shape
    if gamma.shape != (width,) or beta.shape != (width,):
        raise DimensionError(
            f"gamma/beta shapes {gamma.shape}/{beta.shape} do not match width {width}"
        )
    if eps <= 0.0:
        raise ConfigError(f"eps must be positive, got {eps}")

    if mode == "train":
        if n < 2:
            raise NumericError(f"batch variance undefined for {n} row(s) in train mode")
        mean = z.data.mean(axis=0)
        var = z.data.var(axis=0)
        if running is not None:
            m = running.momentum
            running.mean[...] = (1.0 - m) * running.mean + m * mean
            running.var[...] = (1.0 - m) * running.var + m * var
    else:
        if running is None:
            raise ConfigError("eval-mode batchnorm needs running statistics")
        mean = running.mean.copy()
        var = running.var.copy()

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (z.data - mean) * inv
    out = _make_output(xhat * gamma.data + beta.data, z, gamma, beta)

    def rule(g: Array):
        dgamma = (g * xhat).sum(axis=0) if gamma.requires_grad else None
        dbeta = g.sum(axis=0) if beta.requires_grad else None
        dz = None
        if z.requires_grad:
            dxhat = g * gamma.data
            if mode == "train":
                dz = (inv / n) * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                dz = dxhat * inv
        return (dz, dgamma, dbeta)

    return record_op(out, (z, gamma, beta), rule)


def concat_features(parts: Sequence[Tensor]) -> Tensor:
    """Column-wise concatenation of rank-2 tensors sharing a row count."""
    if not parts:
        raise DimensionError("concat_features needs at least one part")
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise DimensionError(
                f"concat_features row mismatch: {[tuple(q.shape) for q in parts]}"
            )
    out = _make_output(np.concatenate([p.data for p in parts], axis=1), *parts)
    widths = [p.shape[1] for p in parts]
    edges = np.cumsum([0] + widths)

    def rule(g: Array):
        return tuple(
            g[:, edges[i] : edges[i + 1]] if p.requires_grad else None
            for i, p in enumerate(parts)
        )

    return record_op(out, tuple(parts), rule)


def reduce_nodes(z: Tensor, kind: str) -> Tensor:
    """Column-wise mean or sum over the rows of a rank-2 tensor."""
    if kind not in ("mean", "sum"):
        raise ConfigError(f"reduce kind must be 'mean' or 'sum', got {kind!r}")
    if z.data.ndim != 2 or z.shape[0] == 0:
        raise DimensionError(f"cannot reduce shape {z.shape} over rows")
    n = z.shape[0]
    data = z.data.mean(axis=0) if kind == "mean" else z.data.sum(axis=0)
    out = _make_output(data, z)
    scale_back = 1.0 / n if kind == "mean" else 1.0

    def rule(g: Array):
        return (np.broadcast_to(g * scale_back, z.shape).copy(),)

    return record_op(out, (z,), rule)


def block_reduce(z: Tensor, block_rows: int, kind: str) -> Tensor:
    """Per-block column mean or sum: (B*n, D) -> (B, D)."""
    if kind not in ("mean", "sum"):
        raise ConfigError(f"reduce kind must be 'mean' or 'sum', got {kind!r}")
    n = block_rows
    if z.data.ndim != 2 or n < 1 or z.shape[0] % n != 0:
        raise DimensionError(f"block_reduce rows {z.shape} not a multiple of {n}")
    batch = z.shape[0] // n
    blocks = z.data.reshape(batch, n, z.shape[1])
    data = blocks.mean(axis=1) if kind == "mean" else blocks.sum(axis=1)
    out = _make_output(data, z)
    scale_back = 1.0 / n if kind == "mean" else 1.0

    def rule(g: Array):
        expanded = np.repeat(g * scale_back, n, axis=0)
        return (expanded,)

    return record_op(out, (z,), rule)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over two equal-length vectors; scalar output."""
    if pred.data.ndim != 1 or target.data.ndim != 1 or pred.shape != target.shape:
        raise DimensionError(f"mse_loss length mismatch: {pred.shape} vs {target.shape}")
    b = pred.shape[0]
    if b < 1:
        raise DimensionError("mse_loss needs at least one element")
    diff = pred.data - target.data
    out = _make_output(np.asarray((diff @ diff) / b), pred, target)

    def rule(g: Array):
        base = (2.0 / b) * diff * g
        return (
            base if pred.requires_grad else None,
            -base if target.requires_grad else None,
        )

    return record_op(out, (pred, target), rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = _make_output(a.data + b.data, a, b)

    def rule(g: Array):
        return (g if a.requires_grad else None, g if b.requires_grad else None)

    return record_op(out, (a, b), rule)


def add_row_bias(z: Tensor, bias: Tensor) -> Tensor:
    """Add a length-D bias vector to every row of an (N, D) tensor."""
    if z.data.ndim != 2 or bias.data.ndim != 1 or z.shape[1] != bias.shape[0]:
        raise DimensionError(f"bias shape {bias.shape} does not fit rows of {z.shape}")
    out = _make_output(z.data + bias.data, z, bias)

    def rule(g: Array):
        return (
            g if z.requires_grad else None,
            g.sum(axis=0) if bias.requires_grad else None,
        )

    return record_op(out, (z, bias), rule)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant scalar."""
    out = _make_output(x.data * factor, x)

    def rule(g: Array):
        return (g * factor,)

    return record_op(out, (x,), rule)


def mul_mask(x: Tensor, mask: Array) -> Tensor:
    """Elementwise product with a constant mask; gradient passes only
    through unmasked entries."""
    mask_arr = np.asarray(mask, dtype=np.float64)
    if mask_arr.shape != x.shape:
        raise DimensionError(f"mask shape {mask_arr.shape} does not match {x.shape}")
    out = _make_output(x.data * mask_arr, x)

    def rule(g: Array):
        return (g * mask_arr,)

    return record_op(out, (x,), rule)


def add_const(x: Tensor, const: Array) -> Tensor:
    """Add a constant array that stays off the tape."""
    const_arr = np.asarray(const, dtype=np.float64)
    if const_arr.shape != x.shape:
        raise DimensionError(f"constant shape {const_arr.shape} does not match {x.shape}")
    out = _make_output(x.data + const_arr, x)

    def rule(g: Array):
        return (g,)

    return record_op(out, (x,), rule)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose needs rank 2, got {x.shape}")
    out = _make_output(x.data.T.copy(), x)

    def rule(g: Array):
        return (g.T,)

    return record_op(out, (x,), rule)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = _make_output(x.data.reshape(shape).copy(), x)

    def rule(g: Array):
        return (g.reshape(x.shape),)

    return record_op(out, (x,), rule)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.data.size,))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """Per-parameter SGD slot: velocity buffer plus hyperparameters."""

    velocity: Array
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0.0:
            raise ConfigError(f"learning rate must be finite and >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not np.isfinite(self.weight_decay) or self.weight_decay < 0.0:
            raise ConfigError(f"weight decay must be finite and >= 0, got {self.weight_decay}")


def sgd_nesterov_step(param: Tensor, state: OptimizerState) -> None:
    """One SGD step with Nesterov momentum and coupled L2 decay.

    g = grad + wd * param
    v <- mu * v - lr * g
    param <- param + mu * v - lr * g

    The parameter's gradient is zeroed afterwards.
    """
    if param.grad is None:
        raise NumericError("sgd_nesterov_step needs a populated gradient")
    if state.velocity.shape != param.shape:
        raise DimensionError(
            f"velocity shape {state.velocity.shape} does not match parameter {param.shape}"
        )
    g = param.grad + state.weight_decay * param.data
    v = state.momentum * state.velocity - state.learning_rate * g
    state.velocity = v
    param.data = param.data + state.momentum * v - state.learning_rate * g
    param.grad = np.zeros_like(param.data)


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
) -> float:
    """Compare analytic gradients of the scalar ``f()`` against central
    finite differences over every entry of every parameter.

    Returns the maximum relative error
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    ``f`` must be deterministic (run batch normalization in a mode whose
    output does not depend on call history).
    """
    if step <= 0.0:
        raise ConfigError(f"step must be positive, got {step}")
    for p in params:
        p.zero_grad()
    with Tape():
        loss = f()
        if not np.all(np.isfinite(loss.data)):
            raise NumericError("grad_check: loss is not finite")
        backward(loss)
    analytic = [p.grad.copy() for p in params]

    def eval_loss() -> float:
        value = f()
        result = float(value.data.reshape(()))
        if not np.isfinite(result):
            raise NumericError("grad_check: perturbed loss is not finite")
        return result

    worst = 0.0
    for p, grads in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = grads.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = eval_loss()
            flat[i] = original - step
            minus = eval_loss()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * step)
            rel = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]), abs(numeric))
            worst = max(worst, rel)
    for p in params:
        p.zero_grad()
    return worst
