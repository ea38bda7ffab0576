"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A Tape records every primitive executed inside its `with` block in
execution order; backward() replays the records in exact reverse and
accumulates gradients into every tensor that requires them.  All
primitives check their outputs for NaN/inf so numerical breakdown is
reported at the operation that produced it, not steps later.

The primitive set is exactly what the relational graph encoder and the
contrastive loss need: dense matrix products, broadcast addition,
row-wise layer normalization, ReLU, inverted dropout, row gather and
contiguous segment reductions for message passing, row L2
normalization, row log-softmax, and a handful of scalar reductions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DetachedLoss, NonFiniteValue, ShapeMismatch


class Tensor:
    """Dense float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


@dataclass(slots=True)
class TapeRecord:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: object  # callable(np.ndarray) -> tuple[np.ndarray | None, ...]


@dataclass(slots=True)
class Tape:
    """Execution record for one forward pass."""

    records: list[TapeRecord] = field(default_factory=list)
    # Smallest |pre-activation| any ReLU saw; finite-difference checks
    # use it to skip coordinates too close to the kink.
    kink_margin: float = math.inf

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _finite_or_raise(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"non-finite value produced by {op}")


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward, op: str) -> Tensor:
    _finite_or_raise(out_data, op)
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append(TapeRecord(out=out, inputs=inputs, backward=backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.data.shape} x {b.data.shape}")
    ad, bd = a.data, b.data

    def backward(g: np.ndarray):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add {a.data.shape} + {b.data.shape}") from None
    a_shape, b_shape = a.data.shape, b.data.shape

    def backward(g: np.ndarray):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _make(out, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def cmul(a: Tensor, const: np.ndarray) -> Tensor:
    """Elementwise product with a constant (non-differentiated) array."""
    const = np.asarray(const, dtype=np.float64)
    try:
        out = a.data * const
    except ValueError:
        raise ShapeMismatch(f"cmul {a.data.shape} * {const.shape}") from None
    a_shape = a.data.shape

    def backward(g: np.ndarray):
        return (_unbroadcast(g * const, a_shape),)

    return _make(out, (a,), backward, "cmul")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeMismatch(f"cannot reshape {a.data.shape} to {shape}")
    old_shape = a.data.shape

    def backward(g: np.ndarray):
        return (g.reshape(old_shape),)

    return _make(a.data.reshape(shape).copy(), (a,), backward, "reshape")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose expects a matrix, got {a.data.shape}")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def relu(a: Tensor) -> Tensor:
    tape = _active_tape()
    if tape is not None and a.data.size:
        margin = float(np.min(np.abs(a.data)))
        if margin < tape.kink_margin:
            tape.kink_margin = margin
    mask = a.data > 0

    def backward(g: np.ndarray):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), backward, "relu")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeMismatch(f"layer_norm expects a matrix, got {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeMismatch(f"layer_norm gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=1, keepdims=True)
    var = np.mean((x.data - mu) ** 2, axis=1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_sigma
    out = xhat * gain.data + bias.data
    gd = gain.data

    def backward(g: np.ndarray):
        dxhat = g * gd
        # Standard per-row layer norm gradient.
        dx = inv_sigma * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * np.mean(dxhat * xhat, axis=1, keepdims=True)
        )
        dgain = (g * xhat).sum(axis=0)
        dbias = g.sum(axis=0)
        return dx, dgain, dbias

    return _make(out, (x, gain, bias), backward, "layer_norm")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: train-time mask scaled by 1/(1-p), identity in eval."""
    if not train or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ShapeMismatch(f"dropout probability {p} outside [0, 1)")
    keep = rng.random(x.data.shape) >= p
    factor = 1.0 / (1.0 - p)
    mask = keep * factor

    def backward(g: np.ndarray):
        return (g * mask,)

    return _make(x.data * mask, (x,), backward, "dropout")


@dataclass(slots=True)
class GatherPlan:
    """Precomputed reduction plan for the backward pass of gather_rows.

    Sorting the gather indices once lets backward use contiguous
    segment sums instead of repeated scatter-adds.
    """

    order: np.ndarray
    starts: np.ndarray
    unique: np.ndarray


def build_gather_plan(idx: np.ndarray) -> GatherPlan:
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    if sorted_idx.size == 0:
        starts = np.zeros(0, dtype=np.int64)
        unique = np.zeros(0, dtype=np.int64)
    else:
        is_start = np.empty(sorted_idx.size, dtype=bool)
        is_start[0] = True
        np.not_equal(sorted_idx[1:], sorted_idx[:-1], out=is_start[1:])
        starts = np.flatnonzero(is_start)
        unique = sorted_idx[starts]
    return GatherPlan(order=order, starts=starts, unique=unique)


def gather_rows(x: Tensor, idx: np.ndarray, plan: GatherPlan | None = None) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeMismatch(f"gather_rows expects a matrix, got {x.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g: np.ndarray):
        dx = np.zeros_like(x.data)
        if plan is not None and idx.size:
            dx[plan.unique] = np.add.reduceat(g[plan.order], plan.starts, axis=0)
        elif idx.size:
            np.add.at(dx, idx, g)
        return (dx,)

    return _make(x.data[idx], (x,), backward, "gather_rows")


def segment_sum_to(
    x: Tensor,
    run_starts: np.ndarray,
    run_lengths: np.ndarray,
    out_rows: np.ndarray,
    n_out: int,
) -> Tensor:
    """Sum contiguous row runs of x and place each run's total at a
    distinct output row; rows never written stay zero.

    x's rows must already be grouped so that run r occupies
    rows [run_starts[r], run_starts[r] + run_lengths[r]).
    """
    if x.data.ndim != 2:
        raise ShapeMismatch(f"segment_sum_to expects a matrix, got {x.data.shape}")
    d = x.data.shape[1]
    out = np.zeros((n_out, d))
    if x.data.shape[0]:
        out[out_rows] = np.add.reduceat(x.data, run_starts, axis=0)

    def backward(g: np.ndarray):
        picked = g[out_rows]
        return (np.repeat(picked, run_lengths, axis=0),)

    return _make(out, (x,), backward, "segment_sum_to")


def segment_mean_rows(x: Tensor, lengths: np.ndarray) -> Tensor:
    """Mean of consecutive row blocks; block r has lengths[r] rows."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.sum() != x.data.shape[0] or np.any(lengths <= 0):
        raise ShapeMismatch(
            f"segment lengths {lengths.tolist()} do not cover {x.data.shape[0]} rows"
        )
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    sums = np.add.reduceat(x.data, starts, axis=0)
    out = sums / lengths[:, None]

    def backward(g: np.ndarray):
        return (np.repeat(g / lengths[:, None], lengths, axis=0),)

    return _make(out, (x,), backward, "segment_mean_rows")


def mean_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.data.shape[0] == 0:
        raise ShapeMismatch(f"mean_rows expects a nonempty matrix, got {x.data.shape}")
    n = x.data.shape[0]

    def backward(g: np.ndarray):
        return (np.broadcast_to(g / n, x.data.shape).copy(),)

    return _make(x.data.mean(axis=0), (x,), backward, "mean_rows")


def l2_normalize_rows(x: Tensor) -> Tensor:
    from .errors import ZeroRow

    if x.data.ndim != 2:
        raise ShapeMismatch(f"l2_normalize_rows expects a matrix, got {x.data.shape}")
    norms = np.sqrt(np.sum(x.data**2, axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise ZeroRow("cannot L2-normalize a zero row")
    y = x.data / norms

    def backward(g: np.ndarray):
        dot = np.sum(g * y, axis=1, keepdims=True)
        return ((g - y * dot) / norms,)

    return _make(y, (x,), backward, "l2_normalize_rows")


def log_softmax_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeMismatch(f"log_softmax_rows expects a matrix, got {x.data.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    y = shifted - lse
    softmax = np.exp(y)

    def backward(g: np.ndarray):
        return (g - softmax * g.sum(axis=1, keepdims=True),)

    return _make(y, (x,), backward, "log_softmax_rows")


def row_outer_dot(a: Tensor, b: Tensor) -> Tensor:
    """S[i, j] = <a_i, b_j> computed with a broadcast reduction.

    Unlike a @ b.T, this evaluates S[i, j] and S[j, i] with the same
    multiply-and-sum order, so row_outer_dot(b, a) is bitwise equal to
    row_outer_dot(a, b).T.
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ShapeMismatch(f"row_outer_dot {a.data.shape} x {b.data.shape}")
    out = np.sum(a.data[:, None, :] * b.data[None, :, :], axis=2)
    ad, bd = a.data, b.data

    def backward(g: np.ndarray):
        return g @ bd, g.T @ ad

    return _make(out, (a, b), backward, "row_outer_dot")


def take_diag(x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.data.shape[0] != x.data.shape[1]:
        raise ShapeMismatch(f"take_diag expects a square matrix, got {x.data.shape}")
    n = x.data.shape[0]

    def backward(g: np.ndarray):
        dx = np.zeros((n, n))
        np.fill_diagonal(dx, g)
        return (dx,)

    return _make(np.diagonal(x.data).copy(), (x,), backward, "take_diag")


def mean_all(x: Tensor) -> Tensor:
    if x.data.size == 0:
        raise ShapeMismatch("mean_all of an empty tensor")
    n = x.data.size
    shape = x.data.shape

    def backward(g: np.ndarray):
        return (np.full(shape, float(g) / n),)

    return _make(np.asarray(x.data.mean()), (x,), backward, "mean_all")


def basis_combine(coeff: Tensor, basis: Tensor) -> Tensor:
    """Per-relation weights as coefficient mixtures of shared bases:
    out[r] = sum_b coeff[r, b] * basis[b]."""
    if coeff.data.ndim != 2 or basis.data.ndim != 3 or coeff.data.shape[1] != basis.data.shape[0]:
        raise ShapeMismatch(f"basis_combine {coeff.data.shape} x {basis.data.shape}")
    cd, bd = coeff.data, basis.data

    def backward(g: np.ndarray):
        dcoeff = np.tensordot(g, bd, axes=([1, 2], [1, 2]))
        dbasis = np.tensordot(cd.T, g, axes=1)
        return dcoeff, dbasis

    return _make(np.tensordot(cd, bd, axes=1), (coeff, basis), backward, "basis_combine")


def index_select0(x: Tensor, i: int) -> Tensor:
    if not 0 <= i < x.data.shape[0]:
        raise ShapeMismatch(f"index {i} out of range for axis of size {x.data.shape[0]}")

    def backward(g: np.ndarray):
        dx = np.zeros_like(x.data)
        dx[i] = g
        return (dx,)

    return _make(x.data[i].copy(), (x,), backward, "index_select0")


# ---------------------------------------------------------------------------
# backward + gradient checking


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into .grad of every tensor that
    requires gradients; the tape is consumed."""
    if loss.data.shape not in ((), (1,)):
        raise ShapeMismatch(f"loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad or not any(r.out is loss for r in tape.records):
        raise DetachedLoss("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for record in reversed(tape.records):
        g = grads.pop(id(record.out), None)
        if g is None:
            continue
        if record.out.requires_grad:
            record.out.grad = g if record.out.grad is None else record.out.grad + g
        input_grads = record.backward(g)
        for tensor, ig in zip(record.inputs, input_grads):
            if ig is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
    for record in tape.records:
        for tensor in record.inputs:
            g = grads.pop(id(tensor), None)
            if g is not None and tensor.requires_grad:
                tensor.grad = g if tensor.grad is None else tensor.grad + g
    tape.records.clear()


def gradient_check(
    f,
    x: Tensor,
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference grads.

    f must be a deterministic scalar-valued function of x (re-seed any
    internal randomness per call).  Coordinates whose perturbed
    evaluations bring a ReLU pre-activation within 10h of its kink are
    skipped, as are exact finite-difference zeros matching analytic
    zeros.  When max_coords is given, a random subset of coordinates of
    that size is checked.
    """
    x.zero_grad()
    with Tape() as tape:
        loss = f(x)
        center_margin = tape.kink_margin
        backward(tape, loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.zero_grad()

    n = x.data.size
    coords = np.arange(n)
    if max_coords is not None and n > max_coords:
        picker = rng if rng is not None else np.random.default_rng(0)
        coords = picker.choice(n, size=max_coords, replace=False)

    flat = x.data.reshape(-1)
    analytic_flat = analytic.reshape(-1)
    worst = 0.0
    for i in coords:
        original = flat[i]
        flat[i] = original + h
        with Tape() as tp:
            loss_plus = float(f(x).data)
            margin_plus = tp.kink_margin
            tp.records.clear()
        flat[i] = original - h
        with Tape() as tm:
            loss_minus = float(f(x).data)
            margin_minus = tm.kink_margin
            tm.records.clear()
        flat[i] = original
        if min(center_margin, margin_plus, margin_minus) < 10.0 * h:
            continue
        numeric = (loss_plus - loss_minus) / (2.0 * h)
        denom = max(abs(numeric), abs(analytic_flat[i]), 1e-8)
        err = abs(numeric - analytic_flat[i]) / denom
        if err > worst:
            worst = err
    return worst


# ---------------------------------------------------------------------------
# optimization


@dataclass(slots=True)
class OptimizerState:
    """AdamW accumulator state; moments are keyed by parameter name."""

    lr0: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float | None = None,
) -> None:
    """One decoupled-weight-decay Adam update, in place."""
    step_lr = state.lr0 if lr is None else lr
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != param shape {p.data.shape} ({name})")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= step_lr * (m_hat / (np.sqrt(v_hat) + state.eps)) + step_lr * state.weight_decay * p.data


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm;
    returns the pre-clip norm."""
    total = 0.0
    for name in sorted(grads):
        total += float(np.sum(grads[name] ** 2))
    norm = math.sqrt(total)
    if norm > max_norm > 0.0:
        factor = max_norm / norm
        for name in sorted(grads):
            grads[name] = grads[name] * factor
    return norm


def cosine_lr(t: int, total: int, lr0: float) -> float:
    """Half-cosine decay from lr0 at t=0 to 0 at t=total."""
    if total < 1:
        raise ShapeMismatch("cosine schedule needs total >= 1")
    return max(0.0, 0.5 * lr0 * (1.0 + math.cos(math.pi * t / total)))
