"""Minimal numeric core.

Tensors are plain float64 numpy arrays of rank <= 3.  Every layer comes as a
forward function plus an explicit backward function that takes the upstream
gradient and whatever the forward pass saved.  There is no autograd graph:
the model wires the backward calls together by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, ShapeError, WindowTooShortError

COS_EPS = 1e-8
BCE_DELTA = 1e-7


def as_tensor(x, checked: bool = True) -> np.ndarray:
    """Coerce to a contiguous float64 array and validate rank and finiteness."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim > 3:
        raise ShapeError(f"tensor rank {arr.ndim} exceeds 3")
    if 0 in arr.shape:
        raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
    if checked and not np.isfinite(arr).all():
        raise DivergenceError("tensor contains NaN or Inf")
    return arr


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        self.value = as_tensor(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ShapeError(f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}")

    def zero_grad(self):
        self.grad.fill(0.0)


# -- convolution -------------------------------------------------------------


def _batched(x):
    return (x, False) if x.ndim == 3 else (x[None], True)


def _columns(x, kernel, dilation, t_out):
    # [B, Cin, T] -> [B, Cin*K, Tout]; row c*K + k holds x[c, t + dilation*k]
    taps = [x[:, :, k * dilation:k * dilation + t_out] for k in range(kernel)]
    cols = np.stack(taps, axis=2)
    return cols.reshape(x.shape[0], x.shape[1] * kernel, t_out)


def conv1d_forward(x, weight, bias, dilation: int = 1) -> np.ndarray:
    """Valid (unpadded, stride 1) dilated 1-D convolution.

    ``x`` is ``[Cin, T]`` or batched ``[B, Cin, T]``; ``weight`` is
    ``[Cout, Cin, K]``.  Output length is ``T - dilation * (K - 1)``.
    """
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if dilation < 1:
        raise ShapeError(f"dilation must be positive, got {dilation}")
    if weight.ndim != 3 or x.ndim not in (2, 3):
        raise ShapeError(f"bad conv ranks: input {x.shape}, weight {weight.shape}")
    c_out, c_in, kernel = weight.shape
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {c_out} output channels")
    if x.shape[-2] != c_in:
        raise ShapeError(f"input has {x.shape[-2]} channels, weight expects {c_in}")
    span = dilation * (kernel - 1) + 1
    if x.shape[-1] < span:
        raise WindowTooShortError(f"input length {x.shape[-1]} shorter than kernel span {span}")
    xb, squeeze = _batched(x)
    t_out = xb.shape[-1] - span + 1
    cols = _columns(xb, kernel, dilation, t_out)
    out = np.matmul(weight.reshape(c_out, c_in * kernel), cols)
    out += bias[:, None]
    return out[0] if squeeze else out


def conv1d_backward(grad_out, x, weight, dilation: int = 1):
    """Adjoint of :func:`conv1d_forward`; returns ``(grad_x, grad_weight, grad_bias)``.

    For batched input the weight and bias gradients are summed over the batch.
    """
    weight = np.asarray(weight, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    c_out, c_in, kernel = weight.shape
    t_out = x.shape[-1] - dilation * (kernel - 1)
    expected = x.shape[:-2] + (c_out, t_out)
    if grad_out.shape != expected:
        raise ShapeError(f"upstream grad shape {grad_out.shape} != forward output shape {expected}")
    xb, squeeze = _batched(x)
    gb = grad_out if grad_out.ndim == 3 else grad_out[None]
    cols = _columns(xb, kernel, dilation, t_out)

    grad_bias = gb.sum(axis=(0, 2))
    grad_weight = np.tensordot(gb, cols, axes=([0, 2], [0, 2])).reshape(c_out, c_in, kernel)

    grad_cols = np.matmul(weight.reshape(c_out, c_in * kernel).T, gb)
    grad_cols = grad_cols.reshape(xb.shape[0], c_in, kernel, t_out)
    grad_x = np.zeros_like(xb)
    for k in range(kernel):
        grad_x[:, :, k * dilation:k * dilation + t_out] += grad_cols[:, :, k, :]
    return (grad_x[0] if squeeze else grad_x), grad_weight, grad_bias


# -- pointwise nonlinearities ------------------------------------------------


def relu(x) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(np.asarray(x) > 0.0, grad_out, 0.0)


def sigmoid(x):
    """Logistic function, stable for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return out[()] if out.ndim == 0 else out


def sigmoid_backward(grad_out, p):
    return grad_out * p * (1.0 - p)


# -- cosine similarity -------------------------------------------------------


def cosine_similarity(a, b, eps: float = COS_EPS):
    """Cosine similarity along the last axis, norms floored at ``eps``.

    Zero vectors give 0 rather than NaN.  The result is clamped to [-1, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.shape[-1] == 0:
        raise ShapeError(f"cosine similarity needs equal non-empty shapes, got {a.shape} and {b.shape}")
    dot = np.sum(a * b, axis=-1)
    na = np.maximum(np.linalg.norm(a, axis=-1), eps)
    nb = np.maximum(np.linalg.norm(b, axis=-1), eps)
    out = np.clip(dot / (na * nb), -1.0, 1.0)
    return out[()] if out.ndim == 0 else out


def cosine_backward(grad_out, a, b, eps: float = COS_EPS):
    """Gradients of :func:`cosine_similarity` with respect to ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)[..., None]
    dot = np.sum(a * b, axis=-1)[..., None]
    ra = np.linalg.norm(a, axis=-1)[..., None]
    rb = np.linalg.norm(b, axis=-1)[..., None]
    na = np.maximum(ra, eps)
    nb = np.maximum(rb, eps)
    raw = dot / (na * nb)
    g = np.where(np.abs(raw) <= 1.0, g, 0.0)
    # the floor makes the norm constant below eps, so its derivative vanishes there
    ka = np.where(ra > eps, dot / (na ** 3 * nb), 0.0)
    kb = np.where(rb > eps, dot / (na * nb ** 3), 0.0)
    grad_a = g * (b / (na * nb) - ka * a)
    grad_b = g * (a / (na * nb) - kb * b)
    return grad_a, grad_b


# -- loss --------------------------------------------------------------------


def bce_loss(p, y, delta: float = BCE_DELTA):
    """Binary cross-entropy with ``p`` clamped to ``[delta, 1 - delta]``."""
    pc = np.clip(np.asarray(p, dtype=np.float64), delta, 1.0 - delta)
    y = np.asarray(y, dtype=np.float64)
    out = -y * np.log(pc) - (1.0 - y) * np.log1p(-pc)
    return out[()] if out.ndim == 0 else out


def bce_backward(p, y, delta: float = BCE_DELTA):
    """dL/dp, zero where the clamp is active."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    pc = np.clip(p, delta, 1.0 - delta)
    g = -y / pc + (1.0 - y) / (1.0 - pc)
    g = np.where((p >= delta) & (p <= 1.0 - delta), g, 0.0)
    return g[()] if g.ndim == 0 else g


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Sequence[Parameter], **kwargs) -> "AdamState":
        state = cls(**kwargs)
        for p in params:
            state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        return state


def adam_step(params: Sequence[Parameter], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place.  Gradients are left untouched."""
    for p in params:
        if p.name not in state.m or p.name not in state.v:
            raise ShapeError(f"Adam state has no moments for parameter {p.name!r}")
        if state.m[p.name].shape != p.value.shape or state.v[p.name].shape != p.value.shape:
            raise ShapeError(f"Adam moments for {p.name!r} do not match its shape {p.value.shape}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p in params:
        m = state.m[p.name]
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(p.grad)
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# -- gradient checking -------------------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_err: float
    checked: int
    skipped: int


def check_gradients(
    fn: Callable[[], float],
    params: Sequence[Parameter],
    h: float = 1e-5,
    floor: float = 1e-6,
    signature: Callable[[], bytes] | None = None,
) -> GradCheckResult:
    """Compare reverse-mode gradients with central differences, entry by entry.

    ``fn`` evaluates the scalar loss and accumulates into ``param.grad``.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.

    When ``signature`` is given it should return the ReLU activation pattern of
    the most recent ``fn`` call.  A perturbation that flips the pattern crossed
    a kink; the step is shrunk (h/10, h/100) and the entry is skipped if the
    crossing persists.
    """
    for p in params:
        p.zero_grad()
    fn()
    analytic = [p.grad.copy() for p in params]
    base_sig = signature() if signature is not None else None

    def loss_at(p, idx, step):
        orig = p.value[idx]
        p.value[idx] = orig + step
        up = fn()
        sig_up = signature() if signature is not None else None
        p.value[idx] = orig - step
        down = fn()
        sig_down = signature() if signature is not None else None
        p.value[idx] = orig
        crossed = signature is not None and (sig_up != base_sig or sig_down != base_sig)
        return (up - down) / (2.0 * step), crossed

    worst = 0.0
    checked = skipped = 0
    for p, grad in zip(params, analytic):
        for idx in np.ndindex(p.value.shape):
            for step in (h, h / 10.0, h / 100.0):
                numeric, crossed = loss_at(p, idx, step)
                if not crossed:
                    break
            if crossed:
                skipped += 1
                continue
            a = grad[idx]
            err = float(abs(a - numeric) / max(abs(a), abs(numeric), floor))
            worst = max(worst, err)
            checked += 1
    for p, grad in zip(params, analytic):
        p.grad[...] = grad
    return GradCheckResult(worst, checked, skipped)


def grad_check(fn, params, h: float = 1e-5, signature=None) -> float:
    """Maximum relative error between analytic and central-difference gradients."""
    return check_gradients(fn, params, h=h, signature=signature).max_rel_err
