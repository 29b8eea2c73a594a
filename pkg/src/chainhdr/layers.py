"""Dense layer transforms with hand-written backward passes.

Every forward function here is pure: it reads its arguments and returns new
arrays. The matching ``*_backward`` function takes the upstream gradient plus
the forward inputs and returns gradients for the inputs and parameters.

Images and feature maps are ``(C, H, W)`` arrays; a leading batch axis
``(N, C, H, W)`` is accepted everywhere and reduced over where parameters
are shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def check_tensor(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError(f"{name} has zero size (shape {x.shape})")
    return x


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (C,H,W) or (N,C,H,W) array, got shape {x.shape}")


def _per_channel(param: np.ndarray, x: np.ndarray) -> np.ndarray:
    # broadcast a per-channel vector against (C,H,W) or (N,C,H,W)
    if x.ndim == 3:
        return param.reshape(-1, 1, 1)
    if x.ndim == 4:
        return param.reshape(1, -1, 1, 1)
    return param


# ---------------------------------------------------------------------------
# dilated convolution
# ---------------------------------------------------------------------------

def _conv_shapes(x: np.ndarray, weights: np.ndarray, dilation: int) -> int:
    check_tensor(x, "input")
    check_tensor(weights, "weights")
    if weights.ndim != 4 or weights.shape[2] != weights.shape[3]:
        raise ValueError(f"weights must be (C_out, C_in, k, k), got {weights.shape}")
    k = weights.shape[2]
    if k % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {k}")
    if int(dilation) != dilation or dilation < 1:
        raise ValueError(f"dilation must be a positive integer, got {dilation}")
    c_in = x.shape[-3]
    if weights.shape[1] != c_in:
        raise ValueError(
            f"weights shape {weights.shape} expects {weights.shape[1]} input channels "
            f"but input has shape {x.shape}"
        )
    return dilation * (k - 1) // 2


def _im2col(xb: np.ndarray, k: int, dilation: int, pad: int) -> np.ndarray:
    n, c, h, w = xb.shape
    if k == 1:
        return xb.reshape(n, c, h * w)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=xb.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = xb
    cols = np.empty((n, c, k, k, h, w), dtype=xb.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i * dilation:i * dilation + h, j * dilation:j * dilation + w]
    return cols.reshape(n, c * k * k, h * w)


def conv2d_dilated(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Same-padded dilated convolution (cross-correlation), zero padding."""
    pad = _conv_shapes(x, weights, dilation)
    xb, squeeze = _batched(x)
    n, _, h, w = xb.shape
    c_out, _, k, _ = weights.shape
    cols = _im2col(xb, k, dilation, pad)
    out = np.matmul(weights.reshape(c_out, -1), cols).reshape(n, c_out, h, w)
    out += bias.reshape(1, -1, 1, 1)
    return out[0] if squeeze else out


def conv2d_dilated_backward(
    dout: np.ndarray, x: np.ndarray, weights: np.ndarray, dilation: int = 1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients ``(dx, dweights, dbias)`` of the convolution."""
    pad = _conv_shapes(x, weights, dilation)
    xb, squeeze = _batched(x)
    db_, _ = _batched(dout)
    n, c_in, h, w = xb.shape
    c_out, _, k, _ = weights.shape
    cols = _im2col(xb, k, dilation, pad)
    g = db_.reshape(n, c_out, h * w)
    dweights = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weights.shape)
    dbias = g.sum(axis=(0, 2))
    dcols = np.matmul(weights.reshape(c_out, -1).T, g)
    if k == 1:
        dx = dcols.reshape(n, c_in, h, w)
    else:
        dcols = dcols.reshape(n, c_in, k, k, h, w)
        dxp = np.zeros((n, c_in, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i * dilation:i * dilation + h, j * dilation:j * dilation + w] += dcols[:, :, i, j]
        dx = dxp[:, :, pad:pad + h, pad:pad + w]
    return (dx[0] if squeeze else dx), dweights, dbias


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchNormStats:
    """Running per-channel mean/variance. ``updates`` counts train-mode calls."""

    mean: np.ndarray
    var: np.ndarray
    updates: int = 0

    @classmethod
    def initial(cls, channels: int, dtype=np.float32) -> "BatchNormStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), 0)


def _bn_axes(x: np.ndarray) -> tuple[int, ...]:
    return (1, 2) if x.ndim == 3 else (0, 2, 3)


def batch_norm(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    stats: BatchNormStats | None,
    train: bool,
) -> tuple[np.ndarray, BatchNormStats | None]:
    """Per-channel normalization; returns ``(out, new_stats)``.

    Train mode uses the statistics of ``x`` over batch and spatial positions
    and blends them into the running stats with momentum 0.9. Eval mode uses
    the running stats and returns them unchanged.
    """
    check_tensor(x, "input")
    if gamma.shape != (x.shape[-3],) or beta.shape != gamma.shape:
        raise ValueError(f"gamma/beta shapes {gamma.shape}/{beta.shape} do not match input {x.shape}")
    axes = _bn_axes(x)
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if stats is None:
            new_stats = BatchNormStats(mean.copy(), var.copy(), 1)
        else:
            new_stats = BatchNormStats(
                (BN_MOMENTUM * stats.mean + (1 - BN_MOMENTUM) * mean).astype(stats.mean.dtype),
                (BN_MOMENTUM * stats.var + (1 - BN_MOMENTUM) * var).astype(stats.var.dtype),
                stats.updates + 1,
            )
    else:
        if stats is None:
            raise ValueError("batch_norm eval mode needs running statistics; run train mode first")
        if np.any(stats.var < 0):
            raise ValueError("running variance must be non-negative")
        mean, var, new_stats = stats.mean.astype(x.dtype), stats.var.astype(x.dtype), stats
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - _per_channel(mean, x)) * _per_channel(inv, x)
    return _per_channel(gamma, x) * xhat + _per_channel(beta, x), new_stats


def batch_norm_backward(
    dout: np.ndarray, x: np.ndarray, gamma: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Train-mode gradients ``(dx, dgamma, dbeta)``."""
    axes = _bn_axes(x)
    m = int(np.prod([x.shape[a] for a in axes]))
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - _per_channel(mean, x)) * _per_channel(inv, x)
    dbeta = dout.sum(axis=axes)
    dgamma = (dout * xhat).sum(axis=axes)
    dxhat = dout * _per_channel(gamma, x)
    dx = _per_channel(inv / m, x) * (
        m * dxhat
        - _per_channel(dxhat.sum(axis=axes), x)
        - xhat * _per_channel((dxhat * xhat).sum(axis=axes), x)
    )
    return dx, dgamma, dbeta


def batch_norm_eval_backward(
    dout: np.ndarray, x: np.ndarray, gamma: np.ndarray, stats: BatchNormStats
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients ``(dx, dgamma, dbeta)`` when normalizing with fixed ``stats``."""
    axes = _bn_axes(x)
    inv = (1.0 / np.sqrt(stats.var.astype(x.dtype) + BN_EPS)).astype(x.dtype)
    xhat = (x - _per_channel(stats.mean.astype(x.dtype), x)) * _per_channel(inv, x)
    return dout * _per_channel(gamma * inv, x), (dout * xhat).sum(axis=axes), dout.sum(axis=axes)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _check_alpha(x: np.ndarray, alpha: np.ndarray) -> None:
    check_tensor(x, "input")
    if alpha.shape != (x.shape[-3],):
        raise ValueError(f"alpha shape {alpha.shape} does not match channels of input {x.shape}")


def prelu(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """``x`` where ``x >= 0``, else ``alpha * x``."""
    _check_alpha(x, alpha)
    return np.where(x >= 0, x, _per_channel(alpha, x) * x)


def prelu_backward(dout: np.ndarray, x: np.ndarray, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    neg = x < 0
    dx = np.where(neg, _per_channel(alpha, x) * dout, dout)
    dalpha = (np.minimum(x, 0) * dout).sum(axis=_bn_axes(x))
    return dx, dalpha


def mprelu(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Mirrored PReLU: ``alpha * x`` where ``x >= 0``, identity below zero."""
    _check_alpha(x, alpha)
    return np.where(x >= 0, _per_channel(alpha, x) * x, x)


def mprelu_backward(dout: np.ndarray, x: np.ndarray, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos = x >= 0
    dx = np.where(pos, _per_channel(alpha, x) * dout, dout)
    dalpha = (np.maximum(x, 0) * dout).sum(axis=_bn_axes(x))
    return dx, dalpha


def tanh_act(x: np.ndarray) -> np.ndarray:
    check_tensor(x, "input")
    return np.tanh(x)


def tanh_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    t = np.tanh(x)
    return dout * (1.0 - t * t)


# ---------------------------------------------------------------------------
# channel concatenation
# ---------------------------------------------------------------------------

def concat_channels(inputs: list[np.ndarray]) -> np.ndarray:
    if not inputs:
        raise ValueError("concat_channels needs at least one input")
    ref = inputs[0].shape
    for t in inputs:
        check_tensor(t, "input")
        if t.ndim != len(ref) or t.shape[-2:] != ref[-2:] or t.shape[:-3] != ref[:-3]:
            raise ValueError(f"spatial mismatch in concat: {t.shape} vs {ref}")
    return np.concatenate(inputs, axis=-3)


def split_channels(x: np.ndarray, sizes: list[int]) -> list[np.ndarray]:
    """Inverse of :func:`concat_channels`; also its backward transform."""
    if sum(sizes) != x.shape[-3]:
        raise ValueError(f"split sizes {sizes} do not sum to {x.shape[-3]} channels")
    return np.split(x, np.cumsum(sizes)[:-1], axis=-3)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns ``(new_param, new_state)``."""
    if param.shape != grad.shape or param.shape != state.first_moment.shape \
            or param.shape != state.second_moment.shape:
        raise ValueError(
            f"shape mismatch: param {param.shape}, grad {grad.shape}, "
            f"moments {state.first_moment.shape}/{state.second_moment.shape}"
        )
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.size(grad) - np.count_nonzero(np.isfinite(grad)))
        raise ValueError(f"non-finite gradient: {bad} of {grad.size} entries are NaN/Inf")
    t = state.step_count + 1
    m = beta1 * state.first_moment + (1 - beta1) * grad
    v = beta2 * state.second_moment + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    new_param = param - (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)
    return new_param, AdamState(m.astype(param.dtype), v.astype(param.dtype), t)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

ForwardFn = Callable[[np.ndarray, Mapping[str, np.ndarray]], np.ndarray]
BackwardFn = Callable[[np.ndarray, np.ndarray, Mapping[str, np.ndarray]], tuple[np.ndarray, Mapping[str, np.ndarray]]]
PatternFn = Callable[[np.ndarray, Mapping[str, np.ndarray]], np.ndarray]


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_array: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0

    def __float__(self) -> float:
        return self.max_rel_error


def finite_difference_check(
    forward: ForwardFn,
    backward: BackwardFn,
    x: np.ndarray,
    params: Mapping[str, np.ndarray] | None = None,
    eps: float = 1e-4,
    seed: int = 0,
    kink_pattern: PatternFn | None = None,
) -> GradCheckResult:
    """Compare analytic gradients against central differences.

    The scalar probed is ``sum(forward(x, params) * R)`` for a fixed random
    ``R``; ``backward(R, x, params)`` must return ``(dx, {name: dparam})``
    and is evaluated in float64. Central differences are evaluated in
    extended precision (``np.longdouble``) so that gradients which are
    exactly zero, such as a conv bias feeding batch norm, are not swamped by
    float64 roundoff.

    Per coordinate the relative error is ``|a - n| / max(|a|, |n|, 1e-8)``;
    the maximum over every input and parameter coordinate is returned.
    If ``kink_pattern(x, params)`` is given it should return the boolean
    on/off pattern of every piecewise-linear unit; a coordinate whose two
    probes produce different patterns straddles a kink and is skipped.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    x64 = np.array(x, dtype=np.float64)
    p64 = {k: np.array(v, dtype=np.float64) for k, v in (params or {}).items()}
    xl = x64.astype(np.longdouble)
    pl = {k: v.astype(np.longdouble) for k, v in p64.items()}
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(np.shape(forward(x64, p64)))
    probe_l = probe.astype(np.longdouble)

    dx, dparams = backward(probe, x64, p64)
    targets = {"input": (xl, np.asarray(dx))}
    for name, arr in pl.items():
        targets[name] = (arr, np.asarray(dparams[name]))

    def scalar() -> np.longdouble:
        return np.sum(forward(xl, pl) * probe_l)

    result = GradCheckResult(0.0)
    for name, (arr, analytic) in targets.items():
        worst = 0.0
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = scalar()
            pat_plus = None if kink_pattern is None else kink_pattern(xl, pl)
            flat[idx] = orig - eps
            f_minus = scalar()
            pat_minus = None if kink_pattern is None else kink_pattern(xl, pl)
            flat[idx] = orig
            if kink_pattern is not None and not np.array_equal(pat_plus, pat_minus):
                result.skipped += 1
                continue
            numeric = float((f_plus - f_minus) / (2 * eps))
            a = float(analytic.reshape(-1)[idx])
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
            result.checked += 1
        result.per_array[name] = worst
        result.max_rel_error = max(result.max_rel_error, worst)
    return result
