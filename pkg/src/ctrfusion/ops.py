"""Dense float64 numerics for the scorer.

All arrays are row-major (C-order) 64-bit floats. Every op validates
shapes and rejects non-finite outputs, so a NaN surfaces at the op that
produced it instead of three layers later. Gradients for every
differentiable op here are derived analytically in the model layer and
checked against ``finite_diff_check``.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .errors import NumericError, ValidationError

SIGMOID_EPS = 1e-12


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Coerce to a C-contiguous float64 array of rank 1-3 and check finiteness."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim < 1 or arr.ndim > 3:
        raise ValidationError(f"{name}: rank must be 1-3, got {arr.ndim}")
    assert_finite(arr, name)
    return arr


def assert_finite(arr: np.ndarray, name: str = "tensor") -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite value encountered")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """C[i,j] = sum_t A[i,t] * B[t,j] with explicit inner-dim check."""
    a = as_tensor(a, "matmul lhs")
    b = as_tensor(b, "matmul rhs")
    if a.ndim != 2 or b.ndim != 2:
        raise ValidationError(f"matmul: both operands must be rank 2, got {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ValidationError(f"matmul: inner dims disagree, {a.shape} x {b.shape}")
    out = a @ b
    assert_finite(out, "matmul output")
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic, output clamped to [eps, 1-eps].

    The clamp makes downstream log() calls safe by construction.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, SIGMOID_EPS, 1.0 - SIGMOID_EPS)


def activate(x: np.ndarray, kind: str) -> np.ndarray:
    """Elementwise activation; kind is 'sigmoid' or 'relu'."""
    x = as_tensor(x, "activate input")
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    raise ValidationError(f"activate: unknown kind {kind!r}")


def softmax_masked(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the unmasked positions of a rank-1 logit vector.

    Masked positions come out exactly 0. Stable via max-subtraction, so
    large masked logits cannot overflow. An all-false mask is an error:
    there is nothing to normalize over.
    """
    logits = as_tensor(logits, "softmax logits")
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim != 1 or mask.shape != logits.shape:
        raise ValidationError(f"softmax_masked: need matching rank-1 shapes, got {logits.shape} and {mask.shape}")
    if not mask.any():
        raise ValidationError("softmax_masked: empty history (all positions masked)")
    shifted = np.where(mask, logits, -np.inf)
    shifted = shifted - shifted.max()
    e = np.exp(shifted)
    out = e / e.sum()
    assert_finite(out, "softmax output")
    return out


def masked_softmax_rows(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise masked softmax for a [B, L] score matrix.

    Rows with no valid position return all zeros (the model treats them
    as empty histories upstream); everything else matches
    ``softmax_masked`` row by row.
    """
    mask = np.asarray(mask, dtype=bool)
    any_valid = mask.any(axis=1)
    shifted = np.where(mask, logits, -np.inf)
    row_max = np.where(any_valid, shifted.max(axis=1, initial=-np.inf), 0.0)
    e = np.exp(shifted - row_max[:, None])
    denom = e.sum(axis=1)
    denom = np.where(denom == 0.0, 1.0, denom)
    return e / denom[:, None]


def finite_diff_check(
    loss_fn: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    analytic_grads: Mapping[str, np.ndarray],
    eps: float = 1e-4,
) -> float:
    """Central-difference gradient check over every element of every parameter.

    Returns max over elements of |g_fd - g_an| / max(1e-8, |g_fd| + |g_an|).
    ``loss_fn`` must be a deterministic scalar function of the parameter dict.
    """
    if eps <= 0:
        raise ValidationError("finite_diff_check: eps must be positive")
    work = {name: np.array(p, dtype=np.float64, copy=True) for name, p in params.items()}
    max_rel = 0.0
    for name, grad in analytic_grads.items():
        if name not in work:
            raise ValidationError(f"finite_diff_check: gradient {name!r} has no matching parameter")
        p = work[name]
        if np.shape(grad) != p.shape:
            raise ValidationError(f"finite_diff_check: shape mismatch for {name!r}")
        flat_p = p.reshape(-1)
        flat_g = np.asarray(grad, dtype=np.float64).reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            up = float(loss_fn(work))
            flat_p[i] = orig - eps
            down = float(loss_fn(work))
            flat_p[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"finite_diff_check: non-finite loss perturbing {name}[{i}]")
            g_fd = (up - down) / (2.0 * eps)
            rel = abs(g_fd - flat_g[i]) / max(1e-8, abs(g_fd) + abs(flat_g[i]))
            if rel > max_rel:
                max_rel = rel
    return max_rel
