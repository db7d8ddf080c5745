"""Training losses: label-smoothed cross-entropy and the squared EMD loss."""
from dataclasses import dataclass

import numpy as np

from .tensor import normalize_rows, record, sigmoid, softmax

LOG_CLAMP = 1e-12
NORM_TOL = 1e-4


@dataclass(frozen=True)
class SmoothedLabelSpec:
    K: int
    y: int
    epsilon: float = 0.1


def smooth_labels(spec):
    """``(1 - eps) * onehot(y) + eps / K``."""
    if not 0 <= spec.y < spec.K:
        raise ValueError(f"label {spec.y} out of range for K={spec.K}")
    if not 0 <= spec.epsilon < 1:
        raise ValueError(f"epsilon must be in [0, 1), got {spec.epsilon}")
    q = np.full(spec.K, spec.epsilon / spec.K)
    q[spec.y] += 1.0 - spec.epsilon
    return q


def smooth_label_batch(labels, K, epsilon=0.1):
    return np.stack([smooth_labels(SmoothedLabelSpec(K, int(y), epsilon)) for y in labels])


def _check_rows(name, probs):
    sums = probs.sum(axis=-1)
    bad = np.abs(sums - 1) > NORM_TOL
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(f"{name} rows must sum to 1 (tol {NORM_TOL}); row {i} sums to {sums[i]:.6f}")


def probabilities(logits, head="softmax"):
    """Map logits to normalized class probabilities.

    ``sigmoid`` applies an elementwise sigmoid and then renormalizes rows.
    """
    if head == "softmax":
        return softmax(logits)
    if head == "sigmoid":
        return normalize_rows(sigmoid(logits))
    raise ValueError(f"probability_head must be 'softmax' or 'sigmoid', got {head!r}")


def cross_entropy_smoothed(p, targets):
    """Batch mean of ``-sum_k q_k log p_k``.

    ``targets`` is an ``(N, K)`` array of smoothed label vectors (see
    :func:`smooth_label_batch`). ``p`` is clamped at 1e-12 before the log.
    """
    probs = p.data
    q = np.asarray(targets, dtype=probs.dtype)
    if q.shape != probs.shape:
        raise ValueError(f"cross_entropy_smoothed: predictions {probs.shape} vs targets {q.shape}")
    _check_rows("predictions", probs)
    n = probs.shape[0]
    clamped = np.maximum(probs, LOG_CLAMP)
    loss = -(q * np.log(clamped)).sum() / n

    def backward_fn(g):
        grad = np.where(probs > LOG_CLAMP, -q / clamped, 0.0) * (g / n)
        return (grad.astype(probs.dtype, copy=False),)

    return record("cross_entropy_smoothed", (p,), np.asarray(loss, dtype=probs.dtype), backward_fn)


def emd_loss(p, q, d=2):
    """Batch mean of ``(mean_k |CDF(p)_k - CDF(q)_k|^d)^(1/d)``; differentiable in ``p``."""
    probs = p.data
    target = np.asarray(q, dtype=probs.dtype)
    if target.shape != probs.shape:
        raise ValueError(f"emd_loss: predictions {probs.shape} vs targets {target.shape}")
    _check_rows("predicted histogram", probs)
    _check_rows("target histogram", target)
    n, k = probs.shape
    diff = np.cumsum(probs, axis=1) - np.cumsum(target, axis=1)
    absd = np.abs(diff)
    per_sample = (absd ** d).mean(axis=1) ** (1.0 / d)
    loss = per_sample.mean()

    def backward_fn(g):
        safe = np.where(per_sample > 0, per_sample, 1.0)
        scale = np.where(per_sample > 0, safe ** (1 - d) / k, 0.0)
        d_cdf = scale[:, None] * absd ** (d - 1) * np.sign(diff)
        # the gradient of a prefix sum is a suffix sum
        d_p = np.cumsum(d_cdf[:, ::-1], axis=1)[:, ::-1]
        return ((d_p * (g / n)).astype(probs.dtype, copy=False),)

    return record("emd_loss", (p,), np.asarray(loss, dtype=probs.dtype), backward_fn)


def entropy(q):
    q = np.asarray(q, dtype=np.float64)
    nz = q > 0
    return float(-(q[nz] * np.log(q[nz])).sum())
