"""Dense sliding-window primitives behind the generative-neuron kernels.

All functions operate on the last axis and broadcast over any leading
(batch, channel) axes, so a single signal and a stack of signals share one
code path. Arrays are float64 throughout.

Layout of a power-stacked window matrix with window ``K`` and order ``Q``:
column ``q * K + r`` holds ``y[m + r] ** (q + 1)``, i.e. kernel positions are
contiguous inside each power block.
"""

import numpy as np

from .errors import DimensionError, ParameterError

__all__ = ["unfold", "power_stack", "power_stack_derivative", "matvec", "fold_adjoint"]


def unfold(signal, K):
    """Sliding windows of length ``K`` as rows (valid windowing, stride 1).

    ``signal`` has shape ``(..., L)``; the result has shape ``(..., L-K+1, K)``
    with row ``m`` equal to ``signal[..., m:m+K]``. No padding is applied.
    """
    y = np.asarray(signal, dtype=np.float64)
    if y.ndim == 0:
        raise DimensionError("unfold expects at least a 1-D signal")
    K = int(K)
    if K < 1:
        raise ParameterError(f"window length must be >= 1, got {K}")
    if y.shape[-1] < K:
        raise DimensionError(
            f"signal length {y.shape[-1]} is shorter than window length {K}"
        )
    # copy so callers never hold a strided view into their own buffer
    return np.lib.stride_tricks.sliding_window_view(y, K, axis=-1).copy()


def power_stack(base, Q):
    """Concatenate elementwise powers ``[Y, Y**2, ..., Y**Q]`` along the last axis."""
    Y = np.asarray(base, dtype=np.float64)
    Q = int(Q)
    if Q < 1:
        raise ParameterError(f"power order Q must be >= 1, got {Q}")
    blocks = [Y]
    for _ in range(1, Q):
        blocks.append(blocks[-1] * Y)
    return np.concatenate(blocks, axis=-1)


def power_stack_derivative(base, Q):
    """Elementwise factors ``[1, 2Y, ..., Q Y**(Q-1)]`` of d(power_stack)/dY."""
    Y = np.asarray(base, dtype=np.float64)
    Q = int(Q)
    if Q < 1:
        raise ParameterError(f"power order Q must be >= 1, got {Q}")
    blocks = [np.ones_like(Y)]
    pw = np.ones_like(Y)
    for q in range(2, Q + 1):
        pw = pw * Y
        blocks.append(q * pw)
    return np.concatenate(blocks, axis=-1)


def matvec(mat, w):
    """``mat @ w`` with an explicit column/length check."""
    A = np.asarray(mat, dtype=np.float64)
    v = np.asarray(w, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"kernel vector must be 1-D, got shape {v.shape}")
    if A.shape[-1] != v.shape[0]:
        raise DimensionError(
            f"matrix has {A.shape[-1]} columns but kernel vector has length {v.shape[0]}"
        )
    return A @ v


def fold_adjoint(grad, out_len):
    """Exact adjoint of :func:`unfold`.

    Scatters every window entry ``grad[..., m, r]`` back onto sample ``m + r``
    and sums collisions, so ``<unfold(y, K), G> == <y, fold_adjoint(G, len(y))>``.
    """
    G = np.asarray(grad, dtype=np.float64)
    if G.ndim < 2:
        raise DimensionError(f"fold_adjoint expects (..., M, K), got shape {G.shape}")
    M, K = G.shape[-2], G.shape[-1]
    if int(out_len) != M + K - 1:
        raise DimensionError(
            f"out_len {out_len} inconsistent with {M} windows of length {K} "
            f"(expected {M + K - 1})"
        )
    out = np.zeros(G.shape[:-2] + (M + K - 1,), dtype=np.float64)
    for r in range(K):
        out[..., r : r + M] += G[..., r]
    return out
