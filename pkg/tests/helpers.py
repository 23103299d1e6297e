"""Independent oracles shared by the test modules."""

import numpy as np

from selfonn1d.generative_layer import GenerativeLayerParams


def rel_err(a, b):
    """Max-norm error of ``a`` relative to ``b``'s magnitude."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.abs(b).max(initial=0.0), np.finfo(float).tiny)
    return np.abs(a - b).max(initial=0.0) / scale


def grad_close(analytic, numeric, rel=1e-5, abs_floor=1e-7):
    """Entrywise |a - n| <= max(rel * max(|a|, |n|), abs_floor)."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    tol = np.maximum(rel * np.maximum(np.abs(a), np.abs(n)), abs_floor)
    return np.abs(a - n) <= tol


def central_diff(f, arrays, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of each array (in place)."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            fp = f()
            arr[idx] = orig - h
            fm = f()
            arr[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def reference_conv_forward(x, weights, biases):
    """Plain valid correlation layer: x (N_prev, L), weights (N, N_prev, K)."""
    N, N_prev, K = weights.shape
    M = x.shape[1] - K + 1
    out = np.zeros((N, M))
    for k in range(N):
        out[k] = biases[k]
        for i in range(N_prev):
            out[k] += np.correlate(x[i], weights[k, i], mode="valid")
    return out


def reference_conv_backward(x, weights, g):
    """Gradients of sum(g * reference_conv_forward) w.r.t. weights, biases, inputs."""
    N, N_prev, K = weights.shape
    dw = np.zeros_like(weights)
    dx = np.zeros_like(x)
    for k in range(N):
        for i in range(N_prev):
            dw[k, i] = np.correlate(x[i], g[k], mode="valid")
            dx[i] += np.convolve(g[k], weights[k, i], mode="full")
    return dw, g.sum(axis=1), dx


def random_layer(rng, N_prev, N, K, Q, scale=0.5):
    w = rng.uniform(-scale, scale, size=(N, N_prev, K * Q))
    b = rng.uniform(-scale, scale, size=N)
    return GenerativeLayerParams(w, b, K, Q)
