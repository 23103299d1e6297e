"""Self-ONN layer of generative neurons: forward, analytic backward, oracle.

Each connection ``(i -> k)`` owns a kernel of ``K`` taps and ``Q`` MacLaurin
coefficients per tap. The pre-activation of neuron ``k`` is

    x_k(m) = b_k + sum_i sum_r sum_q w_ki(r, q) * y_i(m + r) ** q

computed as one GEMM against the power-stacked window matrix of every input.
Pooling over taps is fixed to summation and windows are valid (no padding).
With ``Q == 1`` the layer is an ordinary 1-D correlation layer.

Shapes: a single sample is ``(N_prev, L)``; a batch is ``(B, N_prev, L)``.
Both are accepted everywhere and outputs mirror the input rank.
"""

import threading
from dataclasses import dataclass, field

import numpy as np

from .core_math import fold_adjoint, power_stack, power_stack_derivative, unfold
from .errors import CacheStateError, DimensionError, NumericError, ParameterError

ACTIVATIONS = ("tanh", "linear")


@dataclass
class GenerativeLayerParams:
    """Weights ``(N, N_prev, Q*K)`` and biases ``(N,)`` of one layer.

    ``weights[k, i]`` is the flattened kernel of connection ``i -> k``:
    entry ``q*K + r`` is the coefficient of ``y_i(m + r) ** (q + 1)``.
    """

    weights: np.ndarray
    biases: np.ndarray
    K: int
    Q: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        self.K = int(self.K)
        self.Q = int(self.Q)
        if self.K < 1:
            raise ParameterError(f"kernel length must be >= 1, got {self.K}")
        if self.Q < 1:
            raise ParameterError(f"MacLaurin order Q must be >= 1, got {self.Q}")
        if self.weights.ndim != 3 or self.weights.shape[2] != self.K * self.Q:
            raise DimensionError(
                f"weights must have shape (N, N_prev, {self.K * self.Q}), "
                f"got {self.weights.shape}"
            )
        if self.biases.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"biases must have shape ({self.weights.shape[0]},), got {self.biases.shape}"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise NumericError("layer parameters contain non-finite values")

    @property
    def N(self):
        return self.weights.shape[0]

    @property
    def N_prev(self):
        return self.weights.shape[1]

    def kernel(self, k, i):
        """Kernel of connection ``i -> k`` as a ``(K, Q)`` matrix indexed ``[r, q-1]``."""
        return self.weights[k, i].reshape(self.Q, self.K).T

    def weights_per_neuron(self):
        return self.N_prev * self.K * self.Q

    def weight_count(self):
        return self.N * self.weights_per_neuron()

    def copy(self):
        return GenerativeLayerParams(self.weights.copy(), self.biases.copy(), self.K, self.Q)


def init_layer(N_prev, N, K, Q, rng):
    """Uniform(-a, a) weights with ``a = (N_prev*K*Q) ** -0.5``, zero biases."""
    a = (N_prev * K * Q) ** -0.5
    weights = rng.uniform(-a, a, size=(N, N_prev, K * Q))
    return GenerativeLayerParams(weights, np.zeros(N), K, Q)


@dataclass
class LayerActivationCache:
    """Intermediates of one forward call, consumable by exactly one backward."""

    stacked: np.ndarray  # (B, N_prev, M, Q*K)
    windows: np.ndarray  # (B, N_prev, M, K)
    preact: np.ndarray  # (B, N, M)
    act: np.ndarray  # (B, N, M)
    argmax: np.ndarray  # (B, N, M_out)
    subsample: int
    activation: str
    input_len: int
    batched: bool
    param_shape: tuple
    _consumed: bool = field(default=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def consume(self):
        with self._lock:
            if self._consumed:
                raise CacheStateError("forward cache already consumed by a backward pass")
            self._consumed = True

    @property
    def consumed(self):
        return self._consumed


@dataclass
class LayerGrads:
    dweights: np.ndarray
    dbiases: np.ndarray
    dinput: np.ndarray


def _as_batch(inputs, N_prev):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        batched = False
        x = x[None]
    elif x.ndim == 3:
        batched = True
    else:
        raise DimensionError(
            f"inputs must be (N_prev, L) or (B, N_prev, L), got shape {x.shape}"
        )
    if x.shape[1] != N_prev:
        raise DimensionError(f"layer expects {N_prev} input maps, got {x.shape[1]}")
    return x, batched


def _check_finite(preact, layer_index):
    if np.isfinite(preact).all():
        return
    b, k, m = (int(v) for v in np.argwhere(~np.isfinite(preact))[0])
    raise NumericError(
        f"non-finite pre-activation in layer {layer_index}, neuron {k}, "
        f"sample {b}, position {m}",
        layer=layer_index,
        neuron=k,
        sample=b,
        position=m,
    )


def layer_forward(inputs, params, subsample=1, activation="tanh", layer_index=0):
    """Generative-neuron forward pass followed by activation and max subsampling.

    Returns ``(outputs, cache)``. Output length is ``(L - K + 1) // subsample``;
    a trailing partial pooling window is discarded.
    """
    if activation not in ACTIVATIONS:
        raise ParameterError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
    subsample = int(subsample)
    if subsample < 1:
        raise ParameterError(f"subsample factor must be >= 1, got {subsample}")
    x, batched = _as_batch(inputs, params.N_prev)
    B, _, L = x.shape
    K, Q, N = params.K, params.Q, params.N
    if L < K:
        raise DimensionError(f"input length {L} is shorter than kernel length {K}")
    M = L - K + 1
    M_out = M // subsample
    if M_out < 1:
        raise DimensionError(
            f"map length {M} is shorter than subsample factor {subsample}"
        )

    windows = unfold(x, K)  # (B, N_prev, M, K)
    # overflow surfaces through the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        stacked = power_stack(windows, Q)  # (B, N_prev, M, QK)
        # (B, M, N_prev*QK) @ (N_prev*QK, N): one GEMM covers every (i, k) pair
        lhs = stacked.transpose(0, 2, 1, 3).reshape(B, M, -1)
        preact = (lhs @ params.weights.reshape(N, -1).T).transpose(0, 2, 1)
        preact = preact + params.biases[None, :, None]
    _check_finite(preact, layer_index)

    act = np.tanh(preact) if activation == "tanh" else preact
    blocks = act[:, :, : M_out * subsample].reshape(B, N, M_out, subsample)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]

    cache = LayerActivationCache(
        stacked=stacked,
        windows=windows,
        preact=preact,
        act=act,
        argmax=argmax,
        subsample=subsample,
        activation=activation,
        input_len=L,
        batched=batched,
        param_shape=params.weights.shape,
    )
    return (out if batched else out[0]), cache


def layer_backward(cache, params, dL_doutputs):
    """Gradients of the loss w.r.t. weights, biases and layer inputs."""
    if not isinstance(cache, LayerActivationCache):
        raise CacheStateError("layer_backward needs the cache returned by layer_forward")
    if cache.param_shape != params.weights.shape:
        raise CacheStateError(
            f"cache was built for weights {cache.param_shape}, got {params.weights.shape}"
        )
    g = np.asarray(dL_doutputs, dtype=np.float64)
    if not cache.batched:
        g = g[None]
    if g.shape != cache.argmax.shape:
        expected = cache.argmax.shape if cache.batched else cache.argmax.shape[1:]
        raise DimensionError(f"output gradient has shape {np.shape(dL_doutputs)}, expected {expected}")
    cache.consume()

    B, N, M = cache.preact.shape
    K, Q, N_prev = params.K, params.Q, params.N_prev
    f = cache.subsample
    M_out = cache.argmax.shape[-1]

    # undo max subsampling: route each gradient to its window's argmax
    g_blocks = np.zeros((B, N, M_out, f))
    np.put_along_axis(g_blocks, cache.argmax[..., None], g[..., None], axis=-1)
    g_act = np.zeros((B, N, M))
    g_act[:, :, : M_out * f] = g_blocks.reshape(B, N, M_out * f)
    if cache.activation == "tanh":
        g_pre = g_act * (1.0 - cache.act * cache.act)
    else:
        g_pre = g_act

    stacked = cache.stacked.transpose(0, 2, 1, 3).reshape(B * M, N_prev * Q * K)
    g_flat = g_pre.transpose(0, 2, 1).reshape(B * M, N)
    dweights = (g_flat.T @ stacked).reshape(N, N_prev, Q * K)
    dbiases = g_pre.sum(axis=(0, 2))

    # dL/dY^(Q): rank-1 per window row, summed over every neuron fed by input i
    d_stacked = (g_flat @ params.weights.reshape(N, -1)).reshape(B, M, N_prev, Q * K)
    d_stacked = d_stacked.transpose(0, 2, 1, 3)
    factors = power_stack_derivative(cache.windows, Q)
    d_windows = (d_stacked * factors).reshape(B, N_prev, M, Q, K).sum(axis=3)
    dinput = fold_adjoint(d_windows, cache.input_len)

    return LayerGrads(dweights, dbiases, dinput if cache.batched else dinput[0])


def naive_forward_oracle(inputs, params):
    """Pre-activations by explicit loops over (k, i, m, r, q); test ground truth."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"oracle expects (N_prev, L), got shape {x.shape}")
    if x.shape[0] != params.N_prev:
        raise DimensionError(f"layer expects {params.N_prev} input maps, got {x.shape[0]}")
    N_prev, L = x.shape
    K, Q = params.K, params.Q
    if L < K:
        raise DimensionError(f"input length {L} is shorter than kernel length {K}")
    M = L - K + 1
    out = np.zeros((params.N, M))
    for k in range(params.N):
        for m in range(M):
            acc = params.biases[k]
            for i in range(N_prev):
                w = params.kernel(k, i)
                for r in range(K):
                    y = x[i, m + r]
                    for q in range(1, Q + 1):
                        acc += w[r, q - 1] * y**q
            out[k, m] = acc
    return out
