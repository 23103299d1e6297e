"""Two Self-ONN layers plus a two-layer dense head, trained by adaptive SGD.

Architecture (defaults): 2 input channels of 128 samples, generative layers of
16 and 8 neurons with kernel 15 and max subsampling 6 and 5, a 10-unit tanh
hidden layer and 5 linear outputs. Valid windowing gives map lengths
128 -> 114 -> 19 -> 5 -> 1.
"""

import dataclasses
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, ParameterError, ProtocolError
from .generative_layer import GenerativeLayerParams, init_layer, layer_backward, layer_forward

log = logging.getLogger(__name__)

LOSSES = ("cross_entropy", "mse")
MODEL_FORMAT = "selfonn1d-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    input_channels: int = 2
    input_length: int = 128
    layer_neurons: tuple = (16, 8)
    kernel: int = 15
    subsample: tuple = (6, 5)
    Q: int = 7
    dense_hidden: int = 10
    classes: int = 5
    activation: str = "tanh"
    loss: str = "cross_entropy"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_neurons", tuple(int(n) for n in self.layer_neurons))
        object.__setattr__(self, "subsample", tuple(int(s) for s in self.subsample))
        if len(self.layer_neurons) != len(self.subsample) or not self.layer_neurons:
            raise ConfigError("layer_neurons and subsample must be non-empty and equally long")
        if min(self.layer_neurons) < 1 or min(self.subsample) < 1:
            raise ConfigError("neuron counts and subsample factors must be >= 1")
        for name in ("input_channels", "input_length", "kernel", "Q", "dense_hidden", "classes"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.activation not in ("tanh", "linear"):
            raise ConfigError(f"activation must be 'tanh' or 'linear', got {self.activation!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        trace = self.map_trace()
        if trace[-1] < 1:
            raise ConfigError(
                "inconsistent dimensions, map lengths "
                + " -> ".join(str(v) for v in trace)
            )

    def map_trace(self):
        """Map lengths: input, then (after kernel, after subsampling) per layer."""
        trace = [self.input_length]
        length = self.input_length
        for f in self.subsample:
            length = length - self.kernel + 1
            trace.append(length)
            if length < 1:
                return trace
            length //= f
            trace.append(length)
            if length < 1:
                return trace
        return trace

    def preact_lengths(self):
        return self.map_trace()[1::2]

    @property
    def flatten_width(self):
        return self.layer_neurons[-1] * self.map_trace()[-1]

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["layer_neurons"] = list(self.layer_neurons)
        d["subsample"] = list(self.subsample)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def hash(self, ignore_seed=True):
        d = self.to_dict()
        if ignore_seed:
            d.pop("seed")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TrainSchedule:
    max_epochs: int = 50
    target_train_error: float = 0.03
    lr0: float = 0.01
    lr_up: float = 1.05
    lr_down: float = 0.7
    runs: int = 5
    batch_size: int = 32

    def __post_init__(self):
        if int(self.max_epochs) < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0.0 < self.target_train_error <= 1.0:
            raise ConfigError(
                f"target_train_error must be in (0, 1], got {self.target_train_error}"
            )
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")
        if self.lr_up <= 0 or self.lr_down <= 0:
            raise ConfigError("learning-rate factors must be positive")
        if int(self.runs) < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        if int(self.batch_size) < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class Model:
    config: NetworkConfig
    layers: list  # GenerativeLayerParams per Self-ONN layer
    dense: list  # (W (out, in), b (out,)) per dense layer
    meta: dict = field(default_factory=dict)

    def parameters(self):
        """Parameter arrays in canonical order (shared with gradients)."""
        params = []
        for layer in self.layers:
            params += [layer.weights, layer.biases]
        for W, b in self.dense:
            params += [W, b]
        return params

    def copy(self):
        return Model(
            self.config,
            [layer.copy() for layer in self.layers],
            [(W.copy(), b.copy()) for W, b in self.dense],
            json.loads(json.dumps(self.meta)),
        )


def build_network(config):
    """Fresh model with seeded uniform fan-in initialization and zero biases."""
    rng = np.random.default_rng(config.seed)
    layers = []
    n_prev = config.input_channels
    for n in config.layer_neurons:
        layers.append(init_layer(n_prev, n, config.kernel, config.Q, rng))
        n_prev = n
    dense = []
    fan_in = config.flatten_width
    for fan_out in (config.dense_hidden, config.classes):
        a = fan_in**-0.5
        dense.append((rng.uniform(-a, a, size=(fan_out, fan_in)), np.zeros(fan_out)))
        fan_in = fan_out
    return Model(config, layers, dense, {"seed": int(config.seed)})


# -- complexity accounting ----------------------------------------------------


def param_count(model_or_config):
    """Trainable parameters: N_prev*K*Q per generative neuron, biases, dense."""
    cfg = getattr(model_or_config, "config", model_or_config)
    total = 0
    n_prev = cfg.input_channels
    for n in cfg.layer_neurons:
        total += n * (n_prev * cfg.kernel * cfg.Q) + n
        n_prev = n
    fan_in = cfg.flatten_width
    for fan_out in (cfg.dense_hidden, cfg.classes):
        total += fan_out * fan_in + fan_out
        fan_in = fan_out
    return total


def param_walk_count(model):
    """Count by enumerating every stored parameter array."""
    return sum(int(p.size) for p in model.parameters())


def layer_macs(model_or_config):
    """Per-layer MACs: N * N_prev * |x| * K * Q, |x| the pre-subsampling length."""
    cfg = getattr(model_or_config, "config", model_or_config)
    macs = []
    n_prev = cfg.input_channels
    for n, length in zip(cfg.layer_neurons, cfg.preact_lengths()):
        macs.append(n * n_prev * length * cfg.kernel * cfg.Q)
        n_prev = n
    return macs


def mac_count(model_or_config):
    """Total MACs, bias additions and power stacking excluded."""
    cfg = getattr(model_or_config, "config", model_or_config)
    dense = cfg.flatten_width * cfg.dense_hidden + cfg.dense_hidden * cfg.classes
    return sum(layer_macs(cfg)) + dense


# -- forward / backward -------------------------------------------------------


def _targets(labels, classes):
    onehot = np.zeros((len(labels), classes))
    onehot[np.arange(len(labels)), labels] = 1.0
    return onehot


def forward(model, X):
    """Batch forward. ``X`` is ``(B, C, L)``; returns ``(logits (B, classes), caches)``."""
    cfg = model.config
    h = np.asarray(X, dtype=np.float64)
    if h.ndim != 3 or h.shape[1:] != (cfg.input_channels, cfg.input_length):
        raise DimensionError(
            f"network input must be (B, {cfg.input_channels}, {cfg.input_length}), "
            f"got {h.shape}"
        )
    layer_caches = []
    for idx, (layer, f) in enumerate(zip(model.layers, cfg.subsample)):
        h, cache = layer_forward(h, layer, f, cfg.activation, layer_index=idx)
        layer_caches.append(cache)
    flat_shape = h.shape
    a0 = h.reshape(h.shape[0], -1)
    (W1, b1), (W2, b2) = model.dense
    a1 = np.tanh(a0 @ W1.T + b1)
    z2 = a1 @ W2.T + b2
    return z2, (layer_caches, flat_shape, a0, a1)


def predict(model, X, chunk=512):
    X = np.asarray(X, dtype=np.float64)
    out = [forward(model, X[s : s + chunk])[0].argmax(axis=1) for s in range(0, len(X), chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def sample_losses(model, logits, labels):
    """Per-sample loss and dL/dlogits (per-sample, not batch-averaged)."""
    labels = np.asarray(labels)
    T = _targets(labels, model.config.classes)
    if model.config.loss == "cross_entropy":
        zmax = logits.max(axis=1, keepdims=True)
        ez = np.exp(logits - zmax)
        s = ez.sum(axis=1, keepdims=True)
        losses = (np.log(s) + zmax)[:, 0] - logits[np.arange(len(labels)), labels]
        grad = ez / s - T
    else:
        y = np.tanh(logits)
        T = 2.0 * T - 1.0
        diff = y - T
        losses = 0.5 * (diff * diff).sum(axis=1)
        grad = diff * (1.0 - y * y)
    return losses, grad


def backward(model, caches, dlogits):
    """Gradients in :meth:`Model.parameters` order."""
    layer_caches, flat_shape, a0, a1 = caches
    (W1, b1), (W2, b2) = model.dense
    dW2 = dlogits.T @ a1
    db2 = dlogits.sum(axis=0)
    dz1 = (dlogits @ W2) * (1.0 - a1 * a1)
    dW1 = dz1.T @ a0
    db1 = dz1.sum(axis=0)
    g = (dz1 @ W1).reshape(flat_shape)
    layer_grads = []
    for layer, cache in zip(reversed(model.layers), reversed(layer_caches)):
        lg = layer_backward(cache, layer, g)
        layer_grads.append(lg)
        g = lg.dinput
    grads = []
    for lg in reversed(layer_grads):
        grads += [lg.dweights, lg.dbiases]
    return grads + [dW1, db1, dW2, db2]


def loss_and_grads(model, X, labels, beat_ids=None):
    """Batch-mean loss and its gradient.

    A non-finite value aborts with :class:`NumericError` naming the beat.
    """
    labels = np.asarray(labels)

    def beat(i):
        return beat_ids[i] if beat_ids is not None else int(i)

    try:
        logits, caches = forward(model, X)
    except NumericError as exc:
        sample = exc.where.get("sample")
        raise NumericError(f"{exc} (beat {beat(sample)})", beat=beat(sample), **exc.where) from exc
    losses, dlogits = sample_losses(model, logits, labels)
    bad = ~np.isfinite(losses)
    if bad.any():
        i = int(np.argmax(bad))
        raise NumericError(f"non-finite loss for beat {beat(i)}", beat=beat(i))
    B = len(labels)
    return float(losses.mean()), backward(model, caches, dlogits / B)


def sgd_update(params, grads, lr):
    """In-place ``p -= lr * g`` over paired arrays."""
    for p, g in zip(params, grads):
        p -= lr * g


def sgd_step(model, X, labels, lr, beat_ids=None):
    """One SGD step on a batch; returns ``(model, batch_loss)``."""
    if lr < 0:
        raise ParameterError(f"learning rate must be >= 0, got {lr}")
    if len(labels) == 0:
        raise ProtocolError("sgd_step needs a non-empty batch")
    loss, grads = loss_and_grads(model, X, labels, beat_ids)
    sgd_update(model.parameters(), grads, lr)
    return model, loss


def train_error(model, X, labels):
    labels = np.asarray(labels)
    if len(labels) == 0:
        return 0.0
    return float(np.mean(predict(model, X) != labels))


# -- training -----------------------------------------------------------------


def beats_to_arrays(beats):
    """Stack BeatRecords into ``X (n, 2, 128)``, class indices and beat ids."""
    from .ecg import AAMI_CLASSES

    X = np.stack([np.stack([b.channel_beat, b.channel_trio]) for b in beats])
    y = np.array([AAMI_CLASSES.index(b.aami_class) for b in beats])
    ids = [f"{b.patient_id}:{b.beat_index}" for b in beats]
    return X, y, ids


def fit(X, labels, config, schedule, seed, beat_ids=None):
    """Train one model from scratch on arrays; see :func:`train_patient`."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise ProtocolError("training set is empty")
    config = dataclasses.replace(config, seed=int(seed))
    model = build_network(config)
    rng = np.random.default_rng([int(seed), 1])
    lr = schedule.lr0
    prev_loss = None
    history = []
    for epoch in range(1, schedule.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, schedule.batch_size):
            idx = order[s : s + schedule.batch_size]
            ids = [beat_ids[i] for i in idx] if beat_ids is not None else idx.tolist()
            _, loss = sgd_step(model, X[idx], labels[idx], lr, ids)
            total += loss * len(idx)
        epoch_loss = total / n
        err = train_error(model, X, labels)
        history.append({"epoch": epoch, "loss": epoch_loss, "train_error": err, "lr": lr})
        log.debug("seed %d epoch %d loss %.5f err %.4f lr %.5g", seed, epoch, epoch_loss, err, lr)
        if err <= schedule.target_train_error:
            break
        if prev_loss is not None and epoch_loss >= prev_loss:
            lr *= schedule.lr_down
        else:
            lr *= schedule.lr_up
        prev_loss = epoch_loss
    model.meta = {
        "seed": int(seed),
        "epochs": len(history),
        "final_train_error": history[-1]["train_error"],
        "history": history,
    }
    return model


def train_patient(common, patient_specific, config, schedule, seed=0):
    """Train on the common beats plus the patient's early beats.

    Stops after the first epoch whose train classification error is at or
    below ``schedule.target_train_error``, or after ``schedule.max_epochs``.
    """
    beats, seen = [], set()
    for b in list(common) + list(patient_specific):
        if b.key not in seen:
            seen.add(b.key)
            beats.append(b)
    if not beats:
        raise ProtocolError("training set (common + patient-specific) is empty")
    X, y, ids = beats_to_arrays(beats)
    return fit(X, y, config, schedule, seed, ids)


def derive_seed(master, *keys):
    return int(np.random.SeedSequence([int(master), *(int(k) for k in keys)]).generate_state(1)[0])


def run_seeds(master, runs):
    """Run 0 uses ``master`` itself so a single run equals a direct training."""
    return [int(master)] + [derive_seed(master, r) for r in range(1, runs)]


def select_best(models):
    """Lowest train error, then fewer epochs, then lower seed."""
    return min(
        models,
        key=lambda m: (m.meta["final_train_error"], m.meta["epochs"], m.meta["seed"]),
    )


def best_of_runs(common, patient_specific, config, schedule, seed=0):
    """Independent trainings with distinct seeds; keep the best."""
    models = [
        train_patient(common, patient_specific, config, schedule, s)
        for s in run_seeds(seed, schedule.runs)
    ]
    best = select_best(models)
    best.meta["runs"] = [
        {k: m.meta[k] for k in ("seed", "epochs", "final_train_error")}
        | {"lr": [h["lr"] for h in m.meta["history"]]}
        for m in models
    ]
    return best


# -- serialization ------------------------------------------------------------


def _to_canonical(arr, layer):
    # stored (N, N_prev, Q*K) -> serialized neuron, input, kernel position, power
    N, Np, _ = arr.shape
    return arr.reshape(N, Np, layer.Q, layer.K).transpose(0, 1, 3, 2).ravel()


def _from_canonical(flat, N, Np, K, Q):
    return np.ascontiguousarray(flat.reshape(N, Np, K, Q).transpose(0, 1, 3, 2)).reshape(N, Np, Q * K)


def model_to_bytes(model):
    arrays = {}
    for li, layer in enumerate(model.layers):
        arrays[f"layer{li}_weights"] = _to_canonical(layer.weights, layer)
        arrays[f"layer{li}_biases"] = layer.biases.copy()
    for di, (W, b) in enumerate(model.dense):
        arrays[f"dense{di}_weights"] = W.ravel().copy()
        arrays[f"dense{di}_biases"] = b.copy()
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "meta": model.meta,
    }
    buf = io.BytesIO()
    np.savez(buf, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return buf.getvalue()


def model_from_bytes(data):
    with np.load(io.BytesIO(data), allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != MODEL_FORMAT:
            raise ConfigError(f"not a {MODEL_FORMAT} file")
        if header.get("version") != MODEL_VERSION:
            raise ConfigError(f"unsupported model version {header.get('version')}")
        config = NetworkConfig.from_dict(header["config"])
        if config.hash() != header["config_hash"]:
            raise ConfigError("model config hash does not match its stored config")
        layers = []
        n_prev = config.input_channels
        for li, n in enumerate(config.layer_neurons):
            w = _from_canonical(z[f"layer{li}_weights"], n, n_prev, config.kernel, config.Q)
            layers.append(GenerativeLayerParams(w, z[f"layer{li}_biases"], config.kernel, config.Q))
            n_prev = n
        dense = []
        fan_in = config.flatten_width
        for di, fan_out in enumerate((config.dense_hidden, config.classes)):
            W = z[f"dense{di}_weights"].reshape(fan_out, fan_in)
            dense.append((W, z[f"dense{di}_biases"].copy()))
            fan_in = fan_out
    return Model(config, layers, dense, header["meta"])


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
