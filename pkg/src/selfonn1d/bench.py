"""Per-beat latency benchmark and parameter/MAC tables."""

import os
import platform
import time

import numpy as np

from .network import NetworkConfig, backward, build_network, forward, layer_macs, mac_count
from .network import param_count, param_walk_count, sample_losses

REFERENCE_MODELS = (
    ("1D CNN (Q=1)", NetworkConfig(layer_neurons=(32, 16), Q=1)),
    ("1D Self-ONN (Q=7)", NetworkConfig(layer_neurons=(16, 8), Q=7)),
)

MAC_NOTE = (
    "MACs count N_prev*|x|*K*Q per generative neuron on the pre-subsampling map "
    "plus dense products; bias additions and power stacking are excluded."
)


def complexity_rows(named_configs=REFERENCE_MODELS):
    rows = []
    for name, cfg in named_configs:
        model = build_network(cfg)
        rows.append({
            "name": name,
            "layers": list(cfg.layer_neurons),
            "Q": cfg.Q,
            "pars": param_count(cfg),
            "pars_walk": param_walk_count(model),
            "layer_macs": layer_macs(cfg),
            "macs": mac_count(cfg),
        })
    return rows


def format_complexity(rows):
    lines = [f"{'network':<22} {'layers':<10} {'Q':>2} {'PARs':>8} {'MACs':>10}"]
    for r in rows:
        layers = "/".join(str(n) for n in r["layers"])
        lines.append(f"{r['name']:<22} {layers:<10} {r['Q']:>2} {r['pars']:>8} {r['macs']:>10}")
    lines.append("note: " + MAC_NOTE)
    return "\n".join(lines) + "\n"


def machine_info():
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "machine": platform.machine(),
        "processor": platform.processor() or platform.machine(),
        "cpus": os.cpu_count(),
    }


def _stats_us(ns):
    us = np.asarray(ns, dtype=np.float64) / 1e3
    return {"median_us": float(np.median(us)), "p95_us": float(np.percentile(us, 95))}


def bench_model(config, repetitions=10_000, seed=0, n_beats=16):
    """Median/p95 single-beat forward and backward latency in microseconds.

    Beats cycle through ``n_beats`` fixed random inputs in [-1, 1]. The
    backward timing covers loss gradient plus full backpropagation; the
    forward that produces its cache is not timed.
    """
    model = build_network(config)
    rng = np.random.default_rng(seed)
    beats = rng.uniform(-1, 1, size=(n_beats, 1, config.input_channels, config.input_length))
    labels = rng.integers(0, config.classes, size=n_beats)
    for i in range(min(50, repetitions)):  # warm-up
        forward(model, beats[i % n_beats])
    fp, bp = [], []
    clock = time.perf_counter_ns
    for i in range(repetitions):
        x = beats[i % n_beats]
        t0 = clock()
        logits, caches = forward(model, x)
        t1 = clock()
        _, dlogits = sample_losses(model, logits, labels[i % n_beats : i % n_beats + 1])
        backward(model, caches, dlogits)
        t2 = clock()
        fp.append(t1 - t0)
        bp.append(t2 - t1)
    return {"fp": _stats_us(fp), "bp": _stats_us(bp), "repetitions": repetitions,
            "Q": config.Q, "layers": list(config.layer_neurons)}


def run_bench(qs=(1, 7), layer_neurons=(16, 8), repetitions=10_000, seed=0):
    results = [bench_model(NetworkConfig(layer_neurons=layer_neurons, Q=q), repetitions, seed)
               for q in qs]
    return {"machine": machine_info(), "results": results}


def format_bench(report):
    lines = ["machine: " + ", ".join(f"{k}={v}" for k, v in report["machine"].items())]
    lines.append(f"{'Q':>3} {'layers':<8} {'FP med':>9} {'FP p95':>9} {'BP med':>9} {'BP p95':>9}  (us/beat)")
    for r in report["results"]:
        layers = "/".join(str(n) for n in r["layers"])
        lines.append(
            f"{r['Q']:>3} {layers:<8} {r['fp']['median_us']:>9.1f} {r['fp']['p95_us']:>9.1f} "
            f"{r['bp']['median_us']:>9.1f} {r['bp']['p95_us']:>9.1f}"
        )
    return "\n".join(lines) + "\n"
