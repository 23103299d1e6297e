"""``selfonn1d`` command line: train, eval, complexity, bench, synth.

Every command reads an optional ``key = value`` config file (``#`` starts a
comment; lists are comma separated), applies CLI flag overrides, rejects
unknown keys and logs the fully resolved configuration.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import bench as bench_mod
from .ecg import PACED_IDS, PartitionPlan, build_partitions, check_test_beat_total, load_corpus
from .ecg import MITBIH_TEST_BEATS, write_corpus
from .errors import ConfigError, DataError, MappingError, NumericError, ParameterError
from .errors import ProtocolError
from .metrics import EvalReport, PatientResult, confusion, render_report
from .network import NetworkConfig, TrainSchedule, beats_to_arrays, best_of_runs, derive_seed
from .network import load_model, predict, save_model
from .synth import DEFAULT_PATIENTS, SyntheticSpec, corpus_template_accuracy, generate_corpus

log = logging.getLogger("selfonn1d")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _int_list(s):
    return tuple(int(v) for v in str(s).split(",") if v.strip())


def _str_list(s):
    return tuple(v.strip() for v in str(s).split(",") if v.strip())


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_NETWORK_KEYS = {
    "q": (int, 7),
    "layer_neurons": (_int_list, (16, 8)),
    "kernel": (int, 15),
    "subsample": (_int_list, (6, 5)),
    "dense_hidden": (int, 10),
    "loss": (str, "cross_entropy"),
}
_DATA_KEYS = {
    "data_dir": (str, None),
    "sampling_rate": (float, 360.0),
    "lead": (str, ""),
    "train_seconds": (float, 300.0),
    "excluded_ids": (_int_list, PACED_IDS),
    "patients": (_str_list, ()),
    "seed": (int, 0),
}

SCHEMAS = {
    "train": {
        **_NETWORK_KEYS,
        **_DATA_KEYS,
        "out": (str, "out"),
        "jobs": (int, 1),
        "runs": (int, 5),
        "max_epochs": (int, 50),
        "target_train_error": (float, 0.03),
        "lr0": (float, 0.01),
        "lr_up": (float, 1.05),
        "lr_down": (float, 0.7),
        "batch_size": (int, 32),
    },
    "eval": {
        **_DATA_KEYS,
        "model_dir": (str, ""),
        "out": (str, "out"),
        "expected_test_beats": (int, MITBIH_TEST_BEATS),
    },
    "complexity": {
        "q": (int, 0),
        "layer_neurons": (_int_list, (16, 8)),
        "kernel": (int, 15),
        "subsample": (_int_list, (6, 5)),
        "dense_hidden": (int, 10),
    },
    "bench": {
        "qs": (_int_list, (1, 7)),
        "layer_neurons": (_int_list, (16, 8)),
        "repetitions": (int, 10_000),
        "seed": (int, 0),
        "out": (str, ""),
    },
    "synth": {
        "out": (str, "synthetic"),
        "seed": (int, 0),
        "beats_per_class": (int, 150),
        "noise": (float, 0.0),
        "timing_jitter": (float, 0.05),
        "rr_seconds": (float, 0.8),
        "sampling_rate": (float, 360.0),
        "patients": (_int_list, DEFAULT_PATIENTS),
    },
}

FLAG_KEYS = ("seed", "q", "jobs", "out")


def parse_config_file(path):
    """Raw ``{key: value-string}`` from a key=value file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    raw = {}
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"{p}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def resolve_config(command, raw):
    """Typed config for ``command``; unknown keys and bad values raise ConfigError."""
    schema = SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key(s) for '{command}': {', '.join(unknown)}")
    cfg = {}
    for key, (conv, default) in schema.items():
        if key in raw and raw[key] is not None:
            try:
                cfg[key] = conv(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw[key]!r} ({exc})") from None
        else:
            cfg[key] = default
    return cfg


def format_config(cfg):
    def show(v):
        return ",".join(str(x) for x in v) if isinstance(v, tuple) else v
    return "\n".join(f"{k} = {show(v)}" for k, v in sorted(cfg.items())) + "\n"


def network_config(cfg):
    return NetworkConfig(
        layer_neurons=cfg["layer_neurons"],
        kernel=cfg["kernel"],
        subsample=cfg["subsample"],
        Q=cfg["q"],
        dense_hidden=cfg["dense_hidden"],
        loss=cfg.get("loss", "cross_entropy"),
    )


def data_hash(cfg):
    """Identity of the data/partition settings a model was trained under."""
    keys = ("sampling_rate", "lead", "train_seconds", "excluded_ids", "seed")
    blob = json.dumps({k: cfg[k] for k in keys}, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _load_partitions(cfg):
    if not cfg["data_dir"]:
        raise DataError("no dataset given: set data_dir in the config")
    corpus = load_corpus(cfg["data_dir"], cfg["sampling_rate"], cfg["lead"] or None)
    plan = PartitionPlan(excluded_ids=cfg["excluded_ids"], train_seconds=cfg["train_seconds"])
    parts = build_partitions(corpus, plan, seed=cfg["seed"])
    if cfg["patients"]:
        missing = [p for p in cfg["patients"] if p not in parts.patients]
        if missing:
            raise DataError(f"requested patients without test partitions: {missing}")
        parts.patients = {p: parts.patients[p] for p in cfg["patients"]}
    if not parts.patients:
        raise DataError(f"no test patients found in {cfg['data_dir']}")
    return parts


def _train_one(args):
    pid, common, split, net_cfg, schedule, seed = args
    model = best_of_runs(common, split.train, net_cfg, schedule, seed)
    return pid, model


def cmd_train(cfg):
    parts = _load_partitions(cfg)
    net_cfg = network_config(cfg)
    schedule = TrainSchedule(
        max_epochs=cfg["max_epochs"],
        target_train_error=cfg["target_train_error"],
        lr0=cfg["lr0"],
        lr_up=cfg["lr_up"],
        lr_down=cfg["lr_down"],
        runs=cfg["runs"],
        batch_size=cfg["batch_size"],
    )
    if cfg["jobs"] < 1:
        raise ConfigError("jobs must be >= 1")
    out = Path(cfg["out"])
    (out / "models").mkdir(parents=True, exist_ok=True)
    dhash = data_hash(cfg)
    tasks = [
        (pid, parts.common, split, net_cfg, schedule, derive_seed(cfg["seed"], _pid_key(pid)))
        for pid, split in parts.patients.items()
    ]
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as ex:
            results = list(ex.map(_train_one, tasks))
    else:
        results = [_train_one(t) for t in tasks]
    train_log = {}
    for pid, model in results:
        model.meta["data_hash"] = dhash
        model.meta["patient_id"] = pid
        save_model(model, out / "models" / f"{pid}.npz")
        train_log[pid] = {k: model.meta[k] for k in ("seed", "epochs", "final_train_error", "runs")}
        log.info("patient %s: epochs %d, train error %.4f", pid, model.meta["epochs"],
                 model.meta["final_train_error"])
    (out / "train_log.json").write_text(json.dumps(train_log, indent=2, sort_keys=True))
    return train_log


def _pid_key(pid):
    return int(pid) if str(pid).isdigit() else int(hashlib.sha256(str(pid).encode()).hexdigest()[:8], 16)


def cmd_eval(cfg):
    parts = _load_partitions(cfg)
    model_dir = Path(cfg["model_dir"] or Path(cfg["out"]) / "models")
    dhash = data_hash(cfg)
    report = EvalReport()
    for pid, split in parts.patients.items():
        path = model_dir / f"{pid}.npz"
        if not path.is_file():
            raise DataError(f"no model for patient {pid} at {path}")
        model = load_model(path)
        if model.meta.get("data_hash") != dhash:
            raise ConfigError(
                f"model {path} was trained under data settings {model.meta.get('data_hash')}, "
                f"eval config resolves to {dhash}; refusing to evaluate"
            )
        if split.test:
            X, y, _ = beats_to_arrays(split.test)
            pred = predict(model, X)
        else:
            y, pred = [], []
        report.add(PatientResult(pid, confusion(y, pred)))
    text, csv_text = render_report(report)
    total, ok = check_test_beat_total(parts, cfg["expected_test_beats"])
    plan_ids = {str(i) for i in PartitionPlan(excluded_ids=cfg["excluded_ids"]).test_ids}
    if plan_ids <= set(parts.patients):
        status = "within" if ok else "OUTSIDE"
        text += (f"test beats: {total} ({status} 1% of expected {cfg['expected_test_beats']})\n")
    else:
        text += f"test beats: {total}\n"
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(text)
    (out / "report.csv").write_text(csv_text)
    return report, text


def cmd_complexity(cfg):
    named = list(bench_mod.REFERENCE_MODELS)
    if cfg["q"]:
        named.append((f"custom (Q={cfg['q']})", network_config({**cfg, "loss": "cross_entropy"})))
    rows = bench_mod.complexity_rows(named)
    return rows, bench_mod.format_complexity(rows)


def cmd_bench(cfg):
    report = bench_mod.run_bench(cfg["qs"], cfg["layer_neurons"], cfg["repetitions"], cfg["seed"])
    text = bench_mod.format_bench(report)
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(report, indent=2))
    return report, text


def cmd_synth(cfg):
    spec = SyntheticSpec(
        beats_per_class=cfg["beats_per_class"],
        noise=cfg["noise"],
        timing_jitter=cfg["timing_jitter"],
        rr_seconds=cfg["rr_seconds"],
        sampling_rate=cfg["sampling_rate"],
        seed=cfg["seed"],
        patient_ids=cfg["patients"],
    )
    corpus = generate_corpus(spec)
    write_corpus(corpus, cfg["out"])
    text = f"wrote {len(corpus)} records to {cfg['out']}\n"
    if spec.noise == 0:
        text += f"nearest-template accuracy: {corpus_template_accuracy(corpus):.4f}\n"
    return corpus, text


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "complexity": cmd_complexity,
    "bench": cmd_bench,
    "synth": cmd_synth,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="selfonn1d", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--q", type=int)
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--out")
    return parser


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("SELFONN1D_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        raw = parse_config_file(args.config) if args.config else {}
        for key in FLAG_KEYS:
            val = getattr(args, key)
            if val is not None:
                if key not in SCHEMAS[args.command]:
                    raise ConfigError(f"--{key} does not apply to '{args.command}'")
                raw[key] = str(val)
        cfg = resolve_config(args.command, raw)
        log.info("resolved config for %s:\n%s", args.command, format_config(cfg))
        result = COMMANDS[args.command](cfg)
        text = result[1] if isinstance(result, tuple) else json.dumps(result, indent=2, sort_keys=True) + "\n"
        sys.stdout.write(text)
        if cfg.get("out") and args.command in ("train", "eval"):
            Path(cfg["out"]).mkdir(parents=True, exist_ok=True)
            (Path(cfg["out"]) / f"{args.command}_config.txt").write_text(format_config(cfg))
        return EXIT_OK
    except (ConfigError, ParameterError) as exc:
        print(f"selfonn1d: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ProtocolError, MappingError) as exc:
        print(f"selfonn1d: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"selfonn1d: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
