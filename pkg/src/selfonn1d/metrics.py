"""Confusion matrices and one-vs-rest SVEB/VEB metrics with record-set pooling.

Rates are exact :class:`fractions.Fraction` values computed from integer
counts; an undefined rate (zero denominator) is ``None`` and renders as "-".
Aggregates pool confusion matrices (micro averaging) before any division.
"""

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .ecg import AAMI_CLASSES
from .errors import DimensionError, ProtocolError

TASKS = {"SVEB": "S", "VEB": "V"}

DATASET1_VEB = (200, 202, 210, 213, 214, 219, 221, 228, 231, 233, 234)
DATASET1_SVEB = DATASET1_VEB + (212, 222, 232)
DATASET2 = (200, 201, 202, 203, 205, 207, 208, 209, 210, 212, 213, 214,
            215, 219, 220, 221, 222, 223, 228, 230, 231, 232, 233, 234)  # fmt: skip
DATASET3 = (100, 101, 103, 105, 106, 108, 109, 111, 112, 113, 114, 115, 116,
            117, 118, 119, 121, 122, 123, 124) + DATASET2  # fmt: skip

DATASETS = {
    1: {"SVEB": DATASET1_SVEB, "VEB": DATASET1_VEB},
    2: {"SVEB": DATASET2, "VEB": DATASET2},
    3: {"SVEB": DATASET3, "VEB": DATASET3},
}


def _class_index(label):
    if isinstance(label, str):
        return AAMI_CLASSES.index(label)
    return int(label)


class ConfusionMatrix5:
    """5x5 counts; rows are ground truth, columns predictions, order N S V F Q."""

    def __init__(self, counts=None):
        c = np.zeros((5, 5), dtype=np.int64) if counts is None else np.array(counts, dtype=np.int64)
        if c.shape != (5, 5):
            raise DimensionError(f"confusion matrix must be 5x5, got {c.shape}")
        if (c < 0).any():
            raise ValueError("confusion counts must be non-negative")
        self.counts = c

    def __add__(self, other):
        return ConfusionMatrix5(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix5) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"ConfusionMatrix5({self.counts.tolist()})"

    @property
    def total(self):
        return int(self.counts.sum())

    def row_sums(self):
        return dict(zip(AAMI_CLASSES, (int(v) for v in self.counts.sum(axis=1))))


def confusion(truth, predicted):
    truth, predicted = list(truth), list(predicted)
    if len(truth) != len(predicted):
        raise DimensionError(f"{len(truth)} truth labels vs {len(predicted)} predictions")
    cm = np.zeros((5, 5), dtype=np.int64)
    for t, p in zip(truth, predicted):
        cm[_class_index(t), _class_index(p)] += 1
    return ConfusionMatrix5(cm)


def _ratio(num, den):
    return Fraction(num, den) if den else None


@dataclass(frozen=True)
class BinaryMetrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    @property
    def acc(self):
        return _ratio(self.tp + self.tn, self.total)

    @property
    def sen(self):
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def spe(self):
        return _ratio(self.tn, self.tn + self.fp)

    @property
    def ppr(self):
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def f1(self):
        sen, ppr = self.sen, self.ppr
        if sen is None or ppr is None or sen + ppr == 0:
            return None
        return 2 * sen * ppr / (sen + ppr)

    def as_dict(self):
        return {k: getattr(self, k) for k in ("acc", "sen", "spe", "ppr", "f1")}

    def __add__(self, other):
        return BinaryMetrics(self.tp + other.tp, self.fp + other.fp,
                             self.fn + other.fn, self.tn + other.tn)


def one_vs_rest(cm, positive):
    p = _class_index(positive)
    c = cm.counts
    tp = int(c[p, p])
    fp = int(c[:, p].sum()) - tp
    fn = int(c[p, :].sum()) - tp
    return BinaryMetrics(tp, fp, fn, cm.total - tp - fp - fn)


def percent(value):
    """Percentage string rounded half-up to one decimal; ``None`` -> ``"-"``."""
    if value is None:
        return "-"
    tenths = math.floor(Fraction(value) * 1000 + Fraction(1, 2))
    return f"{tenths // 10}.{tenths % 10}"


def macro_average(metrics, name):
    """Mean of a named rate over several results, skipping undefined entries."""
    vals = [getattr(m, name) for m in metrics]
    vals = [v for v in vals if v is not None]
    return sum(vals, Fraction(0)) / len(vals) if vals else None


@dataclass
class PatientResult:
    patient_id: str
    cm: ConfusionMatrix5

    def task(self, name):
        return one_vs_rest(self.cm, TASKS[name])


class EvalReport:
    def __init__(self, results=()):
        self.patients = {}
        for r in results:
            self.add(r)

    def add(self, result):
        self.patients[str(result.patient_id)] = result

    def ordered_ids(self):
        return sorted(self.patients, key=lambda p: (not p.isdigit(), int(p) if p.isdigit() else 0, p))

    def summed(self, ids):
        cm = ConfusionMatrix5()
        for pid in ids:
            cm = cm + self.patients[pid].cm
        return cm

    def available_datasets(self):
        have = set(self.patients)
        return [
            d for d, tasks in DATASETS.items()
            if all(str(i) in have for ids in tasks.values() for i in ids)
        ]


def aggregate(report, dataset):
    """Pooled SVEB and VEB metrics over a dataset's record set."""
    if dataset not in DATASETS:
        raise ValueError(f"dataset must be one of {sorted(DATASETS)}, got {dataset}")
    out = {}
    for task, ids in DATASETS[dataset].items():
        missing = [i for i in ids if str(i) not in report.patients]
        if missing:
            raise ProtocolError(f"dataset {dataset} {task}: missing records {missing}")
        out[task] = one_vs_rest(report.summed([str(i) for i in ids]), TASKS[task])
    return out


def aggregate_ids(report, ids):
    """Pooled metrics over an explicit id list (all tasks)."""
    missing = [i for i in ids if str(i) not in report.patients]
    if missing:
        raise ProtocolError(f"missing records {missing}")
    cm = report.summed([str(i) for i in ids])
    return {task: one_vs_rest(cm, pos) for task, pos in TASKS.items()}


CSV_FIELDS = ["patient_id", "n", "s", "v", "f", "q", "task", "acc", "sen", "spe", "ppr", "f1"]
_RATES = ("acc", "sen", "spe", "ppr", "f1")


def _row_cells(m):
    return [percent(getattr(m, k)) for k in _RATES]


def render_report(report):
    """``(text_table, csv_text)`` with one row per patient plus dataset pools."""
    rows = []
    for pid in report.ordered_ids():
        res = report.patients[pid]
        rows.append((pid, res.cm.row_sums(), {t: res.task(t) for t in TASKS}))
    agg_rows = []
    for d in report.available_datasets():
        per_task = aggregate(report, d)
        # beat counts shown for the widest (SVEB) membership
        counts = report.summed([str(i) for i in DATASETS[d]["SVEB"]]).row_sums()
        agg_rows.append((f"dataset{d}", counts, per_task))

    head1 = f"{'':>9} {'Number of beats':^34} | {'SVEB':^29} | {'VEB':^29}"
    head2 = (f"{'Patient':>9} " + " ".join(f"{c:>6}" for c in AAMI_CLASSES) + " | "
             + " ".join(f"{k.capitalize():>5}" for k in _RATES) + " | "
             + " ".join(f"{k.capitalize():>5}" for k in _RATES))
    lines = [head1, head2, "-" * len(head2)]

    def fmt(label, counts, tasks):
        return (f"{label:>9} " + " ".join(f"{counts[c]:>6}" for c in AAMI_CLASSES) + " | "
                + " ".join(f"{v:>5}" for v in _row_cells(tasks["SVEB"])) + " | "
                + " ".join(f"{v:>5}" for v in _row_cells(tasks["VEB"])))

    lines += [fmt(*r) for r in rows]
    if agg_rows:
        lines.append("-" * len(head2))
        lines += [fmt(*r) for r in agg_rows]
    text = "\n".join(lines) + "\n"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for label, counts, tasks in rows + agg_rows:
        for task in TASKS:
            cells = ["" if v == "-" else v for v in _row_cells(tasks[task])]
            w.writerow([label] + [counts[c] for c in AAMI_CLASSES] + [task] + cells)
    return text, buf.getvalue()
