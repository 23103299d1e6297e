"""ECG record ingestion, beat segmentation and AAMI train/test partitioning.

Records and annotations travel as two CSV files per patient:

* record: header ``sample_index,<lead>[,<lead>...]``, one row per sample,
  indices ``0, 1, 2, ...``;
* annotations: header ``sample_index,symbol`` with MIT-BIH beat codes.

Each beat becomes a :class:`BeatRecord` with two 128-sample channels: the
beat window itself and a "trio" window spanning the previous and next beats.
"""

import bisect
import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, MappingError, ParseError, ProtocolError, ValidationError

log = logging.getLogger(__name__)

AAMI_CLASSES = ("N", "S", "V", "F", "Q")

AAMI_MAP = {
    # non-ectopic: normal, RBBB, atrial escape, LBBB, nodal escape
    "N": "N", "R": "N", "e": "N", "L": "N", "j": "N",
    # supraventricular ectopic
    "a": "S", "A": "S", "S": "S", "J": "S",
    # ventricular ectopic: PVC, ventricular escape, flutter wave
    "V": "V", "E": "V", "!": "V",
    "F": "F",
    # paced, paced fusion, unclassifiable
    "/": "Q", "f": "Q", "Q": "Q",
}  # fmt: skip

MITBIH_IDS = (
    100, 101, 102, 103, 104, 105, 106, 107, 108, 109,
    111, 112, 113, 114, 115, 116, 117, 118, 119, 121, 122, 123, 124,
    200, 201, 202, 203, 205, 207, 208, 209, 210, 212, 213, 214, 215, 217,
    219, 220, 221, 222, 223, 228, 230, 231, 232, 233, 234,
)  # fmt: skip
PACED_IDS = (102, 104, 107, 217)

BEAT_LENGTH = 128
WINDOW_BEFORE_S = 0.25
WINDOW_AFTER_S = 0.4


def map_to_aami(symbol):
    """AAMI class of a MIT-BIH beat symbol; unknown symbols raise MappingError."""
    try:
        return AAMI_MAP[symbol]
    except KeyError:
        raise MappingError(symbol) from None


@dataclass
class EcgRecord:
    patient_id: str
    sampling_rate: float
    samples: np.ndarray
    annotations: list  # [(sample_index, symbol)], sorted

    def __post_init__(self):
        self.patient_id = str(self.patient_id)
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or len(self.samples) < 1:
            raise ValidationError(f"record {self.patient_id}: samples must be a non-empty 1-D array")
        if not np.isfinite(self.samples).all():
            raise ValidationError(f"record {self.patient_id}: non-finite sample values")
        if self.sampling_rate <= 0:
            raise ValidationError(f"record {self.patient_id}: sampling rate must be positive")
        self.annotations = [(int(i), str(s)) for i, s in self.annotations]
        idx = [i for i, _ in self.annotations]
        if idx != sorted(idx):
            raise ValidationError(f"record {self.patient_id}: annotations are not sorted")
        n = len(self.samples)
        for i in idx:
            if not 0 <= i < n:
                raise ValidationError(
                    f"record {self.patient_id}: annotation index {i} outside record length {n}"
                )


@dataclass(frozen=True)
class BeatRecord:
    patient_id: str
    beat_index: int  # position in the record's annotation list
    channel_beat: np.ndarray
    channel_trio: np.ndarray
    aami_class: str
    r_sample: int

    @property
    def key(self):
        return (self.patient_id, self.r_sample)


class BeatDropped(ValidationError):
    """A beat that cannot be segmented; ``reason`` is a short tag."""

    def __init__(self, reason, message):
        super().__init__(message)
        self.reason = reason


# -- CSV I/O ------------------------------------------------------------------


def _first_bad_line(path, ncols):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1:
                continue
            if len(row) != ncols:
                return lineno, f"expected {ncols} fields, got {len(row)}"
            try:
                [float(v) for v in row]
            except ValueError:
                return lineno, f"non-numeric field in {row!r}"
    return None, "unparseable content"


def read_record_csv(path, lead=None):
    """Samples of one lead. ``lead`` is a column name or 0-based value-column index."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"record file not found: {path}")
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header or header[0].strip() != "sample_index" or len(header) < 2:
        raise ParseError("header must start with 'sample_index,<value column>'", path, 1)
    names = [h.strip() for h in header[1:]]
    if lead is None or lead == "":
        col = 0
    elif isinstance(lead, int) or str(lead).isdigit():
        col = int(lead)
    elif lead in names:
        col = names.index(lead)
    else:
        raise ValidationError(f"{path}: lead {lead!r} not among columns {names}")
    if col >= len(names):
        raise ValidationError(f"{path}: lead index {col} out of range for {len(names)} leads")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    except ValueError:
        line, why = _first_bad_line(path, len(header))
        raise ParseError(why, path, line) from None
    if data.shape[0] == 0:
        raise ValidationError(f"{path}: record has no samples")
    if data.shape[1] != len(header):
        raise ParseError(f"expected {len(header)} columns, got {data.shape[1]}", path, 2)
    idx = data[:, 0]
    bad = np.flatnonzero(idx != np.arange(len(idx)))
    if bad.size:
        raise ValidationError(
            f"{path}:{bad[0] + 2}: sample indices must run 0, 1, 2, ... (got {idx[bad[0]]:g})"
        )
    return data[:, 1 + col]


def read_annotation_csv(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"annotation file not found: {path}")
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or [h.strip() for h in header[:2]] != ["sample_index", "symbol"]:
            raise ParseError("header must be 'sample_index,symbol'", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", path, lineno)
            try:
                idx = int(row[0])
            except ValueError:
                raise ParseError(f"sample_index {row[0]!r} is not an integer", path, lineno) from None
            sym = row[1].strip()
            if not sym:
                raise ParseError("empty symbol", path, lineno)
            out.append((idx, sym))
    return out


def ingest_csv(record_path, annotation_path, patient_id=None, sampling_rate=360.0, lead=None):
    """Parse one record plus annotations; unsorted annotations are sorted with a warning."""
    samples = read_record_csv(record_path, lead)
    anns = read_annotation_csv(annotation_path)
    n = len(samples)
    for idx, sym in anns:
        if not 0 <= idx < n:
            raise ValidationError(
                f"{annotation_path}: annotation {sym!r} at {idx} outside record length {n}"
            )
    if any(a[0] > b[0] for a, b in zip(anns, anns[1:])):
        log.warning("%s: annotations not sorted by sample index; sorting", annotation_path)
        anns = sorted(anns, key=lambda a: a[0])
    if patient_id is None:
        patient_id = Path(record_path).name.split(".")[0]
    return EcgRecord(patient_id, sampling_rate, samples, anns)


def write_record_csv(path, samples):
    with open(path, "w", newline="") as fh:
        fh.write("sample_index,value\n")
        fh.writelines(f"{i},{v:.6f}\n" for i, v in enumerate(samples))


def write_annotation_csv(path, annotations):
    with open(path, "w", newline="") as fh:
        fh.write("sample_index,symbol\n")
        fh.writelines(f"{i},{s}\n" for i, s in annotations)


def record_paths(data_dir, patient_id):
    d = Path(data_dir)
    return d / f"{patient_id}.record.csv", d / f"{patient_id}.annotations.csv"


def load_corpus(data_dir, sampling_rate=360.0, lead=None, patient_ids=None):
    """All records in ``data_dir`` named ``<id>.record.csv`` + ``<id>.annotations.csv``."""
    d = Path(data_dir)
    if not d.is_dir():
        raise DataError(f"data directory not found: {d}")
    if patient_ids is None:
        patient_ids = sorted(p.name[: -len(".record.csv")] for p in d.glob("*.record.csv"))
    if not patient_ids:
        raise DataError(f"no '<id>.record.csv' files in {d}")
    corpus = {}
    for pid in patient_ids:
        rec, ann = record_paths(d, pid)
        corpus[str(pid)] = ingest_csv(rec, ann, str(pid), sampling_rate, lead)
    return corpus


def write_corpus(corpus, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for pid, record in corpus.items():
        rec, ann = record_paths(out, pid)
        write_record_csv(rec, record.samples)
        write_annotation_csv(ann, record.annotations)


# -- segmentation -------------------------------------------------------------


def resample(segment, length=BEAT_LENGTH):
    """Linear interpolation onto ``length`` uniformly spaced points."""
    seg = np.asarray(segment, dtype=np.float64)
    if len(seg) == 1:
        return np.full(length, seg[0])
    return np.interp(np.linspace(0.0, len(seg) - 1, length), np.arange(len(seg)), seg)


def normalize(channel):
    """Remove the mean, then scale to max |x| == 1 (all-zero input stays zero)."""
    x = channel - channel.mean()
    peak = np.abs(x).max()
    return x / peak if peak > 0 else x


def window_extent(sampling_rate):
    return int(round(WINDOW_BEFORE_S * sampling_rate)), int(round(WINDOW_AFTER_S * sampling_rate))


def _beat_positions(record):
    """Annotation-list indices of annotations carrying a mappable beat symbol."""
    return [j for j, (_, s) in enumerate(record.annotations) if s in AAMI_MAP]


def _segment(record, beat_positions, k):
    j = beat_positions[k]
    r, sym = record.annotations[j]
    aami = map_to_aami(sym)
    if k == 0:
        raise BeatDropped("no_previous_beat", f"beat at {r} has no previous beat")
    if k == len(beat_positions) - 1:
        raise BeatDropped("no_next_beat", f"beat at {r} has no next beat")
    before, after = window_extent(record.sampling_rate)
    r_prev = record.annotations[beat_positions[k - 1]][0]
    r_next = record.annotations[beat_positions[k + 1]][0]
    start, stop = r - before, r + after
    trio_start, trio_stop = r_prev - before, r_next + after
    n = len(record.samples)
    if min(start, trio_start) < 0 or max(stop, trio_stop) > n:
        raise BeatDropped("out_of_bounds", f"beat at {r}: window exceeds record bounds [0, {n})")
    beat = normalize(resample(record.samples[start:stop]))
    trio = normalize(resample(record.samples[trio_start:trio_stop]))
    return BeatRecord(record.patient_id, j, beat, trio, aami, r)


def segment_beat(record, annotation_index):
    """BeatRecord for ``record.annotations[annotation_index]``.

    Raises MappingError for symbols outside the AAMI table and BeatDropped
    when a neighbour is missing or a window leaves the record.
    """
    sym = record.annotations[annotation_index][1]
    map_to_aami(sym)
    positions = _beat_positions(record)
    k = bisect.bisect_left(positions, annotation_index)
    return _segment(record, positions, k)


@dataclass
class Segmentation:
    beats: list
    dropped: Counter = field(default_factory=Counter)  # reason -> count
    dropped_classes: Counter = field(default_factory=Counter)  # AAMI class (or '?') -> count


def segment_record(record):
    """Segment every annotation; failures are counted by reason, never relabeled."""
    seg = Segmentation([])
    positions = _beat_positions(record)
    unmapped = Counter(s for _, s in record.annotations if s not in AAMI_MAP)
    if unmapped:
        seg.dropped["unmapped_symbol"] = sum(unmapped.values())
        seg.dropped_classes["?"] = sum(unmapped.values())
        log.info("record %s: skipped %d unmapped annotations %s",
                 record.patient_id, sum(unmapped.values()), dict(unmapped))
    for k in range(len(positions)):
        try:
            seg.beats.append(_segment(record, positions, k))
        except BeatDropped as exc:
            seg.dropped[exc.reason] += 1
            seg.dropped_classes[AAMI_MAP[record.annotations[positions[k]][1]]] += 1
    return seg


# -- partitioning -------------------------------------------------------------


@dataclass(frozen=True)
class PartitionPlan:
    pool_ids: tuple = tuple(range(100, 125))
    excluded_ids: tuple = PACED_IDS
    test_ids: tuple = tuple(i for i in MITBIH_IDS if i not in PACED_IDS)
    train_seconds: float = 300.0
    common_quota: tuple = (("N", 75), ("S", 75), ("V", 75), ("F", 13), ("Q", 7))
    # classes whose quota is a cap (take everything available up to it)
    take_all: tuple = ("F", "Q")


@dataclass
class PatientSplit:
    patient_id: str
    train: list  # patient-specific beats (before the boundary)
    test: list
    boundary: int  # first sample index of the test part
    held_in_common: int = 0  # test-period beats withheld because they are in the common set
    dropped: Counter = field(default_factory=Counter)
    dropped_classes: Counter = field(default_factory=Counter)
    annotation_count: int = 0

    def class_counts(self, beats=None):
        c = Counter(b.aami_class for b in (self.test if beats is None else beats))
        return {k: c.get(k, 0) for k in AAMI_CLASSES}


@dataclass
class Partitions:
    common: list
    patients: dict  # patient id -> PatientSplit

    def test_beat_total(self):
        return sum(len(p.test) for p in self.patients.values())


def _pid_int(pid):
    try:
        return int(pid)
    except ValueError:
        return None


def build_partitions(records, plan=PartitionPlan(), seed=0):
    """Common training set from the pool plus per-patient train/test splits.

    ``records`` maps patient id to EcgRecord (or is an iterable of records).
    """
    if not isinstance(records, dict):
        records = {r.patient_id: r for r in records}
    excluded = set(plan.excluded_ids)
    segs = {pid: segment_record(rec) for pid, rec in sorted(records.items())}

    pool = [
        b
        for pid, seg in segs.items()
        if _pid_int(pid) in plan.pool_ids and _pid_int(pid) not in excluded
        for b in seg.beats
    ]
    by_class = {c: [b for b in pool if b.aami_class == c] for c in AAMI_CLASSES}
    available = {c: len(v) for c, v in by_class.items()}
    short = [c for c, q in plan.common_quota if c not in plan.take_all and available[c] < q]
    if short:
        raise ProtocolError(
            f"common pool lacks beats for class(es) {short}; available counts {available}, "
            f"required {dict(plan.common_quota)}"
        )
    rng = np.random.default_rng(seed)
    common = []
    for c, quota in plan.common_quota:
        members = by_class[c]
        if len(members) <= quota and c in plan.take_all:
            if len(members) < quota:
                log.warning("common pool has only %d %s beats (quota %d); taking all",
                            len(members), c, quota)
            common += members
        else:
            pick = np.sort(rng.choice(len(members), size=quota, replace=False))
            common += [members[i] for i in pick]
    common_keys = {b.key for b in common}

    patients = {}
    for pid, seg in segs.items():
        pint = _pid_int(pid)
        if pint not in plan.test_ids or pint in excluded:
            continue
        rec = records[pid]
        boundary = int(round(plan.train_seconds * rec.sampling_rate))
        train = [b for b in seg.beats if b.r_sample < boundary]
        later = [b for b in seg.beats if b.r_sample >= boundary]
        test = [b for b in later if b.key not in common_keys]
        patients[pid] = PatientSplit(
            patient_id=pid,
            train=train,
            test=test,
            boundary=boundary,
            held_in_common=len(later) - len(test),
            dropped=seg.dropped,
            dropped_classes=seg.dropped_classes,
            annotation_count=len(rec.annotations),
        )
    return Partitions(common, patients)


MITBIH_TEST_BEATS = 83648


def check_test_beat_total(partitions, expected=MITBIH_TEST_BEATS, tolerance=0.01):
    """``(total, ok)`` for the pooled test-beat count against ``expected`` +- tolerance."""
    total = partitions.test_beat_total()
    return total, abs(total - expected) <= tolerance * expected
