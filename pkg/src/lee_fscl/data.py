"""Trial loading, preprocessing, few-shot splits and the synthetic shift generator."""

from __future__ import annotations

import csv
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DatasetError, DegenerateAxis, ParseError, ProtocolError
from .model import ScalerStats

log = logging.getLogger(__name__)

CANONICAL_HEADER = ["subject", "gesture", "rep", "domain", "t", "ax", "ay", "az"]
DOMAINS = ("source", "target")

# Gesture vocabulary of the motor-impaired target dataset.
MOTION_GESTURES = ("tap", "double tap", "circle", "rotate fast and slow", "rotate slow and fast", "shake")

NAMED_ORDERS = {
    "order1": ("circle", "double tap", "rotate fast and slow", "rotate slow and fast", "shake", "tap"),
    "order2": ("rotate slow and fast", "tap", "rotate fast and slow", "shake", "circle", "double tap"),
    "order3": ("double tap", "shake", "rotate fast and slow", "circle", "tap", "rotate slow and fast"),
    "order4": ("rotate fast and slow", "tap", "circle", "rotate slow and fast", "double tap", "shake"),
    "order5": ("shake", "double tap", "rotate slow and fast", "tap", "circle", "rotate fast and slow"),
}


@dataclass
class RawTrial:
    values: np.ndarray  # n x 3 acceleration readings
    subject: str
    gesture: str
    rep: int
    domain: str = "source"
    t: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != 3:
            raise DataError(f"trial values must be n x 3, got {self.values.shape}")
        if len(self.values) < 2:
            raise DataError("a trial needs at least two readings")
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"non-finite readings in trial {self.key}")
        if self.domain not in DOMAINS:
            raise DataError(f"unknown domain {self.domain!r}")

    @property
    def key(self):
        return (self.subject, self.gesture, self.rep)


@dataclass
class Sample:
    seq: np.ndarray  # L x 3
    label: str
    subject: str
    domain: str
    rep: int = 0
    processed: bool = False


@dataclass
class FewShotSplit:
    k: int
    seed: int
    train: dict = field(default_factory=dict)  # class -> list[Sample]
    test: dict = field(default_factory=dict)


# dataset adapters -------------------------------------------------------------

_NUM = re.compile(r"[,\s;]+")


def _read_readings(path: Path) -> tuple[np.ndarray, np.ndarray | None]:
    rows = []
    for line in path.read_text().splitlines():
        parts = [p for p in _NUM.split(line.strip()) if p]
        if not parts:
            continue
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            if rows:
                raise
            continue  # header line
    if not rows or len({len(r) for r in rows}) != 1 or len(rows[0]) not in (3, 4):
        raise ValueError("expected rows of 3 (x y z) or 4 (t x y z) numbers")
    arr = np.array(rows)
    if arr.shape[1] == 4:
        return arr[:, 1:], arr[:, 0]
    return arr, None


def _walk_layout(root, domain: str) -> list[RawTrial]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    trials = []
    skipped = 0
    for path in sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in (".txt", ".csv")):
        rel = path.relative_to(root).parts
        if len(rel) != 3:
            continue
        subject, gesture, fname = rel
        try:
            rep = int(re.sub(r"\D", "", Path(fname).stem) or 0)
            values, t = _read_readings(path)
            trials.append(RawTrial(values, subject, gesture, rep, domain, t))
        except (ValueError, DataError, OSError) as exc:
            skipped += 1
            log.warning("skipping %s: %s", path, exc)
    if not trials:
        raise DatasetError(f"no trials found under {root}")
    log.info("loaded %d trials from %s (%d skipped)", len(trials), root, skipped)
    return trials


def adapt_smartwatch_layout(root_dir) -> list[RawTrial]:
    """``<root>/<subject>/<gesture>/<rep>.txt`` files of ``[t] x y z`` rows; all source domain."""
    return _walk_layout(root_dir, "source")


def adapt_motion_gestures(root_dir) -> list[RawTrial]:
    """Same directory convention as the smartwatch adapter; all target domain."""
    return _walk_layout(root_dir, "target")


# canonical CSV ----------------------------------------------------------------

def export_canonical(trials, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CANONICAL_HEADER)
        for tr in trials:
            ts = tr.t if tr.t is not None else np.arange(len(tr.values), dtype=np.float64)
            for t, (x, y, z) in zip(ts, tr.values):
                writer.writerow([tr.subject, tr.gesture, tr.rep, tr.domain, repr(float(t)),
                                 repr(float(x)), repr(float(y)), repr(float(z))])


def ingest_canonical(path) -> list[RawTrial]:
    trials = []
    current_key = None
    seen = set()
    buf_t, buf_v = [], []

    def flush():
        if current_key is None:
            return
        subject, gesture, rep, domain = current_key
        if (subject, gesture, rep) in seen:
            raise ParseError(f"trial {(subject, gesture, rep)} is not contiguous")
        seen.add((subject, gesture, rep))
        try:
            trials.append(RawTrial(np.array(buf_v), subject, gesture, rep, domain, np.array(buf_t)))
        except DataError as exc:
            raise ParseError(str(exc), line_start) from None

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CANONICAL_HEADER:
            raise ParseError(f"header must be {','.join(CANONICAL_HEADER)}, got {header}", 1)
        line_start = 2
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CANONICAL_HEADER):
                raise ParseError(f"expected {len(CANONICAL_HEADER)} fields, got {len(row)}", lineno)
            subject, gesture, rep, domain = row[:4]
            try:
                rep = int(rep)
                t, ax, ay, az = (float(v) for v in row[4:])
            except ValueError:
                raise ParseError(f"non-numeric field in {row}", lineno) from None
            if domain not in DOMAINS:
                raise ParseError(f"unknown domain {domain!r}", lineno)
            key = (subject, gesture, rep, domain)
            if key != current_key:
                flush()
                current_key, buf_t, buf_v, line_start = key, [], [], lineno
            buf_t.append(t)
            buf_v.append((ax, ay, az))
        flush()
    if not trials:
        raise ParseError("file contains no trials")
    return trials


# preprocessing ----------------------------------------------------------------

def interpolate_to_length(trial, L: int = 50) -> np.ndarray:
    """Resample to L points, linear in the reading index (timestamps are ignored)."""
    values = trial.values if isinstance(trial, RawTrial) else np.asarray(trial, dtype=np.float64)
    n = len(values)
    if n < 2 or L < 2:
        raise DataError(f"need at least 2 readings and L >= 2 (n={n}, L={L})")
    if n == L:
        return values.copy()
    pos = np.arange(L) * (n - 1) / (L - 1)
    idx = np.arange(n)
    return np.stack([np.interp(pos, idx, values[:, a]) for a in range(values.shape[1])], axis=1)


def fit_robust_scaler(seqs, method: str = "mean") -> ScalerStats:
    """Per-axis centre (mean, or median) and IQR over every timestep of every sequence.

    Quartiles use linear interpolation between order statistics.
    """
    seqs = [s.seq if isinstance(s, Sample) else s for s in seqs]
    if not seqs:
        raise DataError("cannot fit a scaler on zero sequences")
    flat = np.concatenate([np.asarray(s, dtype=np.float64).reshape(-1, 3) for s in seqs])
    if method == "mean":
        center = flat.mean(axis=0)
    elif method == "median":
        center = np.median(flat, axis=0)
    else:
        raise DataError(f"unknown centring method {method!r}")
    q25, q75 = np.percentile(flat, [25, 75], axis=0, method="linear")
    iqr = q75 - q25
    if np.any(iqr <= 0):
        raise DegenerateAxis(f"zero interquartile range on axis {int(np.argmin(iqr))}")
    return ScalerStats(center, iqr, method)


def apply_scaler(stats: ScalerStats, seq) -> np.ndarray:
    return (np.asarray(seq, dtype=np.float64) - stats.center) / stats.iqr


def to_samples(trials, L: int = 50) -> list[Sample]:
    """Interpolate trials to length L; scaling is a separate, exactly-once step."""
    return [Sample(interpolate_to_length(tr, L), tr.gesture, tr.subject, tr.domain, tr.rep) for tr in trials]


def scale_samples(stats: ScalerStats, samples) -> list[Sample]:
    out = []
    for s in samples:
        if s.processed:
            raise DataError(f"sample {s.subject}/{s.label}/{s.rep} was already scaled")
        out.append(Sample(apply_scaler(stats, s.seq), s.label, s.subject, s.domain, s.rep, True))
    return out


# few-shot split ---------------------------------------------------------------

def make_fewshot_split(samples, k: int, seed: int) -> FewShotSplit:
    by_class = defaultdict(list)
    for s in samples:
        by_class[s.label].append(s)
    split = FewShotSplit(k=k, seed=seed)
    rng = np.random.default_rng(seed)
    for label in sorted(by_class):
        items = sorted(by_class[label], key=lambda s: (s.subject, s.rep))
        if len(items) < k + 1:
            raise ProtocolError(f"class {label!r} has {len(items)} samples; k={k} leaves no test data")
        chosen = set(rng.choice(len(items), size=k, replace=False).tolist())
        split.train[label] = [items[i] for i in sorted(chosen)]
        split.test[label] = [s for i, s in enumerate(items) if i not in chosen]
    return split


# synthetic data ---------------------------------------------------------------

@dataclass(frozen=True)
class ShiftProfile:
    noise: float = 0.05
    time_warp: float = 0.0
    amp_jitter: float = 0.0
    drift: float = 0.0


SOURCE_PROFILE = ShiftProfile(noise=0.05)
TARGET_PROFILE = ShiftProfile(noise=0.3, time_warp=0.2, amp_jitter=0.3, drift=0.3)


def class_template(index: int, t: np.ndarray, amplitude: float = 1.0) -> np.ndarray:
    """Deterministic 3-axis template for class ``index`` evaluated at times t in [0, 1]."""
    rng = np.random.default_rng(7919 + index)
    out = np.empty((len(t), 3))
    envelope = np.sin(np.pi * np.clip(t, 0.0, 1.0)) ** 0.5
    for axis in range(3):
        f1 = rng.uniform(0.5, 3.0)
        f0, sweep = rng.uniform(0.5, 2.0), rng.uniform(-2.0, 4.0)
        ph1, ph2 = rng.uniform(0, 2 * np.pi, size=2)
        w = rng.uniform(0.3, 0.7)
        sig = w * np.sin(2 * np.pi * f1 * t + ph1)
        sig += (1 - w) * np.sin(2 * np.pi * (f0 * t + 0.5 * sweep * t ** 2) + ph2)
        out[:, axis] = sig * envelope
    return amplitude * out


def synth_generate(class_count: int, reps: int, domain: str, rng: np.random.Generator, *,
                   class_offset: int = 0, class_names=None, subjects=("s00",), raw_length: int = 64,
                   amplitude: float = 1.0, profile: ShiftProfile | None = None) -> list[RawTrial]:
    """Trials from parametric class templates, perturbed per the domain's shift profile.

    Source trials only get small additive noise. Target trials are time-warped,
    amplitude-jittered, drifted and much noisier.
    """
    if class_count < 2:
        raise DataError("synthetic data needs at least two classes")
    if domain not in DOMAINS:
        raise DataError(f"unknown domain {domain!r}")
    if class_names is None:
        class_names = [f"g{class_offset + c:02d}" for c in range(class_count)]
    if len(class_names) != class_count:
        raise DataError("class_names length must equal class_count")
    if profile is None:
        profile = SOURCE_PROFILE if domain == "source" else TARGET_PROFILE
    t = np.linspace(0.0, 1.0, raw_length)
    trials = []
    for subject in subjects:
        for c, name in enumerate(class_names):
            for rep in range(reps):
                tt = t
                if profile.time_warp:
                    gamma = np.exp(rng.uniform(-np.log1p(profile.time_warp), np.log1p(profile.time_warp)))
                    tt = t ** gamma
                x = class_template(class_offset + c, tt, amplitude)
                if profile.amp_jitter:
                    x = x * rng.uniform(1 - profile.amp_jitter, 1 + profile.amp_jitter, size=3)
                if profile.drift:
                    start, end = rng.normal(0.0, profile.drift * amplitude, size=(2, 3))
                    x = x + start + np.outer(t, end - start)
                if profile.noise:
                    x = x + rng.normal(0.0, profile.noise * amplitude, size=x.shape)
                trials.append(RawTrial(x, subject, name, rep, domain, t * (raw_length - 1)))
    return trials
