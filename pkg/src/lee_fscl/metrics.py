"""Confusion matrices, accuracy, macro F1, forgetting and multi-run aggregation."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricsError, ProtocolError


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted
    classes: list

    @classmethod
    def from_pairs(cls, pairs, classes) -> "ConfusionMatrix":
        classes = list(classes)
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for true, pred in pairs:
            if true not in index or pred not in index:
                raise ProtocolError(f"unregistered class in pair ({true!r}, {pred!r})")
            counts[index[true], index[pred]] += 1
        return cls(counts, classes)


@dataclass
class MetricsRecord:
    session: int
    classes: list
    confusion: ConfusionMatrix
    accuracy: float
    precision: dict
    recall: dict
    f1: dict
    macro_f1: float
    pairs: list = field(default_factory=list)


@dataclass
class ForgettingReport:
    at_introduction: dict
    final: dict
    forgetting: dict  # class -> intro F1 minus final F1; classes of the last session are absent


def accuracy(conf: ConfusionMatrix) -> float:
    total = conf.counts.sum()
    if total == 0:
        raise MetricsError("accuracy of an empty confusion matrix")
    return float(np.trace(conf.counts) / total)


def per_class_prf(conf: ConfusionMatrix):
    counts = conf.counts.astype(np.float64)
    if counts.size == 0 or counts.sum() == 0:
        raise MetricsError("empty confusion matrix")
    tp = np.diag(counts)
    pred_tot = counts.sum(axis=0)
    true_tot = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_tot > 0, tp / pred_tot, 0.0)
        recall = np.where(true_tot > 0, tp / true_tot, 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    return precision, recall, f1


def macro_f1(conf: ConfusionMatrix) -> tuple[dict, float]:
    _, _, f1 = per_class_prf(conf)
    return dict(zip(conf.classes, f1.tolist())), float(f1.mean())


def make_record(session: int, pairs, classes) -> MetricsRecord:
    conf = ConfusionMatrix.from_pairs(pairs, classes)
    p, r, f = per_class_prf(conf)
    return MetricsRecord(
        session=session,
        classes=list(classes),
        confusion=conf,
        accuracy=accuracy(conf),
        precision=dict(zip(classes, p.tolist())),
        recall=dict(zip(classes, r.tolist())),
        f1=dict(zip(classes, f.tolist())),
        macro_f1=float(f.mean()),
        pairs=list(pairs),
    )


def introduction_sessions(class_order, n_base: int = 2) -> dict:
    """Session index at which each class first appears (base session introduces ``n_base``)."""
    return {c: max(0, i - n_base + 1) for i, c in enumerate(class_order)}


def forgetting(records, class_order, n_base: int = 2) -> ForgettingReport:
    class_order = list(class_order)
    n_sessions = len(class_order) - n_base + 1
    sessions = {r.session for r in records}
    missing = set(range(n_sessions)) - sessions
    if missing:
        raise MetricsError(f"missing sessions {sorted(missing)}")
    by_session = {r.session: r for r in records}
    last = n_sessions - 1
    intro = introduction_sessions(class_order, n_base)
    at_intro, final, forget = {}, {}, {}
    for c in class_order:
        if intro[c] == last:
            continue
        at_intro[c] = by_session[intro[c]].f1[c]
        final[c] = by_session[last].f1[c]
        forget[c] = at_intro[c] - final[c]
    return ForgettingReport(at_intro, final, forget)


def aggregate_runs(values_per_run):
    """Mean and population std per key across runs.

    ``values_per_run`` is a list of ``{key: float}`` mappings, one per run.
    Returns ``{key: (mean, std, n)}``.
    """
    if not values_per_run:
        raise MetricsError("no runs to aggregate")
    grouped = defaultdict(list)
    for run in values_per_run:
        for key, value in run.items():
            grouped[key].append(value)
    out = {}
    for key in sorted(grouped, key=repr):
        vals = np.sort(np.asarray(grouped[key], dtype=np.float64))  # order-independent sums
        out[key] = (float(vals.mean()), float(vals.std(ddof=0)), len(vals))
    return out
