import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lee_fscl.errors import MetricsError, ProtocolError
from lee_fscl.metrics import (
    ConfusionMatrix,
    accuracy,
    aggregate_runs,
    forgetting,
    macro_f1,
    make_record,
    per_class_prf,
)


def conf(rows, classes=None):
    rows = np.array(rows)
    return ConfusionMatrix(rows, classes or [f"c{i}" for i in range(len(rows))])


def test_worked_example():
    c = conf([[2, 0], [1, 1]])
    assert accuracy(c) == 0.75
    per, mean = macro_f1(c)
    assert per["c0"] == pytest.approx(0.8, abs=1e-15)
    assert per["c1"] == pytest.approx(2 / 3, abs=1e-15)
    assert mean == pytest.approx(0.7333333333333333, abs=1e-15)


def test_identity_scaled():
    c = conf(np.eye(4, dtype=int) * 3)
    assert accuracy(c) == 1.0
    assert macro_f1(c)[1] == 1.0


def test_zero_prediction_class_f1_is_zero():
    c = conf([[3, 0, 0], [2, 0, 0], [0, 0, 1]])
    p, r, f = per_class_prf(c)
    assert f[1] == 0.0 and not np.isnan(f).any()


def test_empty_matrix_errors():
    with pytest.raises(MetricsError):
        accuracy(conf([[0, 0], [0, 0]]))
    with pytest.raises(MetricsError):
        macro_f1(conf([[0, 0], [0, 0]]))


def test_from_pairs():
    c = ConfusionMatrix.from_pairs([("a", "a"), ("b", "a"), ("b", "a")], ["a", "b"])
    np.testing.assert_array_equal(c.counts, [[1, 0], [2, 0]])
    with pytest.raises(ProtocolError):
        ConfusionMatrix.from_pairs([("z", "a")], ["a", "b"])


def _brute_force(pairs, classes):
    acc = sum(t == p for t, p in pairs) / len(pairs)
    f1s = {}
    for c in classes:
        tp = sum(1 for t, p in pairs if t == c and p == c)
        fp = sum(1 for t, p in pairs if t != c and p == c)
        fn = sum(1 for t, p in pairs if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s[c] = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return acc, f1s


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_record_matches_brute_force(raw):
    classes = ["a", "b", "c", "d"]
    pairs = [(classes[t], classes[p]) for t, p in raw]
    rec = make_record(0, pairs, classes)
    acc, f1s = _brute_force(pairs, classes)
    assert rec.accuracy == pytest.approx(acc, abs=1e-15)
    for c in classes:
        assert rec.f1[c] == pytest.approx(f1s[c], abs=1e-15)
    # accuracy is class-frequency-weighted recall
    counts = rec.confusion.counts.sum(axis=1)
    weighted = sum(rec.recall[c] * n for c, n in zip(classes, counts)) / counts.sum()
    assert rec.accuracy == pytest.approx(weighted, abs=1e-12)


def _record_with_f1(session, f1):
    classes = list(f1)
    rec = make_record(session, [(c, c) for c in classes], classes)
    rec.f1 = dict(f1)
    return rec


def test_forgetting_pinned_definition():
    order = ["a", "b", "c"]
    records = [_record_with_f1(0, {"a": 0.8, "b": 0.4}), _record_with_f1(1, {"a": 0.5, "b": 0.6, "c": 0.9})]
    rep = forgetting(records, order)
    assert rep.forgetting["a"] == pytest.approx(0.3, abs=1e-15)
    assert rep.forgetting["b"] == pytest.approx(-0.2, abs=1e-15)
    assert "c" not in rep.forgetting


def test_forgetting_missing_session():
    with pytest.raises(MetricsError):
        forgetting([_record_with_f1(0, {"a": 1.0, "b": 1.0})], ["a", "b", "c"])


def test_aggregate_examples():
    out = aggregate_runs([{"acc": 0.4}])
    assert out["acc"] == (0.4, 0.0, 1)
    out = aggregate_runs([{"acc": 0.4}, {"acc": 0.6}])
    assert out["acc"][0] == pytest.approx(0.5) and out["acc"][1] == pytest.approx(0.1)
    with pytest.raises(MetricsError):
        aggregate_runs([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.randoms())
def test_aggregate_order_invariant(vals, rnd):
    runs = [{"x": v} for v in vals]
    shuffled = runs[:]
    rnd.shuffle(shuffled)
    assert aggregate_runs(runs) == aggregate_runs(shuffled)
