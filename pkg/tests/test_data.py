import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lee_fscl.data import (
    MOTION_GESTURES,
    NAMED_ORDERS,
    RawTrial,
    Sample,
    ShiftProfile,
    adapt_motion_gestures,
    adapt_smartwatch_layout,
    apply_scaler,
    export_canonical,
    fit_robust_scaler,
    ingest_canonical,
    interpolate_to_length,
    make_fewshot_split,
    scale_samples,
    synth_generate,
    to_samples,
)
from lee_fscl.errors import DataError, DatasetError, DegenerateAxis, ParseError, ProtocolError


def trial(values, **kw):
    return RawTrial(np.asarray(values, dtype=float), kw.get("subject", "s"), kw.get("gesture", "g"),
                    kw.get("rep", 0), kw.get("domain", "target"))


# interpolation ---------------------------------------------------------------------

def test_interpolation_hand_oracle():
    vals = np.array([[0, 0, 0], [1, 1, 1], [4, 4, 4]], dtype=float)
    out = interpolate_to_length(trial(vals), 5)
    np.testing.assert_array_equal(out[:, 0], [0, 0.5, 1, 2.5, 4])


def test_interpolation_identity_and_constant():
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(50, 3))
    np.testing.assert_array_equal(interpolate_to_length(trial(vals), 50), vals)
    const = np.tile([1.5, -2.0, 0.25], (17, 1))
    np.testing.assert_array_equal(interpolate_to_length(trial(const), 50), np.tile([1.5, -2.0, 0.25], (50, 1)))


def test_interpolation_too_short():
    with pytest.raises(DataError):
        interpolate_to_length(np.zeros((1, 3)), 5)
    with pytest.raises(DataError):
        trial(np.zeros((1, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 80), st.integers(2, 80), st.integers(0, 2 ** 31))
def test_interpolation_endpoints_and_envelope(n, L, seed):
    vals = np.random.default_rng(seed).normal(size=(n, 3))
    out = interpolate_to_length(trial(vals), L)
    assert out.shape == (L, 3)
    np.testing.assert_array_equal(out[0], vals[0])
    np.testing.assert_allclose(out[-1], vals[-1], rtol=0, atol=1e-12)
    pos = np.arange(L) * (n - 1) / (L - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    tol = 1e-12
    assert np.all(out >= np.minimum(vals[lo], vals[hi]) - tol)
    assert np.all(out <= np.maximum(vals[lo], vals[hi]) + tol)


# scaler ----------------------------------------------------------------------------

def test_robust_scaler_hand_oracle():
    col = np.array([1, 2, 3, 4, 100], dtype=float)
    data = np.stack([col, col * 2, col + 1], axis=1)
    stats = fit_robust_scaler([data])
    assert stats.center[0] == 22.0
    assert stats.iqr[0] == 2.0
    assert apply_scaler(stats, np.array([[3.0, 6.0, 4.0]]))[0, 0] == -9.5


def test_robust_scaler_median_option():
    col = np.array([1, 2, 3, 4, 100], dtype=float)
    stats = fit_robust_scaler([np.stack([col] * 3, axis=1)], method="median")
    assert stats.center[0] == 3.0


def test_scaler_leaves_standardized_data():
    # mean 0 and IQR 1 per axis
    col = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    data = np.stack([col, col, col], axis=1)
    stats = fit_robust_scaler([data])
    np.testing.assert_array_equal(stats.center, 0.0)
    np.testing.assert_array_equal(stats.iqr, 1.0)
    np.testing.assert_array_equal(apply_scaler(stats, data), data)


def test_scaler_constant_axis():
    data = np.random.default_rng(0).normal(size=(20, 3))
    data[:, 1] = 4.0
    with pytest.raises(DegenerateAxis):
        fit_robust_scaler([data])


def test_scaling_is_applied_exactly_once():
    samples = to_samples([trial(np.random.default_rng(0).normal(size=(30, 3)))], 10)
    stats = fit_robust_scaler(samples)
    once = scale_samples(stats, samples)
    assert once[0].processed
    with pytest.raises(DataError):
        scale_samples(stats, once)


# canonical CSV -------------------------------------------------------------------------

def test_ingest_minimal(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("subject,gesture,rep,domain,t,ax,ay,az\ns1,tap,0,target,0,1,2,3\ns1,tap,0,target,1,4,5,6\n")
    trials = ingest_canonical(path)
    assert len(trials) == 1
    assert trials[0].values.shape == (2, 3)
    assert trials[0].key == ("s1", "tap", 0)


def test_ingest_missing_column(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("subject,gesture,rep,domain,t,ax,ay\ns1,tap,0,target,0,1,2\n")
    with pytest.raises(ParseError):
        ingest_canonical(path)


def test_ingest_bad_row_reports_line(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("subject,gesture,rep,domain,t,ax,ay,az\ns1,tap,0,target,0,1,2,3\ns1,tap,0,target,1,x,5,6\n")
    with pytest.raises(ParseError) as exc:
        ingest_canonical(path)
    assert exc.value.line == 3


def test_canonical_round_trip(tmp_path):
    trials = synth_generate(3, 2, "target", np.random.default_rng(0))
    path = tmp_path / "synth.csv"
    export_canonical(trials, path)
    back = ingest_canonical(path)
    assert len(back) == len(trials)
    for a, b in zip(trials, back):
        assert a.key == b.key and a.domain == b.domain
        np.testing.assert_array_equal(a.values, b.values)


# adapters ------------------------------------------------------------------------------

def _write_tree(root, subjects, gestures, reps, n=20, with_time=True):
    rng = np.random.default_rng(0)
    for s in subjects:
        for g in gestures:
            d = root / s / g
            d.mkdir(parents=True)
            for r in range(reps):
                vals = rng.normal(size=(n, 3))
                if with_time:
                    vals = np.column_stack([np.arange(n) * 10.0, vals])
                np.savetxt(d / f"{r + 1:02d}.txt", vals)


def test_smartwatch_complete_tree(tmp_path):
    _write_tree(tmp_path, [f"U{i:02d}" for i in range(1, 9)], [f"{g:02d}" for g in range(1, 21)], 20, n=5)
    trials = adapt_smartwatch_layout(tmp_path)
    assert len(trials) == 3200
    assert all(t.domain == "source" for t in trials)


def test_motion_complete_tree(tmp_path):
    _write_tree(tmp_path, [f"P{i:02d}" for i in range(1, 13)], list(MOTION_GESTURES), 8, n=5, with_time=False)
    trials = adapt_motion_gestures(tmp_path)
    assert len(trials) == 12 * 6 * 8
    assert {t.gesture for t in trials} == set(MOTION_GESTURES)


def test_adapter_skips_unreadable(tmp_path):
    _write_tree(tmp_path, ["U01"], ["01"], 2, n=5)
    (tmp_path / "U01" / "01" / "03.txt").write_text("garbage here\n1 2\n")
    assert len(adapt_smartwatch_layout(tmp_path)) == 2


def test_adapter_empty_dir(tmp_path):
    with pytest.raises(DatasetError):
        adapt_smartwatch_layout(tmp_path)
    with pytest.raises(DatasetError):
        adapt_motion_gestures(tmp_path / "missing")


# few-shot split --------------------------------------------------------------------------

def _samples(n_classes=6, reps=8):
    return [Sample(np.zeros((4, 3)), f"c{c}", "p1", "target", r) for c in range(n_classes) for r in range(reps)]


def test_split_counts():
    split = make_fewshot_split(_samples(), 5, seed=0)
    for c in split.train:
        assert len(split.train[c]) == 5 and len(split.test[c]) == 3


def test_split_needs_test_data():
    with pytest.raises(ProtocolError):
        make_fewshot_split(_samples(), 8, seed=0)


def test_split_deterministic():
    a = make_fewshot_split(_samples(), 3, seed=4)
    b = make_fewshot_split(_samples(), 3, seed=4)
    assert {c: [s.rep for s in v] for c, v in a.train.items()} == {c: [s.rep for s in v] for c, v in b.train.items()}


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1, 3, 5]))
def test_split_disjoint(seed, k):
    split = make_fewshot_split(_samples(3), k, seed)
    for c in split.train:
        train = {s.rep for s in split.train[c]}
        test = {s.rep for s in split.test[c]}
        assert not train & test
        assert len(train) == k and train | test == set(range(8))


# synthetic generator -----------------------------------------------------------------------

def test_zero_noise_source_repetitions_identical():
    trials = synth_generate(3, 4, "source", np.random.default_rng(0), profile=ShiftProfile(noise=0.0))
    for g in {t.gesture for t in trials}:
        reps = [t.values for t in trials if t.gesture == g]
        for r in reps[1:]:
            np.testing.assert_array_equal(r, reps[0])


def test_synth_export_byte_identical(tmp_path):
    for name in ("a.csv", "b.csv"):
        export_canonical(synth_generate(4, 3, "target", np.random.default_rng(42)), tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def _mean_pairwise(trials):
    vals = [to_samples([t], 50)[0].seq for t in trials]
    d = [np.linalg.norm(a - b) for i, a in enumerate(vals) for b in vals[i + 1:]]
    return np.mean(d)


@pytest.mark.parametrize("seed", range(10))
def test_target_more_variable_than_source(seed):
    rng = np.random.default_rng(seed)
    src = synth_generate(6, 8, "source", rng)
    tgt = synth_generate(6, 8, "target", rng)
    for g in {t.gesture for t in src}:
        assert _mean_pairwise([t for t in tgt if t.gesture == g]) > _mean_pairwise([t for t in src if t.gesture == g])


def test_synth_requires_two_classes():
    with pytest.raises(DataError):
        synth_generate(1, 3, "source", np.random.default_rng(0))


def test_named_orders_are_permutations():
    assert len(NAMED_ORDERS) == 5
    for order in NAMED_ORDERS.values():
        assert sorted(order) == sorted(MOTION_GESTURES)
    assert NAMED_ORDERS["order1"][:2] == ("circle", "double tap")
