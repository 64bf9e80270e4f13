import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graspforce.exceptions import InvalidArgumentError
from graspforce.features import (
    DegenerateColumnWarning,
    FeatureMatrix,
    SessionRecording,
    WindowSpec,
    apply_normalization,
    extract_features,
    mav,
    normalize,
    rms,
    wl,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
windows = arrays(np.float64, st.integers(2, 60), elements=finite)


def recording(seconds=10.0, channels=8, fill=None, seed=0, fs=200.0):
    n = int(seconds * fs)
    rng = np.random.default_rng(seed)
    emg = rng.normal(size=(n, channels)) if fill is None else np.full((n, channels), fill, dtype=float)
    force = rng.uniform(0, 1, size=n)
    return SessionRecording(sample_rate=fs, emg=emg, force=force)


def test_mav_examples():
    assert mav([0, 0, 0, 0]) == 0
    assert mav([-3.5] * 7) == 3.5
    assert mav([1, -2, 3, -4]) == 2.5


def test_rms_examples():
    assert rms([0, 0, 0]) == 0
    assert rms([-2.0] * 5) == pytest.approx(2.0)
    assert rms([3, 4]) == pytest.approx(np.sqrt(12.5))
    assert rms([3, 4]) == pytest.approx(3.5355, abs=1e-4)


def test_wl_examples():
    assert wl([7, 7, 7, 7]) == 0
    assert wl([0, 1, 0, 1]) == 3
    assert wl(np.linspace(-2.0, 5.0, 30)) == pytest.approx(7.0)


@pytest.mark.parametrize("fn", [mav, rms, wl])
def test_empty_window_rejected(fn):
    with pytest.raises(InvalidArgumentError):
        fn([])


def test_wl_needs_two_samples():
    with pytest.raises(InvalidArgumentError):
        wl([1.0])


@given(windows, st.floats(0.01, 100))
def test_positive_homogeneity(x, alpha):
    for fn in (mav, rms, wl):
        assert fn(alpha * x) == pytest.approx(alpha * fn(x), rel=1e-9, abs=1e-9)


@given(windows, finite)
def test_wl_offset_invariant(x, c):
    assert wl(x + c) == pytest.approx(wl(x), rel=1e-9, abs=1e-6)


@given(windows)
def test_rms_bounds_mean(x):
    assert rms(x) >= 0
    assert rms(x) >= abs(np.mean(x)) - 1e-9


def test_wl_zero_iff_constant():
    assert wl([2.0, 2.0, 2.0]) == 0
    assert wl([2.0, 2.0, 2.0 + 1e-12]) > 0


def test_ten_second_recording_shape():
    fm = extract_features(recording(10.0), WindowSpec(400, 125), (6, 7, 8))
    assert fm.u.shape == (77, 9)
    assert fm.y.shape == (77,)
    assert fm.ts == 0.125


def test_column_layout_is_channel_major():
    fm = extract_features(recording(3.0), channels=(2, 5), features=("WL", "MAV"))
    assert fm.feature_layout == ((2, "MAV"), (2, "WL"), (5, "MAV"), (5, "WL"))
    assert fm.column_names == ["ch2_MAV", "ch2_WL", "ch5_MAV", "ch5_WL"]


def test_zero_emg_gives_zero_features():
    fm = extract_features(recording(3.0, fill=0.0))
    assert np.all(fm.u == 0)


def test_constant_emg():
    fm = extract_features(recording(3.0, fill=-0.25))
    cols = dict(zip(fm.column_names, fm.u.T))
    for c in (6, 7, 8):
        assert np.allclose(cols[f"ch{c}_MAV"], 0.25)
        assert np.allclose(cols[f"ch{c}_RMS"], 0.25)
        assert np.all(cols[f"ch{c}_WL"] == 0)


def test_rows_match_scalar_features():
    rec = recording(4.0, seed=5)
    fm = extract_features(rec, channels=(1, 3))
    length, step = WindowSpec().in_samples(rec.sample_rate)
    for k in (0, 7, len(fm) - 1):
        seg = rec.emg[k * step : k * step + length]
        expect = [mav(seg[:, 0]), rms(seg[:, 0]), wl(seg[:, 0]), mav(seg[:, 2]), rms(seg[:, 2]), wl(seg[:, 2])]
        assert np.allclose(fm.u[k], expect, rtol=1e-12)
        assert fm.y[k] == pytest.approx(rec.force[k * step : k * step + length].mean())


def test_window_positions_do_not_depend_on_features():
    rec = recording(5.0, seed=2)
    a = extract_features(rec, features=("MAV",))
    b = extract_features(rec)
    assert len(a) == len(b)
    assert np.array_equal(a.t, b.t)
    assert np.array_equal(a.u[:, 0], b.u[:, 0])


def test_short_recording_rejected():
    with pytest.raises(InvalidArgumentError):
        extract_features(recording(0.3))


def test_bad_channel_rejected():
    with pytest.raises(InvalidArgumentError):
        extract_features(recording(3.0), channels=(0, 9))


def test_window_spec_validation():
    with pytest.raises(InvalidArgumentError):
        WindowSpec(100, 200)
    with pytest.raises(InvalidArgumentError):
        WindowSpec(400, 0)


def test_recording_validation():
    with pytest.raises(InvalidArgumentError):
        SessionRecording(200.0, np.zeros((10, 2)), np.full(10, 1.5))
    with pytest.raises(InvalidArgumentError):
        SessionRecording(200.0, np.zeros((10, 2)), np.zeros(9))
    with pytest.raises(InvalidArgumentError):
        SessionRecording(0.0, np.zeros((10, 2)), np.zeros(10))


def small_matrix(cols):
    u = np.column_stack(cols).astype(float)
    layout = tuple((c + 1, "MAV") for c in range(u.shape[1]))
    return FeatureMatrix(u=u, y=np.linspace(0.2, 0.8, u.shape[0]), feature_layout=layout, ts=0.125)


def test_normalize_affine():
    m = normalize(small_matrix([[2, 4, 6]]))
    assert np.allclose(m.u[:, 0], [0, 0.5, 1])
    assert np.allclose(m.norm_ranges, [[2, 6]])
    assert np.allclose(m.y, [0, 0.5, 1])


def test_normalize_does_not_clamp():
    ident = normalize(small_matrix([[2, 4, 6]]))
    val = apply_normalization(small_matrix([[8, 4, 2]]), ident)
    assert np.allclose(val.u[:, 0], [1.5, 0.5, 0])


def test_constant_column_warns():
    with pytest.warns(DegenerateColumnWarning):
        m = normalize(small_matrix([[5, 5, 5], [1, 2, 3]]))
    assert np.all(m.u[:, 0] == 0)
    assert m.degenerate == (0,)


@given(arrays(np.float64, st.tuples(st.integers(3, 20), st.integers(1, 4)), elements=finite))
def test_normalized_identification_set_in_unit_box(u):
    fm = FeatureMatrix(u=u, y=np.arange(u.shape[0], dtype=float), feature_layout=tuple((c + 1, "RMS") for c in range(u.shape[1])), ts=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateColumnWarning)
        m = normalize(fm)
        again = normalize(m, ranges=np.column_stack([np.zeros(u.shape[1]), np.ones(u.shape[1])]), y_range=(0.0, 1.0))
    assert np.all(m.u >= 0) and np.all(m.u <= 1 + 1e-12)
    # re-applying the identity ranges of a normalized set changes nothing
    assert np.array_equal(again.u, m.u)


def test_ranges_stay_in_raw_units_when_composed():
    raw = small_matrix([[2, 4, 6]])
    once = normalize(raw)
    twice = normalize(once, ranges=[[0.0, 0.5]])
    assert np.allclose(twice.norm_ranges, [[2, 4]])
    assert np.allclose(twice.u[:, 0], normalize(raw, ranges=[[2, 4]]).u[:, 0])


def test_split_is_temporal():
    fm = small_matrix([np.arange(10)])
    a, b = fm.split(0.5)
    assert np.array_equal(a.u[:, 0], np.arange(5))
    assert np.array_equal(b.u[:, 0], np.arange(5, 10))


def test_denormalize_force_inverts():
    raw = small_matrix([[1, 2, 3, 4]])
    m = normalize(raw)
    assert np.allclose(m.denormalize_force(m.y), raw.y)
