import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hweeg.dataio import Recording
from hweeg.errors import HweegError
from hweeg.sigproc import FilterSpec, bandpass, notch, preprocess, resample

FS = 1000.0
T = np.arange(int(10 * FS)) / FS
MID = slice(int(FS), int(9 * FS))


def rec(x, fs=FS, names=None):
    x = np.atleast_2d(x)
    names = names or tuple(f"c{i}" for i in range(x.shape[0]))
    return Recording(names, fs, x)


def mid_rms(x):
    return np.sqrt(np.mean(x[..., MID] ** 2))


def sine(f):
    return np.sin(2 * np.pi * f * T)


def db(a, b):
    return 20 * np.log10(a / b)


def test_zero_in_zero_out():
    z = rec(np.zeros(2000))
    assert not notch(z).samples.any()
    assert not bandpass(z).samples.any()


def test_notch_attenuates_60hz_by_20db():
    out = notch(rec(sine(60))).samples[0]
    assert mid_rms(out) <= 0.1 * mid_rms(sine(60))


def test_notch_passes_10hz():
    out = notch(rec(sine(10))).samples[0]
    assert abs(db(mid_rms(out), mid_rms(sine(10)))) <= 1.0


def test_bandpass_removes_dc():
    dc = np.ones_like(T)
    out = bandpass(rec(dc)).samples[0]
    assert mid_rms(out) <= 0.05 * mid_rms(dc)


def test_bandpass_passes_10hz():
    out = bandpass(rec(sine(10))).samples[0]
    assert abs(db(mid_rms(out), mid_rms(sine(10)))) <= 1.0


def test_zero_phase_peak_at_lag_zero():
    x = sine(10)
    for fn in (notch, bandpass):
        y = fn(rec(x)).samples[0]
        lags = np.arange(-50, 51)
        xc = [np.dot(x[MID], np.roll(y, -lag)[MID]) for lag in lags]
        assert lags[int(np.argmax(xc))] == 0


@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**31 - 1))
def test_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 3000))
    for fn in (notch, bandpass):
        lhs = fn(rec(a * x + b * y)).samples
        rhs = a * fn(rec(x)).samples + b * fn(rec(y)).samples
        scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-300)
        assert np.abs(lhs - rhs).max() <= 1e-9 * scale


def test_filters_preserve_shape_and_names():
    r = rec(np.random.default_rng(0).standard_normal((3, 2000)), names=("Fz", "Cz", "Pz"))
    for out in (notch(r), bandpass(r)):
        assert out.samples.shape == r.samples.shape
        assert out.channel_names == r.channel_names
        assert out.sample_rate_hz == r.sample_rate_hz


def test_filter_spec_validation():
    with pytest.raises(HweegError):
        FilterSpec("notch", 100.0, notch_freq_hz=60.0)
    with pytest.raises(HweegError):
        FilterSpec("bandpass", 100.0, low_hz=0.3, high_hz=70.0)
    with pytest.raises(HweegError):
        FilterSpec("bandpass", 1000.0, low_hz=10.0, high_hz=5.0)
    with pytest.raises(HweegError):
        notch(rec(np.zeros(500), fs=100.0))


def test_resample_lengths():
    assert resample(rec(np.zeros(10000)), 100.0).n_samples == 1000
    pen = rec(np.zeros((2, 1000)), fs=200.0)
    assert resample(pen, 100.0).n_samples == 500
    same = rec(np.zeros(50), fs=100.0)
    assert resample(same, 100.0) is same


@given(st.integers(50, 5000))
def test_resample_length_formula(n):
    out = resample(rec(np.zeros(n)), 100.0)
    assert out.n_samples == int(np.floor(n * 100.0 / FS + 0.5))


def test_resample_preserves_start_time():
    r = Recording(("a",), FS, np.zeros((1, 2000)), start_time_s=3.25)
    assert resample(r, 100.0).start_time_s == 3.25


def test_resample_35hz_matches_analytic_samples():
    out = resample(rec(sine(35)), 100.0).samples[0]
    t100 = np.arange(out.size) / 100.0
    ref = np.sin(2 * np.pi * 35 * t100)
    mid = slice(100, 900)
    assert np.corrcoef(out[mid], ref[mid])[0, 1] > 0.99


def test_resample_rejects_fractional_upsampling():
    with pytest.raises(HweegError):
        resample(rec(np.zeros(100), fs=100.0), 150.0)
    assert resample(rec(np.zeros(100), fs=100.0), 200.0).n_samples == 200


def test_guard_filter_removes_content_above_45hz():
    out = resample(rec(sine(48)), 100.0).samples[0]
    assert np.sqrt(np.mean(out[100:900] ** 2)) < 0.2 * np.sqrt(0.5)


def test_chunked_preprocess_matches_unchunked():
    x = np.random.default_rng(1).standard_normal((11, 3000))
    r = rec(x)
    a = preprocess(r, chunk_channels=4)
    b = preprocess(r, chunk_channels=64)
    assert a.channel_names == r.channel_names
    assert np.array_equal(a.samples, b.samples)
