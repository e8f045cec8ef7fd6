import numpy as np
import pytest

from hweeg.dataio import LETTERS, Event, EventStream, Recording
from hweeg.epoching import (OnsetDetectorConfig, build_dataset, detect_movement_onset, extract_epoch, pen_speed)
from hweeg.errors import EpochBoundsError, HweegError

PEN_HZ = 100.0


def pen_from(x, y, fs=PEN_HZ, start=0.0):
    return Recording(("x", "y"), fs, np.vstack([x, y]), start_time_s=start, clock_domain="amplifier")


def ramp_pen(onset=0.35, seconds=1.0, speed=50.0, fs=PEN_HZ):
    t = np.arange(int(seconds * fs)) / fs
    x = np.where(t < onset, 0.0, (t - onset) * speed)
    return pen_from(x, np.zeros_like(t), fs)


def test_stationary_pen_has_no_onset():
    pen = pen_from(np.full(100, 3.0), np.full(100, -1.0))
    assert detect_movement_onset(pen, (0.0, 0.99)) is None


@pytest.mark.parametrize("fs", [100.0, 200.0, 1000.0])
def test_ramp_onset_bracket(fs):
    onset = detect_movement_onset(ramp_pen(fs=fs), (0.0, 0.99), OnsetDetectorConfig(10.0, 30.0))
    assert 0.34 <= onset <= 0.38


def test_onset_needs_sustained_motion():
    x = np.zeros(100)
    x[40] = 1.0  # a single-sample jerk: fast for ~2 samples only
    pen = pen_from(x, np.zeros(100))
    assert detect_movement_onset(pen, (0.0, 0.99), OnsetDetectorConfig(10.0, 30.0)) is None
    assert detect_movement_onset(pen, (0.0, 0.99), OnsetDetectorConfig(10.0, 10.0)) is not None


def test_onset_window_outside_recording():
    with pytest.raises(HweegError):
        detect_movement_onset(ramp_pen(), (0.5, 2.0))


def test_pen_needs_xy_channels():
    with pytest.raises(HweegError):
        pen_speed(Recording(("a", "b"), PEN_HZ, np.zeros((2, 10))))


def test_six_hundred_ms_stroke_fits_writing_window():
    t = np.arange(300) / PEN_HZ
    x = np.clip(t - 1.2, 0, 0.6) * 50.0  # moves for 600 ms starting 200 ms into the window
    pen = pen_from(x, np.zeros_like(t))
    onset = detect_movement_onset(pen, (1.0, 2.0))
    speed = pen_speed(pen)
    moving = (t >= 1.0) & (t <= 2.0) & (speed > 10)
    assert onset == pytest.approx(1.2, abs=0.02)
    assert t[moving].max() <= 2.0


def test_onset_anchor_has_speed_above_threshold():
    pen = ramp_pen()
    onset = detect_movement_onset(pen, (0.0, 0.99))
    i = int(round(onset * PEN_HZ))
    assert pen_speed(pen)[i + 1] > 10.0


def eeg_ramp(seconds=10.0, channels=2):
    n = int(seconds * 100)
    return Recording(tuple(f"c{i}" for i in range(channels)), 100.0,
                     np.tile(np.arange(n, dtype=float), (channels, 1)))


def test_movement_window_indices():
    ep = extract_epoch(eeg_ramp(), "movement", 5.0, "L", "me_movement")
    assert ep.data.shape == (2, 100)
    assert ep.data[0, 0] == 480 and ep.data[0, -1] == 579


def test_cue_window_indices():
    ep = extract_epoch(eeg_ramp(), "cue", 5.0, "V", "me_cue")
    assert ep.data[0, 0] == 500 and ep.data[0, -1] == 599


def test_out_of_bounds_names_trial():
    with pytest.raises(EpochBoundsError, match="trial 7"):
        extract_epoch(eeg_ramp(), "movement", 0.1, "L", "me_movement", trial=7)
    with pytest.raises(EpochBoundsError):
        extract_epoch(eeg_ramp(), "cue", 9.5, "L", "me_cue")


def test_thirty_two_channel_epoch_shape():
    ep = extract_epoch(eeg_ramp(channels=32), "cue", 2.0, "W", "mi_cue")
    assert ep.data.shape == (32, 100)


def session_events(n_trials, period=3.0):
    events = []
    for i in range(n_trials):
        t0 = 1.0 + i * period
        events += [Event(t0, "letter_cue", LETTERS[i % 4]), Event(t0 + 0.8, "blank", None),
                   Event(t0 + 1.0, "fixation_cue", None)]
    return EventStream("amplifier", tuple(events))


def session_pen(n_trials, stationary=(), period=3.0):
    n = int((2.0 + n_trials * period) * PEN_HZ)
    t = np.arange(n) / PEN_HZ
    x = np.zeros(n)
    for i in range(n_trials):
        if i in stationary:
            continue
        start = 1.0 + i * period + 1.0 + 0.2
        x += np.clip(t - start, 0, 0.6) * 50.0
    return pen_from(x, np.zeros(n))


def test_forty_trials_me_cue_balanced():
    n = 40
    eeg = eeg_ramp(seconds=2.0 + n * 3.0)
    ds = build_dataset(eeg, None, session_events(n), "me_cue")
    assert len(ds) == 40
    assert ds.class_counts() == {letter: 10 for letter in LETTERS}
    assert [e.label for e in ds.epochs] == [LETTERS[i % 4] for i in range(n)]


def test_stationary_trial_dropped_in_movement_setting():
    n = 40
    eeg = eeg_ramp(seconds=2.0 + n * 3.0)
    ds = build_dataset(eeg, session_pen(n, stationary={5}), session_events(n), "me_movement")
    assert len(ds) == 39
    assert len(ds.dropped) == 1 and ds.dropped[0]["trial"] == 5
    onsets = np.array([e.onset_time_s for e in ds.epochs])
    fixations = np.array([1.0 + i * 3.0 + 1.0 for i in range(n) if i != 5])
    assert np.allclose(onsets - fixations, 0.2, atol=0.02)


def test_mi_cue_without_pen():
    eeg = eeg_ramp(seconds=2.0 + 8 * 3.0)
    ds = build_dataset(eeg, None, session_events(8), "mi_cue")
    assert len(ds) == 8
    assert all(e.setting == "mi_cue" for e in ds.epochs)


def test_movement_needs_pen():
    with pytest.raises(HweegError):
        build_dataset(eeg_ramp(), None, session_events(2), "me_movement")


def test_fixation_without_letter_cue():
    events = EventStream("amplifier", (Event(1.0, "fixation_cue", None),))
    with pytest.raises(HweegError, match="no preceding letter cue"):
        build_dataset(eeg_ramp(), None, events, "me_cue")
