"""Movement-onset detection and extraction of the three epoch regimes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataio import SETTINGS, Epoch, EpochDataset, EventStream, Recording
from .errors import EpochBoundsError, HweegError

log = logging.getLogger(__name__)

WINDOW_S = 1.0
PRE_ONSET_S = 0.2
# writing period after the fixation cue that is searched for movement onset
WRITING_WINDOW_S = 1.0


@dataclass(frozen=True)
class OnsetDetectorConfig:
    speed_threshold_mm_per_s: float = 10.0
    sustain_ms: float = 30.0

    def __post_init__(self):
        if not (self.speed_threshold_mm_per_s > 0 and self.sustain_ms > 0):
            raise HweegError("onset detector threshold and sustain must be positive")


def pen_speed(pen: Recording) -> np.ndarray:
    """Pen-tip speed (mm/s) by central differences on the x and y channels."""
    if set(pen.channel_names) != {"x", "y"}:
        raise HweegError(f"pen recording must have exactly channels x, y; got {pen.channel_names}")
    if pen.n_samples < 2:
        return np.zeros(pen.n_samples)
    dt = 1.0 / pen.sample_rate_hz
    vx = np.gradient(pen.channel("x"), dt)
    vy = np.gradient(pen.channel("y"), dt)
    return np.hypot(vx, vy)


def detect_movement_onset(pen: Recording, trial_window: tuple[float, float],
                          config: OnsetDetectorConfig | None = None,
                          speed: np.ndarray | None = None) -> float | None:
    """First time in ``trial_window`` where speed exceeds the threshold for ``sustain_ms``.

    ``speed`` may be passed to reuse a precomputed :func:`pen_speed`.
    Returns ``None`` when the pen never moves fast enough.
    """
    config = config or OnsetDetectorConfig()
    t0, t1 = trial_window
    times_end = pen.start_time_s + (pen.n_samples - 1) / pen.sample_rate_hz
    if t0 < pen.start_time_s - 1e-9 or t1 > times_end + 1e-9 or t1 <= t0:
        raise HweegError(
            f"trial window [{t0:.3f}, {t1:.3f}] s outside pen recording "
            f"[{pen.start_time_s:.3f}, {times_end:.3f}] s"
        )
    if speed is None:
        speed = pen_speed(pen)
    fs = pen.sample_rate_hz
    i0 = int(math.ceil((t0 - pen.start_time_s) * fs - 1e-9))
    i1 = int(math.floor((t1 - pen.start_time_s) * fs + 1e-9))
    need = max(1, int(math.ceil(config.sustain_ms / 1000.0 * fs - 1e-9)))
    fast = speed[i0 : i1 + 1] > config.speed_threshold_mm_per_s
    if len(fast) < need:
        return None
    # run[i] is True when fast[i : i + need] are all True
    run = np.convolve(fast.astype(int), np.ones(need, dtype=int), mode="valid") == need
    hits = np.flatnonzero(run)
    if not len(hits):
        return None
    return pen.start_time_s + (i0 + int(hits[0])) / fs


def window_start(anchor_time_s: float, center_rule: str) -> float:
    if center_rule == "movement":
        return anchor_time_s - PRE_ONSET_S
    if center_rule == "cue":
        return anchor_time_s
    raise HweegError(f"unknown center rule {center_rule!r}")


def extract_epoch(eeg: Recording, center_rule: str, anchor_time_s: float, label: str,
                  setting: str, session_id: str = "", trial: int | None = None) -> Epoch:
    """Cut a 1000 ms window: [-200, 800] ms around onset ("movement") or [0, 1000] ms ("cue")."""
    n_window = int(round(WINDOW_S * eeg.sample_rate_hz))
    start = int(round((window_start(anchor_time_s, center_rule) - eeg.start_time_s) * eeg.sample_rate_hz))
    if start < 0 or start + n_window > eeg.n_samples:
        which = f"trial {trial}" if trial is not None else f"anchor {anchor_time_s:.3f} s"
        raise EpochBoundsError(
            f"{which}: window samples [{start}, {start + n_window}) exceed recording [0, {eeg.n_samples})"
        )
    return Epoch(eeg.samples[:, start : start + n_window], label, setting, float(anchor_time_s), session_id)


def _trials(events: EventStream) -> list[tuple[str, float]]:
    """(label, fixation time) for each trial, in order."""
    trials = []
    label = None
    for e in events.events:
        if e.kind == "letter_cue":
            label = e.label
        elif e.kind == "fixation_cue":
            if label is None:
                raise HweegError(f"fixation cue at t={e.t:.3f} s has no preceding letter cue")
            trials.append((label, e.t))
            label = None
    return trials


def build_dataset(eeg: Recording, pen: Recording | None, events: EventStream, setting: str,
                  onset_config: OnsetDetectorConfig | None = None,
                  session_id: str = "") -> EpochDataset:
    """One epoch per letter trial, anchored per ``setting``.

    ``me_movement`` anchors on the detected pen onset inside the writing
    period and drops trials without one; cue settings anchor on the fixation
    cue.  Dropped trials are itemized in ``dataset.dropped``.
    """
    if setting not in SETTINGS:
        raise HweegError(f"unknown setting {setting!r}")
    onset_config = onset_config or OnsetDetectorConfig()
    speed = None
    if setting == "me_movement":
        if pen is None:
            raise HweegError("me_movement epoching needs a pen recording")
        speed = pen_speed(pen)
    epochs, dropped = [], []
    for i, (label, fix_t) in enumerate(_trials(events)):
        if setting == "me_movement":
            onset = detect_movement_onset(pen, (fix_t, fix_t + WRITING_WINDOW_S), onset_config, speed)
            if onset is None:
                dropped.append({"trial": i, "label": label, "fixation_t": fix_t, "reason": "no movement onset"})
                continue
            epochs.append(extract_epoch(eeg, "movement", onset, label, setting, session_id, i))
        else:
            epochs.append(extract_epoch(eeg, "cue", fix_t, label, setting, session_id, i))
    if dropped:
        log.info("%s: dropped %d of %d trials", setting, len(dropped), len(epochs) + len(dropped))
    return EpochDataset(tuple(epochs), eeg.sample_rate_hz, eeg.channel_names, tuple(dropped))
