"""Zero-phase filtering and rational-ratio resampling of recordings."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .dataio import Recording
from .errors import HweegError

NOTCH_Q = 30.0
BANDPASS_ORDER = 4
GUARD_ORDER = 8
# anti-alias guard as a fraction of the target rate: 45 Hz for a 100 Hz target
GUARD_FRACTION = 0.45


@dataclass(frozen=True)
class FilterSpec:
    kind: str
    sample_rate_hz: float
    notch_freq_hz: float | None = None
    low_hz: float | None = None
    high_hz: float | None = None
    order: int = BANDPASS_ORDER

    def __post_init__(self):
        nyq = self.sample_rate_hz / 2
        if self.kind == "notch":
            f0 = self.notch_freq_hz
            if f0 is None or not 0 < f0 < nyq:
                raise HweegError(f"notch frequency {f0} Hz must lie in (0, {nyq}) Hz")
        elif self.kind == "bandpass":
            lo, hi = self.low_hz, self.high_hz
            if lo is None or hi is None or not 0 < lo < hi < nyq:
                raise HweegError(f"band ({lo}, {hi}) Hz invalid for sample rate {self.sample_rate_hz} Hz")
        elif self.kind == "lowpass":
            if self.high_hz is None or not 0 < self.high_hz < nyq:
                raise HweegError(f"low-pass edge {self.high_hz} Hz invalid for sample rate {self.sample_rate_hz} Hz")
        else:
            raise HweegError(f"unknown filter kind {self.kind!r}")

    def sos(self) -> np.ndarray:
        fs = self.sample_rate_hz
        if self.kind == "notch":
            b, a = signal.iirnotch(self.notch_freq_hz, NOTCH_Q, fs=fs)
            return signal.tf2sos(b, a)
        if self.kind == "bandpass":
            return signal.butter(self.order, [self.low_hz, self.high_hz], btype="bandpass",
                                 output="sos", fs=fs)
        return signal.butter(self.order, self.high_hz, btype="lowpass", output="sos", fs=fs)

    @property
    def filter_order(self) -> int:
        return 2 * len(self.sos())


def apply_filter(samples: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Forward-backward filtering along time with reflect padding of 3x the filter order."""
    samples = np.asarray(samples, dtype=float)
    padlen = min(3 * spec.filter_order, samples.shape[-1] - 1)
    return signal.sosfiltfilt(spec.sos(), samples, axis=-1, padtype="even", padlen=padlen)


def notch(recording: Recording, f0_hz: float = 60.0) -> Recording:
    spec = FilterSpec("notch", recording.sample_rate_hz, notch_freq_hz=f0_hz)
    return recording.with_samples(apply_filter(recording.samples, spec))


def bandpass(recording: Recording, low_hz: float = 0.3, high_hz: float = 70.0) -> Recording:
    spec = FilterSpec("bandpass", recording.sample_rate_hz, low_hz=low_hz, high_hz=high_hz)
    return recording.with_samples(apply_filter(recording.samples, spec))


def lowpass(recording: Recording, edge_hz: float, order: int = GUARD_ORDER) -> Recording:
    spec = FilterSpec("lowpass", recording.sample_rate_hz, high_hz=edge_hz, order=order)
    return recording.with_samples(apply_filter(recording.samples, spec))


def resampled_length(n_samples: int, source_hz: float, target_hz: float) -> int:
    return int(np.floor(n_samples * target_hz / source_hz + 0.5))


def resample(recording: Recording, target_hz: float) -> Recording:
    """Polyphase resampling to ``target_hz``.

    Downsampling first applies a zero-phase low-pass guard at 0.45 x the target
    rate (45 Hz for 100 Hz), because upstream band edges may exceed the new
    Nyquist frequency.  Upsampling is only supported for integer ratios.
    """
    source = recording.sample_rate_hz
    if not target_hz > 0:
        raise HweegError("target rate must be positive")
    if target_hz == source:
        return recording
    ratio = Fraction(target_hz / source).limit_denominator(10000)
    if abs(float(ratio) - target_hz / source) > 1e-9:
        raise HweegError(f"cannot express {target_hz}/{source} Hz as a rational ratio")
    up, down = ratio.numerator, ratio.denominator
    if target_hz > source and down != 1:
        raise HweegError(f"upsampling {source} -> {target_hz} Hz needs an integer ratio")
    x = recording.samples
    if target_hz < source:
        x = lowpass(recording, GUARD_FRACTION * target_hz).samples
    y = signal.resample_poly(x, up, down, axis=-1, padtype="line")
    n_out = resampled_length(recording.n_samples, source, target_hz)
    if y.shape[-1] >= n_out:
        y = y[:, :n_out]
    else:
        y = np.pad(y, ((0, 0), (0, n_out - y.shape[-1])), mode="edge")
    return recording.with_samples(y, sample_rate_hz=float(target_hz))


def preprocess(recording: Recording, notch_hz: float | None = 60.0,
               band: tuple[float, float] | None = (0.3, 70.0),
               target_hz: float | None = 100.0, chunk_channels: int = 8) -> Recording:
    """Notch, band-pass and resample in that order; ``None`` skips a stage.

    Channels are processed in groups of ``chunk_channels`` so that long raw
    recordings never need more than one full-rate intermediate per group.
    """
    if recording.n_channels > chunk_channels:
        names = recording.channel_names
        parts = [preprocess(recording.pick(names[a : a + chunk_channels]), notch_hz, band, target_hz,
                            chunk_channels)
                 for a in range(0, len(names), chunk_channels)]
        return parts[0].with_samples(np.concatenate([p.samples for p in parts]), channel_names=names)
    if notch_hz is not None:
        recording = notch(recording, notch_hz)
    if band is not None:
        recording = bandpass(recording, *band)
    if target_hz is not None:
        recording = resample(recording, target_hz)
    return recording
