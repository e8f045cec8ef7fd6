"""Photodiode-based alignment of independently clocked streams to the amplifier clock."""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .dataio import Event, EventStream, Recording
from .errors import AlignmentError, HweegError

DEFAULT_MAX_DIST_S = 0.2
DEFAULT_DEBOUNCE_S = 0.05


@dataclass(frozen=True)
class SpikeTrain:
    clock_domain: str
    spike_times_s: tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.spike_times_s)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise HweegError("spike times must be strictly increasing")
        object.__setattr__(self, "spike_times_s", times)

    def __len__(self):
        return len(self.spike_times_s)


@dataclass(frozen=True)
class AlignmentReport:
    corrections: tuple[tuple[float, float, float], ...]  # (original_t, matched_spike_t, offset_s)

    @property
    def max_abs_offset_s(self) -> float:
        return max((abs(c[2]) for c in self.corrections), default=0.0)

    def to_text(self) -> str:
        lines = ["original_t\tmatched_spike_t\toffset_s"]
        lines += [f"{a:.6f}\t{b:.6f}\t{c:+.6f}" for a, b, c in self.corrections]
        lines.append(f"# events={len(self.corrections)} max_abs_offset_s={self.max_abs_offset_s:.6f}")
        return "\n".join(lines) + "\n"


def detect_spikes(channel: Recording, threshold: float, debounce_s: float = DEFAULT_DEBOUNCE_S) -> SpikeTrain:
    """Rising-edge threshold crossings of a single photodiode channel.

    A crossing at sample ``i`` means ``x[i-1] < threshold <= x[i]``; a first
    sample already above threshold counts as a crossing.  Crossings within
    ``debounce_s`` of the previous accepted spike are suppressed.
    """
    if channel.n_channels != 1:
        raise HweegError(f"spike detection needs a single channel, got {channel.n_channels}")
    if not threshold > 0:
        raise HweegError("threshold must be positive")
    if not debounce_s > 0:
        raise HweegError("debounce_s must be positive")
    x = channel.samples[0]
    above = x >= threshold
    rising = np.flatnonzero(above & ~np.concatenate(([False], above[:-1])))
    times = channel.start_time_s + rising / channel.sample_rate_hz
    kept: list[float] = []
    for t in times:
        if not kept or t - kept[-1] >= debounce_s:
            kept.append(float(t))
    return SpikeTrain(channel.clock_domain, tuple(kept))


def align_events(events: EventStream, spikes: SpikeTrain,
                 max_dist_s: float = DEFAULT_MAX_DIST_S) -> tuple[EventStream, AlignmentReport]:
    """Snap each event onto its nearest unused spike (one-to-one, greedy in time order).

    Ties go to the earlier spike.  An event with no free spike within
    ``max_dist_s`` raises :class:`AlignmentError`, which signals a missed flash.
    """
    if not max_dist_s > 0:
        raise HweegError("max_dist_s must be positive")
    if not len(events) or not len(spikes):
        raise HweegError("alignment needs nonempty events and spikes")
    times = spikes.spike_times_s
    used = [False] * len(times)
    aligned: list[Event] = []
    corrections = []
    for i, ev in enumerate(events.events):
        pos = bisect.bisect_left(times, ev.t)
        left = pos - 1
        while left >= 0 and used[left]:
            left -= 1
        right = pos
        while right < len(times) and used[right]:
            right += 1
        best = None
        if left >= 0:
            best = left
        if right < len(times) and (best is None or times[right] - ev.t < ev.t - times[best]):
            best = right
        if best is None or abs(times[best] - ev.t) > max_dist_s:
            raise AlignmentError(
                f"event #{i} ({ev.kind} {ev.label or ''} at t={ev.t:.6f}) has no photodiode "
                f"spike within {max_dist_s} s (missed flash?)"
            )
        used[best] = True
        aligned.append(Event(times[best], ev.kind, ev.label))
        corrections.append((ev.t, times[best], ev.t - times[best]))
    return EventStream.sorted(spikes.clock_domain, aligned), AlignmentReport(tuple(corrections))


def align_recording(recording: Recording, report: AlignmentReport, clock_domain: str) -> Recording:
    """Shift a constant-latency stream by the median offset measured on its markers."""
    if not report.corrections:
        raise HweegError("empty alignment report")
    offset = float(np.median([c[2] for c in report.corrections]))
    return recording.with_samples(recording.samples, start_time_s=recording.start_time_s - offset,
                                  clock_domain=clock_domain)
