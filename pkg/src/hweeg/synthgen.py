"""Synthetic handwriting sessions with known ground truth.

A session follows the trial timeline of the recording protocol: letter cue
(800 ms), blank (400-600 ms), fixation cross / writing period (1000 ms), blank
(500 ms).  Letters come in shuffled blocks of four with no immediate repeats.

Signal model (raw amplifier rate, microvolts):

* background: 1/f-amplitude noise, spatially mixed through a random
  correlation matrix, plus a white floor 20 dB down;
* one band-limited (2-12 Hz) waveform per letter, projected through a
  midline-weighted spatial pattern and injected at movement onset;
* optional frontal (Fp1/Fp2-dominant) slow artifact, either a fixed waveform
  per letter (a class-correlated confound) or a fresh waveform per trial;
* photodiode pulses on ``PD_MONITOR`` at every screen change and on
  ``PD_TABLET`` at every pen-down.

Event timestamps and the pen stream are then delayed by network latency.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.signal.windows import tukey

from .dataio import (LETTERS, PD_MONITOR, PD_TABLET, Event, EventStream, Recording, midline_32_montage,
                     write_events, write_recording)
from .errors import HweegError

LETTER_CUE_S = 0.8
BLANK_RANGE_S = (0.4, 0.6)
FIXATION_S = 1.0
INTER_TRIAL_S = 0.5
LEAD_IN_S = 1.0
TAIL_S = 2.0
PD_PULSE_S = 0.03
PD_AMPLITUDE = 1.0
WRITING_S = 0.6

# channels the confound probe inspects; the letter templates never load on them
PROBE_CHANNELS = ("Fp1", "Fp2", "T8", "TP10", "P8")


@dataclass(frozen=True)
class ArtifactSpec:
    amplitude_uv: float = 40.0
    class_correlated: bool = True
    band_hz: tuple[float, float] = (0.5, 3.0)
    duration_s: float = 0.8


@dataclass(frozen=True)
class SynthSpec:
    n_trials: int = 400
    snr: float = 1.0
    seed: int = 0
    paradigm: str = "me"                  # "me" (pen writing) or "mi" (imagery, no pen)
    sample_rate_hz: float = 1000.0
    pen_rate_hz: float = 200.0
    onset_jitter_s: tuple[float, float] = (0.05, 0.35)
    template_duration_s: float = WRITING_S
    template_band_hz: tuple[float, float] = (2.0, 12.0)
    template_amplitude_uv: float = 10.0
    white_floor_db: float = -20.0
    artifact: ArtifactSpec | None = None
    latency_max_s: float = 0.08
    session_id: str = "s0"

    def __post_init__(self):
        if self.n_trials < 4 or self.n_trials % 4:
            raise HweegError("n_trials must be a positive multiple of 4")
        if not self.snr > 0:
            raise HweegError("snr must be positive")
        lo, hi = self.onset_jitter_s
        if not 0 <= lo <= hi or hi + self.template_duration_s > FIXATION_S:
            raise HweegError("onset jitter plus writing duration must fit inside the 1.0 s writing window")
        if self.template_duration_s > WRITING_S + 1e-12:
            raise HweegError("template duration must be <= 0.6 s")
        if self.paradigm not in ("me", "mi"):
            raise HweegError("paradigm must be 'me' or 'mi'")
        if not 0 <= self.latency_max_s:
            raise HweegError("latency_max_s must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if d.get("artifact") is not None:
            art = dict(d["artifact"])
            art["band_hz"] = tuple(art.get("band_hz", ArtifactSpec.band_hz))
            d["artifact"] = ArtifactSpec(**art)
        for key in ("onset_jitter_s", "template_band_hz"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(eq=False)
class GroundTruth:
    labels: list[str]
    letter_cue_times: np.ndarray
    fixation_times: np.ndarray
    onset_times: np.ndarray
    event_true_times: np.ndarray
    event_latencies: np.ndarray
    pen_offset_s: float
    templates: np.ndarray            # (4, n_template_samples), unit RMS
    spatial_pattern: np.ndarray      # (n_eeg_channels,), max 1
    peak_channel: str
    template_amplitude_uv: float
    noise_rms_at_peak: float
    artifact_pattern: np.ndarray     # zeros when no artifact
    artifact_timecourse: np.ndarray  # full length at the raw rate
    artifact_waveforms: np.ndarray   # per-letter waveforms in class-correlated mode
    eeg_channels: tuple[str, ...] = field(default=())

    def save(self, path) -> None:
        arrays = {k: v for k, v in self.__dict__.items() if isinstance(v, np.ndarray)}
        scalars = {k: v for k, v in self.__dict__.items() if not isinstance(v, np.ndarray)}
        scalars["eeg_channels"] = list(self.eeg_channels)
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(scalars)), **arrays)

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            arrays = {k: z[k] for k in z.files if k != "__meta__"}
        meta["eeg_channels"] = tuple(meta["eeg_channels"])
        return cls(**meta, **arrays)


@dataclass(eq=False)
class SynthSession:
    eeg: Recording
    pen: Recording | None
    events: EventStream
    truth: GroundTruth
    pen_events: EventStream | None
    spec: SynthSpec

    def __iter__(self):
        return iter((self.eeg, self.pen, self.events, self.truth))


def letter_sequence(n_trials: int, rng: np.random.Generator) -> list[str]:
    """Shuffled blocks of all four letters, never repeating a letter back to back."""
    seq: list[str] = []
    for _ in range(n_trials // 4):
        while True:
            block = [LETTERS[i] for i in rng.permutation(4)]
            if not seq or block[0] != seq[-1]:
                break
        seq.extend(block)
    return seq


def _bandlimited(rng, n: int, fs: float, band: tuple[float, float]) -> np.ndarray:
    spec = sfft.rfft(rng.standard_normal(n))
    freqs = sfft.rfftfreq(n, 1.0 / fs)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    x = sfft.irfft(spec, n) * tukey(n, 0.5)
    return x


def letter_templates(rng, n: int, fs: float, band) -> np.ndarray:
    out = np.empty((len(LETTERS), n))
    for i in range(len(LETTERS)):
        x = _bandlimited(rng, n, fs, band)
        out[i] = x / np.sqrt(np.mean(x**2))
    return out


def template_pattern(montage=None) -> np.ndarray:
    """Midline-weighted loading centred over the motor strip, zero on the probe channels."""
    montage = montage or midline_32_montage()
    xy = montage.coords()
    w = np.exp(-(xy[:, 0] ** 2) / (2 * 0.3**2) - (xy[:, 1] - 0.1) ** 2 / (2 * 0.45**2))
    for i, name in enumerate(montage.channel_names):
        if name in PROBE_CHANNELS:
            w[i] = 0.0
    return w / w.max()


def artifact_pattern(montage=None) -> np.ndarray:
    """Frontal-pole loading dominated by Fp1/Fp2."""
    montage = montage or midline_32_montage()
    xy = montage.coords()
    names = montage.channel_names
    w = np.zeros(len(names))
    for pole in ("Fp1", "Fp2"):
        d2 = ((xy - xy[names.index(pole)]) ** 2).sum(axis=1)
        w += np.exp(-d2 / (2 * 0.25**2))
    return w / w.max()


def _pink_rows(out: np.ndarray, rng, fs: float, f_floor: float = 0.1) -> None:
    """Fill each row of ``out`` with unit-RMS noise whose amplitude spectrum falls as 1/f."""
    n = out.shape[1]
    nfft = sfft.next_fast_len(n, real=True)
    freqs = sfft.rfftfreq(nfft, 1.0 / fs)
    shape = 1.0 / np.maximum(freqs, f_floor)
    shape[0] = 0.0
    for i in range(out.shape[0]):
        row = sfft.irfft(sfft.rfft(rng.standard_normal(nfft)) * shape, nfft)[:n]
        out[i] = row / np.sqrt(np.mean(row**2))


def _correlation_factor(rng, n: int) -> np.ndarray:
    """Cholesky factor of a random SPD correlation matrix."""
    a = rng.standard_normal((n, n))
    cov = a @ a.T / n + 0.5 * np.eye(n)
    d = np.sqrt(np.diag(cov))
    return np.linalg.cholesky(cov / np.outer(d, d))


def _letter_path(letter: str) -> np.ndarray:
    """Idealized pen path vertices (mm), starting at the origin."""
    if letter == "L":
        return np.array([[0, 0], [0, -20], [12, -20]], float)
    if letter == "V":
        return np.array([[0, 0], [6, -20], [12, 0]], float)
    if letter == "W":
        return np.array([[0, 0], [4, -20], [8, -8], [12, -20], [16, 0]], float)
    if letter == "O":
        th = np.linspace(0, 2 * np.pi, 65)
        return np.stack([-8 * np.sin(th), 8 * np.cos(th) - 8], axis=1)
    raise HweegError(f"unknown letter {letter!r}")


def _path_position(path: np.ndarray, frac: np.ndarray) -> np.ndarray:
    """Positions at arc-length fractions ``frac`` in [0, 1] (constant speed)."""
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg))) / seg.sum()
    return np.stack([np.interp(frac, cum, path[:, 0]), np.interp(frac, cum, path[:, 1])], axis=1)


def _grid(t: float, fs: float) -> float:
    return round(t * fs) / fs


def generate_session(spec: SynthSpec) -> SynthSession:
    """Generate one deterministic session (EEG with photodiodes, pen, events, truth)."""
    rng = np.random.default_rng(spec.seed)
    rng_seq, rng_time, rng_tmpl, rng_noise, rng_art, rng_lat = (
        np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(6)
    )
    del rng
    fs = spec.sample_rate_hz
    montage = midline_32_montage()
    names = montage.channel_names
    n_ch = len(names)

    labels = letter_sequence(spec.n_trials, rng_seq)
    cue_t, fix_t, onset_t, screen = [], [], [], []
    t = LEAD_IN_S
    for _ in labels:
        blank = rng_time.uniform(*BLANK_RANGE_S)
        jitter = rng_time.uniform(*spec.onset_jitter_s)
        c = _grid(t, fs)
        f = _grid(c + LETTER_CUE_S + blank, fs)
        cue_t.append(c)
        fix_t.append(f)
        onset_t.append(_grid(f + jitter, fs))
        screen.append([(c, "letter_cue"), (c + LETTER_CUE_S, "blank"), (f, "fixation_cue"),
                       (f + FIXATION_S, "blank")])
        t = f + FIXATION_S + INTER_TRIAL_S
    n = int(math.ceil((t + TAIL_S) * fs))
    cue_t, fix_t, onset_t = map(np.array, (cue_t, fix_t, onset_t))

    n_tmpl = int(round(spec.template_duration_s * fs))
    templates = letter_templates(rng_tmpl, n_tmpl, fs, spec.template_band_hz)
    pattern = template_pattern(montage)
    peak = int(np.argmax(pattern))
    amp = spec.template_amplitude_uv

    data = np.zeros((n_ch + 2, n))
    eeg = data[:n_ch]
    if math.isfinite(spec.snr):
        _pink_rows(eeg, rng_noise, fs)
        chol = _correlation_factor(rng_noise, n_ch)
        step = 1 << 16
        for a in range(0, n, step):
            eeg[:, a : a + step] = chol @ eeg[:, a : a + step]
        floor = 10 ** (spec.white_floor_db / 20.0)
        for i in range(n_ch):
            eeg[i] += floor * rng_noise.standard_normal(n)
        eeg *= (amp / spec.snr) / np.sqrt(np.mean(eeg[peak] ** 2))
    noise_rms = float(np.sqrt(np.mean(eeg[peak] ** 2)))

    idx_letter = {letter: i for i, letter in enumerate(LETTERS)}
    for label, on in zip(labels, onset_t):
        i0 = int(round(on * fs))
        eeg[:, i0 : i0 + n_tmpl] += amp * pattern[:, None] * templates[idx_letter[label]][None, :]

    art_pattern = np.zeros(n_ch)
    art_course = np.zeros(n)
    art_waves = np.zeros((len(LETTERS), 0))
    if spec.artifact is not None:
        art = spec.artifact
        art_pattern = artifact_pattern(montage)
        n_art = int(round(art.duration_s * fs))

        def wave():
            w = _bandlimited(rng_art, n_art, fs, art.band_hz)
            return w / np.max(np.abs(w))

        if art.class_correlated:
            art_waves = np.stack([wave() for _ in LETTERS])
        for label, on in zip(labels, onset_t):
            i0 = int(round(on * fs))
            w = art_waves[idx_letter[label]] if art.class_correlated else wave()
            stop = min(n, i0 + n_art)
            art_course[i0:stop] += art.amplitude_uv * w[: stop - i0]
        eeg += art_pattern[:, None] * art_course[None, :]

    pulse = int(round(PD_PULSE_S * fs))
    for trial in screen:
        for st, _ in trial:
            i0 = int(round(st * fs))
            data[n_ch, i0 : i0 + pulse] = PD_AMPLITUDE
    if spec.paradigm == "me":
        for on in onset_t:
            i0 = int(round(on * fs))
            data[n_ch + 1, i0 : i0 + pulse] = PD_AMPLITUDE

    eeg_rec = Recording(names + (PD_MONITOR, PD_TABLET), fs, data, 0.0, "amplifier",
                        f"{spec.session_id}-eeg")
    del data, eeg

    true_events = [Event(st, kind, label if kind == "letter_cue" else None)
                   for trial, label in zip(screen, labels) for st, kind in trial]
    lat = rng_lat.uniform(0.0, spec.latency_max_s, size=len(true_events))
    observed = [Event(e.t + d, e.kind, e.label) for e, d in zip(true_events, lat)]
    events = EventStream("task", tuple(observed))

    pen_rec = pen_events = None
    pen_offset = 0.0
    if spec.paradigm == "me":
        pen_offset = float(rng_lat.uniform(0.0, spec.latency_max_s))
        pfs = spec.pen_rate_hz
        n_pen = int(math.ceil(n / fs * pfs))
        tp = np.arange(n_pen) / pfs
        xy = np.zeros((n_pen, 2))
        origin = np.zeros(2)
        for label, on in zip(labels, onset_t):
            path = _letter_path(label)
            mask = (tp >= on) & (tp <= on + WRITING_S)
            after = tp > on + WRITING_S
            frac = np.clip((tp[mask] - on) / WRITING_S, 0.0, 1.0)
            xy[mask] = origin + _path_position(path, frac)
            origin = origin + path[-1]
            xy[after] = origin
        pen_rec = Recording(("x", "y"), pfs, xy.T, pen_offset, "tablet", f"{spec.session_id}-pen")
        pen_events = EventStream("tablet", tuple(Event(on + pen_offset, "pen_sample") for on in onset_t))

    truth = GroundTruth(
        labels=list(labels),
        letter_cue_times=cue_t,
        fixation_times=fix_t,
        onset_times=onset_t,
        event_true_times=np.array([e.t for e in true_events]),
        event_latencies=lat,
        pen_offset_s=pen_offset,
        templates=templates,
        spatial_pattern=pattern,
        peak_channel=names[peak],
        template_amplitude_uv=amp,
        noise_rms_at_peak=noise_rms,
        artifact_pattern=art_pattern,
        artifact_timecourse=art_course,
        artifact_waveforms=art_waves,
        eeg_channels=names,
    )
    return SynthSession(eeg_rec, pen_rec, events, truth, pen_events, spec)


def write_session(session: SynthSession, directory) -> Path:
    """Write ``session_<id>/`` with eeg.rec, pen.rec, task.evt, pen.evt and the truth sidecar."""
    out = Path(directory) / f"session_{session.spec.session_id}"
    out.mkdir(parents=True, exist_ok=True)
    write_recording(session.eeg, out / "eeg.rec")
    write_events(session.events, out / "task.evt")
    if session.pen is not None:
        write_recording(session.pen, out / "pen.rec")
        write_events(session.pen_events, out / "pen.evt")
    session.truth.save(out / "truth.npz")
    (out / "spec.json").write_text(json.dumps(session.spec.to_dict(), indent=1) + "\n")
    return out


def calibrate_snr(spec: SynthSpec, band: tuple[float, float], setting: str = "me_movement",
                  evaluate=None, max_iter: int = 20, bounds=(1e-3, 1e3)) -> tuple[float, float]:
    """Bisect (in log space) for an SNR whose 5-fold accuracy lands inside ``band``.

    ``evaluate(snr) -> accuracy`` defaults to generating a session with that SNR,
    running the standard pipeline and 5-fold cross-validation.  Returns
    ``(snr, accuracy)``.
    """
    lo_acc, hi_acc = band
    if lo_acc > hi_acc or lo_acc > 1.0 or hi_acc < 0.0:
        raise HweegError(f"accuracy band {band} unreachable (accuracy lies in [0, 1])")
    if evaluate is None:
        from .pipeline import default_cv_accuracy

        def evaluate(snr):
            return default_cv_accuracy(replace(spec, snr=snr), setting)

    log_lo, log_hi = math.log10(bounds[0]), math.log10(bounds[1])
    for _ in range(max_iter):
        mid = 0.5 * (log_lo + log_hi)
        snr = 10.0**mid
        acc = float(evaluate(snr))
        if lo_acc <= acc <= hi_acc:
            return snr, acc
        if acc < lo_acc:
            log_lo = mid
        else:
            log_hi = mid
    raise HweegError(f"accuracy band {band} unreachable within snr bounds {bounds} "
                     f"after {max_iter} iterations")
