"""End-to-end glue: raw session -> synchronized, preprocessed streams -> epoch datasets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import PD_MONITOR, PD_TABLET, EpochDataset, EventStream, Recording
from .epoching import OnsetDetectorConfig, build_dataset
from .errors import HweegError
from .sigproc import preprocess, resample
from .synchro import AlignmentReport, align_events, align_recording, detect_spikes


@dataclass(frozen=True)
class PreprocessConfig:
    notch_hz: float | None = 60.0
    band: tuple[float, float] | None = (0.3, 70.0)
    target_hz: float = 100.0
    pd_threshold: float = 0.5
    debounce_s: float = 0.05
    max_dist_s: float = 0.2


@dataclass(eq=False)
class PreparedSession:
    eeg: Recording                 # EEG channels only, preprocessed, amplifier clock
    pen: Recording | None          # aligned to the amplifier clock, at the EEG rate
    events: EventStream            # aligned task events
    task_report: AlignmentReport
    pen_report: AlignmentReport | None
    session_id: str = ""


def synchronize(eeg: Recording, events: EventStream, pen: Recording | None = None,
                pen_events: EventStream | None = None, config: PreprocessConfig | None = None):
    """Align task events (and the pen stream) to the photodiode spikes on the raw EEG."""
    config = config or PreprocessConfig()
    spikes = detect_spikes(eeg.pick([PD_MONITOR]), config.pd_threshold, config.debounce_s)
    aligned, task_report = align_events(events, spikes, config.max_dist_s)
    pen_report = None
    if pen is not None:
        if pen_events is None:
            raise HweegError("pen stream given without its pen-down markers")
        tablet = detect_spikes(eeg.pick([PD_TABLET]), config.pd_threshold, config.debounce_s)
        _, pen_report = align_events(pen_events, tablet, config.max_dist_s)
        pen = align_recording(pen, pen_report, eeg.clock_domain)
    return aligned, pen, task_report, pen_report


def preprocess_eeg(eeg: Recording, config: PreprocessConfig | None = None) -> Recording:
    """Drop the photodiode channels, then notch, band-pass and downsample."""
    config = config or PreprocessConfig()
    eeg = eeg.drop([c for c in (PD_MONITOR, PD_TABLET) if c in eeg.channel_names])
    return preprocess(eeg, config.notch_hz, config.band, config.target_hz)


def prepare_session(eeg: Recording, events: EventStream, pen: Recording | None = None,
                    pen_events: EventStream | None = None, config: PreprocessConfig | None = None,
                    session_id: str = "") -> PreparedSession:
    config = config or PreprocessConfig()
    aligned, pen, task_report, pen_report = synchronize(eeg, events, pen, pen_events, config)
    clean = preprocess_eeg(eeg, config)
    if pen is not None:
        pen = resample(pen, config.target_hz)
    return PreparedSession(clean, pen, aligned, task_report, pen_report, session_id)


def prepare_synthetic(session, config: PreprocessConfig | None = None) -> PreparedSession:
    return prepare_session(session.eeg, session.events, session.pen, session.pen_events, config,
                           session.spec.session_id)


def session_dataset(prepared: PreparedSession, setting: str, eeg: Recording | None = None,
                    onset_config: OnsetDetectorConfig | None = None) -> EpochDataset:
    """Epoch ``prepared`` (or a substitute EEG such as an ICA reconstruction) for ``setting``."""
    eeg = prepared.eeg if eeg is None else eeg
    pen = prepared.pen if setting == "me_movement" else None
    return build_dataset(eeg, pen, prepared.events, setting, onset_config, prepared.session_id)


def resample_timecourse(x: np.ndarray, source_hz: float, config: PreprocessConfig | None = None) -> np.ndarray:
    """Pass a raw-rate time-course through the EEG chain (used for template ranking)."""
    config = config or PreprocessConfig()
    rec = Recording(("tc",), source_hz, np.asarray(x, dtype=float)[None, :])
    return preprocess(rec, config.notch_hz, config.band, config.target_hz).samples[0]


def default_cv_accuracy(spec, setting: str = "me_movement", train_config=None, net=None,
                        k: int = 5) -> float:
    """Generate ``spec``, run the standard pipeline and return pooled k-fold accuracy."""
    from .evalharness import kfold_cv
    from .synthgen import generate_session

    prepared = prepare_synthetic(generate_session(spec))
    dataset = session_dataset(prepared, setting)
    return kfold_cv(dataset, k=k, net=net, train_config=train_config).pooled.accuracy
