"""In-memory data model and on-disk formats.

``.rec`` recording layout::

    uint32 (little-endian)   header length in bytes
    header                   UTF-8 ``key=value`` lines
    payload                  float32 little-endian, frame-major
                             (all channels of sample 0, then sample 1, ...)

``.evt`` event layout: an optional ``#clock_domain=<name>`` line followed by one
JSON object per line with keys ``t``, ``kind`` and ``label``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import FormatError, HweegError

LETTERS = ("L", "V", "O", "W")
EVENT_KINDS = ("letter_cue", "fixation_cue", "blank", "pen_sample", "photodiode_flash")
SETTINGS = ("me_movement", "me_cue", "mi_cue")

REC_FORMAT = "hweeg-rec"
REC_VERSION = 1
PD_MONITOR = "PD_MONITOR"
PD_TABLET = "PD_TABLET"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Recording:
    """Uniformly sampled multi-channel time series (``samples`` is channels x time)."""

    channel_names: tuple[str, ...]
    sample_rate_hz: float
    samples: np.ndarray
    start_time_s: float = 0.0
    clock_domain: str = "amplifier"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "channel_names", tuple(str(c) for c in self.channel_names))
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2:
            raise HweegError("samples must be a 2-D channels x time matrix")
        if samples.shape[0] != len(self.channel_names):
            raise HweegError(
                f"{samples.shape[0]} sample rows but {len(self.channel_names)} channel names"
            )
        if samples.shape[1] < 1:
            raise HweegError("recording needs at least one sample")
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise HweegError("sample_rate_hz must be positive")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise HweegError("channel names must be unique")
        if not np.all(np.isfinite(samples)):
            raise HweegError("recording contains non-finite samples")
        object.__setattr__(self, "samples", _frozen(samples))
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "start_time_s", float(self.start_time_s))

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.channel_names == other.channel_names
            and self.sample_rate_hz == other.sample_rate_hz
            and self.start_time_s == other.start_time_s
            and self.clock_domain == other.clock_domain
            and self.name == other.name
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz

    @property
    def times(self) -> np.ndarray:
        return self.start_time_s + np.arange(self.n_samples) / self.sample_rate_hz

    def index_of(self, channel: str) -> int:
        try:
            return self.channel_names.index(channel)
        except ValueError:
            raise HweegError(f"unknown channel {channel!r}") from None

    def channel(self, name: str) -> np.ndarray:
        return self.samples[self.index_of(name)]

    def pick(self, names: Sequence[str]) -> "Recording":
        idx = [self.index_of(n) for n in names]
        return replace(self, channel_names=tuple(names), samples=self.samples[idx])

    def drop(self, names: Sequence[str]) -> "Recording":
        keep = [c for c in self.channel_names if c not in set(names)]
        return self.pick(keep)

    def with_samples(self, samples: np.ndarray, **changes) -> "Recording":
        return replace(self, samples=samples, **changes)


class Event(NamedTuple):
    t: float
    kind: str
    label: str | None = None


@dataclass(frozen=True)
class EventStream:
    clock_domain: str
    events: tuple[Event, ...] = ()

    def __post_init__(self):
        events = tuple(Event(float(e[0]), e[1], e[2] if len(e) > 2 else None) for e in self.events)
        for e in events:
            _validate_event(e)
        times = [e.t for e in events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise HweegError("event timestamps must be non-decreasing")
        object.__setattr__(self, "events", events)

    def __len__(self):
        return len(self.events)

    def of_kind(self, *kinds: str) -> list[Event]:
        return [e for e in self.events if e.kind in kinds]

    @classmethod
    def sorted(cls, clock_domain: str, events) -> "EventStream":
        """Build a stream from unordered events (stable for equal timestamps)."""
        return cls(clock_domain, tuple(sorted(events, key=lambda e: e[0])))


def _validate_event(e: Event) -> None:
    if e.kind not in EVENT_KINDS:
        raise FormatError(f"unknown event kind {e.kind!r}")
    if not math.isfinite(e.t):
        raise FormatError("non-finite event timestamp")
    if e.kind == "letter_cue" and e.label not in LETTERS:
        raise FormatError(f"letter_cue payload {e.label!r} not in {LETTERS}")


@dataclass(frozen=True)
class Montage:
    """Electrode names with schematic 2-D head coordinates."""

    positions: tuple[tuple[str, tuple[float, float]], ...]
    reference: str

    def __post_init__(self):
        names = self.channel_names
        if len(set(names)) != len(names):
            raise HweegError("montage channel names must be unique")

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(p[0] for p in self.positions)

    def coords(self) -> np.ndarray:
        return np.array([p[1] for p in self.positions], dtype=float)


# Schematic only: the layout is denser along the midline and over the motor
# strip; x runs left (-) to right (+), y runs back (-) to front (+).
_MIDLINE_32 = (
    ("Fp1", (-0.30, 0.92)), ("Fp2", (0.30, 0.92)),
    ("F3", (-0.40, 0.62)), ("Fz", (0.00, 0.60)), ("F4", (0.40, 0.62)),
    ("FC5", (-0.62, 0.34)), ("FC3", (-0.38, 0.32)), ("FC1", (-0.16, 0.30)),
    ("FCz", (0.00, 0.30)), ("FC2", (0.16, 0.30)), ("FC4", (0.38, 0.32)),
    ("FC6", (0.62, 0.34)),
    ("T7", (-0.88, 0.00)), ("C5", (-0.62, 0.00)), ("C3", (-0.40, 0.00)),
    ("C1", (-0.18, 0.00)), ("C2", (0.18, 0.00)), ("C4", (0.40, 0.00)),
    ("C6", (0.62, 0.00)), ("T8", (0.88, 0.00)),
    ("TP9", (-0.82, -0.32)), ("CP3", (-0.38, -0.30)), ("CP1", (-0.16, -0.30)),
    ("CPz", (0.00, -0.30)), ("CP2", (0.16, -0.30)), ("CP4", (0.38, -0.30)),
    ("TP10", (0.82, -0.32)),
    ("P3", (-0.40, -0.62)), ("Pz", (0.00, -0.60)), ("P4", (0.40, -0.62)),
    ("P8", (0.70, -0.66)), ("Oz", (0.00, -0.92)),
)


def midline_32_montage() -> Montage:
    """32-channel midline-dense montage referenced to Cz (coordinates schematic)."""
    return Montage(_MIDLINE_32, reference="Cz")


MONTAGES = {"paper-32": midline_32_montage}


@dataclass(frozen=True, eq=False)
class Epoch:
    data: np.ndarray
    label: str
    setting: str
    onset_time_s: float
    session_id: str = ""

    def __post_init__(self):
        if self.label not in LETTERS:
            raise HweegError(f"epoch label {self.label!r} not in {LETTERS}")
        if self.setting not in SETTINGS:
            raise HweegError(f"unknown setting {self.setting!r}")
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or not np.all(np.isfinite(data)):
            raise HweegError("epoch data must be a finite channels x samples matrix")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def label_index(self) -> int:
        return LETTERS.index(self.label)


@dataclass(frozen=True, eq=False)
class EpochDataset:
    """Epochs in chronological order (within session, sessions in collection order)."""

    epochs: tuple[Epoch, ...]
    sample_rate_hz: float
    channel_names: tuple[str, ...]
    dropped: tuple[dict, ...] = field(default=())

    def __post_init__(self):
        epochs = tuple(self.epochs)
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "dropped", tuple(self.dropped))
        shapes = {e.data.shape for e in epochs}
        if len(shapes) > 1:
            raise HweegError(f"epochs have mixed shapes {sorted(shapes)}")
        if epochs and epochs[0].data.shape[0] != len(self.channel_names):
            raise HweegError("epoch channel count does not match channel_names")

    def __len__(self):
        return len(self.epochs)

    def __eq__(self, other):
        if not isinstance(other, EpochDataset):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.channel_names == other.channel_names
            and len(self) == len(other)
            and all(
                a.label == b.label
                and a.setting == b.setting
                and a.onset_time_s == b.onset_time_s
                and a.session_id == b.session_id
                and np.array_equal(a.data, b.data)
                for a, b in zip(self.epochs, other.epochs)
            )
        )

    __hash__ = None

    @property
    def X(self) -> np.ndarray:
        if not self.epochs:
            return np.zeros((0, len(self.channel_names), 0))
        return np.stack([e.data for e in self.epochs])

    @property
    def y(self) -> np.ndarray:
        return np.array([e.label_index for e in self.epochs], dtype=int)

    def subset(self, indices) -> "EpochDataset":
        return EpochDataset(tuple(self.epochs[i] for i in indices), self.sample_rate_hz,
                            self.channel_names, self.dropped)

    def map_data(self, fn) -> "EpochDataset":
        epochs = tuple(replace(e, data=fn(e.data)) for e in self.epochs)
        return EpochDataset(epochs, self.sample_rate_hz, self.channel_names, self.dropped)

    def class_counts(self) -> dict[str, int]:
        return {letter: sum(e.label == letter for e in self.epochs) for letter in LETTERS}


def split_fixed_test(dataset: EpochDataset, n_test: int) -> tuple[EpochDataset, EpochDataset]:
    """Hold out the last ``n_test`` epochs; everything earlier is the training superset."""
    if n_test < 1:
        raise HweegError("n_test must be positive")
    if n_test >= len(dataset):
        raise HweegError(f"n_test={n_test} must be smaller than the dataset size {len(dataset)}")
    cut = len(dataset) - n_test
    return dataset.subset(range(cut)), dataset.subset(range(cut, len(dataset)))


# ---------------------------------------------------------------------------
# recording files

def _header_text(rec: Recording, extra: dict | None = None) -> str:
    for ch in rec.channel_names:
        if "," in ch or "\n" in ch or not ch:
            raise FormatError(f"channel name {ch!r} cannot be stored")
    fields = {
        "format": REC_FORMAT,
        "version": str(REC_VERSION),
        "name": rec.name,
        "clock_domain": rec.clock_domain,
        "sample_rate_hz": repr(rec.sample_rate_hz),
        "start_time_s": repr(rec.start_time_s),
        "n_channels": str(rec.n_channels),
        "n_samples": str(rec.n_samples),
        "channels": ",".join(rec.channel_names),
    }
    for k, v in (extra or {}).items():
        fields[k] = str(v)
    for k, v in fields.items():
        if "\n" in v:
            raise FormatError(f"header value for {k!r} contains a newline")
    return "".join(f"{k}={v}\n" for k, v in fields.items())


def write_recording(rec: Recording, path) -> None:
    """Write ``rec`` as a ``.rec`` file (samples stored as float32)."""
    header = _header_text(rec).encode("utf-8")
    payload = np.ascontiguousarray(rec.samples.T, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def _parse_header(raw: bytes, path) -> dict[str, str]:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: malformed header (not UTF-8)") from exc
    fields = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path}: malformed header line {line!r}")
        fields[key] = value
    required = ("format", "version", "clock_domain", "sample_rate_hz", "start_time_s",
                "n_channels", "n_samples", "channels")
    missing = [k for k in required if k not in fields]
    if missing:
        raise FormatError(f"{path}: malformed header, missing {missing}")
    if fields["format"] != REC_FORMAT:
        raise FormatError(f"{path}: malformed header, not a {REC_FORMAT} file")
    return fields


def read_recording(path) -> Recording:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FormatError(f"{path}: malformed header (file too short)")
    (hlen,) = struct.unpack("<I", data[:4])
    if 4 + hlen > len(data):
        raise FormatError(f"{path}: malformed header (length exceeds file)")
    fields = _parse_header(data[4 : 4 + hlen], path)
    try:
        n_channels = int(fields["n_channels"])
        n_samples = int(fields["n_samples"])
        rate = float(fields["sample_rate_hz"])
        start = float(fields["start_time_s"])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from exc
    channels = fields["channels"].split(",") if fields["channels"] else []
    if len(channels) != n_channels:
        raise FormatError(f"{path}: malformed header, {len(channels)} names for {n_channels} channels")
    payload = data[4 + hlen :]
    if len(payload) != n_channels * n_samples * 4:
        raise FormatError(
            f"{path}: payload length mismatch ({len(payload)} bytes, header implies "
            f"{n_channels * n_samples * 4})"
        )
    frames = np.frombuffer(payload, dtype="<f4").reshape(n_samples, n_channels)
    if not np.all(np.isfinite(frames)):
        raise FormatError(f"{path}: non-finite sample values")
    return Recording(
        channel_names=tuple(channels),
        sample_rate_hz=rate,
        samples=frames.T.astype(float),
        start_time_s=start,
        clock_domain=fields["clock_domain"],
        name=fields.get("name", ""),
    )


# ---------------------------------------------------------------------------
# event files

def write_events(stream: EventStream, path) -> None:
    lines = [f"#clock_domain={stream.clock_domain}\n"]
    for e in stream.events:
        lines.append(json.dumps({"t": e.t, "kind": e.kind, "label": e.label}) + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_events(path) -> EventStream:
    domain = ""
    events = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key.strip() == "clock_domain":
                domain = value.strip()
            continue
        try:
            obj = json.loads(line)
            event = Event(float(obj["t"]), obj["kind"], obj.get("label"))
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}:{lineno}: malformed event record") from exc
        _validate_event(event)
        events.append(event)
    return EventStream.sorted(domain, events)


# ---------------------------------------------------------------------------
# epoch bundles: <dir>/<setting>.rec holds the epochs back to back in time,
# <dir>/<setting>.labels.json the per-epoch metadata

def save_dataset(dataset: EpochDataset, directory, name: str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not len(dataset):
        raise HweegError("cannot save an empty dataset")
    X = dataset.X
    n_window = X.shape[2]
    flat = X.transpose(1, 0, 2).reshape(X.shape[1], -1)
    rec = Recording(dataset.channel_names, dataset.sample_rate_hz, flat, name=name,
                    clock_domain="epochs")
    write_recording(rec, directory / f"{name}.rec")
    meta = {
        "n_window_samples": n_window,
        "epochs": [
            {"label": e.label, "setting": e.setting, "onset_time_s": e.onset_time_s,
             "session_id": e.session_id}
            for e in dataset.epochs
        ],
        "dropped": list(dataset.dropped),
    }
    sidecar = directory / f"{name}.labels.json"
    sidecar.write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    return directory / f"{name}.rec"


def load_dataset(directory, name: str) -> EpochDataset:
    directory = Path(directory)
    rec = read_recording(directory / f"{name}.rec")
    meta = json.loads((directory / f"{name}.labels.json").read_text(encoding="utf-8"))
    n_window = int(meta["n_window_samples"])
    entries = meta["epochs"]
    if rec.n_samples != n_window * len(entries):
        raise FormatError(f"{name}: payload length mismatch between bundle and label sidecar")
    data = rec.samples.reshape(rec.n_channels, len(entries), n_window).transpose(1, 0, 2)
    epochs = tuple(
        Epoch(data[i], m["label"], m["setting"], float(m["onset_time_s"]), m.get("session_id", ""))
        for i, m in enumerate(entries)
    )
    return EpochDataset(epochs, rec.sample_rate_hz, rec.channel_names,
                        tuple(meta.get("dropped", ())))
