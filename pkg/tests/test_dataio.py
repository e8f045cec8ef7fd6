import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hweeg.dataio import (LETTERS, MONTAGES, Epoch, Event, EventStream, Recording, load_dataset, midline_32_montage,
                          read_events, read_recording, save_dataset, split_fixed_test, write_events,
                          write_recording)
from hweeg.errors import FormatError, HweegError

from conftest import make_dataset


def _rewrite_header(path, **changes):
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<I", raw[:4])
    lines = raw[4 : 4 + hlen].decode().splitlines()
    fields = dict(line.split("=", 1) for line in lines)
    fields.update({k: str(v) for k, v in changes.items()})
    header = "".join(f"{k}={v}\n" for k, v in fields.items()).encode()
    path.write_bytes(struct.pack("<I", len(header)) + header + raw[4 + hlen :])


def test_recording_round_trip_bit_exact(tmp_path, small_recording):
    path = tmp_path / "r.rec"
    write_recording(small_recording, path)
    back = read_recording(path)
    assert back == small_recording
    assert back.samples.tobytes() == small_recording.samples.tobytes()


def test_payload_length_mismatch(tmp_path, small_recording):
    path = tmp_path / "r.rec"
    write_recording(small_recording, path)
    _rewrite_header(path, n_channels=3, channels="C3,C4,Cz")
    with pytest.raises(FormatError, match="payload length mismatch"):
        read_recording(path)


def test_payload_size_matches_format_arithmetic(tmp_path):
    rec = Recording(tuple(midline_32_montage().channel_names), 1000.0, np.zeros((32, 60000)))
    path = tmp_path / "big.rec"
    write_recording(rec, path)
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<I", raw[:4])
    assert len(raw) - 4 - hlen == 32 * 60000 * 4


def test_frame_major_little_endian_layout(tmp_path, small_recording):
    path = tmp_path / "r.rec"
    write_recording(small_recording, path)
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<I", raw[:4])
    first_frame = struct.unpack("<2f", raw[4 + hlen : 4 + hlen + 8])
    assert first_frame == (small_recording.samples[0, 0], small_recording.samples[1, 0])


def test_malformed_header(tmp_path):
    path = tmp_path / "bad.rec"
    body = b"format=hweeg-rec\nno equals sign here\n"
    path.write_bytes(struct.pack("<I", len(body)) + body)
    with pytest.raises(FormatError, match="malformed header"):
        read_recording(path)
    path.write_bytes(b"\x01")
    with pytest.raises(FormatError, match="malformed header"):
        read_recording(path)


def test_non_finite_payload_rejected(tmp_path, small_recording):
    path = tmp_path / "r.rec"
    write_recording(small_recording, path)
    raw = bytearray(path.read_bytes())
    raw[-4:] = struct.pack("<f", float("nan"))
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="non-finite"):
        read_recording(path)


@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 30)),
              elements=st.floats(-1e6, 1e6, width=32)),
       st.floats(-1e3, 1e3), st.floats(1.0, 5000.0))
def test_recording_round_trip_property(tmp_path_factory, data, start, rate):
    rec = Recording(tuple(f"c{i}" for i in range(data.shape[0])), rate, data.astype(float), start_time_s=start)
    path = tmp_path_factory.mktemp("rt") / "x.rec"
    write_recording(rec, path)
    assert read_recording(path) == rec


def test_recording_invariants():
    with pytest.raises(HweegError):
        Recording(("a",), 100.0, np.array([[np.nan]]))
    with pytest.raises(HweegError):
        Recording(("a", "b"), 100.0, np.zeros((1, 5)))
    with pytest.raises(HweegError):
        Recording(("a",), 0.0, np.zeros((1, 5)))
    with pytest.raises(HweegError):
        Recording(("a",), 100.0, np.zeros((1, 0)))


def test_recording_is_immutable(small_recording):
    with pytest.raises(ValueError):
        small_recording.samples[0, 0] = 1.0


def test_events_empty_round_trip(tmp_path):
    stream = EventStream("task", ())
    path = tmp_path / "e.evt"
    write_events(stream, path)
    assert read_events(path) == stream


def test_events_sorted_on_read_with_stable_ties(tmp_path):
    path = tmp_path / "e.evt"
    recs = [{"t": 2.0, "kind": "blank", "label": None},
            {"t": 1.0, "kind": "letter_cue", "label": "O"},
            {"t": 1.0, "kind": "blank", "label": None}]
    path.write_text("#clock_domain=task\n" + "".join(json.dumps(r) + "\n" for r in recs))
    ev = read_events(path)
    assert [e.t for e in ev.events] == [1.0, 1.0, 2.0]
    assert [e.kind for e in ev.events] == ["letter_cue", "blank", "blank"]
    assert ev.clock_domain == "task"


def test_events_round_trip_exact_timestamps(tmp_path):
    stream = EventStream("task", (Event(0.1 + 0.2, "letter_cue", "W"), Event(1 / 3, "fixation_cue", None)))
    path = tmp_path / "e.evt"
    write_events(stream, path)
    assert read_events(path) == stream


def test_events_reject_bad_payload_and_kind(tmp_path):
    with pytest.raises(HweegError):
        EventStream("task", (Event(1.0, "letter_cue", "Q"),))
    path = tmp_path / "e.evt"
    path.write_text(json.dumps({"t": 1.0, "kind": "letter_cue", "label": "Q"}) + "\n")
    with pytest.raises(HweegError):
        read_events(path)
    path.write_text(json.dumps({"t": 1.0, "kind": "saccade", "label": None}) + "\n")
    with pytest.raises(HweegError):
        read_events(path)


def test_event_stream_requires_order():
    with pytest.raises(HweegError):
        EventStream("task", (Event(2.0, "blank", None), Event(1.0, "blank", None)))


def test_montage_preset():
    m = MONTAGES["paper-32"]()
    assert len(m.channel_names) == 32
    assert m.reference == "Cz"
    assert {"Fp1", "Fp2", "T8", "TP10", "P8"} <= set(m.channel_names)
    assert m.coords().shape == (32, 2)


def test_split_fixed_test_2400_trials_160_test():
    ds = make_dataset(n_per_class=600, n_channels=1, n_samples=2)
    train, test = split_fixed_test(ds, 160)
    assert (len(train), len(test)) == (2240, 160)
    assert test.epochs == ds.epochs[-160:]


def test_split_fixed_test_definition_and_error():
    ds = make_dataset(n_per_class=1, n_channels=1, n_samples=2)
    five = ds.subset(range(4))
    five = type(ds)(five.epochs + (ds.epochs[0],), ds.sample_rate_hz, ds.channel_names)
    train, test = split_fixed_test(five, 2)
    assert train.epochs == five.epochs[:3] and test.epochs == five.epochs[3:]
    ten = make_dataset(n_per_class=3, n_channels=1, n_samples=2).subset(range(10))
    with pytest.raises(HweegError):
        split_fixed_test(ten, 10)


def test_epoch_validation():
    with pytest.raises(HweegError):
        Epoch(np.zeros((2, 10)), "Q", "me_cue", 0.0, "s")
    with pytest.raises(HweegError):
        Epoch(np.full((2, 10), np.inf), "L", "me_cue", 0.0, "s")
    assert Epoch(np.zeros((2, 10)), "O", "mi_cue", 0.0, "s").label_index == LETTERS.index("O")


def test_dataset_round_trip_preserves_order(tmp_path):
    ds = make_dataset(n_per_class=5, n_channels=3, n_samples=7)
    ds = ds.map_data(lambda d: d.astype(np.float32).astype(float))
    ds = type(ds)(ds.epochs, ds.sample_rate_hz, ds.channel_names, ({"trial": 3, "reason": "x"},))
    save_dataset(ds, tmp_path, "me_cue")
    back = load_dataset(tmp_path, "me_cue")
    assert back == ds
    assert [e.onset_time_s for e in back.epochs] == [e.onset_time_s for e in ds.epochs]
    assert back.dropped == ds.dropped
