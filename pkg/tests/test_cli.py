import json
import shutil

import pytest

from hweeg.cli import main

FAST = {"train": {"max_epochs": 2, "patience": 2}, "eval": {"fractions": [0.5, 1.0], "seeds": [0]}}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def session(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "fast.json"
    cfg.write_text(json.dumps(FAST))
    assert main(["synth", "--trials", "400", "--seed", "0", "--snr", "1.0", "--out", str(root / "s0")]) == 0
    return root / "s0", cfg


def test_synth_epoch_eval_cv(session, capsys):
    s0, cfg = session
    assert {"eeg.rec", "pen.rec", "task.evt", "truth.npz", "manifest.synth.json"} <= {p.name for p in s0.iterdir()}
    code, out, _ = run(capsys, "epoch", "--session", s0, "--setting", "me-movement", "--config", cfg)
    assert code == 0
    assert (s0 / "epochs" / "me_movement.rec").exists()
    code, out, _ = run(capsys, "eval", "cv", "--session", s0, "--config", cfg)
    assert code == 0
    report = json.loads((s0 / "reports" / "cv_me_movement.json").read_text())
    assert report["pooled"]["n_test"] == 400
    manifest = json.loads((s0 / "reports" / "manifest.eval-cv.json").read_text())
    assert {"config_fingerprint", "versions", "seeds", "timings"} <= set(manifest)


def test_eval_sweep_default_test_size(session, capsys):
    s0, cfg = session
    code, _, _ = run(capsys, "eval", "sweep", "--session", s0, "--setting", "me-cue", "--config", cfg)
    assert code == 0
    report = json.loads((s0 / "reports" / "sweep_me_cue.json").read_text())
    assert {r["n_test"] for r in report["runs"]} == {160}
    assert [p["n_train"] for p in report["points"]] == [120, 240]


def test_unknown_config_key(tmp_path, session, capsys):
    s0, _ = session
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"eppochs": 3}}))
    code, out, err = run(capsys, "eval", "cv", "--session", s0, "--config", bad)
    assert code != 0
    line = err.strip().splitlines()[-1]
    payload = json.loads(line)
    assert "eppochs" in payload["message"]
    assert payload["error"] == "ConfigError"


def test_missing_input_is_single_json_line(tmp_path, capsys):
    code, out, err = run(capsys, "sync", "--session", tmp_path / "nowhere")
    assert code != 0
    lines = err.strip().splitlines()
    assert len(lines) == 1
    assert "missing input" in json.loads(lines[0])["message"]


def test_bad_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "eval", "cv", "--bogus")
    assert code == 2
    assert json.loads(err.strip())["error"] == "UsageError"


def test_train_predict_and_avg(session, capsys, tmp_path):
    s0, cfg = session
    weights = tmp_path / "w.npz"
    code, _, _ = run(capsys, "train", "--session", s0, "--setting", "me-movement", "--config", cfg,
                     "--test-size", "160", "--out", weights)
    assert code == 0 and weights.exists()
    code, out, _ = run(capsys, "predict", "--session", s0, "--setting", "me-movement", "--weights", weights,
                       "--config", cfg)
    assert code == 0 and out.startswith("accuracy")
    code, _, _ = run(capsys, "eval", "avg", "--session", s0, "--setting", "me-movement", "--weights", weights,
                     "--config", cfg)
    assert code == 0
    rows = (s0 / "reports" / "avg_me_movement.tsv").read_text().splitlines()
    assert rows[0].split("\t") == ["k", "seed", "n_groups", "accuracy"]
    assert [r.split("\t")[2] for r in rows[1:]] == ["160", "80", "40", "20"]


def test_identical_runs_give_identical_reports(session, capsys, tmp_path):
    s0, cfg = session
    copy = tmp_path / "copy"
    shutil.copytree(s0, copy)
    for d in (s0, copy):
        assert run(capsys, "eval", "cv", "--session", d, "--setting", "me-cue", "--config", cfg,
                   "--out", d / "det")[0] == 0
    for name in ("cv_me_cue.tsv", "cv_me_cue.json"):
        assert (s0 / "det" / name).read_bytes() == (copy / "det" / name).read_bytes()


def test_channel_probe_and_ica(session, capsys):
    s0, cfg = session
    code, _, _ = run(capsys, "ica", "fit", "--session", s0, "--config", cfg, "--k", "8")
    assert code == 0
    code, _, _ = run(capsys, "eval", "probe-channels", "--session", s0, "--setting", "me-cue", "--config", cfg)
    assert code == 0
    row = (s0 / "reports" / "probe-channels_me_cue.tsv").read_text().splitlines()[1]
    assert row.startswith("Fp1,Fp2,T8,TP10,P8\t")
    code, _, err = run(capsys, "ica", "probe", "--session", s0, "--component", "top", "--config", cfg)
    assert code == 1
    assert "no planted artifact" in json.loads(err.strip())["message"]
