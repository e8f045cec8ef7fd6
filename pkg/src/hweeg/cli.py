"""Command-line entry point: ``hweeg <subcommand> ...``.

Every subcommand reads and writes on-disk artifacts inside a session
directory, so stages can be run separately or piped.  On failure a single
JSON line ``{"error": ..., "message": ...}`` goes to stderr and the exit
status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import PipelineConfig, load_config, normalize_setting, override
from .dataio import (LETTERS, EpochDataset, load_dataset, read_events, read_recording, save_dataset,
                     split_fixed_test, write_events, write_recording)
from .decoder import ModelWeights, predict_proba, train
from .epoching import build_dataset
from .errors import ConfigError, HweegError
from .evalharness import (confound_probe_channels, confound_probe_single_ic, format_table, kfold_cv,
                          sample_complexity_sweep, snr_boosted_eval, write_report_json, write_table)
from .ica import IcaModel, fit_ica, rank_components_by_template, remove_components
from .pipeline import PreprocessConfig, preprocess_eeg, resample_timecourse, synchronize
from .sigproc import resample
from .synchro import align_recording
from .synthgen import ArtifactSpec, GroundTruth, SynthSpec, generate_session, write_session

log = logging.getLogger("hweeg")

EEG, PEN, TASK_EVT, PEN_EVT = "eeg.rec", "pen.rec", "task.evt", "pen.evt"
ALIGNED_EVT, PEN_ALIGNED = "task.aligned.evt", "pen.aligned.rec"
EEG_PRE, PEN_PRE = "eeg.pre.rec", "pen.pre.rec"
ICA_MODEL, EEG_CLEAN = "ica.npz", "eeg.clean.rec"
PROBE_CHANNELS = "Fp1,Fp2,T8,TP10,P8"


class CliError(HweegError):
    """Usage error (bad flags or missing inputs)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


# -- helpers -----------------------------------------------------------------

def _need(path: Path, hint: str = "") -> Path:
    if not path.exists():
        raise CliError(f"missing input {path}" + (f" ({hint})" if hint else ""))
    return path


def _write_manifest(outdir: Path, command: str, cfg: PipelineConfig, seeds: dict, started: float,
                    extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config_fingerprint": cfg.fingerprint(),
        "config": cfg.to_dict(),
        "versions": {"hweeg": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "seeds": seeds,
        "timings": {"started_unix": started, "elapsed_s": round(time.time() - started, 3)},
    }
    if extra:
        manifest.update(extra)
    outdir.mkdir(parents=True, exist_ok=True)
    write_report_json(manifest, outdir / f"manifest.{command.replace(' ', '-')}.json")


def _train_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    cfg = override(cfg, "train", seed=getattr(args, "seed", None),
                   max_epochs=getattr(args, "max_epochs", None),
                   augmentation=getattr(args, "augmentation", None))
    return override(cfg, "eval", master_seed=getattr(args, "seed", None), jobs=getattr(args, "jobs", None))


def _config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "setting", None):
        cfg = replace(cfg, setting=normalize_setting(args.setting))
    return _train_overrides(cfg, args)


def _sync_stage(session: Path, cfg: PipelineConfig) -> None:
    pre = cfg.preprocess
    eeg = read_recording(_need(session / EEG))
    events = read_events(_need(session / TASK_EVT))
    pen = read_recording(session / PEN) if (session / PEN).exists() else None
    pen_events = read_events(_need(session / PEN_EVT, "pen stream needs pen-down markers")) if pen else None
    aligned, pen_aligned, task_report, pen_report = synchronize(eeg, events, pen, pen_events, pre)
    write_events(aligned, session / ALIGNED_EVT)
    (session / "sync_report.txt").write_text(task_report.to_text())
    if pen_aligned is not None:
        write_recording(pen_aligned, session / PEN_ALIGNED)
        (session / "pen_sync_report.txt").write_text(pen_report.to_text())
    log.info("aligned %d events (max offset %.4f s)", len(aligned), task_report.max_abs_offset_s)


def _preprocess_stage(session: Path, cfg: PipelineConfig) -> None:
    eeg = read_recording(_need(session / EEG))
    write_recording(preprocess_eeg(eeg, cfg.preprocess), session / EEG_PRE)
    if (session / PEN).exists():
        pen = read_recording(_need(session / PEN_ALIGNED, "run `hweeg sync` first"))
        write_recording(resample(pen, cfg.preprocess.target_hz), session / PEN_PRE)


def _ensure_prepared(session: Path, cfg: PipelineConfig) -> None:
    if not (session / ALIGNED_EVT).exists():
        log.info("%s: running sync with the configured defaults", session)
        _sync_stage(session, cfg)
    if not (session / EEG_PRE).exists():
        log.info("%s: running preprocess with the configured defaults", session)
        _preprocess_stage(session, cfg)


def _build(session: Path, cfg: PipelineConfig, eeg_name: str = EEG_PRE) -> EpochDataset:
    _ensure_prepared(session, cfg)
    eeg = read_recording(_need(session / eeg_name))
    events = read_events(session / ALIGNED_EVT)
    pen = None
    if cfg.setting == "me_movement":
        pen = read_recording(_need(session / PEN_PRE, "me_movement needs a pen stream"))
    return build_dataset(eeg, pen, events, cfg.setting, cfg.onset, session.name)


def _dataset(session: Path, cfg: PipelineConfig, eeg_name: str = EEG_PRE) -> EpochDataset:
    """Epoch bundle for the configured setting, building it on first use."""
    epochs_dir = session / "epochs"
    tag = cfg.setting if eeg_name == EEG_PRE else f"{cfg.setting}.{Path(eeg_name).stem.replace('.', '_')}"
    if not (epochs_dir / f"{tag}.rec").exists():
        save_dataset(_build(session, cfg, eeg_name), epochs_dir, tag)
    return load_dataset(epochs_dir, tag)


def _net(cfg: PipelineConfig, dataset: EpochDataset):
    x = dataset.X
    return cfg.net_config(x.shape[1], x.shape[2])


def _report_dir(args, session: Path) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else session / "reports"
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    started = time.time()
    cfg = load_config(args.config)
    artifact = None
    if args.artifact != "none":
        artifact = ArtifactSpec(amplitude_uv=args.artifact_amplitude,
                                class_correlated=args.artifact == "class")
    spec = SynthSpec(n_trials=args.trials, snr=args.snr, seed=args.seed, paradigm=args.paradigm,
                     artifact=artifact, session_id=args.session_id or f"s{args.seed}")
    session = generate_session(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tmp = write_session(session, out.parent if out.name else out)
    target = out
    if tmp.resolve() != target.resolve():
        for f in tmp.iterdir():
            f.replace(target / f.name)
        tmp.rmdir()
    _write_manifest(target, "synth", cfg, {"seed": args.seed}, started, {"spec": spec.to_dict()})
    print(f"wrote session with {spec.n_trials} trials to {target}")
    return 0


def cmd_sync(args) -> int:
    started = time.time()
    cfg = _config(args)
    cfg = override(cfg, "preprocess", pd_threshold=args.threshold, max_dist_s=args.max_dist)
    session = Path(args.session)
    _sync_stage(session, cfg)
    _write_manifest(session, "sync", cfg, {}, started)
    print((session / "sync_report.txt").read_text().splitlines()[-1])
    return 0


def cmd_preprocess(args) -> int:
    started = time.time()
    cfg = _config(args)
    band = tuple(args.band) if args.band else None
    cfg = override(cfg, "preprocess", notch_hz=args.notch, band=band, target_hz=args.resample)
    session = Path(args.session)
    if not (session / ALIGNED_EVT).exists():
        _sync_stage(session, cfg)
    _preprocess_stage(session, cfg)
    _write_manifest(session, "preprocess", cfg, {}, started)
    print(f"wrote {session / EEG_PRE}")
    return 0


def _truth_template(session: Path, eeg) -> np.ndarray:
    truth = GroundTruth.load(_need(session / "truth.npz", "template ranking needs ground truth"))
    if not np.any(truth.artifact_timecourse):
        raise HweegError("session has no planted artifact to rank against")
    raw_rate = read_recording(session / EEG).sample_rate_hz
    tc = resample_timecourse(truth.artifact_timecourse, raw_rate)
    return tc[: eeg.n_samples]


def _component(arg: str, session: Path, model: IcaModel, eeg) -> int:
    if arg == "top":
        return rank_components_by_template(model, eeg, _truth_template(session, eeg))[0]
    try:
        return int(arg)
    except ValueError as exc:
        raise CliError(f"component must be an integer or 'top', got {arg!r}") from exc


def cmd_ica(args) -> int:
    started = time.time()
    cfg = _config(args)
    session = Path(args.session)
    _ensure_prepared(session, cfg)
    eeg = read_recording(session / EEG_PRE)
    if args.ica_cmd == "fit":
        model = fit_ica(eeg, args.k, args.seed if args.seed is not None else 0)
        model.save(session / ICA_MODEL)
        print(f"fitted {model.n_components} components (converged={model.converged}, "
              f"iterations={model.iterations})")
    elif args.ica_cmd == "apply":
        model = IcaModel.load(_need(session / ICA_MODEL, "run `hweeg ica fit` first"))
        if args.reject:
            reject = [_component(r.strip(), session, model, eeg) for r in args.reject.split(",") if r.strip()]
        else:
            reject = []
        write_recording(remove_components(model, eeg, reject), session / args.out_name)
        print(f"removed components {reject}; wrote {session / args.out_name}")
    else:  # probe
        model = IcaModel.load(_need(session / ICA_MODEL, "run `hweeg ica fit` first"))
        comp = _component(args.component, session, model, eeg)
        return _probe_ic(args, cfg, session, model, eeg, comp, started)
    _write_manifest(session, f"ica {args.ica_cmd}", cfg, {"ica_seed": args.seed or 0}, started)
    return 0


def _probe_ic(args, cfg, session, model, eeg, comp, started) -> int:
    events = read_events(session / ALIGNED_EVT)
    pen = read_recording(session / PEN_PRE) if cfg.setting == "me_movement" else None
    n_samples = int(round(cfg.preprocess.target_hz))
    net = cfg.net_config(eeg.n_channels, n_samples)
    rep = confound_probe_single_ic(eeg, events, model, comp, cfg.setting, net, cfg.train, pen,
                                   cfg.eval.master_seed, cfg.eval.k, cfg.onset, jobs=cfg.eval.jobs)
    out = _report_dir(args, session)
    write_report_json(rep.to_dict(), out / f"probe_ic{comp}_{cfg.setting}.json")
    rows = [{"component": comp, "seed": rep.seed, "accuracy": rep.accuracy, "n_test": rep.n_test}]
    write_table(rows, ["component", "seed", "accuracy", "n_test"], out / f"probe_ic{comp}_{cfg.setting}.tsv")
    print(format_table(rows, ["component", "seed", "accuracy", "n_test"]), end="")
    _write_manifest(out, "eval probe-ic", cfg, {"master_seed": cfg.eval.master_seed}, started)
    return 0


def cmd_epoch(args) -> int:
    started = time.time()
    cfg = _config(args)
    session = Path(args.session)
    dataset = _build(session, cfg, args.eeg)
    tag = cfg.setting if args.eeg == EEG_PRE else f"{cfg.setting}.{Path(args.eeg).stem.replace('.', '_')}"
    save_dataset(dataset, session / "epochs", tag)
    _write_manifest(session, "epoch", cfg, {}, started)
    counts = dataset.class_counts()
    print(f"{len(dataset)} epochs {counts}, {len(dataset.dropped)} dropped -> {session / 'epochs' / tag}.rec")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    cfg = _config(args)
    session = Path(args.session)
    dataset = _dataset(session, cfg, args.eeg)
    if args.test_size:
        dataset, _ = split_fixed_test(dataset, args.test_size)
    weights, history = train(dataset.X, dataset.y, cfg.train, _net(cfg, dataset))
    out = Path(args.out) if args.out else session / f"weights_{cfg.setting}.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    weights.save(out)
    write_report_json(history.as_dict(), out.with_suffix(".history.json"))
    _write_manifest(out.parent, "train", cfg, {"train_seed": cfg.train.seed}, started)
    print(f"best epoch {history.best_epoch}, val acc {history.val_acc[history.best_epoch]:.3f} -> {out}")
    return 0


def cmd_predict(args) -> int:
    started = time.time()
    cfg = _config(args)
    session = Path(args.session)
    weights = ModelWeights.load(_need(Path(args.weights)))
    dataset = _dataset(session, cfg, args.eeg)
    probs = predict_proba(weights, dataset.X)
    pred = probs.argmax(axis=1)
    rows = [{"index": i, "label": e.label, "predicted": LETTERS[p],
             **{f"p_{c}": float(probs[i, j]) for j, c in enumerate(LETTERS)}}
            for i, (e, p) in enumerate(zip(dataset.epochs, pred))]
    out = _report_dir(args, session)
    cols = ["index", "label", "predicted"] + [f"p_{c}" for c in LETTERS]
    write_table(rows, cols, out / f"predictions_{cfg.setting}.tsv")
    _write_manifest(out, "predict", cfg, {}, started)
    print(f"accuracy {float(np.mean(pred == dataset.y)):.4f} on {len(dataset)} epochs")
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    cfg = _config(args)
    cfg = override(cfg, "eval", test_size=args.test_size, k=getattr(args, "k", None))
    session = Path(args.session)
    out = _report_dir(args, session)
    ev = cfg.eval
    proto = args.eval_cmd
    if proto == "probe-ic":
        _ensure_prepared(session, cfg)
        eeg = read_recording(session / EEG_PRE)
        model = IcaModel.load(_need(session / ICA_MODEL, "run `hweeg ica fit` first"))
        return _probe_ic(args, cfg, session, model, eeg, _component(args.component, session, model, eeg),
                         started)
    dataset = _dataset(session, cfg, args.eeg)
    net = _net(cfg, dataset)
    name = f"{proto}_{cfg.setting}"
    if proto == "cv":
        cv = kfold_cv(dataset, ev.k, net, cfg.train, ev.master_seed, jobs=ev.jobs)
        rows = [{"fold": i, "seed": r.seed, "accuracy": r.accuracy, "n_test": r.n_test}
                for i, r in enumerate(cv.folds)]
        rows.append({"fold": "pooled", "seed": cv.pooled.seed, "accuracy": cv.pooled.accuracy,
                     "n_test": cv.pooled.n_test})
        cols = ["fold", "seed", "accuracy", "n_test"]
        body = {"pooled": cv.pooled.to_dict(), "folds": [r.to_dict() for r in cv.folds]}
    elif proto == "sweep":
        curve = sample_complexity_sweep(dataset, ev.test_size, ev.fractions, ev.seeds, net, cfg.train,
                                        master_seed=ev.master_seed, jobs=ev.jobs)
        rows = [{"fraction": f, "seed": s, "n_train": r.notes["n_train"], "accuracy": r.accuracy}
                for f, s, r in curve.runs]
        cols = ["fraction", "seed", "n_train", "accuracy"]
        body = {"points": [vars(p) for p in curve.points], "seeds": list(curve.seeds),
                "test_digest": curve.test_digest, "runs": [r.to_dict() for _, _, r in curve.runs]}
    elif proto == "avg":
        superset, test = split_fixed_test(dataset, ev.test_size)
        if args.weights:
            weights = ModelWeights.load(_need(Path(args.weights)))
        else:
            weights, _ = train(superset.X, superset.y, cfg.train, net)
        results = snr_boosted_eval(weights, test, ev.k_values, ev.master_seed)
        rows = [{"k": k, "seed": r.seed, "n_groups": r.notes["n_groups"], "accuracy": r.accuracy}
                for k, r in results]
        cols = ["k", "seed", "n_groups", "accuracy"]
        body = {"results": [r.to_dict() for _, r in results]}
    elif proto == "probe-channels":
        channels = [c.strip() for c in args.channels.split(",") if c.strip()]
        rep = confound_probe_channels(dataset, channels, net, cfg.train, ev.master_seed, ev.k, jobs=ev.jobs)
        rows = [{"channels": ",".join(channels), "seed": rep.seed, "accuracy": rep.accuracy,
                 "n_test": rep.n_test}]
        cols = ["channels", "seed", "accuracy", "n_test"]
        body = rep.to_dict()
    else:  # pragma: no cover - argparse restricts choices
        raise CliError(f"unknown eval protocol {proto}")
    write_report_json(body, out / f"{name}.json")
    write_table(rows, cols, out / f"{name}.tsv")
    _write_manifest(out, f"eval {proto}", cfg, {"master_seed": ev.master_seed, "seeds": list(ev.seeds)},
                    started)
    print(format_table(rows, cols), end="")
    return 0


def cmd_reproduce(args) -> int:
    from .reproduce import run_reproduce

    started = time.time()
    cfg = load_config(args.config)
    out = Path(args.out)
    outcome = run_reproduce(out, profile=args.profile, seed=args.seed)
    _write_manifest(out, "reproduce", cfg, {"seed": args.seed, "profile": args.profile}, started,
                    {"check_timings_s": outcome.timings})
    for row in outcome.rows:
        status = {True: "PASS", False: "FAIL", None: "INFO"}[row["passed"]]
        print(f"{status} {row['criterion']}: {row['metric']} = {row['value']} ({row['threshold']})")
    return 1 if any(r["passed"] is False for r in outcome.rows) else 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hweeg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hweeg {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, setting=True, training=False):
        sp.add_argument("--config", help="JSON pipeline configuration")
        sp.add_argument("--session", required=True, help="session directory")
        if setting:
            sp.add_argument("--setting", help="me-movement | me-cue | mi-cue")
            sp.add_argument("--eeg", default=EEG_PRE, help="EEG recording inside the session to epoch")
        if training:
            sp.add_argument("--seed", type=int)
            sp.add_argument("--max-epochs", type=int)
            sp.add_argument("--augmentation", choices=["none", "random_shift"])
            sp.add_argument("--jobs", type=int)

    sp = sub.add_parser("synth", help="generate a synthetic session")
    sp.add_argument("--config")
    sp.add_argument("--trials", type=int, default=400)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--snr", type=float, default=1.0)
    sp.add_argument("--paradigm", choices=["me", "mi"], default="me")
    sp.add_argument("--artifact", choices=["none", "class", "random"], default="none")
    sp.add_argument("--artifact-amplitude", type=float, default=ArtifactSpec.amplitude_uv)
    sp.add_argument("--session-id")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("sync", help="align events and pen stream to the photodiode spikes")
    common(sp, setting=False)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--max-dist", type=float)
    sp.set_defaults(func=cmd_sync)

    sp = sub.add_parser("preprocess", help="notch, band-pass and resample the EEG")
    common(sp, setting=False)
    sp.add_argument("--notch", type=float)
    sp.add_argument("--band", type=float, nargs=2, metavar=("LOW", "HIGH"))
    sp.add_argument("--resample", type=float)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("ica", help="fit, apply or probe an ICA decomposition")
    isub = sp.add_subparsers(dest="ica_cmd", required=True, parser_class=_Parser)
    s2 = isub.add_parser("fit")
    common(s2, setting=False)
    s2.add_argument("--k", type=int)
    s2.add_argument("--seed", type=int)
    s2.set_defaults(func=cmd_ica)
    s2 = isub.add_parser("apply")
    common(s2, setting=False)
    s2.add_argument("--reject", default="", help="comma-separated component indices, or 'top'")
    s2.add_argument("--out-name", default=EEG_CLEAN)
    s2.add_argument("--seed", type=int)
    s2.set_defaults(func=cmd_ica)
    s2 = isub.add_parser("probe")
    common(s2, training=True)
    s2.add_argument("--component", required=True, help="component index, or 'top' (truth template rank)")
    s2.add_argument("--out")
    s2.set_defaults(func=cmd_ica)

    sp = sub.add_parser("epoch", help="cut epochs for one setting")
    common(sp)
    sp.set_defaults(func=cmd_epoch)

    sp = sub.add_parser("train", help="train the decoder")
    common(sp, training=True)
    sp.add_argument("--test-size", type=int, default=0, help="hold out the last N epochs")
    sp.add_argument("--out", help="weights file")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="predict letters with trained weights")
    common(sp)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("eval", help="evaluation protocols")
    esub = sp.add_subparsers(dest="eval_cmd", required=True, parser_class=_Parser)
    for name in ("cv", "sweep", "avg", "probe-ic", "probe-channels"):
        s2 = esub.add_parser(name)
        common(s2, training=True)
        s2.add_argument("--out", help="report directory (default <session>/reports)")
        s2.add_argument("--test-size", type=int, help="fixed test set size (default 160)")
        if name == "cv":
            s2.add_argument("--k", type=int)
        if name == "avg":
            s2.add_argument("--weights")
        if name == "probe-ic":
            s2.add_argument("--component", required=True)
        if name == "probe-channels":
            s2.add_argument("--channels", default=PROBE_CHANNELS)
        s2.set_defaults(func=cmd_eval)

    sp = sub.add_parser("reproduce", help="run the full acceptance protocol on synthetic data")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--profile", choices=["full", "quick"], default="full")
    sp.add_argument("--out", default="reproduce_out")
    sp.set_defaults(func=cmd_reproduce)
    return p


def _fail(exc: BaseException, kind: str | None = None) -> None:
    print(json.dumps({"error": kind or type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        _fail(exc, "UsageError")
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        _fail(exc)
        return 2
    except CliError as exc:
        _fail(exc, "UsageError")
        return 2
    except (HweegError, OSError) as exc:
        _fail(exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
