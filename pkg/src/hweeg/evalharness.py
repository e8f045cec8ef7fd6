"""Evaluation protocols: k-fold CV, fixed-test sample-complexity sweeps,
trial-averaged (SNR-boosted) scoring and confound probes.

Every training job gets a seed derived from ``(master_seed, job descriptor)``
so results do not depend on execution order, and ``jobs > 1`` runs the
independent trainings in worker processes before an ordered merge.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass, replace

import numpy as np

from .dataio import LETTERS, EpochDataset, EventStream, Recording, split_fixed_test
from .decoder import EEGNetConfig, ModelWeights, TrainConfig, predict, predict_averaged, train
from .epoching import OnsetDetectorConfig, build_dataset
from .errors import HweegError
from .ica import IcaModel, reconstruct

N_CLASSES = len(LETTERS)
DEFAULT_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 11))
DEFAULT_SEEDS = (0, 1, 2)
DEFAULT_K_VALUES = (1, 2, 4, 8)


def _jsonable(obj):
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def fingerprint(settings) -> str:
    """sha256 of the canonical JSON encoding of ``settings``."""
    return hashlib.sha256(canonical_json(settings).encode()).hexdigest()


def derive_seed(master_seed: int, *descriptor) -> int:
    """Stable 32-bit seed for a job, independent of scheduling order."""
    digest = hashlib.sha256(canonical_json([int(master_seed), list(descriptor)]).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def dataset_digest(dataset: EpochDataset) -> str:
    h = hashlib.sha256()
    h.update(canonical_json([dataset.sample_rate_hz, list(dataset.channel_names)]).encode())
    h.update(np.ascontiguousarray(dataset.X, dtype="<f8").tobytes())
    h.update(np.asarray(dataset.y, dtype="<i8").tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    confusion: tuple[tuple[int, ...], ...]   # rows: true class, columns: predicted
    n_test: int
    seed: int
    fingerprint: str
    protocol: str = ""
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        conf = np.asarray(self.confusion)
        if conf.shape != (N_CLASSES, N_CLASSES) or conf.sum() != self.n_test:
            raise HweegError("confusion matrix inconsistent with n_test")
        if self.n_test and abs(np.trace(conf) / self.n_test - self.accuracy) > 1e-12:
            raise HweegError("accuracy inconsistent with confusion matrix")

    @classmethod
    def from_predictions(cls, y_true, y_pred, seed: int, settings, protocol: str = "",
                         notes: dict | None = None) -> "EvalReport":
        conf = confusion_matrix(y_true, y_pred)
        n = int(conf.sum())
        acc = float(np.trace(conf) / n) if n else 0.0
        return cls(acc, tuple(map(tuple, conf.tolist())), n, int(seed), fingerprint(settings), protocol,
                   dict(notes or {}))

    @property
    def class_counts(self) -> list[int]:
        return [int(sum(row)) for row in self.confusion]

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "accuracy": self.accuracy, "n_test": self.n_test,
                "seed": self.seed, "fingerprint": self.fingerprint,
                "confusion": [list(r) for r in self.confusion], "notes": _jsonable(self.notes)}


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    np.add.at(conf, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return conf


def pool_reports(reports, seed: int, settings, protocol: str = "pooled", notes=None) -> EvalReport:
    """Sum confusion matrices (pooled accuracy = total correct / total)."""
    conf = sum(np.asarray(r.confusion) for r in reports)
    n = int(conf.sum())
    return EvalReport(float(np.trace(conf) / n), tuple(map(tuple, conf.tolist())), n, int(seed),
                      fingerprint(settings), protocol, dict(notes or {}))


# -- fitting plug-in ---------------------------------------------------------

@dataclass(frozen=True)
class DecoderFit:
    """Default fit callable: trains the compact CNN and returns its weights."""

    train_config: TrainConfig = field(default_factory=TrainConfig)
    net: EEGNetConfig | None = None

    def __call__(self, x, y, seed):
        weights, _ = train(x, y, replace(self.train_config, seed=int(seed)), self.net)
        return weights

    def settings(self) -> dict:
        return {"train_config": self.train_config, "net": self.net}


def _predict_labels(model, x) -> np.ndarray:
    if isinstance(model, ModelWeights):
        return predict(model, x)
    return np.asarray(model(x), dtype=int)


def _fit_settings(fit) -> dict:
    if hasattr(fit, "settings"):
        return fit.settings()
    return {"fit": getattr(fit, "__qualname__", type(fit).__name__)}


def _run_job(job):
    fit, x_tr, y_tr, x_te, seed, keep = job
    model = fit(x_tr, y_tr, seed)
    return _predict_labels(model, x_te), (model if keep else None)


def _run_jobs(jobs_list, n_jobs: int):
    if n_jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_run_job, jobs_list))
    return [_run_job(j) for j in jobs_list]


def _resolve_fit(fit, net, train_config):
    if fit is not None:
        return fit
    return DecoderFit(train_config or TrainConfig(), net)


# -- k-fold cross-validation -------------------------------------------------

def fold_assignment(y, k: int, seed: int) -> np.ndarray:
    """Class-stratified fold index per example; a pure function of (y, k, seed).

    Each class is shuffled with its own seeded generator and dealt round-robin,
    continuing the deal where the previous class stopped so fold sizes differ
    by at most one.
    """
    y = np.asarray(y, dtype=int)
    counts = np.bincount(y, minlength=N_CLASSES)
    short = [LETTERS[c] for c in range(N_CLASSES) if 0 < counts[c] < k]
    if short or len(y) < k:
        raise HweegError(f"{k}-fold CV needs >= {k} examples per class; too few for {short or 'dataset'}")
    folds = np.empty(len(y), dtype=int)
    offset = 0
    for c in range(N_CLASSES):
        idx = np.flatnonzero(y == c)
        perm = np.random.default_rng(derive_seed(seed, "folds", c)).permutation(idx)
        folds[perm] = (offset + np.arange(len(perm))) % k
        offset += len(perm)
    return folds


@dataclass(eq=False)
class CVResult:
    folds: list[EvalReport]
    pooled: EvalReport
    assignment: np.ndarray
    models: list | None = None

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)


def kfold_cv(dataset: EpochDataset, k: int = 5, net: EEGNetConfig | None = None,
             train_config: TrainConfig | None = None, seed: int = 0, fit=None, jobs: int = 1,
             keep_models: bool = False, protocol: str = "cv") -> CVResult:
    """Stratified k-fold CV; every epoch is tested exactly once."""
    if k < 2:
        raise HweegError("k must be >= 2")
    if len(dataset) < k:
        raise HweegError(f"dataset of {len(dataset)} epochs is smaller than k={k}")
    fit = _resolve_fit(fit, net, train_config)
    x, y = dataset.X, dataset.y
    assignment = fold_assignment(y, k, seed)
    jobs_list = [(fit, x[assignment != f], y[assignment != f], x[assignment == f],
                  derive_seed(seed, "cv", f), keep_models) for f in range(k)]
    results = _run_jobs(jobs_list, jobs)
    settings = {"protocol": protocol, "k": k, "seed": seed, "data": dataset_digest(dataset),
                **_fit_settings(fit)}
    reports = [EvalReport.from_predictions(y[assignment == f], pred, seed, {**settings, "fold": f},
                                           f"{protocol}-fold{f}")
               for f, (pred, _) in enumerate(results)]
    pooled = pool_reports(reports, seed, settings, protocol)
    models = [m for _, m in results] if keep_models else None
    return CVResult(reports, pooled, assignment, models)


# -- sample-complexity sweep -------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    fraction: float
    n_train: int
    mean_accuracy: float
    std_accuracy: float


@dataclass(eq=False)
class SweepCurve:
    points: list[SweepPoint]
    seeds: tuple[int, ...]
    runs: list[tuple[float, int, EvalReport]]   # (fraction, seed, report)
    test_digest: str

    def __post_init__(self):
        fr = [p.fraction for p in self.points]
        if any(b <= a for a, b in zip(fr, fr[1:])):
            raise HweegError("sweep fractions must be strictly increasing")

    def mean_at(self, fraction: float) -> float:
        for p in self.points:
            if abs(p.fraction - fraction) < 1e-12:
                return p.mean_accuracy
        raise KeyError(fraction)


def stratified_allocation(counts, n_total: int) -> np.ndarray:
    """Per-class sizes proportional to ``counts`` summing to ``n_total`` (largest remainder)."""
    counts = np.asarray(counts, dtype=int)
    quota = n_total * counts / counts.sum()
    base = np.floor(quota).astype(int)
    rem = n_total - base.sum()
    order = np.argsort(-(quota - base), kind="stable")
    base[order[:rem]] += 1
    return base


def subsample_indices(y, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Class-stratified uniform subsample without replacement, kept in chronological order."""
    y = np.asarray(y, dtype=int)
    counts = np.bincount(y, minlength=N_CLASSES)
    n_total = int(math.floor(fraction * len(y) + 0.5))
    alloc = stratified_allocation(counts, n_total)
    if alloc.min() < 2:
        raise HweegError(f"fraction {fraction} yields {alloc.tolist()} examples per class (< 2)")
    if n_total == len(y):
        return np.arange(len(y))
    picked = [rng.choice(np.flatnonzero(y == c), size=alloc[c], replace=False) for c in range(N_CLASSES)]
    return np.sort(np.concatenate(picked))


def sample_complexity_sweep(dataset: EpochDataset, n_test: int = 160, fractions=DEFAULT_FRACTIONS,
                            seeds=DEFAULT_SEEDS, net: EEGNetConfig | None = None,
                            train_config: TrainConfig | None = None, fit=None, master_seed: int = 0,
                            jobs: int = 1) -> SweepCurve:
    """Train on stratified fractions of the training superset, test on the last ``n_test`` epochs."""
    fractions = tuple(float(f) for f in fractions)
    if any(not 0 < f <= 1 for f in fractions) or any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise HweegError("fractions must be strictly increasing within (0, 1]")
    fit = _resolve_fit(fit, net, train_config)
    superset, test = split_fixed_test(dataset, n_test)
    x, y = superset.X, superset.y
    x_te, y_te = test.X, test.y
    test_digest = dataset_digest(test)
    plan, jobs_list = [], []
    for frac in fractions:
        for s in seeds:
            idx = subsample_indices(y, frac, np.random.default_rng(derive_seed(master_seed, "subsample", frac, s)))
            plan.append((frac, s, len(idx)))
            jobs_list.append((fit, x[idx], y[idx], x_te, derive_seed(master_seed, "sweep", frac, s), False))
    results = _run_jobs(jobs_list, jobs)
    settings = {"protocol": "sweep", "n_test": n_test, "master_seed": master_seed,
                "data": dataset_digest(dataset), **_fit_settings(fit)}
    runs = []
    for (frac, s, n_tr), (pred, _) in zip(plan, results):
        rep = EvalReport.from_predictions(y_te, pred, s, {**settings, "fraction": frac, "seed": s}, "sweep",
                                          {"fraction": frac, "n_train": n_tr})
        runs.append((frac, s, rep))
    points = []
    for frac in fractions:
        accs = [r.accuracy for f, _, r in runs if f == frac]
        n_tr = next(n for f, _, n in plan if f == frac)
        points.append(SweepPoint(frac, n_tr, float(np.mean(accs)), float(np.std(accs))))
    return SweepCurve(points, tuple(seeds), runs, test_digest)


# -- trial averaging ---------------------------------------------------------

def averaging_groups(y, k: int) -> list[np.ndarray]:
    """Chronological disjoint groups of ``k`` same-label indices; remainders dropped."""
    y = np.asarray(y, dtype=int)
    groups = []
    for c in range(N_CLASSES):
        idx = np.flatnonzero(y == c)
        groups += [idx[i : i + k] for i in range(0, len(idx) - k + 1, k)]
    return groups


def snr_boosted_eval(weights: ModelWeights, test_set: EpochDataset, k_values=DEFAULT_K_VALUES,
                     seed: int = 0) -> list[tuple[int, EvalReport]]:
    """Score averaged groups of ``k`` same-letter test epochs for each ``k``."""
    y = test_set.y
    present = np.bincount(y, minlength=N_CLASSES)
    present = present[present > 0]
    for k in k_values:
        if k < 1 or k > present.min():
            raise HweegError(f"k={k} exceeds the smallest per-class test count {int(present.min())}")
    x = test_set.X
    out = []
    for k in k_values:
        groups = averaging_groups(y, k)
        pred = [int(np.argmax(predict_averaged(weights, x[g]))) for g in groups]
        truth = [int(y[g[0]]) for g in groups]
        dropped = {LETTERS[c]: int(np.sum(y == c) % k) for c in range(N_CLASSES)}
        settings = {"protocol": "avg", "k": k, "seed": seed, "data": dataset_digest(test_set),
                    "weights": _weights_digest(weights)}
        out.append((k, EvalReport.from_predictions(truth, pred, seed, settings, f"avg-k{k}",
                                                   {"k": k, "n_groups": len(groups), "dropped": dropped})))
    return out


def _weights_digest(weights: ModelWeights) -> str:
    h = hashlib.sha256()
    for name in sorted(weights.params):
        h.update(np.ascontiguousarray(weights.params[name]).tobytes())
    for name in sorted(weights.buffers):
        h.update(np.ascontiguousarray(weights.buffers[name]).tobytes())
    return h.hexdigest()


def cv_snr_boosted(dataset: EpochDataset, cv: CVResult, k_values=DEFAULT_K_VALUES,
                   seed: int = 0) -> list[tuple[int, EvalReport]]:
    """Averaged scoring of each CV fold's model on its own held-out fold, pooled over folds."""
    if cv.models is None:
        raise HweegError("cross-validation result was run without keep_models")
    per_k: dict[int, list[EvalReport]] = {k: [] for k in k_values}
    for f, model in enumerate(cv.models):
        for k, rep in snr_boosted_eval(model, dataset.subset(cv.test_indices(f)), k_values, seed):
            per_k[k].append(rep)
    return [(k, pool_reports(reps, seed, {"protocol": "cv-avg", "k": k, "seed": seed,
                                          "folds": [r.fingerprint for r in reps]}, f"cv-avg-k{k}"))
            for k, reps in per_k.items()]


# -- confound probes ---------------------------------------------------------

def confound_probe_single_ic(recording: Recording, events: EventStream, ica_model: IcaModel,
                             component_index: int, setting: str, net: EEGNetConfig | None = None,
                             train_config: TrainConfig | None = None, pen: Recording | None = None,
                             seed: int = 0, k: int = 5, onset_config: OnsetDetectorConfig | None = None,
                             fit=None, jobs: int = 1) -> EvalReport:
    """Decode from a reconstruction that keeps only one ICA component."""
    if not 0 <= int(component_index) < ica_model.n_components:
        raise HweegError(f"component index {component_index} out of range (k={ica_model.n_components})")
    single = reconstruct(ica_model, recording, [component_index])
    dataset = build_dataset(single, pen if setting == "me_movement" else None, events, setting, onset_config)
    cv = kfold_cv(dataset, k, net, train_config, seed, fit, jobs, protocol=f"probe-ic{component_index}")
    return replace(cv.pooled, notes={"component": int(component_index), "setting": setting})


def zero_other_channels(dataset: EpochDataset, channels) -> EpochDataset:
    unknown = [c for c in channels if c not in dataset.channel_names]
    if unknown:
        raise HweegError(f"unknown channel name(s): {unknown}")
    mask = np.array([c in set(channels) for c in dataset.channel_names])
    return dataset.map_data(lambda d: np.where(mask[:, None], d, 0.0))


def confound_probe_channels(dataset: EpochDataset, channels, net: EEGNetConfig | None = None,
                            train_config: TrainConfig | None = None, seed: int = 0, k: int = 5,
                            fit=None, jobs: int = 1) -> EvalReport:
    """k-fold CV with every channel outside ``channels`` zeroed (input shape unchanged)."""
    probe = zero_other_channels(dataset, channels)
    cv = kfold_cv(probe, k, net, train_config, seed, fit, jobs, protocol="probe-channels")
    return replace(cv.pooled, notes={"channels": list(channels)})


# -- report files ------------------------------------------------------------

def write_report_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_table(rows, columns, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def format_table(rows, columns) -> str:
    """Fixed-width human-readable table."""
    cells = [[str(_fmt(r[c])) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"
