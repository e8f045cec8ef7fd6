import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hweeg.dataio import LETTERS, Epoch, EpochDataset
from hweeg.decoder import EEGNetConfig, TrainConfig, init_weights
from hweeg.errors import HweegError
from hweeg.evalharness import (EvalReport, averaging_groups, confound_probe_channels, derive_seed, fingerprint,
                               fold_assignment, kfold_cv, sample_complexity_sweep, snr_boosted_eval,
                               stratified_allocation, subsample_indices, write_table, zero_other_channels)

from conftest import make_dataset


def labelled(n_per_class, n_channels=2, n_samples=4, interleave=True):
    """Epochs whose first sample encodes the label, so an oracle can read it back."""
    ds = make_dataset(n_per_class, n_channels, n_samples, interleave=interleave)
    epochs = []
    for e in ds.epochs:
        d = e.data.copy()
        d[0, 0] = e.label_index
        epochs.append(Epoch(d, e.label, e.setting, e.onset_time_s, e.session_id))
    return EpochDataset(tuple(epochs), ds.sample_rate_hz, ds.channel_names)


class OracleFit:
    def __call__(self, x, y, seed):
        return lambda xt: np.rint(xt[:, 0, 0]).astype(int)


class ConstantFit:
    def __call__(self, x, y, seed):
        return lambda xt: np.zeros(len(xt), dtype=int)


class RecordingFit:
    """Remembers training-set sizes and test arrays."""

    def __init__(self):
        self.train_sizes, self.tests = [], []

    def __call__(self, x, y, seed):
        self.train_sizes.append(len(y))

        def model(xt):
            self.tests.append(xt.copy())
            return np.zeros(len(xt), dtype=int)
        return model


def test_folds_balanced():
    y = np.repeat(np.arange(4), 25)
    folds = fold_assignment(y, 5, seed=0)
    for f in range(5):
        assert np.sum(folds == f) == 20
        assert np.bincount(y[folds == f], minlength=4).tolist() == [5, 5, 5, 5]


@given(st.lists(st.integers(0, 3), min_size=20, max_size=120), st.integers(2, 6), st.integers(0, 1000))
def test_fold_partition_property(labels, k, seed):
    y = np.array(labels)
    counts = np.bincount(y, minlength=4)
    if counts[counts > 0].min() < k:
        with pytest.raises(HweegError):
            fold_assignment(y, k, seed)
        return
    folds = fold_assignment(y, k, seed)
    assert set(np.unique(folds)) <= set(range(k))
    sizes = np.bincount(folds, minlength=k)
    assert sizes.max() - sizes.min() <= 1
    assert np.array_equal(folds, fold_assignment(y, k, seed))


def test_cv_every_epoch_tested_once_and_oracle():
    ds = labelled(25)
    cv = kfold_cv(ds, 5, fit=OracleFit(), seed=0)
    tested = np.concatenate([cv.test_indices(f) for f in range(5)])
    assert sorted(tested.tolist()) == list(range(100))
    assert cv.pooled.accuracy == 1.0
    assert cv.pooled.n_test == 100
    assert all(r.accuracy == 1.0 for r in cv.folds)


def test_cv_constant_classifier():
    cv = kfold_cv(labelled(25), 5, fit=ConstantFit())
    assert cv.pooled.accuracy == 0.25
    conf = np.array(cv.pooled.confusion)
    assert conf[:, 0].tolist() == [25, 25, 25, 25]
    assert conf.sum(axis=1).tolist() == [25] * 4


def test_cv_parallel_matches_serial():
    ds = make_dataset(6, 3, 40, seed=1)
    net = EEGNetConfig(n_channels=3, n_samples=40, f1=2, d=1, f2=2, kernel_length=5, separable_kernel_length=3,
                       pool1=2, pool2=4)
    tc = TrainConfig(max_epochs=2, patience=2, batch_size=8)
    a = kfold_cv(ds, 3, net, tc, seed=4, jobs=1)
    b = kfold_cv(ds, 3, net, tc, seed=4, jobs=2)
    assert a.pooled == b.pooled
    assert [r.confusion for r in a.folds] == [r.confusion for r in b.folds]


def test_report_invariants():
    with pytest.raises(HweegError):
        EvalReport(0.5, ((1, 0, 0, 0),) * 4, 5, 0, "x")
    with pytest.raises(HweegError):
        EvalReport(0.9, ((1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)), 4, 0, "x")
    rep = EvalReport.from_predictions([0, 1, 2, 3], [0, 1, 2, 0], 0, {"a": 1})
    assert rep.accuracy == 0.75
    assert rep.fingerprint == fingerprint({"a": 1})


def test_fingerprint_and_seed_derivation():
    assert fingerprint({"a": 1, "b": [1, 2]}) == fingerprint({"b": [1, 2], "a": 1})
    assert fingerprint({"a": 1}) != fingerprint({"a": 2})
    assert derive_seed(0, "cv", 1) == derive_seed(0, "cv", 1)
    assert derive_seed(0, "cv", 1) != derive_seed(0, "cv", 2)
    assert derive_seed(0, "cv", 1) != derive_seed(1, "cv", 1)


def test_subsample_half_of_2240():
    y = np.repeat(np.arange(4), 560)
    idx = subsample_indices(y, 0.5, np.random.default_rng(0))
    assert len(idx) == 1120
    assert np.bincount(y[idx]).tolist() == [280] * 4
    assert len(np.unique(idx)) == len(idx)
    assert np.all(np.diff(idx) > 0)


def test_full_fraction_is_identity():
    y = np.tile(np.arange(4), 30)
    assert np.array_equal(subsample_indices(y, 1.0, np.random.default_rng(5)), np.arange(120))


@given(st.lists(st.integers(1, 50), min_size=4, max_size=4), st.floats(0.0, 1.0))
def test_allocation_sums_and_bounds(counts, frac):
    n_total = int(np.floor(frac * sum(counts) + 0.5))
    alloc = stratified_allocation(counts, n_total)
    assert alloc.sum() == n_total
    assert np.all(alloc <= np.array(counts))
    assert np.all(np.abs(alloc - n_total * np.array(counts) / sum(counts)) < 1)


def test_sweep_uses_fixed_test_and_default_size():
    ds = labelled(100)
    fit = RecordingFit()
    curve = sample_complexity_sweep(ds, fractions=(0.5, 1.0), seeds=(0, 1), fit=fit)
    assert fit.train_sizes == [120, 120, 240, 240]
    assert all(t.shape[0] == 160 for t in fit.tests)
    first = fit.tests[0].tobytes()
    assert all(t.tobytes() == first for t in fit.tests)
    assert np.array_equal(fit.tests[0], ds.X[-160:])
    assert [p.n_train for p in curve.points] == [120, 240]
    assert curve.mean_at(1.0) == 0.25


def test_sweep_oracle_curve_and_determinism():
    ds = labelled(60)
    a = sample_complexity_sweep(ds, n_test=40, fractions=(0.2, 0.6, 1.0), seeds=(0, 1, 2), fit=OracleFit())
    assert [p.mean_accuracy for p in a.points] == [1.0, 1.0, 1.0]
    assert [p.std_accuracy for p in a.points] == [0.0, 0.0, 0.0]
    b = sample_complexity_sweep(ds, n_test=40, fractions=(0.2, 0.6, 1.0), seeds=(0, 1, 2), fit=OracleFit())
    assert [r.fingerprint for _, _, r in a.runs] == [r.fingerprint for _, _, r in b.runs]


def test_sweep_rejects_bad_fractions():
    with pytest.raises(HweegError):
        sample_complexity_sweep(labelled(60), n_test=40, fractions=(0.5, 0.2), fit=OracleFit())
    with pytest.raises(HweegError):
        sample_complexity_sweep(labelled(60), n_test=40, fractions=(0.0, 1.0), fit=OracleFit())


def test_averaging_groups_partition():
    y = np.repeat(np.arange(4), 40)
    groups = averaging_groups(y, 8)
    assert len(groups) == 20
    assert all(len(g) == 8 and len(set(y[g])) == 1 for g in groups)
    assert all(np.all(np.diff(g) > 0) for g in groups)
    flat = np.concatenate(groups)
    assert len(np.unique(flat)) == len(flat)


def test_averaging_drops_remainder():
    y = np.array([0] * 10 + [1] * 9 + [2] * 8 + [3] * 8)
    groups = averaging_groups(y, 4)
    assert [int(y[g[0]]) for g in groups].count(0) == 2
    assert [int(y[g[0]]) for g in groups].count(1) == 2


def _tiny_weights(n_channels, n_samples):
    net = EEGNetConfig(n_channels=n_channels, n_samples=n_samples, f1=2, d=1, f2=2, kernel_length=3,
                       separable_kernel_length=2, pool1=2, pool2=2)
    return init_weights(net, np.random.default_rng(0))


def test_snr_boosted_counts_and_errors():
    ds = make_dataset(40, 2, 8)
    w = _tiny_weights(2, 8)
    out = snr_boosted_eval(w, ds, (1, 2, 4, 8))
    assert [k for k, _ in out] == [1, 2, 4, 8]
    assert [r.n_test for _, r in out] == [160, 80, 40, 20]
    assert out[-1][1].notes["n_groups"] == 20
    with pytest.raises(HweegError, match="k=41"):
        snr_boosted_eval(w, ds, (41,))


def test_snr_boosted_k1_equals_single_trial():
    ds = make_dataset(5, 2, 8)
    w = _tiny_weights(2, 8)
    from hweeg.decoder import predict
    (_, rep), = snr_boosted_eval(w, ds, (1,))
    assert rep.accuracy == pytest.approx(np.mean(predict(w, ds.X) == ds.y))


def test_zero_other_channels():
    ds = make_dataset(2, 3, 5)
    probe = zero_other_channels(ds, ["ch0", "ch2"])
    assert probe.X.shape == ds.X.shape
    assert not probe.X[:, 1].any()
    assert np.array_equal(probe.X[:, [0, 2]], ds.X[:, [0, 2]])
    with pytest.raises(HweegError, match="Fpz"):
        zero_other_channels(ds, ["Fpz"])


def test_channel_probe_with_oracle():
    ds = labelled(10)
    rep = confound_probe_channels(ds, ["ch0"], fit=OracleFit())
    assert rep.accuracy == 1.0
    assert rep.notes["channels"] == ["ch0"]
    rep = confound_probe_channels(ds, ["ch1"], fit=OracleFit())
    assert rep.accuracy == 0.25


def test_write_table_format(tmp_path):
    path = tmp_path / "t.tsv"
    write_table([{"a": 0.5, "b": "x"}, {"a": 1, "b": "y"}], ["a", "b"], path)
    assert path.read_text() == "a\tb\n0.500000\tx\n1\ty\n"


def test_letters_order():
    assert LETTERS == ("L", "V", "O", "W")
