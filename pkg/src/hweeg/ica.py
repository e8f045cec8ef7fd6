"""Independent component analysis for artifact rejection and single-component probes.

Fixed-point negentropy maximization (tanh contrast) with symmetric
decorrelation, on PCA-whitened data.  Components are ordered by the channel-space
variance they explain, descending.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import Recording
from .errors import FormatError, HweegError, RankDeficientError

TOL = 1e-6
MAX_ITER = 500
RANK_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class IcaModel:
    whitening: np.ndarray      # (k, n_channels)
    unmixing: np.ndarray       # (k, k)
    mixing: np.ndarray         # (n_channels, k)
    channel_means: np.ndarray  # (n_channels,)
    channel_names: tuple[str, ...]
    converged: bool
    iterations: int

    @property
    def n_components(self) -> int:
        return self.unmixing.shape[0]

    @property
    def filters(self) -> np.ndarray:
        """Channel-space unmixing filters, ``unmixing @ whitening``."""
        return self.unmixing @ self.whitening

    def save(self, path) -> None:
        meta = {"channel_names": list(self.channel_names), "converged": self.converged,
                "iterations": self.iterations}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta)), whitening=self.whitening,
                     unmixing=self.unmixing, mixing=self.mixing, channel_means=self.channel_means)

    @classmethod
    def load(cls, path) -> "IcaModel":
        try:
            with np.load(Path(path), allow_pickle=False) as z:
                meta = json.loads(str(z["__meta__"]))
                return cls(z["whitening"], z["unmixing"], z["mixing"], z["channel_means"],
                           tuple(meta["channel_names"]), bool(meta["converged"]),
                           int(meta["iterations"]))
        except (KeyError, ValueError, OSError) as exc:
            raise FormatError(f"{path}: malformed ICA model ({exc})") from exc


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    """W <- (W W^T)^(-1/2) W."""
    s, u = np.linalg.eigh(w @ w.T)
    s = np.clip(s, np.finfo(float).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


def _null_channels(vecs: np.ndarray, null_mask: np.ndarray, names) -> list[str]:
    loadings = np.abs(vecs[:, null_mask]).max(axis=1)
    return [n for n, load in zip(names, loadings) if load > 0.1]


def fit_ica(recording: Recording, k: int | None = None, seed: int = 0,
            tol: float = TOL, max_iter: int = MAX_ITER) -> IcaModel:
    """Fit an ICA model with ``k`` components (default: one per channel)."""
    x = recording.samples
    n_ch, n = x.shape
    k = n_ch if k is None else int(k)
    if not 1 <= k <= n_ch:
        raise HweegError(f"k={k} must lie in [1, {n_ch}]")
    if n < 10 * n_ch:
        raise HweegError(f"need at least {10 * n_ch} samples for {n_ch} channels, got {n}")

    means = x.mean(axis=1)
    xc = x - means[:, None]
    cov = xc @ xc.T / n
    evals, evecs = np.linalg.eigh(cov)
    null = evals < RANK_RTOL * evals.max()
    if evals.max() <= 0 or null.any():
        bad = _null_channels(evecs, null, recording.channel_names) if evals.max() > 0 else list(
            recording.channel_names)
        raise RankDeficientError(f"rank-deficient data; null directions involve channels {bad}")
    order = np.argsort(evals)[::-1][:k]
    d, e = evals[order], evecs[:, order]
    whitening = (e / np.sqrt(d)).T
    z = whitening @ xc

    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((k, k)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = np.tanh(w @ z)
        w_new = (g @ z.T) / n - (1.0 - g**2).mean(axis=1)[:, None] * w
        w_new = _sym_decorrelate(w_new)
        delta = np.max(np.abs(np.abs(np.sum(w_new * w, axis=1)) - 1.0))
        w = w_new
        if delta < tol:
            converged = True
            break

    mixing = (e * np.sqrt(d)) @ w.T
    # order by explained variance (sources have unit variance), then fix signs
    var = (mixing**2).sum(axis=0)
    perm = np.argsort(-var, kind="stable")
    w, mixing = w[perm], mixing[:, perm]
    peak = mixing[np.abs(mixing).argmax(axis=0), np.arange(k)]
    signs = np.where(peak < 0, -1.0, 1.0)
    w, mixing = w * signs[:, None], mixing * signs[None, :]
    return IcaModel(whitening, w, mixing, means, recording.channel_names, converged, it)


def _check_channels(model: IcaModel, recording: Recording) -> None:
    if recording.channel_names != model.channel_names:
        raise HweegError("recording channels do not match the ICA model")


def sources(model: IcaModel, recording: Recording) -> Recording:
    """Component time-courses as a k-channel recording named IC000, IC001, ..."""
    _check_channels(model, recording)
    s = model.filters @ (recording.samples - model.channel_means[:, None])
    names = tuple(f"IC{i:03d}" for i in range(model.n_components))
    return recording.with_samples(s, channel_names=names)


def reconstruct(model: IcaModel, recording: Recording, keep) -> Recording:
    """Rebuild channel-space data from the ``keep`` components plus channel means."""
    keep = sorted({int(i) for i in keep})
    bad = [i for i in keep if not 0 <= i < model.n_components]
    if bad:
        raise HweegError(f"component index out of range: {bad} (k={model.n_components})")
    src = sources(model, recording).samples
    out = model.mixing[:, keep] @ src[keep] + model.channel_means[:, None]
    return recording.with_samples(out)


def remove_components(model: IcaModel, recording: Recording, reject) -> Recording:
    reject = {int(i) for i in reject}
    return reconstruct(model, recording, [i for i in range(model.n_components) if i not in reject])


def component_correlations(model: IcaModel, recording: Recording, template) -> np.ndarray:
    template = np.asarray(template, dtype=float).ravel()
    if template.shape[0] != recording.n_samples:
        raise HweegError(f"template length {template.shape[0]} != recording length {recording.n_samples}")
    tc = template - template.mean()
    if not np.any(np.abs(tc) > 0):
        raise HweegError("degenerate template (constant or zero)")
    s = sources(model, recording).samples
    sc = s - s.mean(axis=1, keepdims=True)
    denom = np.linalg.norm(sc, axis=1) * np.linalg.norm(tc)
    return np.divide(sc @ tc, denom, out=np.zeros(len(sc)), where=denom > 0)


def rank_components_by_template(model: IcaModel, recording: Recording, template) -> list[int]:
    """Component indices by descending |correlation| with ``template`` (ties by index)."""
    corr = np.abs(component_correlations(model, recording, template))
    return [int(i) for i in np.argsort(-corr, kind="stable")]
