"""Training loop, inference, and trial-averaged prediction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DivergenceError, HweegError
from .network import (
    PARAM_NAMES,
    EEGNetConfig,
    ModelWeights,
    backward,
    cross_entropy,
    dropout_masks,
    forward,
    init_weights,
    normalize_input,
    update_running_stats,
)

log = logging.getLogger(__name__)

AUGMENTATIONS = ("none", "random_shift")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 50
    learning_rate: float = 1e-3
    validation_fraction: float = 0.2
    augmentation: str = "none"
    max_shift_samples: int = 10
    zscore: bool = True
    precision: str = "float32"

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 0.5:
            raise HweegError("validation_fraction must lie in (0, 0.5)")
        if self.augmentation not in AUGMENTATIONS:
            raise HweegError(f"unknown augmentation {self.augmentation!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise HweegError("batch_size, max_epochs and patience must be positive")
        if self.learning_rate <= 0:
            raise HweegError("learning_rate must be positive")
        if self.precision not in ("float32", "float64"):
            raise HweegError("precision must be 'float32' or 'float64'")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def as_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "best_epoch": self.best_epoch,
        }


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in PARAM_NAMES:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def stratified_split(y: np.ndarray, fraction: float, rng: np.random.Generator):
    """Split indices into (train, validation), holding out ``fraction`` of each class."""
    val = []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        n_val = max(1, int(round(fraction * len(idx))))
        val.extend(rng.permutation(idx)[:n_val])
    val = np.sort(np.array(val, dtype=int))
    train = np.setdiff1d(np.arange(len(y)), val)
    return train, val


def random_shift(x: np.ndarray, max_shift: int, rng: np.random.Generator) -> np.ndarray:
    """Shift each example by a uniform integer in [-max_shift, max_shift], reflecting at the edges."""
    if max_shift == 0:
        return x
    n, _, t = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (max_shift, max_shift)), mode="reflect")
    shifts = rng.integers(-max_shift, max_shift + 1, size=n)
    out = np.empty_like(x)
    for i, s in enumerate(shifts):
        start = max_shift - s
        out[i] = padded[i, :, start : start + t]
    return out


def _channel_stats(x: np.ndarray):
    mean = x.mean(axis=(0, 2))
    std = x.std(axis=(0, 2))
    # zeroed or constant channels carry no signal; keep them at zero
    std = np.where(std > 1e-12, std, 1.0)
    return mean, std


def predict_proba(weights: ModelWeights, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Class probabilities for a batch (n, channels, samples) in inference mode."""
    x = np.asarray(x, dtype=weights.dtype)
    if x.ndim == 2:
        x = x[None]
    c = weights.config
    if x.ndim != 3 or x.shape[1:] != (c.n_channels, c.n_samples):
        raise HweegError(f"input shape {x.shape[1:]} does not match config ({c.n_channels}, {c.n_samples})")
    out = []
    for start in range(0, len(x), batch_size):
        xb = normalize_input(weights, x[start : start + batch_size])
        probs, _ = forward(weights, xb, training=False)
        out.append(probs)
    return np.concatenate(out, axis=0)


def predict(weights: ModelWeights, x: np.ndarray) -> np.ndarray:
    return predict_proba(weights, x).argmax(axis=1)


def predict_averaged(weights: ModelWeights, epochs) -> np.ndarray:
    """Probabilities for the element-wise mean of ``k`` same-label epochs."""
    arrays = [np.asarray(e, dtype=float) for e in epochs]
    if not arrays:
        raise HweegError("predict_averaged needs at least one epoch")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise HweegError("predict_averaged: epochs have mixed shapes")
    mean = np.mean(np.stack(arrays), axis=0)
    return predict_proba(weights, mean[None])[0]


def _evaluate(weights, x, y):
    probs = predict_proba(weights, x)
    return cross_entropy(probs, y), float(np.mean(probs.argmax(axis=1) == y))


def train(x: np.ndarray, y: np.ndarray, config: TrainConfig | None = None,
          net: EEGNetConfig | None = None) -> tuple[ModelWeights, TrainHistory]:
    """Fit the network on examples ``x`` (n, channels, samples) with labels ``y``.

    Returns the weights from the epoch with the best validation accuracy
    (ties broken by lower validation loss) and the per-epoch history.
    Deterministic given ``config.seed``.
    """
    config = config or TrainConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if net is None:
        net = EEGNetConfig(n_channels=x.shape[1], n_samples=x.shape[2])
    if x.shape[1:] != (net.n_channels, net.n_samples):
        raise HweegError(f"training data shape {x.shape[1:]} does not match network config")
    if y.min() < 0 or y.max() >= net.n_classes:
        raise HweegError("labels out of range for n_classes")
    counts = np.bincount(y, minlength=net.n_classes)
    if counts.min() < 2:
        raise HweegError(f"need >= 2 examples per class, got counts {counts.tolist()}")

    ss = np.random.SeedSequence(config.seed)
    rng_init, rng_split, rng_shuffle, rng_drop, rng_aug = (np.random.default_rng(s) for s in ss.spawn(5))

    weights = init_weights(net, rng_init)
    tr_idx, val_idx = stratified_split(y, config.validation_fraction, rng_split)
    if config.zscore:
        mean, std = _channel_stats(x[tr_idx])
        weights.buffers["input_mean"] = mean
        weights.buffers["input_std"] = std
    weights = weights.astype(config.precision)
    x = x.astype(config.precision)
    # normalization is per-channel affine, so it commutes with the time shift
    x_tr, y_tr = normalize_input(weights, x[tr_idx]), y[tr_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    opt = Adam(weights.params, lr=config.learning_rate)
    history = TrainHistory()
    best = None
    best_key = None
    stale = 0
    for epoch in range(config.max_epochs):
        order = rng_shuffle.permutation(len(y_tr))
        losses, correct = [], 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            if len(batch) < 2:
                continue  # batch statistics need >= 2 examples
            xb = x_tr[batch]
            if config.augmentation == "random_shift":
                xb = random_shift(xb, config.max_shift_samples, rng_aug)
            masks = [m.astype(x_tr.dtype) for m in dropout_masks(net, len(batch), rng_drop)]
            probs, cache = forward(weights, xb, training=True, masks=masks)
            loss = cross_entropy(probs, y_tr[batch])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            grads = backward(weights, cache, y_tr[batch])
            opt.step(weights.params, grads)
            update_running_stats(weights, cache)
            losses.append(loss * len(batch))
            correct += int(np.sum(probs.argmax(axis=1) == y_tr[batch]))
        history.train_loss.append(float(np.sum(losses) / len(y_tr)))
        history.train_acc.append(correct / len(y_tr))
        val_loss, val_acc = _evaluate(weights, x_val, y_val)
        if not np.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        key = (val_acc, -val_loss)
        if best_key is None or key > best_key:
            best_key, best, stale = key, weights.copy(), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                break
    log.debug("trained %d epochs, best epoch %d (val acc %.3f)", len(history.val_acc),
              history.best_epoch, best_key[0])
    return best, history
