"""Central finite-difference check of the analytic gradients."""

from __future__ import annotations

import numpy as np

from .network import PARAM_NAMES, EEGNetConfig, ModelWeights, backward, dropout_masks, forward, init_weights

TINY_CONFIG = EEGNetConfig(n_channels=4, n_samples=20, n_classes=4, f1=2, d=1, f2=2, kernel_length=5,
                           separable_kernel_length=4, pool1=2, pool2=2)
# denominator floor: a tensor whose true gradient is zero (bn1_beta, whose shift
# the next batch norm removes) only shows finite-difference rounding noise
# (~1e-14 in extended precision), which must not count as a relative error
NORM_FLOOR = 1e-8


def relative_error(numeric: np.ndarray, analytic: np.ndarray, floor: float = NORM_FLOOR) -> float:
    num = np.linalg.norm(numeric - analytic)
    den = max(np.linalg.norm(numeric) + np.linalg.norm(analytic), floor)
    return float(num / den)


def gradient_check(config: EEGNetConfig = TINY_CONFIG, batch: int = 6, seed: int = 0, step: float = 1e-5,
                   dtype=np.longdouble) -> dict[str, float]:
    """Relative error between analytic and numeric gradients for every parameter tensor.

    Runs in training mode with fixed dropout masks, in extended precision so the
    finite differences are not swamped by rounding.
    """
    rng = np.random.default_rng(seed)
    weights = init_weights(config, rng)
    for name in weights.params:
        weights.params[name] = weights.params[name] + 0.1 * rng.standard_normal(weights.params[name].shape)
    weights = weights.astype(dtype)
    x = rng.standard_normal((batch, config.n_channels, config.n_samples)).astype(dtype)
    y = np.arange(batch) % config.n_classes
    masks = [m.astype(dtype) for m in dropout_masks(config, batch, rng)]

    probs, cache = forward(weights, x, training=True, masks=masks)
    analytic = backward(weights, cache, y)
    errors = {}
    for name in PARAM_NAMES:
        errors[name] = relative_error(_numeric(weights, name, x, y, masks, step), analytic[name])
    return errors


def _numeric(weights: ModelWeights, name: str, x, y, masks, step: float) -> np.ndarray:
    a = weights.params[name]
    out = np.zeros_like(a)
    for i in np.ndindex(a.shape):
        old = a[i]
        a[i] = old + step
        lp = _loss(weights, x, y, masks)
        a[i] = old - step
        lm = _loss(weights, x, y, masks)
        a[i] = old
        out[i] = (lp - lm) / (2 * step)
    return out


def _loss(weights, x, y, masks):
    probs, _ = forward(weights, x, training=True, masks=masks)
    picked = probs[np.arange(len(y)), y]
    # keep the extended precision that cross_entropy's float() would drop
    return -np.mean(np.log(picked))


__all__ = ["TINY_CONFIG", "gradient_check", "relative_error"]
