"""Compact EEGNet-style convolutional classifier, forward and backward in numpy.

Layer stack (per example, input ``channels x samples``)::

    temporal conv (F1 kernels, 'same')  -> batchnorm
    depthwise spatial conv (D per kernel, all channels) -> batchnorm -> ELU
    average pool (pool1) -> dropout
    depthwise temporal conv (separable kernel, 'same') -> pointwise conv
    batchnorm -> ELU -> average pool (pool2) -> dropout
    dense -> softmax

The temporal and spatial convolutions are both linear, and the first batchnorm
applies one affine map per temporal kernel.  The implementation therefore
projects channels first (``F2 x samples`` instead of ``F1 x channels x samples``)
and obtains the first batchnorm's statistics from the lagged second-moment
matrix of the padded input.  The result is identical to the naive ordering but
an order of magnitude cheaper.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from ..errors import FormatError, HweegError

WEIGHTS_FORMAT = "hweeg-eegnet"
WEIGHTS_VERSION = 1

PARAM_NAMES = (
    "temporal",
    "bn1_gamma",
    "bn1_beta",
    "spatial",
    "bn2_gamma",
    "bn2_beta",
    "sep_depth",
    "sep_point",
    "bn3_gamma",
    "bn3_beta",
    "dense_w",
    "dense_b",
)
BUFFER_NAMES = (
    "bn1_mean",
    "bn1_var",
    "bn2_mean",
    "bn2_var",
    "bn3_mean",
    "bn3_var",
    "input_mean",
    "input_std",
)


@dataclass(frozen=True)
class EEGNetConfig:
    n_channels: int = 32
    n_samples: int = 100
    n_classes: int = 4
    f1: int = 8
    d: int = 2
    f2: int = 16
    kernel_length: int = 50
    separable_kernel_length: int = 16
    pool1: int = 4
    pool2: int = 8
    dropout_p1: float = 0.25
    dropout_p2: float = 0.25
    bn_eps: float = 1e-3
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.f2 != self.f1 * self.d:
            raise HweegError(f"f2 ({self.f2}) must equal f1*d ({self.f1 * self.d})")
        if not 1 <= self.kernel_length <= self.n_samples:
            raise HweegError("kernel_length must lie in [1, n_samples]")
        if self.separable_kernel_length < 1:
            raise HweegError("separable_kernel_length must be positive")
        if self.pooled_length < 1:
            raise HweegError("pooled temporal length must be >= 1")
        for p in (self.dropout_p1, self.dropout_p2):
            if not 0.0 <= p < 1.0:
                raise HweegError("dropout probabilities must lie in [0, 1)")
        if min(self.n_channels, self.n_classes, self.f1, self.d) < 1:
            raise HweegError("counts must be positive")

    @property
    def t1(self) -> int:
        return self.n_samples // self.pool1

    @property
    def pooled_length(self) -> int:
        return (self.n_samples // self.pool1) // self.pool2

    @property
    def n_features(self) -> int:
        return self.f2 * self.pooled_length

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "temporal": (self.f1, self.kernel_length),
            "bn1_gamma": (self.f1,),
            "bn1_beta": (self.f1,),
            "spatial": (self.f2, self.n_channels),
            "bn2_gamma": (self.f2,),
            "bn2_beta": (self.f2,),
            "sep_depth": (self.f2, self.separable_kernel_length),
            "sep_point": (self.f2, self.f2),
            "bn3_gamma": (self.f2,),
            "bn3_beta": (self.f2,),
            "dense_w": (self.n_classes, self.n_features),
            "dense_b": (self.n_classes,),
        }

    def buffer_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "bn1_mean": (self.f1,),
            "bn1_var": (self.f1,),
            "bn2_mean": (self.f2,),
            "bn2_var": (self.f2,),
            "bn3_mean": (self.f2,),
            "bn3_var": (self.f2,),
            "input_mean": (self.n_channels,),
            "input_std": (self.n_channels,),
        }

    def n_params(self) -> int:
        """Closed-form count of trainable parameters."""
        f1, f2, c = self.f1, self.f2, self.n_channels
        return (
            f1 * self.kernel_length
            + 2 * f1
            + f2 * c
            + 2 * f2
            + f2 * self.separable_kernel_length
            + f2 * f2
            + 2 * f2
            + self.n_classes * self.n_features
            + self.n_classes
        )


@dataclass
class ModelWeights:
    """Trainable tensors plus normalization statistics for one network."""

    config: EEGNetConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, shape in self.config.param_shapes().items():
            if name not in self.params:
                raise HweegError(f"missing parameter {name!r}")
            if self.params[name].shape != shape:
                raise HweegError(f"parameter {name!r} has shape {self.params[name].shape}, expected {shape}")
        for name, shape in self.config.buffer_shapes().items():
            if name not in self.buffers:
                self.buffers[name] = _default_buffer(name, shape)

    def copy(self) -> "ModelWeights":
        return ModelWeights(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )

    @property
    def dtype(self) -> np.dtype:
        return self.params["dense_w"].dtype

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(
            self.config,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in (*self.params.values(), *self.buffers.values()))

    def save(self, path) -> None:
        meta = {"format": WEIGHTS_FORMAT, "version": WEIGHTS_VERSION, "config": asdict(self.config)}
        arrays = {f"param/{k}": self.params[k] for k in PARAM_NAMES}
        arrays.update({f"buffer/{k}": self.buffers[k] for k in BUFFER_NAMES})
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path) -> "ModelWeights":
        try:
            with np.load(Path(path), allow_pickle=False) as z:
                meta = json.loads(str(z["__meta__"]))
                if meta.get("format") != WEIGHTS_FORMAT:
                    raise FormatError(f"{path}: not a weights file")
                if meta.get("version") != WEIGHTS_VERSION:
                    raise FormatError(f"{path}: unsupported weights version {meta.get('version')}")
                config = EEGNetConfig(**meta["config"])
                params = {k: z[f"param/{k}"] for k in PARAM_NAMES}
                buffers = {k: z[f"buffer/{k}"] for k in BUFFER_NAMES}
        except (KeyError, ValueError, OSError) as exc:
            if isinstance(exc, HweegError):
                raise
            raise FormatError(f"{path}: malformed weights file ({exc})") from exc
        weights = cls(config, params, buffers)
        if not weights.is_finite():
            raise FormatError(f"{path}: non-finite weights")
        return weights


def _default_buffer(name, shape):
    if name.endswith("_var") or name == "input_std":
        return np.ones(shape)
    return np.zeros(shape)


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_weights(config: EEGNetConfig, rng: np.random.Generator) -> ModelWeights:
    c = config
    params = {
        "temporal": _glorot(rng, (c.f1, c.kernel_length), c.kernel_length, c.f1 * c.kernel_length),
        "spatial": _glorot(rng, (c.f2, c.n_channels), c.n_channels, c.d * c.n_channels),
        "sep_depth": _glorot(rng, (c.f2, c.separable_kernel_length), c.separable_kernel_length,
                             c.separable_kernel_length),
        "sep_point": _glorot(rng, (c.f2, c.f2), c.f2, c.f2),
        "dense_w": _glorot(rng, (c.n_classes, c.n_features), c.n_features, c.n_classes),
        "dense_b": np.zeros(c.n_classes),
    }
    for i, width in ((1, c.f1), (2, c.f2), (3, c.f2)):
        params[f"bn{i}_gamma"] = np.ones(width)
        params[f"bn{i}_beta"] = np.zeros(width)
    return ModelWeights(c, params)


def _same_pad(k: int) -> tuple[int, int]:
    left = (k - 1) // 2
    return left, k - 1 - left


def _elu(x):
    return np.expm1(np.minimum(x, 0.0)) + np.maximum(x, 0.0)


def _elu_grad(x, out):
    return np.where(x > 0, 1.0, out + 1.0)


def _pool(x, size, length):
    n, g = x.shape[:2]
    return x[..., : length * size].reshape(n, g, length, size).mean(axis=-1)


def _unpool(dy, size, full_length):
    n, g, length = dy.shape
    out = np.zeros((n, g, full_length), dtype=dy.dtype)
    out[..., : length * size] = np.repeat(dy, size, axis=-1) / size
    return out


def _correlate_valid(u, w):
    """``out[n, g, t] = sum_k w[g, k] * u[n, g, t + k]`` for every valid ``t``.

    Circular FFT correlation; with ``nfft >= len`` the wrapped terms land only
    in discarded outputs.  Returns the output and the spectrum of ``u`` for
    reuse in the backward pass.
    """
    length, k = u.shape[-1], w.shape[-1]
    nfft = sfft.next_fast_len(length, real=True)
    u_hat = sfft.rfft(u, nfft, axis=-1)
    w_hat = sfft.rfft(w[:, ::-1], nfft, axis=-1)
    full = sfft.irfft(u_hat * w_hat, nfft, axis=-1)
    return full[..., k - 1 : length], u_hat


def _correlate_valid_backward(dout, u_hat, w, length):
    """Gradients of :func:`_correlate_valid` w.r.t. ``w`` and ``u``."""
    nfft = sfft.next_fast_len(length, real=True)
    k = w.shape[-1]
    d_hat = sfft.rfft(dout, nfft, axis=-1)
    corr = sfft.irfft((np.conj(d_hat) * u_hat).sum(axis=0), nfft, axis=-1)
    dw = corr[:, :k]
    du = sfft.irfft(d_hat * sfft.rfft(w, nfft, axis=-1), nfft, axis=-1)[..., :length]
    return dw, du


def normalize_input(weights: ModelWeights, x: np.ndarray) -> np.ndarray:
    mean = weights.buffers["input_mean"][None, :, None]
    std = weights.buffers["input_std"][None, :, None]
    return (x - mean) / std


def dropout_masks(config: EEGNetConfig, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Inverted-dropout masks for one batch of ``n`` examples."""
    shapes = ((n, config.f2, config.t1), (n, config.f2, config.pooled_length))
    masks = []
    for p, shape in zip((config.dropout_p1, config.dropout_p2), shapes):
        if p == 0.0:
            masks.append(np.ones(shape))
        else:
            masks.append((rng.random(shape) >= p) / (1.0 - p))
    return masks[0], masks[1]


def _lagged_moments(xp: np.ndarray, k: int, t: int) -> tuple[np.ndarray, np.ndarray]:
    """First and second moments of all length-``t`` windows at lags 0..k-1.

    Returns ``m`` with ``m[i] = mean(xp[..., i:i+t])`` and ``M`` with
    ``M[i, j] = mean(xp[..., i:i+t] * xp[..., j:j+t])``, averaged over
    examples, channels and window positions.
    """
    flat = xp.reshape(-1, xp.shape[-1])
    count = flat.shape[0] * t
    col = flat.sum(axis=0)
    csum = np.concatenate((np.zeros(1, dtype=xp.dtype), np.cumsum(col)))
    m = (csum[t : t + k] - csum[:k]) / count
    gram = flat.T @ flat
    moments = np.zeros((k, k), dtype=xp.dtype)
    for start in range(t):
        moments += gram[start : start + k, start : start + k]
    return m, moments / count


def forward(weights: ModelWeights, x: np.ndarray, training: bool = False, masks=None):
    """Run the network on a batch ``x`` of shape (n, channels, samples).

    ``x`` must already be input-normalized.  In training mode batch
    statistics are used and ``masks`` (from :func:`dropout_masks`) are
    applied; pass ``masks=None`` to disable dropout.  Returns
    ``(probabilities, cache)``; the cache feeds :func:`backward`.
    """
    c = weights.config
    p = weights.params
    b = weights.buffers
    n = x.shape[0]
    if x.shape[1:] != (c.n_channels, c.n_samples):
        raise HweegError(
            f"input shape {x.shape[1:]} does not match config ({c.n_channels}, {c.n_samples})"
        )
    fidx = np.arange(c.f2) // c.d
    t, k1 = c.n_samples, c.kernel_length

    xp = np.pad(x, ((0, 0), (0, 0), _same_pad(k1)))
    u = np.matmul(p["spatial"], xp)  # (n, f2, t + k1 - 1)
    w1g = p["temporal"][fidx]
    v, u_hat = _correlate_valid(u, w1g)

    if training:
        m1, big_m = _lagged_moments(xp, k1, t)
        mu1 = p["temporal"] @ m1
        var1 = np.einsum("fi,ij,fj->f", p["temporal"], big_m, p["temporal"]) - mu1**2
        var1 = np.maximum(var1, 0.0)
    else:
        m1 = big_m = None
        mu1, var1 = b["bn1_mean"], b["bn1_var"]
    s1 = np.sqrt(var1 + c.bn_eps)
    a1 = p["bn1_gamma"] / s1
    ssum = p["spatial"].sum(axis=1)
    z2 = a1[fidx, None] * (v - (mu1[fidx] * ssum)[:, None]) + (p["bn1_beta"][fidx] * ssum)[:, None]

    if training:
        mu2 = z2.mean(axis=(0, 2))
        var2 = z2.var(axis=(0, 2))
    else:
        mu2, var2 = b["bn2_mean"], b["bn2_var"]
    s2 = np.sqrt(var2 + c.bn_eps)
    zh2 = (z2 - mu2[:, None]) / s2[:, None]
    y2 = p["bn2_gamma"][:, None] * zh2 + p["bn2_beta"][:, None]
    e2 = _elu(y2)
    p1 = _pool(e2, c.pool1, c.t1)
    m_a, m_b = masks if (training and masks is not None) else (None, None)
    d1 = p1 * m_a if m_a is not None else p1

    k3 = c.separable_kernel_length
    dp = np.pad(d1, ((0, 0), (0, 0), _same_pad(k3)))
    q, dp_hat = _correlate_valid(dp, p["sep_depth"])
    r = np.matmul(p["sep_point"], q)

    if training:
        mu3 = r.mean(axis=(0, 2))
        var3 = r.var(axis=(0, 2))
    else:
        mu3, var3 = b["bn3_mean"], b["bn3_var"]
    s3 = np.sqrt(var3 + c.bn_eps)
    zh3 = (r - mu3[:, None]) / s3[:, None]
    y3 = p["bn3_gamma"][:, None] * zh3 + p["bn3_beta"][:, None]
    e3 = _elu(y3)
    p2 = _pool(e3, c.pool2, c.pooled_length)
    d2 = p2 * m_b if m_b is not None else p2

    feats = d2.reshape(n, -1)
    logits = feats @ p["dense_w"].T + p["dense_b"]
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)

    cache = dict(
        x=x, xp=xp, u=u, u_hat=u_hat, v=v, w1g=w1g, fidx=fidx, m1=m1, big_m=big_m, mu1=mu1, var1=var1,
        s1=s1, a1=a1, ssum=ssum, z2=z2, mu2=mu2, var2=var2, s2=s2, zh2=zh2, y2=y2, e2=e2,
        p1=p1, mask_a=m_a, dp=dp, dp_hat=dp_hat, q=q, r=r, mu3=mu3, var3=var3, s3=s3, zh3=zh3, y3=y3,
        e3=e3, p2=p2, mask_b=m_b, feats=feats, probs=probs, training=training,
    )
    return probs, cache


def cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    picked = probs[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.maximum(picked, np.finfo(probs.dtype).tiny))))


def _bn_backward(dy, xhat, s, gamma):
    """Batchnorm (batch statistics) backward over axes (0, 2)."""
    m = dy.shape[0] * dy.shape[2]
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dxhat = dy * gamma[:, None]
    dx = (m * dxhat - dxhat.sum(axis=(0, 2))[:, None] - xhat * (dxhat * xhat).sum(axis=(0, 2))[:, None])
    dx /= m * s[:, None]
    return dx, dgamma, dbeta


def backward(weights: ModelWeights, cache: dict, y: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of mean cross-entropy w.r.t. every trainable tensor.

    Requires a cache produced by ``forward(..., training=True)``.
    """
    if not cache["training"]:
        raise HweegError("backward requires a training-mode forward cache")
    c = weights.config
    p = weights.params
    n = len(y)
    grads: dict[str, np.ndarray] = {}

    dlogits = cache["probs"].copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    grads["dense_w"] = dlogits.T @ cache["feats"]
    grads["dense_b"] = dlogits.sum(axis=0)
    dd2 = (dlogits @ p["dense_w"]).reshape(n, c.f2, c.pooled_length)

    dp2 = dd2 * cache["mask_b"] if cache["mask_b"] is not None else dd2
    de3 = _unpool(dp2, c.pool2, c.t1)
    dy3 = de3 * _elu_grad(cache["y3"], cache["e3"])
    dr, grads["bn3_gamma"], grads["bn3_beta"] = _bn_backward(dy3, cache["zh3"], cache["s3"], p["bn3_gamma"])

    grads["sep_point"] = np.tensordot(dr, cache["q"], axes=([0, 2], [0, 2]))
    dq = np.matmul(p["sep_point"].T, dr)
    k3 = c.separable_kernel_length
    grads["sep_depth"], ddp = _correlate_valid_backward(dq, cache["dp_hat"], p["sep_depth"], cache["dp"].shape[-1])
    left, _ = _same_pad(k3)
    dd1 = ddp[:, :, left : left + c.t1]

    dp1 = dd1 * cache["mask_a"] if cache["mask_a"] is not None else dd1
    de2 = _unpool(dp1, c.pool1, c.n_samples)
    dy2 = de2 * _elu_grad(cache["y2"], cache["e2"])
    dz2, grads["bn2_gamma"], grads["bn2_beta"] = _bn_backward(dy2, cache["zh2"], cache["s2"], p["bn2_gamma"])

    # first block: z2 = a (v - mu*S) + beta*S, grouped by temporal kernel
    fidx, a1, mu1, ssum = cache["fidx"], cache["a1"], cache["mu1"], cache["ssum"]
    sum_dz = dz2.sum(axis=(0, 2))
    dv = a1[fidx, None] * dz2
    da_g = (dz2 * cache["v"]).sum(axis=(0, 2)) - mu1[fidx] * ssum * sum_dz
    da1 = _group_sum(da_g, fidx, c.f1)
    grads["bn1_beta"] = _group_sum(ssum * sum_dz, fidx, c.f1)
    dmu1 = -a1 * grads["bn1_beta"]
    dssum = (p["bn1_beta"][fidx] - a1[fidx] * mu1[fidx]) * sum_dz

    s1 = cache["s1"]
    grads["bn1_gamma"] = da1 / s1
    dvar1 = -da1 * p["bn1_gamma"] / s1**2 / (2.0 * s1)
    dmu1 = dmu1 - 2.0 * mu1 * dvar1

    k1 = c.kernel_length
    gw1g, du = _correlate_valid_backward(dv, cache["u_hat"], cache["w1g"], cache["u"].shape[-1])
    gtemp = np.zeros((c.f1, k1), dtype=dv.dtype)
    np.add.at(gtemp, fidx, gw1g)
    gtemp += dmu1[:, None] * cache["m1"][None, :]
    gtemp += 2.0 * dvar1[:, None] * (p["temporal"] @ cache["big_m"].T)
    grads["temporal"] = gtemp

    xp = cache["xp"]
    gsp = np.tensordot(du, xp, axes=([0, 2], [0, 2]))
    gsp += dssum[:, None]
    grads["spatial"] = gsp
    return grads


def _group_sum(values, groups, size):
    out = np.zeros(size, dtype=values.dtype)
    np.add.at(out, groups, values)
    return out


def update_running_stats(weights: ModelWeights, cache: dict) -> None:
    mom = weights.config.bn_momentum
    b = weights.buffers
    for i in (1, 2, 3):
        b[f"bn{i}_mean"] = (1 - mom) * b[f"bn{i}_mean"] + mom * cache[f"mu{i}"]
        b[f"bn{i}_var"] = (1 - mom) * b[f"bn{i}_var"] + mom * cache[f"var{i}"]
