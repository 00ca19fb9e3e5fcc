"""Minimal CNN engine: NHWC tensors, hand-derived backprop, Adam.

Layer types: valid-padding convolution, batch normalization, inverted
dropout, max/average pooling, flatten, dense, ReLU, and a softmax
cross-entropy head. Convolution is cross-correlation (no kernel flip).
Tensors are plain C-order numpy arrays; float32 for training, float64 for
gradient checking.

A network is a NetworkSpec (ordered layer descriptions); its weights live in
a separate ParamState. Forward passes are pure: train-mode batch-norm
returns its moving-statistic updates in the cache instead of mutating
anything, and the training loop commits them. A ParamState belongs to one
training loop at a time; evaluation against a snapshot of it is safe from
any number of threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import batch_iter
from .errors import ConfigError, ShapeError
from .prng import SeededPrng


# --------------------------------------------------------------------------
# Layer and network specifications
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv2D:
    """Valid-padding cross-correlation with bias."""

    kind: ClassVar[str] = "conv2d"
    filters: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.filters < 1 or min(self.kernel) < 1 or min(self.stride) < 1:
            raise ConfigError(f"conv2d sizes must be >= 1: {self}")


@dataclass(frozen=True)
class BatchNorm:
    kind: ClassVar[str] = "batch_norm"
    channels: int
    epsilon: float = 1e-3
    momentum: float = 0.99

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError(f"batch_norm needs channels >= 1: {self}")


@dataclass(frozen=True)
class Dropout:
    kind: ClassVar[str] = "dropout"
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class MaxPool:
    kind: ClassVar[str] = "max_pool"
    pool: tuple[int, int] = (2, 2)
    stride: tuple[int, int] = (2, 2)

    def __post_init__(self):
        if min(self.pool) < 1 or min(self.stride) < 1:
            raise ConfigError(f"max_pool sizes must be >= 1: {self}")


@dataclass(frozen=True)
class AvgPool:
    kind: ClassVar[str] = "avg_pool"
    pool: tuple[int, int] = (2, 2)
    stride: tuple[int, int] = (2, 2)

    def __post_init__(self):
        if min(self.pool) < 1 or min(self.stride) < 1:
            raise ConfigError(f"avg_pool sizes must be >= 1: {self}")


@dataclass(frozen=True)
class Flatten:
    kind: ClassVar[str] = "flatten"


@dataclass(frozen=True)
class Relu:
    kind: ClassVar[str] = "relu"


@dataclass(frozen=True)
class Dense:
    kind: ClassVar[str] = "dense"
    units: int

    def __post_init__(self):
        if self.units < 1:
            raise ConfigError(f"dense needs units >= 1: {self}")


LayerSpec = Conv2D | BatchNorm | Dropout | MaxPool | AvgPool | Flatten | Relu | Dense

# Parameter tensors per layer kind, trainable ones first.
_TRAINABLE = {"conv2d": ("kernel", "bias"), "dense": ("weights", "bias"),
              "batch_norm": ("gamma", "beta")}
_NON_TRAINABLE = {"batch_norm": ("moving_mean", "moving_var")}


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]

    def canonical_json(self) -> str:
        """Stable serialization used for checkpoint digests."""
        desc = {
            "input_shape": list(self.input_shape),
            "layers": [
                {"kind": lay.kind, **{k: list(v) if isinstance(v, tuple) else v
                                      for k, v in vars(lay).items()}}
                for lay in self.layers
            ],
        }
        return json.dumps(desc, sort_keys=True, separators=(",", ":"))


def infer_shapes(net: NetworkSpec) -> list[tuple[int, ...]]:
    """Per-layer output shapes (batch dimension omitted).

    Spatial extents follow valid padding: floor((in - window) / stride) + 1.
    """
    shape = tuple(net.input_shape)
    out = []
    for i, lay in enumerate(net.layers):
        if isinstance(lay, (Conv2D, MaxPool, AvgPool)):
            if len(shape) != 3:
                raise ShapeError(f"layer {i} ({lay.kind}) needs a (H, W, C) input, got {shape}")
            h, w, c = shape
            wh, ww = lay.kernel if isinstance(lay, Conv2D) else lay.pool
            if h < wh or w < ww:
                raise ShapeError(
                    f"layer {i} ({lay.kind}): window {wh}x{ww} exceeds input {h}x{w}"
                )
            sh, sw = lay.stride
            oh, ow = (h - wh) // sh + 1, (w - ww) // sw + 1
            shape = (oh, ow, lay.filters if isinstance(lay, Conv2D) else c)
        elif isinstance(lay, BatchNorm):
            if lay.channels != shape[-1]:
                raise ShapeError(
                    f"layer {i} (batch_norm): {lay.channels} channels vs input {shape}"
                )
        elif isinstance(lay, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(lay, Dense):
            if len(shape) != 1:
                raise ShapeError(f"layer {i} (dense) needs a flat input, got {shape}")
            shape = (lay.units,)
        # dropout and relu keep the shape
        out.append(shape)
    return out


def layer_param_counts(net: NetworkSpec) -> list[int]:
    """Parameter tensor sizes per layer (trainable plus non-trainable)."""
    counts = []
    shape = tuple(net.input_shape)
    for lay, out_shape in zip(net.layers, infer_shapes(net)):
        if isinstance(lay, Conv2D):
            kh, kw = lay.kernel
            counts.append(lay.filters * (kh * kw * shape[-1] + 1))
        elif isinstance(lay, Dense):
            counts.append(shape[0] * lay.units + lay.units)
        elif isinstance(lay, BatchNorm):
            counts.append(4 * lay.channels)
        else:
            counts.append(0)
        shape = out_shape
    return counts


def count_params(net: NetworkSpec) -> tuple[int, int, int]:
    """(total, trainable, non_trainable) parameter counts."""
    total = sum(layer_param_counts(net))
    non_trainable = sum(2 * lay.channels for lay in net.layers if isinstance(lay, BatchNorm))
    return total, total - non_trainable, non_trainable


def summarize(net: NetworkSpec) -> list[tuple[str, tuple[int, ...], int]]:
    """(kind, output_shape, param_count) rows, one per layer."""
    return list(zip([lay.kind for lay in net.layers], infer_shapes(net),
                    layer_param_counts(net)))


def reference_network(dropout_rates: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.5),
                      ) -> NetworkSpec:
    """The stock 64x64x3 architecture: 7,975,554 parameters (7,975,426 trainable)."""
    r1, r2, r3, r4 = dropout_rates
    return NetworkSpec(
        input_shape=(64, 64, 3),
        layers=(
            Conv2D(64, (3, 3), (2, 2)),
            BatchNorm(64),
            Relu(),
            Conv2D(128, (3, 3), (2, 2)),
            Relu(),
            Dropout(r1),
            Conv2D(256, (3, 3), (1, 1)),
            Relu(),
            MaxPool((2, 2), (2, 2)),
            Conv2D(1024, (3, 3), (1, 1)),
            Relu(),
            Dropout(r2),
            Conv2D(512, (3, 3), (1, 1)),
            Relu(),
            Dropout(r3),
            Flatten(),
            Dense(256),
            Relu(),
            Dropout(r4),
            Dense(2),
        ),
    )


def reduced_network(dropout_rates: tuple[float, float] = (0.1, 0.25)) -> NetworkSpec:
    """Desk-scale 32x32x3 preset with the same layer types (~160k parameters).

    Every convolution is batch-normalized with momentum 0.9 so the moving
    statistics settle within the short runs this preset is meant for.
    """
    r1, r2 = dropout_rates
    mom = 0.9
    return NetworkSpec(
        input_shape=(32, 32, 3),
        layers=(
            Conv2D(16, (3, 3), (1, 1)),
            BatchNorm(16, momentum=mom),
            Relu(),
            Conv2D(32, (3, 3), (2, 2)),
            BatchNorm(32, momentum=mom),
            Relu(),
            Dropout(r1),
            Conv2D(64, (3, 3), (1, 1)),
            BatchNorm(64, momentum=mom),
            Relu(),
            MaxPool((2, 2), (2, 2)),
            Flatten(),
            Dense(64),
            Relu(),
            Dropout(r2),
            Dense(2),
        ),
    )


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

@dataclass
class ParamState:
    """Per-layer parameter tensors plus Adam moment buffers and step count."""

    layers: list[dict[str, np.ndarray]]
    adam_m: list[dict[str, np.ndarray]]
    adam_v: list[dict[str, np.ndarray]]
    step: int = 0

    @property
    def dtype(self):
        for d in self.layers:
            for v in d.values():
                return v.dtype
        return np.dtype(np.float32)


def param_shapes(net: NetworkSpec) -> list[dict[str, tuple[int, ...]]]:
    """Expected parameter tensor shapes per layer, in checkpoint order."""
    shapes = infer_shapes(net)
    out = []
    in_shape = tuple(net.input_shape)
    for lay, out_shape in zip(net.layers, shapes):
        if isinstance(lay, Conv2D):
            kh, kw = lay.kernel
            out.append({"kernel": (kh, kw, in_shape[-1], lay.filters), "bias": (lay.filters,)})
        elif isinstance(lay, Dense):
            out.append({"weights": (in_shape[0], lay.units), "bias": (lay.units,)})
        elif isinstance(lay, BatchNorm):
            ch = (lay.channels,)
            out.append({"gamma": ch, "beta": ch, "moving_mean": ch, "moving_var": ch})
        else:
            out.append({})
        in_shape = out_shape
    return out


def init_params(net: NetworkSpec, seed: int | SeededPrng, dtype=np.float32) -> ParamState:
    """Glorot-uniform kernels/weights, zero biases, identity batch-norm."""
    rng = seed if isinstance(seed, SeededPrng) else SeededPrng(int(seed))
    shapes = infer_shapes(net)
    in_shape = tuple(net.input_shape)
    layers, adam_m, adam_v = [], [], []
    for lay, out_shape in zip(net.layers, shapes):
        p: dict[str, np.ndarray] = {}
        if isinstance(lay, Conv2D):
            kh, kw = lay.kernel
            fan_in, fan_out = kh * kw * in_shape[-1], kh * kw * lay.filters
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            p["kernel"] = ((rng.uniform((kh, kw, in_shape[-1], lay.filters)) * 2 - 1) * limit).astype(dtype)
            p["bias"] = np.zeros(lay.filters, dtype=dtype)
        elif isinstance(lay, Dense):
            fan_in, fan_out = in_shape[0], lay.units
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            p["weights"] = ((rng.uniform((fan_in, lay.units)) * 2 - 1) * limit).astype(dtype)
            p["bias"] = np.zeros(lay.units, dtype=dtype)
        elif isinstance(lay, BatchNorm):
            p["gamma"] = np.ones(lay.channels, dtype=dtype)
            p["beta"] = np.zeros(lay.channels, dtype=dtype)
            p["moving_mean"] = np.zeros(lay.channels, dtype=dtype)
            p["moving_var"] = np.ones(lay.channels, dtype=dtype)
        layers.append(p)
        trainable = _TRAINABLE.get(lay.kind, ())
        adam_m.append({k: np.zeros_like(p[k]) for k in trainable})
        adam_v.append({k: np.zeros_like(p[k]) for k in trainable})
        in_shape = out_shape
    return ParamState(layers, adam_m, adam_v)


# --------------------------------------------------------------------------
# Layer forward/backward primitives
# --------------------------------------------------------------------------

def _im2col(x: np.ndarray, wh: int, ww: int, sh: int, sw: int) -> np.ndarray:
    """Extract strided windows: (N, OH, OW, wh, ww, C)."""
    win = sliding_window_view(x, (wh, ww), axis=(1, 2))  # N, H', W', C, wh, ww
    win = win[:, ::sh, ::sw]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                   stride: tuple[int, int]):
    """Valid cross-correlation of (N,H,W,C) with kernel (kh,kw,C,F) plus bias."""
    n, h, w, c = x.shape
    kh, kw, kc, f = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {kc}")
    if h < kh or w < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} exceeds input {h}x{w}")
    sh, sw = stride
    cols = _im2col(x, kh, kw, sh, sw)
    oh, ow = cols.shape[1], cols.shape[2]
    flat = cols.reshape(n * oh * ow, kh * kw * c)
    y = flat @ kernel.reshape(kh * kw * c, f) + bias
    cache = (x.shape, flat, kernel, stride, (oh, ow))
    return y.reshape(n, oh, ow, f), cache


def conv2d_backward(dy: np.ndarray, cache):
    """Exact gradients: (dx, dkernel, dbias)."""
    x_shape, flat, kernel, (sh, sw), (oh, ow) = cache
    n, h, w, c = x_shape
    kh, kw, _, f = kernel.shape
    dy_flat = dy.reshape(n * oh * ow, f)
    dkernel = (flat.T @ dy_flat).reshape(kernel.shape)
    dbias = dy_flat.sum(axis=0)
    dcols = (dy_flat @ kernel.reshape(kh * kw * c, f).T).reshape(n, oh, ow, kh, kw, c)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, i : i + sh * oh : sh, j : j + sw * ow : sw, :] += dcols[:, :, :, i, j, :]
    return dx, dkernel, dbias


def _bn_axes(x: np.ndarray) -> tuple[int, ...]:
    return (0, 1, 2) if x.ndim == 4 else (0,)


def batch_norm_forward_train(x, gamma, beta, moving_mean, moving_var, epsilon, momentum):
    """Normalize by batch statistics; returns (y, cache, (new_mean, new_var)).

    Moving statistics are returned, not written: moving <- momentum * moving
    + (1 - momentum) * batch, with the biased batch variance.
    """
    if x.shape[0] < 2:
        raise ConfigError(f"batch_norm train mode needs batch size >= 2, got {x.shape[0]}")
    axes = _bn_axes(x)
    mu = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv = 1.0 / np.sqrt(var + np.asarray(epsilon, dtype=x.dtype))
    xhat = (x - mu) * inv
    y = gamma * xhat + beta
    mom = np.asarray(momentum, dtype=x.dtype)
    new_mean = mom * moving_mean + (1 - mom) * mu.astype(moving_mean.dtype)
    new_var = mom * moving_var + (1 - mom) * var.astype(moving_var.dtype)
    cache = (xhat, inv, gamma, axes)
    return y, cache, (new_mean, new_var)


def batch_norm_forward_eval(x, gamma, beta, moving_mean, moving_var, epsilon):
    inv = 1.0 / np.sqrt(moving_var + np.asarray(epsilon, dtype=x.dtype))
    return gamma * (x - moving_mean) * inv + beta


def batch_norm_backward(dy, cache):
    """Standard batch-norm gradient through the batch statistics."""
    xhat, inv, gamma, axes = cache
    m = np.prod([xhat.shape[a] for a in axes])
    dgamma = np.sum(dy * xhat, axis=axes)
    dbeta = np.sum(dy, axis=axes)
    dxhat = dy * gamma
    dx = (inv / m) * (
        m * dxhat
        - np.sum(dxhat, axis=axes, keepdims=True)
        - xhat * np.sum(dxhat * xhat, axis=axes, keepdims=True)
    )
    return dx.astype(dy.dtype, copy=False), dgamma, dbeta


def dropout_forward(x, rate: float, mode: str, rng: SeededPrng | None):
    """Inverted dropout: survivors scaled by 1/(1-rate); identity in eval mode."""
    if mode == "eval" or rate == 0.0:
        return x, np.ones(x.shape, dtype=bool)
    if rng is None:
        raise ConfigError("train-mode dropout needs a SeededPrng")
    mask = rng.uniform(x.shape) >= rate
    y = x * (mask.astype(x.dtype) / np.asarray(1.0 - rate, dtype=x.dtype))
    return y, mask


def dropout_backward(dy, mask, rate: float):
    return dy * (mask.astype(dy.dtype) / np.asarray(1.0 - rate, dtype=dy.dtype))


def max_pool_forward(x, pool: tuple[int, int], stride: tuple[int, int]):
    """Per-window maximum; ties keep the first position in row-major order."""
    n, h, w, c = x.shape
    ph, pw = pool
    if h < ph or w < pw:
        raise ShapeError(f"max_pool: window {ph}x{pw} exceeds input {h}x{w}")
    win = _im2col(x, ph, pw, *stride)  # N, OH, OW, ph, pw, C
    n, oh, ow = win.shape[:3]
    flat = win.transpose(0, 1, 2, 5, 3, 4).reshape(n, oh, ow, c, ph * pw)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return y, (x.shape, arg, pool, stride)


def max_pool_backward(dy, cache):
    """Routes each upstream gradient to its window's argmax position."""
    x_shape, arg, (ph, pw), (sh, sw) = cache
    n, oh, ow, c = dy.shape
    rows = (np.arange(oh) * sh)[None, :, None, None] + arg // pw
    cols = (np.arange(ow) * sw)[None, None, :, None] + arg % pw
    ns = np.arange(n)[:, None, None, None]
    cs = np.arange(c)[None, None, None, :]
    dx = np.zeros(x_shape, dtype=dy.dtype)
    np.add.at(dx, (ns, rows, cols, cs), dy)
    return dx


def avg_pool_forward(x, pool: tuple[int, int], stride: tuple[int, int]):
    n, h, w, c = x.shape
    ph, pw = pool
    if h < ph or w < pw:
        raise ShapeError(f"avg_pool: window {ph}x{pw} exceeds input {h}x{w}")
    win = _im2col(x, ph, pw, *stride)
    y = win.mean(axis=(3, 4))
    return y, (x.shape, pool, stride)


def avg_pool_backward(dy, cache):
    x_shape, (ph, pw), (sh, sw) = cache
    n, oh, ow, c = dy.shape
    share = dy / np.asarray(ph * pw, dtype=dy.dtype)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    for i in range(ph):
        for j in range(pw):
            dx[:, i : i + sh * oh : sh, j : j + sw * ow : sw, :] += share
    return dx


def dense_forward(x, weights, bias):
    if x.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weights {weights.shape}")
    return x @ weights + bias, (x, weights)


def dense_backward(dy, cache):
    x, weights = cache
    return dy @ weights.T, x.T @ dy, dy.sum(axis=0)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Row-wise stable softmax + mean NLL; returns (loss, probabilities, dlogits).

    Probabilities are clamped to >= 1e-7 inside the log only; the gradient is
    (probabilities - one_hot) / N.
    """
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-7))))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, probs, (grad / n).astype(logits.dtype, copy=False)


def adam_step(params: ParamState, grads: list[dict[str, np.ndarray]],
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-7) -> ParamState:
    """One bias-corrected Adam update over every trainable tensor, in place.

    Batch-norm moving statistics are not trainable and are never touched.
    """
    params.step += 1
    t = params.step
    for p, m, v, g in zip(params.layers, params.adam_m, params.adam_v, grads):
        for key, grad in g.items():
            if grad.shape != p[key].shape:
                raise ShapeError(f"adam_step: grad {grad.shape} vs param {p[key].shape} for {key!r}")
            dt = p[key].dtype
            b1, b2 = np.asarray(beta1, dt), np.asarray(beta2, dt)
            m[key] = b1 * m[key] + (1 - b1) * grad
            v[key] = b2 * v[key] + (1 - b2) * grad * grad
            m_hat = m[key] / np.asarray(1.0 - beta1**t, dt)
            v_hat = v[key] / np.asarray(1.0 - beta2**t, dt)
            p[key] -= np.asarray(lr, dt) * m_hat / (np.sqrt(v_hat) + np.asarray(eps, dt))
    return params


# --------------------------------------------------------------------------
# Whole-network forward/backward and training
# --------------------------------------------------------------------------

@dataclass
class ForwardCache:
    """Everything backward needs, one entry per layer, plus pending BN updates."""

    layers: list
    bn_updates: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)
    masks: dict[int, np.ndarray] = field(default_factory=dict)


def network_forward(net: NetworkSpec, params: ParamState, batch: np.ndarray,
                    mode: str = "eval", rng: SeededPrng | None = None,
                    masks: dict[int, np.ndarray] | None = None):
    """Apply all layers in order; returns (logits, ForwardCache).

    mode "train" uses batch statistics and live dropout (drawing masks from
    rng unless given explicitly); mode "eval" uses moving statistics and
    identity dropout. The cache is only populated meaningfully in train mode.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    expected = tuple(net.input_shape)
    if batch.shape[1:] != expected:
        raise ShapeError(f"batch shape {batch.shape[1:]} does not match input {expected}")
    h = batch.astype(params.dtype, copy=False)
    cache = ForwardCache(layers=[None] * len(net.layers))
    for i, (lay, p) in enumerate(zip(net.layers, params.layers)):
        if isinstance(lay, Conv2D):
            h, c = conv2d_forward(h, p["kernel"], p["bias"], lay.stride)
            cache.layers[i] = c
        elif isinstance(lay, BatchNorm):
            if mode == "train":
                h, c, upd = batch_norm_forward_train(
                    h, p["gamma"], p["beta"], p["moving_mean"], p["moving_var"],
                    lay.epsilon, lay.momentum)
                cache.layers[i] = c
                cache.bn_updates.append((i, *upd))
            else:
                h = batch_norm_forward_eval(
                    h, p["gamma"], p["beta"], p["moving_mean"], p["moving_var"], lay.epsilon)
        elif isinstance(lay, Dropout):
            if mode == "train" and lay.rate > 0.0:
                if masks is not None and i in masks:
                    mask = masks[i]
                    h = h * (mask.astype(h.dtype) / np.asarray(1.0 - lay.rate, dtype=h.dtype))
                else:
                    h, mask = dropout_forward(h, lay.rate, mode, rng)
                cache.layers[i] = mask
                cache.masks[i] = mask
        elif isinstance(lay, MaxPool):
            h, c = max_pool_forward(h, lay.pool, lay.stride)
            cache.layers[i] = c
        elif isinstance(lay, AvgPool):
            h, c = avg_pool_forward(h, lay.pool, lay.stride)
            cache.layers[i] = c
        elif isinstance(lay, Flatten):
            cache.layers[i] = h.shape
            h = h.reshape(h.shape[0], -1)
        elif isinstance(lay, Relu):
            cache.layers[i] = h > 0
            h = np.maximum(h, 0)
        elif isinstance(lay, Dense):
            h, c = dense_forward(h, p["weights"], p["bias"])
            cache.layers[i] = c
        else:  # pragma: no cover
            raise ConfigError(f"unknown layer {lay!r}")
    return h, cache


def network_backward(net: NetworkSpec, params: ParamState, cache: ForwardCache,
                     dlogits: np.ndarray) -> list[dict[str, np.ndarray]]:
    """Backpropagate dlogits through a train-mode cache; returns per-layer grads."""
    grads: list[dict[str, np.ndarray]] = [{} for _ in net.layers]
    g = dlogits
    for i in reversed(range(len(net.layers))):
        lay, c = net.layers[i], cache.layers[i]
        if isinstance(lay, Conv2D):
            g, dk, db = conv2d_backward(g, c)
            grads[i] = {"kernel": dk, "bias": db}
        elif isinstance(lay, BatchNorm):
            g, dgamma, dbeta = batch_norm_backward(g, c)
            grads[i] = {"gamma": dgamma, "beta": dbeta}
        elif isinstance(lay, Dropout):
            if c is not None:
                g = dropout_backward(g, c, lay.rate)
        elif isinstance(lay, MaxPool):
            g = max_pool_backward(g, c)
        elif isinstance(lay, AvgPool):
            g = avg_pool_backward(g, c)
        elif isinstance(lay, Flatten):
            g = g.reshape(c)
        elif isinstance(lay, Relu):
            g = g * c
        elif isinstance(lay, Dense):
            g, dw, db = dense_backward(g, c)
            grads[i] = {"weights": dw, "bias": db}
    return grads


def commit_bn_updates(params: ParamState, cache: ForwardCache) -> None:
    for i, new_mean, new_var in cache.bn_updates:
        params.layers[i]["moving_mean"] = new_mean
        params.layers[i]["moving_var"] = new_var


def train_epoch(net: NetworkSpec, params: ParamState, x: np.ndarray, y: np.ndarray,
                batch_size: int, rng: SeededPrng, lr: float = 1e-3,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7):
    """One seeded-shuffle pass: forward, loss, backward, Adam per batch.

    Returns (params, mean train loss, train accuracy), both metrics
    accumulated from the train-mode forward passes.
    """
    n = x.shape[0]
    if n == 0:
        raise ConfigError("train_epoch needs a non-empty dataset")
    has_bn = any(isinstance(lay, BatchNorm) for lay in net.layers)
    if has_bn and n % batch_size == 1:
        raise ConfigError(
            f"batch_size {batch_size} leaves a trailing batch of 1 sample, "
            "which batch normalization cannot train on"
        )
    loss_sum, correct = 0.0, 0
    for idx in batch_iter(n, batch_size, shuffle=True, rng=rng):
        xb, yb = x[idx], y[idx]
        logits, cache = network_forward(net, params, xb, "train", rng)
        loss, probs, dlogits = softmax_cross_entropy(logits, yb)
        grads = network_backward(net, params, cache, dlogits)
        adam_step(params, grads, lr, beta1, beta2, eps)
        commit_bn_updates(params, cache)
        loss_sum += loss * len(idx)
        correct += int(np.sum(probs.argmax(axis=1) == yb))
    return params, loss_sum / n, correct / n


def evaluate(net: NetworkSpec, params: ParamState, x: np.ndarray, y: np.ndarray,
             batch_size: int = 64):
    """Eval-mode loss, accuracy, and predicted labels over a whole dataset."""
    n = x.shape[0]
    if n == 0:
        raise ConfigError("evaluate needs a non-empty dataset")
    loss_sum, preds = 0.0, []
    for lo in range(0, n, batch_size):
        xb, yb = x[lo : lo + batch_size], y[lo : lo + batch_size]
        logits, _ = network_forward(net, params, xb, "eval")
        loss, probs, _ = softmax_cross_entropy(logits, yb)
        loss_sum += loss * xb.shape[0]
        preds.append(probs.argmax(axis=1))
    preds = np.concatenate(preds)
    return loss_sum / n, float(np.mean(preds == y)), preds


# --------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    per_layer: dict[int, tuple[str, float]]  # layer index -> (kind/key, max rel err)
    max_rel_err: float


def _rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    if scale < 1e-8:
        return abs(a - b)
    return abs(a - b) / scale


def gradient_check(net: NetworkSpec, params: ParamState, x: np.ndarray, y: np.ndarray,
                   sample_count: int = 20, h: float = 1e-4, seed: int = 0) -> GradCheckReport:
    """Central finite differences vs analytic gradients on sampled parameters.

    Requires float64 parameters. Dropout masks are drawn once and held fixed
    for every loss evaluation, and moving-statistic updates are discarded, so
    both sides differentiate the same deterministic function (batch
    statistics are recomputed from each perturbed input as usual).
    """
    if params.dtype != np.float64:
        raise ConfigError(f"gradient_check needs float64 parameters, got {params.dtype}")
    rng = SeededPrng(seed)
    _, warmup = network_forward(net, params, x, "train", rng)
    masks = warmup.masks

    def loss_at() -> float:
        logits, _ = network_forward(net, params, x, "train", masks=masks)
        loss, _, _ = softmax_cross_entropy(logits, y)
        return loss

    logits, cache = network_forward(net, params, x, "train", masks=masks)
    _, _, dlogits = softmax_cross_entropy(logits, y)
    analytic = network_backward(net, params, cache, dlogits)

    per_layer: dict[int, tuple[str, float]] = {}
    worst = 0.0
    for i, lay in enumerate(net.layers):
        layer_worst = 0.0
        for key in _TRAINABLE.get(lay.kind, ()):
            tensor = params.layers[i][key]
            flat = tensor.reshape(-1)
            picks = rng.permutation(flat.size)[: min(sample_count, flat.size)]
            for j in picks:
                orig = flat[j]
                flat[j] = orig + h
                up = loss_at()
                flat[j] = orig - h
                down = loss_at()
                flat[j] = orig
                numeric = (up - down) / (2 * h)
                err = _rel_err(float(analytic[i][key].reshape(-1)[j]), numeric)
                layer_worst = max(layer_worst, err)
        if _TRAINABLE.get(lay.kind):
            per_layer[i] = (lay.kind, layer_worst)
            worst = max(worst, layer_worst)
    return GradCheckReport(per_layer, worst)
