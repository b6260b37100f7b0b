"""Forward/backward primitives for the fixed layer vocabulary.

Each operation comes as a functional pair: ``<op>`` returns the output plus a
cache, ``<op>_backward`` consumes the cache and the upstream gradient. The
``Layer`` classes below wrap the pairs with parameter storage so a model is
just an ordered list of layers; there is no general autodiff graph.

Convolution is cross-correlation, computed as an im2col gather followed by a
single GEMM. Output extent is ``(H + 2*pad - K) // stride + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeMismatch, Tensor, dtype_for


# ---------------------------------------------------------------------------
# functional ops
# ---------------------------------------------------------------------------

def conv_output_extent(extent: int, kernel: int, stride: int, pad: int) -> int:
    out = (extent + 2 * pad - kernel) // stride + 1
    if out <= 0:
        raise ShapeMismatch(
            f"conv/pool output extent {out} <= 0 for extent={extent} "
            f"kernel={kernel} stride={stride} pad={pad}"
        )
    return out


def _im2col(xph: Tensor, kernel: int, stride: int, oh: int, ow: int) -> Tensor:
    """Gather (N, oh, ow, K, K, C) windows from a padded NHWC input.

    Channels-last keeps every copy a run of C contiguous values, and the
    (N*oh*ow, K*K*C) GEMM view is a free reshape.
    """
    n, _, _, c = xph.shape
    cols = np.empty((n, oh, ow, kernel, kernel, c), dtype=xph.dtype)
    for kh in range(kernel):
        for kw in range(kernel):
            cols[:, :, :, kh, kw, :] = xph[
                :, kh : kh + stride * oh : stride, kw : kw + stride * ow : stride, :
            ]
    return cols


def _col2im(dcols: Tensor, padded_shape: tuple, kernel: int, stride: int) -> Tensor:
    """Scatter-add (N, oh, ow, K, K, C) window gradients back to padded NHWC."""
    dxph = np.zeros(padded_shape, dtype=dcols.dtype)
    oh, ow = dcols.shape[1], dcols.shape[2]
    for kh in range(kernel):
        for kw in range(kernel):
            dxph[:, kh : kh + stride * oh : stride, kw : kw + stride * ow : stride, :] += dcols[
                :, :, :, kh, kw, :
            ]
    return dxph


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0):
    """Cross-correlate NCHW input with OIKK weights. Returns (y, cache).

    Internally channels-last: one boundary transpose each way is far cheaper
    than strided window gathers in NCHW.
    """
    n, c, h, wd = x.shape
    o, i, k, k2 = w.shape
    if k != k2:
        raise ShapeMismatch(f"conv2d: non-square kernel {k}x{k2}")
    if c != i:
        raise ShapeMismatch(f"conv2d: input channels {c} != weight input channels {i}")
    if b.shape != (o,):
        raise ShapeMismatch(f"conv2d: bias shape {b.shape} != ({o},)")
    oh = conv_output_extent(h, k, stride, pad)
    ow = conv_output_extent(wd, k, stride, pad)
    xh = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    xph = np.pad(xh, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else xh
    # weights as (K*K*C, O) to match the gather layout
    wh = np.ascontiguousarray(w.transpose(2, 3, 1, 0)).reshape(k * k * c, o)
    if k == 1 and stride == 1:
        cols2d = xph.reshape(n * oh * ow, c)
        cols = None
    else:
        cols = _im2col(xph, k, stride, oh, ow)
        cols2d = cols.reshape(n * oh * ow, k * k * c)
    y2d = cols2d @ wh + b
    y = np.ascontiguousarray(y2d.reshape(n, oh, ow, o).transpose(0, 3, 1, 2))
    cache = (x.shape, xph.shape, cols2d, w, stride, pad, oh, ow)
    return y, cache


def conv2d_backward(dy: Tensor, cache):
    """Gradients w.r.t. input, weights, bias for :func:`conv2d`."""
    x_shape, xph_shape, cols2d, w, stride, pad, oh, ow = cache
    n, c, h, wd = x_shape
    o, _, k, _ = w.shape
    dy2d = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(n * oh * ow, o)
    db = dy2d.sum(axis=0)
    # dW in (K, K, C, O) layout, back to OIKK at the end
    dwh = cols2d.T @ dy2d
    dw = np.ascontiguousarray(dwh.reshape(k, k, c, o).transpose(3, 2, 0, 1))
    wh = np.ascontiguousarray(w.transpose(2, 3, 1, 0)).reshape(k * k * c, o)
    dcols2d = dy2d @ wh.T
    if k == 1 and stride == 1:
        dxph = dcols2d.reshape(n, oh, ow, c)
    else:
        dxph = _col2im(dcols2d.reshape(n, oh, ow, k, k, c), xph_shape, k, stride)
    dxh = dxph[:, pad : pad + h, pad : pad + wd, :] if pad else dxph
    dx = np.ascontiguousarray(dxh.transpose(0, 3, 1, 2))
    return dx, dw, db


def maxpool2d(x: Tensor, window: int, stride: int, pad: int = 0):
    """Per-window maximum plus argmax indices for the backward pass."""
    if window < 1 or stride < 1:
        raise ValueError(f"maxpool2d: window={window}, stride={stride} must be >= 1")
    n, c, h, wd = x.shape
    if window > h + 2 * pad or window > wd + 2 * pad:
        raise ShapeMismatch(f"maxpool2d: window {window} larger than padded input {h}x{wd}")
    oh = conv_output_extent(h, window, stride, pad)
    ow = conv_output_extent(wd, window, stride, pad)
    xh = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    if pad:
        xph = np.pad(xh, ((0, 0), (pad, pad), (pad, pad), (0, 0)), constant_values=-np.inf)
    else:
        xph = xh
    cols = _im2col(xph, window, stride, oh, ow).reshape(n, oh, ow, window * window, c)
    flat_idx = cols.argmax(axis=3)  # (n, oh, ow, c)
    y = np.take_along_axis(cols, flat_idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    idx = np.ascontiguousarray(flat_idx.transpose(0, 3, 1, 2))
    cache = (x.shape, xph.shape, flat_idx, window, stride, pad, oh, ow)
    return y, idx, cache


def maxpool2d_backward(dy: Tensor, cache):
    x_shape, xph_shape, flat_idx, window, stride, pad, oh, ow = cache
    n, c, h, wd = x_shape
    dxph = np.zeros(xph_shape, dtype=dy.dtype)
    ni, ohi, owi, ci = np.ix_(np.arange(n), np.arange(oh), np.arange(ow), np.arange(c))
    hi = ohi * stride + flat_idx // window
    wi = owi * stride + flat_idx % window
    np.add.at(dxph, (ni, hi, wi, ci), dy.transpose(0, 2, 3, 1))
    dxh = dxph[:, pad : pad + h, pad : pad + wd, :] if pad else dxph
    return np.ascontiguousarray(dxh.transpose(0, 3, 1, 2))


def relu(x: Tensor):
    return np.maximum(x, 0), x


def relu_backward(dy: Tensor, cache) -> Tensor:
    # subgradient at exactly 0 is defined as 0
    return dy * (cache > 0)


def dense(x: Tensor, w: Tensor, b: Tensor):
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"dense: input {x.shape} incompatible with weights {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeMismatch(f"dense: bias shape {b.shape} != ({w.shape[1]},)")
    return x @ w + b, (x, w)


def dense_backward(dy: Tensor, cache):
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float,
    mode: str,
    running_mean: Tensor,
    running_var: Tensor,
    momentum: float = 0.1,
):
    """Channel-wise batch normalization over NCHW.

    Train mode normalizes by batch statistics and updates the running
    exponential moving averages in place; eval mode uses the running stats.
    """
    if eps <= 0:
        raise ValueError(f"batchnorm2d: epsilon must be positive, got {eps}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"batchnorm2d: gamma/beta must have length {c}")
    if mode == "train":
        if n < 2:
            raise ValueError("batchnorm2d: train mode requires batch size >= 2")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    elif mode == "eval":
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"batchnorm2d: unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None, None]) * inv_std[:, None, None]
    y = gamma[:, None, None] * xhat + beta[:, None, None]
    cache = (xhat, gamma, inv_std, mode)
    return y, cache


def batchnorm2d_backward(dy: Tensor, cache):
    """Full batch-statistics chain rule (train) or affine-only rule (eval)."""
    xhat, gamma, inv_std, mode = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma[:, None, None]
    if mode == "eval":
        return dxhat * inv_std[:, None, None], dgamma, dbeta
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    sum_dxhat = dxhat.sum(axis=(0, 2, 3))
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))
    dx = (inv_std[:, None, None] / m) * (
        m * dxhat - sum_dxhat[:, None, None] - xhat * sum_dxhat_xhat[:, None, None]
    )
    return dx, dgamma, dbeta


def global_avg_pool(x: Tensor):
    n, c, h, w = x.shape
    return x.mean(axis=(2, 3)), (n, c, h, w)


def global_avg_pool_backward(dy: Tensor, cache) -> Tensor:
    n, c, h, w = cache
    return np.broadcast_to(dy[:, :, None, None] / (h * w), (n, c, h, w)).astype(dy.dtype).copy()


def flatten(x: Tensor):
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(dy: Tensor, cache) -> Tensor:
    return dy.reshape(cache)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray):
    """Mean cross-entropy with max-subtracted softmax. Returns (loss, probs)."""
    n, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), labels].mean())
    return loss, probs


def softmax_cross_entropy_backward(probs: Tensor, labels: np.ndarray) -> Tensor:
    n = probs.shape[0]
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    return dlogits / n


# ---------------------------------------------------------------------------
# layer specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Conv2dSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    kind: str = field(default="conv2d", init=False)

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.pad < 0:
            raise ValueError(f"invalid conv2d geometry: {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"invalid conv2d channels: {self}")


@dataclass(frozen=True)
class MaxPool2dSpec:
    window: int
    stride: int
    pad: int = 0
    kind: str = field(default="maxpool2d", init=False)

    def __post_init__(self):
        if self.window < 1 or self.stride < 1 or self.pad < 0:
            raise ValueError(f"invalid maxpool2d geometry: {self}")


@dataclass(frozen=True)
class ReluSpec:
    kind: str = field(default="relu", init=False)


@dataclass(frozen=True)
class DenseSpec:
    in_features: int
    out_features: int
    kind: str = field(default="dense", init=False)

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ValueError(f"invalid dense extents: {self}")


@dataclass(frozen=True)
class BatchNorm2dSpec:
    channels: int
    eps: float = 1e-5
    momentum: float = 0.1
    kind: str = field(default="batchnorm2d", init=False)

    def __post_init__(self):
        if self.channels < 1 or self.eps <= 0:
            raise ValueError(f"invalid batchnorm2d spec: {self}")


@dataclass(frozen=True)
class GlobalAvgPoolSpec:
    kind: str = field(default="global_avg_pool", init=False)


@dataclass(frozen=True)
class FlattenSpec:
    kind: str = field(default="flatten", init=False)


LayerSpec = (
    Conv2dSpec
    | MaxPool2dSpec
    | ReluSpec
    | DenseSpec
    | BatchNorm2dSpec
    | GlobalAvgPoolSpec
    | FlattenSpec
)


# ---------------------------------------------------------------------------
# layer objects
# ---------------------------------------------------------------------------

class Layer:
    """A spec bound to parameters plus the forward/backward cache."""

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        self.grads: dict[str, Tensor] = {}
        self.state: dict[str, Tensor] = {}  # non-trained buffers (running stats)
        self._cache = None

    def init_params(self, rng: np.random.Generator, dtype: np.dtype) -> None:
        pass

    def forward(self, x: Tensor, train: bool) -> Tensor:
        raise NotImplementedError

    def backward(self, dy: Tensor) -> Tensor:
        raise NotImplementedError

    def astype(self, dtype: np.dtype) -> None:
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.state = {k: v.astype(dtype) for k, v in self.state.items()}


def _fan_in_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    def init_params(self, rng, dtype):
        s = self.spec
        fan_in = s.in_channels * s.kernel * s.kernel
        self.params["w"] = _fan_in_uniform(
            rng, (s.out_channels, s.in_channels, s.kernel, s.kernel), fan_in, dtype
        )
        self.params["b"] = _fan_in_uniform(rng, (s.out_channels,), fan_in, dtype)

    def forward(self, x, train):
        y, self._cache = conv2d(x, self.params["w"], self.params["b"], self.spec.stride, self.spec.pad)
        return y

    def backward(self, dy):
        dx, dw, db = conv2d_backward(dy, self._cache)
        self.grads["w"], self.grads["b"] = dw, db
        return dx


class MaxPool2d(Layer):
    def forward(self, x, train):
        y, _, self._cache = maxpool2d(x, self.spec.window, self.spec.stride, self.spec.pad)
        return y

    def backward(self, dy):
        return maxpool2d_backward(dy, self._cache)


class Relu(Layer):
    def forward(self, x, train):
        y, self._cache = relu(x)
        return y

    def backward(self, dy):
        return relu_backward(dy, self._cache)


class Dense(Layer):
    def init_params(self, rng, dtype):
        s = self.spec
        self.params["w"] = _fan_in_uniform(rng, (s.in_features, s.out_features), s.in_features, dtype)
        self.params["b"] = _fan_in_uniform(rng, (s.out_features,), s.in_features, dtype)

    def forward(self, x, train):
        y, self._cache = dense(x, self.params["w"], self.params["b"])
        return y

    def backward(self, dy):
        dx, dw, db = dense_backward(dy, self._cache)
        self.grads["w"], self.grads["b"] = dw, db
        return dx


class BatchNorm2d(Layer):
    def init_params(self, rng, dtype):
        c = self.spec.channels
        self.params["gamma"] = np.ones(c, dtype=dtype)
        self.params["beta"] = np.zeros(c, dtype=dtype)
        self.state["running_mean"] = np.zeros(c, dtype=dtype)
        self.state["running_var"] = np.ones(c, dtype=dtype)

    def forward(self, x, train):
        y, self._cache = batchnorm2d(
            x,
            self.params["gamma"],
            self.params["beta"],
            self.spec.eps,
            "train" if train else "eval",
            self.state["running_mean"],
            self.state["running_var"],
            self.spec.momentum,
        )
        return y

    def backward(self, dy):
        dx, dgamma, dbeta = batchnorm2d_backward(dy, self._cache)
        self.grads["gamma"], self.grads["beta"] = dgamma, dbeta
        return dx


class GlobalAvgPool(Layer):
    def forward(self, x, train):
        y, self._cache = global_avg_pool(x)
        return y

    def backward(self, dy):
        return global_avg_pool_backward(dy, self._cache)


class Flatten(Layer):
    def forward(self, x, train):
        y, self._cache = flatten(x)
        return y

    def backward(self, dy):
        return flatten_backward(dy, self._cache)


_LAYER_CLASSES = {
    "conv2d": Conv2d,
    "maxpool2d": MaxPool2d,
    "relu": Relu,
    "dense": Dense,
    "batchnorm2d": BatchNorm2d,
    "global_avg_pool": GlobalAvgPool,
    "flatten": Flatten,
}


def build_layer(spec: LayerSpec, rng: np.random.Generator, precision: str = "float32") -> Layer:
    layer = _LAYER_CLASSES[spec.kind](spec)
    layer.init_params(rng, dtype_for(precision))
    return layer


def validate_stack(specs: list, in_channels: int) -> int:
    """Check that channel counts chain consistently; returns the output width.

    Tracks channels through conv/batchnorm/pool stages and feature widths
    through dense layers after a flatten or global pool. Spatial extents are
    validated at forward time, where the input extent is known.
    """
    channels = in_channels
    flat: int | None = None
    for spec in specs:
        if spec.kind == "conv2d":
            if flat is not None:
                raise ShapeMismatch("conv2d after flatten/dense in stack")
            if spec.in_channels != channels:
                raise ShapeMismatch(
                    f"conv2d expects {spec.in_channels} channels, stack provides {channels}"
                )
            channels = spec.out_channels
        elif spec.kind == "batchnorm2d":
            if spec.channels != channels:
                raise ShapeMismatch(
                    f"batchnorm2d expects {spec.channels} channels, stack provides {channels}"
                )
        elif spec.kind in ("global_avg_pool", "flatten"):
            flat = channels  # dense width checked only when extents are known
        elif spec.kind == "dense":
            if flat is None:
                flat = spec.in_features
            channels = flat = spec.out_features
    return channels
