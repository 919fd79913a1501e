"""Differentiable layer primitives with masked direct convolution.

Tensors are plain numpy arrays in row-major layout; a convolutional
activation is ``[maps, H, W]`` or ``[batch, maps, H, W]``. Every layer
checks its output for NaN/Inf and raises :class:`NumericError` on the
first non-finite value.

The convolution is a direct (no im2col across maps, no FFT) loop compiled
with numba. Connections whose connectivity flag is 0 are skipped outright:
they never enter the accumulation and never touch the MAC counter. The
per-output-pixel accumulation order is fixed (bias, then active input maps
in ascending order, then kernel rows/cols), which makes a masked layer
bit-identical to a dense layer whose kernels are zero at the masked
positions, and a thinned network bit-identical to its overlay-masked
original.
"""

from dataclasses import dataclass, field

import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np
from numba import njit, prange

from .errors import NumericError, ShapeError

_ARITHMETIC = {"float32": np.float32, "float64": np.float64}
_mode = "float64"


def set_arithmetic_mode(mode):
    """Set the global arithmetic mode ("float32" or "float64")."""
    global _mode
    if mode not in _ARITHMETIC:
        raise ValueError(f"unknown arithmetic mode {mode!r}")
    _mode = mode


def get_arithmetic_mode():
    return _mode


def get_dtype(mode=None):
    return _ARITHMETIC[mode or _mode]


def ensure_finite(arr, context):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {context}")


class MacCounter:
    """Accumulates multiply-accumulate counts of executed convolutions.

    One active convolution connection costs ``H' * W' * k * k`` MACs per
    sample; skipped connections contribute nothing.
    """

    def __init__(self):
        self.total = 0

    def add(self, n):
        self.total += int(n)

    def reset(self):
        self.total = 0


MACS = MacCounter()


# ---------------------------------------------------------------------------
# compiled kernels
#
# All kernels parallelize over whole output elements (one (batch, map) plane
# per task), so each output value is produced by exactly one thread with a
# fixed accumulation order: results are bitwise independent of thread count.
# Inputs arrive physically zero-padded; padded terms multiply to exact zeros
# and leave the accumulation unchanged, so no bounds checks are needed in the
# stride-1 fast path.
# ---------------------------------------------------------------------------


@njit(parallel=True, cache=True)
def _conv_fwd_s1(xpad, kernels, biases, act, act_off, out):
    B, Co = out.shape[0], out.shape[1]
    Ho, Wo = out.shape[2], out.shape[3]
    k = kernels.shape[2]
    for bo in prange(B * Co):
        b = bo // Co
        o = bo - b * Co
        plane = np.empty((Ho, Wo), dtype=xpad.dtype)
        bias = biases[o]
        for oy in range(Ho):
            for ox in range(Wo):
                plane[oy, ox] = bias
        for idx in range(act_off[o], act_off[o + 1]):
            i = act[idx]
            xi = xpad[b, i]
            ko = kernels[o, i]
            for oy in range(Ho):
                orow = plane[oy]
                for ky in range(k):
                    xrow = xi[oy + ky]
                    for kx in range(k):
                        w = ko[ky, kx]
                        for ox in range(Wo):
                            orow[ox] += xrow[ox + kx] * w
        out[b, o] = plane


@njit(parallel=True, cache=True)
def _conv_fwd_gen(xpad, kernels, biases, act, act_off, stride, out):
    B, Co = out.shape[0], out.shape[1]
    Ho, Wo = out.shape[2], out.shape[3]
    k = kernels.shape[2]
    for bo in prange(B * Co):
        b = bo // Co
        o = bo - b * Co
        plane = np.empty((Ho, Wo), dtype=xpad.dtype)
        bias = biases[o]
        for oy in range(Ho):
            for ox in range(Wo):
                plane[oy, ox] = bias
        for idx in range(act_off[o], act_off[o + 1]):
            i = act[idx]
            xi = xpad[b, i]
            ko = kernels[o, i]
            for oy in range(Ho):
                orow = plane[oy]
                for ky in range(k):
                    xrow = xi[oy * stride + ky]
                    for kx in range(k):
                        w = ko[ky, kx]
                        for ox in range(Wo):
                            orow[ox] += xrow[ox * stride + kx] * w
        out[b, o] = plane


@njit(parallel=True, cache=True)
def _conv_bwd_input_s1(g, kernels, inact, inact_off, gxpad):
    B, Co, Ho, Wo = g.shape
    Ci = gxpad.shape[1]
    Hp, Wp = gxpad.shape[2], gxpad.shape[3]
    k = kernels.shape[2]
    for bi in prange(B * Ci):
        b = bi // Ci
        i = bi - b * Ci
        plane = np.zeros((Hp, Wp), dtype=g.dtype)
        for idx in range(inact_off[i], inact_off[i + 1]):
            o = inact[idx]
            go = g[b, o]
            ko = kernels[o, i]
            for oy in range(Ho):
                grow = go[oy]
                for ky in range(k):
                    prow = plane[oy + ky]
                    for kx in range(k):
                        w = ko[ky, kx]
                        for ox in range(Wo):
                            prow[ox + kx] += grow[ox] * w
        gxpad[b, i] = plane


@njit(parallel=True, cache=True)
def _conv_bwd_input_gen(g, kernels, inact, inact_off, stride, gxpad):
    B, Co, Ho, Wo = g.shape
    Ci = gxpad.shape[1]
    Hp, Wp = gxpad.shape[2], gxpad.shape[3]
    k = kernels.shape[2]
    for bi in prange(B * Ci):
        b = bi // Ci
        i = bi - b * Ci
        plane = np.zeros((Hp, Wp), dtype=g.dtype)
        for idx in range(inact_off[i], inact_off[i + 1]):
            o = inact[idx]
            go = g[b, o]
            ko = kernels[o, i]
            for oy in range(Ho):
                grow = go[oy]
                for ky in range(k):
                    prow = plane[oy * stride + ky]
                    for kx in range(k):
                        w = ko[ky, kx]
                        for ox in range(Wo):
                            prow[ox * stride + kx] += grow[ox] * w
        gxpad[b, i] = plane


@njit(parallel=True, cache=True)
def _dense_fwd(x, weights, biases, out):
    # Sequential accumulation over input features: rows of `weights` that
    # are exactly zero drop out of the sum without changing any bit of it.
    B, K = x.shape
    J = weights.shape[1]
    for b in prange(B):
        orow = out[b]
        for j in range(J):
            orow[j] = biases[j]
        xb = x[b]
        for k in range(K):
            xv = xb[k]
            wrow = weights[k]
            for j in range(J):
                orow[j] += xv * wrow[j]


# ---------------------------------------------------------------------------
# layer parameter containers
# ---------------------------------------------------------------------------


@dataclass
class ConvLayer:
    """2-D convolution with per-connection connectivity flags.

    ``kernels`` is ``[out_maps, in_maps, k, k]``, ``connectivity`` is a
    ``[out_maps, in_maps]`` 0/1 matrix. A cleared flag means the kernel is
    all zeros and the connection is skipped during compute.
    """

    kernels: np.ndarray
    biases: np.ndarray
    connectivity: np.ndarray
    stride: int = 1
    pad: int = 0

    @property
    def out_maps(self):
        return self.kernels.shape[0]

    @property
    def in_maps(self):
        return self.kernels.shape[1]

    @property
    def k(self):
        return self.kernels.shape[2]

    def validate(self):
        if self.kernels.ndim != 4 or self.kernels.shape[2] != self.kernels.shape[3]:
            raise ShapeError(f"kernels must be [out, in, k, k], got {self.kernels.shape}")
        if self.out_maps < 1 or self.in_maps < 1 or self.k < 1:
            raise ShapeError("conv layer needs at least one map and k >= 1")
        if self.biases.shape != (self.out_maps,):
            raise ShapeError("biases must have one entry per output map")
        if self.connectivity.shape != (self.out_maps, self.in_maps):
            raise ShapeError("connectivity must be [out_maps, in_maps]")
        dead = self.connectivity == 0
        if dead.any() and np.abs(self.kernels[dead]).max() != 0.0:
            raise ShapeError("masked connections must have all-zero kernels")

    def active_connections(self):
        return int(self.connectivity.sum())

    def out_size(self, h, w):
        ho = (h + 2 * self.pad - self.k) // self.stride + 1
        wo = (w + 2 * self.pad - self.k) // self.stride + 1
        return ho, wo


@dataclass
class BatchNormParams:
    """Per-map affine batch normalization state."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5

    def validate(self, maps):
        for name in ("gamma", "beta", "running_mean", "running_var"):
            v = getattr(self, name)
            if v.shape != (maps,):
                raise ShapeError(f"batchnorm {name} must have length {maps}")
        if (self.running_var < 0).any():
            raise ShapeError("running variance must be non-negative")
        if not 0.0 < self.momentum < 1.0:
            raise ShapeError("momentum must lie in (0, 1)")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _adjacency(connectivity, axis):
    """Flattened active-index lists per row (axis=1) or per column (axis=0)."""
    conn = connectivity.astype(bool)
    if axis == 0:
        conn = conn.T
    counts = conn.sum(axis=1)
    off = np.zeros(len(counts) + 1, dtype=np.int64)
    off[1:] = np.cumsum(counts)
    idx = np.nonzero(conn)[1].astype(np.int64)
    return idx, off


def _pad_input(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _as_batch(x, maps, what):
    if x.ndim == 3:
        batch = x[None]
        single = True
    elif x.ndim == 4:
        batch = x
        single = False
    else:
        raise ShapeError(f"{what} must be [maps, H, W] or [batch, maps, H, W]")
    if batch.shape[1] != maps:
        raise ShapeError(f"{what} has {batch.shape[1]} maps, layer expects {maps}")
    return batch, single


def conv_forward(x, layer, counter=MACS):
    """Masked 2-D correlation: ``out[o] = bias[o] + sum over active (o,i)``.

    Output spatial size is ``floor((H + 2*pad - k) / stride) + 1``. Only
    active connections are computed and counted.
    """
    xb, single = _as_batch(x, layer.in_maps, "conv input")
    ensure_finite(xb, "conv input")
    B, _, H, W = xb.shape
    if H + 2 * layer.pad < layer.k or W + 2 * layer.pad < layer.k:
        raise ShapeError(
            f"input {H}x{W} too small for k={layer.k} pad={layer.pad}"
        )
    ho, wo = layer.out_size(H, W)
    xpad = np.ascontiguousarray(_pad_input(xb, layer.pad))
    act, act_off = _adjacency(layer.connectivity, axis=1)
    out = np.empty((B, layer.out_maps, ho, wo), dtype=xb.dtype)
    kernels = np.ascontiguousarray(layer.kernels)
    biases = np.ascontiguousarray(layer.biases)
    if layer.stride == 1:
        _conv_fwd_s1(xpad, kernels, biases, act, act_off, out)
    else:
        _conv_fwd_gen(xpad, kernels, biases, act, act_off, layer.stride, out)
    if counter is not None:
        counter.add(B * layer.active_connections() * ho * wo * layer.k * layer.k)
    ensure_finite(out, "conv output")
    return out[0] if single else out


def conv_backward(x, layer, grad_out):
    """Gradients of the masked forward map.

    Masked connections receive exactly zero kernel gradient, so pruned
    weights can never move during retraining.
    """
    xb, single = _as_batch(x, layer.in_maps, "conv input")
    gb, gsingle = _as_batch(grad_out, layer.out_maps, "conv grad_out")
    if single != gsingle or xb.shape[0] != gb.shape[0]:
        raise ShapeError("conv grad_out batch does not match input batch")
    B, _, H, W = xb.shape
    ho, wo = layer.out_size(H, W)
    if gb.shape[2:] != (ho, wo):
        raise ShapeError(f"conv grad_out spatial {gb.shape[2:]} != {(ho, wo)}")
    ensure_finite(gb, "conv grad_out")
    k, s, p = layer.k, layer.stride, layer.pad
    xpad = np.ascontiguousarray(_pad_input(xb, p))
    kernels = np.ascontiguousarray(layer.kernels)
    gb = np.ascontiguousarray(gb)

    grad_biases = gb.sum(axis=(0, 2, 3))

    # dL/dkernel over all (o, i) via one small matmul per input map, then
    # masked entries are forced back to exact zeros.
    win = np.lib.stride_tricks.sliding_window_view(xpad, (k, k), axis=(2, 3))
    win = win[:, :, ::s, ::s]
    gmat = gb.transpose(0, 2, 3, 1).reshape(B * ho * wo, layer.out_maps)
    grad_kernels = np.empty_like(kernels)
    for i in range(layer.in_maps):
        cols = np.ascontiguousarray(win[:, i]).reshape(B * ho * wo, k * k)
        grad_kernels[:, i] = (cols.T @ gmat).T.reshape(layer.out_maps, k, k)
    grad_kernels[layer.connectivity == 0] = 0.0

    gxpad = np.empty_like(xpad)
    inact, inact_off = _adjacency(layer.connectivity, axis=0)
    if s == 1:
        _conv_bwd_input_s1(gb, kernels, inact, inact_off, gxpad)
    else:
        _conv_bwd_input_gen(gb, kernels, inact, inact_off, s, gxpad)
    grad_x = gxpad[:, :, p : p + H, p : p + W] if p else gxpad
    grad_x = np.ascontiguousarray(grad_x)

    for g, ctx in ((grad_x, "conv grad_input"), (grad_kernels, "conv grad_kernels")):
        ensure_finite(g, ctx)
    if single:
        grad_x = grad_x[0]
    return grad_x, grad_kernels, grad_biases


# ---------------------------------------------------------------------------
# max pooling
# ---------------------------------------------------------------------------


@dataclass
class PoolCache:
    indices: np.ndarray  # flat argmax position in the (H, W) plane
    input_hw: tuple
    window: int
    stride: int


def maxpool_forward(x, window, stride):
    """Overlapped max pooling; ties go to the lowest flat source index."""
    if window < stride:
        raise ShapeError("pooling window must be >= stride")
    single = x.ndim == 3
    xb = x[None] if single else x
    if xb.ndim != 4:
        raise ShapeError("pool input must be [maps, H, W] or [batch, maps, H, W]")
    H, W = xb.shape[2], xb.shape[3]
    if H < window or W < window:
        raise ShapeError(f"pooling window {window} larger than input {H}x{W}")
    ensure_finite(xb, "pool input")
    win = np.lib.stride_tricks.sliding_window_view(xb, (window, window), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(*win.shape[:4], window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    # window-local argmax -> absolute flat index in the input plane
    wy, wx = arg // window, arg % window
    oy = (np.arange(ho) * stride)[None, None, :, None]
    ox = (np.arange(wo) * stride)[None, None, None, :]
    indices = (oy + wy) * W + (ox + wx)
    out = np.ascontiguousarray(out)
    if single:
        out, indices = out[0], indices[0]
    return out, PoolCache(indices=indices, input_hw=(H, W), window=window, stride=stride)


def maxpool_backward(cache, grad_out):
    """Route each upstream gradient to its argmax source, summing collisions."""
    idx = cache.indices
    if grad_out.shape != idx.shape:
        raise ShapeError(f"pool grad_out shape {grad_out.shape} != {idx.shape}")
    H, W = cache.input_hw
    lead = idx.shape[:-2]
    nplanes = int(np.prod(lead)) if lead else 1
    flat = np.zeros((nplanes, H * W), dtype=grad_out.dtype)
    plane_ids = np.repeat(np.arange(nplanes), idx.shape[-2] * idx.shape[-1])
    np.add.at(flat, (plane_ids, idx.reshape(-1)), grad_out.reshape(-1))
    return flat.reshape(lead + (H, W))


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def _bn_axes(x, maps):
    if x.ndim == 4 and x.shape[1] == maps:
        return (0, 2, 3), (1, -1, 1, 1)
    if x.ndim == 2 and x.shape[1] == maps:
        return (0,), (1, -1)
    raise ShapeError(f"batchnorm input shape {x.shape} does not match {maps} maps")


def batchnorm_forward(x, params, training):
    """Normalize per map; Train uses batch statistics and updates the
    running estimates with ``r <- momentum * r + (1 - momentum) * batch``."""
    axes, bshape = _bn_axes(x, len(params.gamma))
    ensure_finite(x, "batchnorm input")
    if training:
        if x.shape[0] < 2:
            raise ShapeError("batchnorm training requires batch size >= 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        params.running_mean[:] = params.momentum * params.running_mean + (1 - params.momentum) * mean
        params.running_var[:] = params.momentum * params.running_var + (1 - params.momentum) * var
    else:
        mean = params.running_mean.astype(x.dtype)
        var = params.running_var.astype(x.dtype)
    invstd = 1.0 / np.sqrt(var + np.asarray(params.epsilon, dtype=x.dtype))
    xhat = (x - mean.reshape(bshape)) * invstd.reshape(bshape)
    y = params.gamma.reshape(bshape) * xhat + params.beta.reshape(bshape)
    ensure_finite(y, "batchnorm output")
    cache = (xhat, invstd, axes, bshape, params.gamma) if training else None
    return y, cache


def batchnorm_backward(cache, grad_out):
    if cache is None:
        raise ShapeError("batchnorm backward requires a training-mode cache")
    xhat, invstd, axes, bshape, gamma = cache
    if grad_out.shape != xhat.shape:
        raise ShapeError("batchnorm grad_out shape mismatch")
    n = xhat.size // xhat.shape[1] if xhat.ndim == 4 else xhat.shape[0]
    n = np.asarray(n, dtype=grad_out.dtype)
    grad_beta = grad_out.sum(axis=axes)
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    gxhat = grad_out * gamma.reshape(bshape)
    gx = (
        invstd.reshape(bshape)
        / n
        * (n * gxhat - gxhat.sum(axis=axes).reshape(bshape) - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape))
    )
    ensure_finite(gx, "batchnorm grad_input")
    return gx, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# dense / softmax
# ---------------------------------------------------------------------------


def dense_forward(x, weights, biases):
    """Affine map ``y = x @ weights + biases`` with a fixed summation order."""
    single = x.ndim == 1
    xb = x[None] if single else x
    if xb.ndim != 2 or xb.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense input {xb.shape} incompatible with weights {weights.shape}")
    ensure_finite(xb, "dense input")
    out = np.empty((xb.shape[0], weights.shape[1]), dtype=xb.dtype)
    _dense_fwd(
        np.ascontiguousarray(xb),
        np.ascontiguousarray(weights),
        np.ascontiguousarray(biases),
        out,
    )
    ensure_finite(out, "dense output")
    return out[0] if single else out


def dense_backward(x, weights, grad_out):
    single = x.ndim == 1
    xb = x[None] if single else x
    gb = grad_out[None] if single else grad_out
    if gb.shape != (xb.shape[0], weights.shape[1]):
        raise ShapeError("dense grad_out shape mismatch")
    ensure_finite(gb, "dense grad_out")
    grad_x = gb @ weights.T
    grad_w = xb.T @ gb
    grad_b = gb.sum(axis=0)
    return (grad_x[0] if single else grad_x), grad_w, grad_b


def softmax_xent(logits, labels):
    """Stabilized softmax cross-entropy.

    Returns per-sample losses, probabilities, and ``p - onehot`` gradients.
    """
    single = logits.ndim == 1
    lb = logits[None] if single else logits
    yb = np.atleast_1d(np.asarray(labels))
    if lb.ndim != 2 or yb.shape != (lb.shape[0],):
        raise ShapeError("softmax expects [batch, classes] logits and one label per row")
    classes = lb.shape[1]
    if yb.min() < 0 or yb.max() >= classes:
        raise ShapeError(f"labels must lie in [0, {classes})")
    ensure_finite(lb, "softmax logits")
    shifted = lb - lb.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    z = expd.sum(axis=1, keepdims=True)
    probs = expd / z
    rows = np.arange(lb.shape[0])
    losses = np.log(z[:, 0]) - shifted[rows, yb]
    grad = probs.copy()
    grad[rows, yb] -= 1.0
    if single:
        return float(losses[0]), probs[0], grad[0]
    return losses, probs, grad


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    return grad_out * (x > 0)
