"""Shared test utilities: independent oracles and gradient checking."""

import numpy as np

from prunelab import ConvLayer


def naive_conv(x, kernels, biases, connectivity, stride=1, pad=0):
    """Quadruple-loop correlation oracle, independent of the engine path."""
    in_maps, h, w = x.shape
    out_maps = kernels.shape[0]
    k = kernels.shape[2]
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.zeros((in_maps, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, pad : pad + h, pad : pad + w] = x
    out = np.zeros((out_maps, ho, wo), dtype=x.dtype)
    for o in range(out_maps):
        for oy in range(ho):
            for ox in range(wo):
                acc = biases[o]
                for i in range(in_maps):
                    if connectivity[o, i] == 0:
                        continue
                    for ky in range(k):
                        for kx in range(k):
                            acc += xp[i, oy * stride + ky, ox * stride + kx] * kernels[o, i, ky, kx]
                out[o, oy, ox] = acc
    return out


def naive_maxpool(x, window, stride):
    """Nested-loop pooling oracle returning output and argmax flat indices."""
    maps, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.zeros((maps, ho, wo), dtype=x.dtype)
    arg = np.zeros((maps, ho, wo), dtype=np.int64)
    for c in range(maps):
        for oy in range(ho):
            for ox in range(wo):
                best = -np.inf
                best_idx = -1
                for wy in range(window):
                    for wx in range(window):
                        y, xx = oy * stride + wy, ox * stride + wx
                        if x[c, y, xx] > best:
                            best = x[c, y, xx]
                            best_idx = y * w + xx
                out[c, oy, ox] = best
                arg[c, oy, ox] = best_idx
    return out, arg


def random_conv_layer(rng, in_maps, out_maps, k, stride=1, pad=0, density=1.0,
                      dtype=np.float64):
    """Random layer; masked kernel entries are stored as exact zeros."""
    conn = (rng.random((out_maps, in_maps)) < density).astype(np.uint8)
    if density >= 1.0:
        conn[:] = 1
    kernels = rng.standard_normal((out_maps, in_maps, k, k)).astype(dtype)
    kernels[conn == 0] = 0.0
    biases = rng.standard_normal(out_maps).astype(dtype)
    return ConvLayer(kernels=kernels, biases=biases, connectivity=conn,
                     stride=stride, pad=pad)


def fd_gradient(f, x, step=1e-4):
    """Central finite differences of a scalar function, per component."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def assert_grad_close(analytic, fd, rtol=1e-4, floor=1e-3):
    """Relative comparison with a denominator floor so exact-zero gradients
    are checked with an absolute tolerance instead of dividing by noise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)
    err = np.abs(analytic - fd) / denom
    assert err.max() <= rtol, f"gradient mismatch: max rel err {err.max():.3e}"


def spread_values(rng, shape, gap=0.01):
    """Random permutation of evenly spaced values: every pair differs by at
    least `gap`, so finite differences never cross an argmax tie."""
    n = int(np.prod(shape))
    vals = (np.arange(n) * gap)[rng.permutation(n)]
    return vals.reshape(shape).astype(np.float64)
