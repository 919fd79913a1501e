"""Network assembly, inference, parameter/MAC accounting, persistence.

A ``Network`` is an ordered stack of blocks instantiated from a
:class:`NetworkSpec`: conv blocks (convolution + batch norm + ReLU), pool
layers, hidden FC layers (affine + ReLU), and the final classifier
(affine feeding softmax). Checkpoints are a single binary file that
round-trips every parameter and connectivity bit exactly.
"""

import copy
import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import archparse, layers
from .archparse import FC, Conv, MaxPool, NetworkSpec, Softmax
from .errors import CheckpointError, ShapeError
from .layers import BatchNormParams, ConvLayer

CHECKPOINT_MAGIC = b"PLCK"
CHECKPOINT_VERSION = 1


@dataclass
class ConvBlock:
    conv: ConvLayer
    bn: BatchNormParams


@dataclass
class Pool:
    window: int
    stride: int


@dataclass
class Dense:
    weights: np.ndarray
    biases: np.ndarray


@dataclass
class Classifier:
    weights: np.ndarray
    biases: np.ndarray


@dataclass
class Network:
    spec: NetworkSpec
    blocks: list
    seed: int
    mode: str
    pad_mode: str
    meta: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return layers.get_dtype(self.mode)

    def conv_blocks(self):
        """Conv blocks with their 1-based position, e.g. (1, conv1 block)."""
        return [(i + 1, b) for i, b in enumerate(bl for bl in self.blocks if isinstance(bl, ConvBlock))]

    def conv_block(self, index):
        for i, b in self.conv_blocks():
            if i == index:
                return b
        raise ShapeError(f"no conv layer {index} (network has {self.num_convs()})")

    def num_convs(self):
        return len(self.conv_blocks())

    def clone(self):
        return copy.deepcopy(self)

    def geometry(self):
        """Per-block (maps, H, W) output shapes, following the actual pads."""
        maps, h, w = self.spec.input_shape
        out = []
        for block in self.blocks:
            if isinstance(block, ConvBlock):
                h, w = block.conv.out_size(h, w)
                maps = block.conv.out_maps
            elif isinstance(block, Pool):
                h = (h - block.window) // block.stride + 1
                w = (w - block.window) // block.stride + 1
            out.append((maps, h, w))
        return out


def initialize(spec, seed, mode=None, pad_mode="same"):
    """Build a trainable network: He-scaled kernels, zero biases, BN at
    identity, connectivity all ones. Deterministic per (spec, seed)."""
    mode = mode or layers.get_arithmetic_mode()
    dtype = layers.get_dtype(mode)
    rng = np.random.default_rng(seed)
    archparse.spec_geometry(spec, pad_mode)  # raises on spatial underflow
    blocks = []
    maps, h, w = spec.input_shape
    for layer in spec.layers:
        if isinstance(layer, Conv):
            k = layer.k
            pad = k // 2 if pad_mode == "same" else 0
            std = np.sqrt(2.0 / (maps * k * k))
            kernels = (rng.standard_normal((layer.maps, maps, k, k)) * std).astype(dtype)
            conv = ConvLayer(
                kernels=kernels,
                biases=np.zeros(layer.maps, dtype=dtype),
                connectivity=np.ones((layer.maps, maps), dtype=np.uint8),
                stride=1,
                pad=pad,
            )
            bn = BatchNormParams(
                gamma=np.ones(layer.maps, dtype=dtype),
                beta=np.zeros(layer.maps, dtype=dtype),
                running_mean=np.zeros(layer.maps, dtype=dtype),
                running_var=np.ones(layer.maps, dtype=dtype),
            )
            blocks.append(ConvBlock(conv=conv, bn=bn))
            h, w = conv.out_size(h, w)
            maps = layer.maps
        elif isinstance(layer, MaxPool):
            blocks.append(Pool(window=layer.window, stride=layer.stride))
            h = (h - layer.window) // layer.stride + 1
            w = (w - layer.window) // layer.stride + 1
        elif isinstance(layer, (FC, Softmax)):
            fan_in = maps * h * w if h else maps
            units = layer.units if isinstance(layer, FC) else layer.classes
            std = np.sqrt(2.0 / fan_in)
            weights = (rng.standard_normal((fan_in, units)) * std).astype(dtype)
            biases = np.zeros(units, dtype=dtype)
            cls = Dense if isinstance(layer, FC) else Classifier
            blocks.append(cls(weights=weights, biases=biases))
            maps, h, w = units, 0, 0
    return Network(spec=spec, blocks=blocks, seed=seed, mode=mode, pad_mode=pad_mode)


def build(arch, input_shape, seed, mode=None, pad_mode="same"):
    """Parse an architecture string and initialize it in one step."""
    spec = archparse.parse_architecture(arch, input_shape, pad_mode)
    return initialize(spec, seed, mode=mode, pad_mode=pad_mode)


def forward(net, x, training=False, caches=None):
    """Run the stack; pass a list as ``caches`` to collect backward state."""
    x = np.ascontiguousarray(np.asarray(x, dtype=net.dtype))
    flattened = False
    for block in net.blocks:
        if isinstance(block, ConvBlock):
            pre = x
            z = layers.conv_forward(x, block.conv)
            y, bn_cache = layers.batchnorm_forward(z, block.bn, training)
            x = layers.relu(y)
            if caches is not None:
                caches.append(("conv", pre, bn_cache, y))
        elif isinstance(block, Pool):
            x, pool_cache = layers.maxpool_forward(x, block.window, block.stride)
            if caches is not None:
                caches.append(("pool", pool_cache))
        else:
            if not flattened:
                shape = x.shape
                x = x.reshape(x.shape[0], -1) if x.ndim == 4 else x.reshape(-1)
                flattened = True
                if caches is not None:
                    caches.append(("flatten", shape))
            pre = x
            z = layers.dense_forward(x, block.weights, block.biases)
            if isinstance(block, Dense):
                x = layers.relu(z)
                if caches is not None:
                    caches.append(("dense", pre, z))
            else:
                x = z
                if caches is not None:
                    caches.append(("classifier", pre))
    return x


def predict(net, batch):
    """Class labels for a batch; argmax ties break to the lowest index."""
    logits = forward(net, batch, training=False)
    if logits.ndim == 1:
        return int(np.argmax(logits))
    return np.argmax(logits, axis=1)


def count_errors(net, dataset, batch_size=256):
    n = len(dataset.labels)
    if n == 0:
        raise ShapeError("cannot evaluate an empty dataset")
    errors = 0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        labels = predict(net, dataset.samples[start:stop])
        errors += int((labels != dataset.labels[start:stop]).sum())
    return errors


def evaluate_mcr(net, dataset, batch_size=256):
    """Misclassification rate in percent under inference-mode batch norm."""
    return 100.0 * count_errors(net, dataset, batch_size) / len(dataset.labels)


def evaluate_record(net, dataset, name):
    """Evaluation summary in the JSON shape used by logs and the CLI."""
    n = len(dataset.labels)
    errors = count_errors(net, dataset)
    return {"dataset": name, "n": n, "errors": errors, "mcr": 100.0 * errors / n}


def _conv_range(net, layer_range):
    if layer_range is None:
        layer_range = (1, net.num_convs())
    lo, hi = layer_range
    if lo < 1 or hi > net.num_convs() or lo > hi:
        raise ShapeError(f"bad conv layer range {layer_range}")
    return lo, hi


def count_weights(net, layer_range=None, include_bias_bn=False):
    """Active conv kernel weights over the range.

    Only connections with a set flag count; bias and batch-norm parameters
    are included only when ``include_bias_bn`` is set.
    """
    lo, hi = _conv_range(net, layer_range)
    total = 0
    for idx, block in net.conv_blocks():
        if lo <= idx <= hi:
            conv = block.conv
            total += conv.active_connections() * conv.k * conv.k
            if include_bias_bn:
                total += conv.out_maps  # biases
                total += 4 * conv.out_maps  # gamma, beta, running stats
    return total


def count_macs(net, layer_range=None):
    """Per-sample MACs of the active connections over the range."""
    lo, hi = _conv_range(net, layer_range)
    geo = conv_output_geometry(net)
    total = 0
    for idx, block in net.conv_blocks():
        if lo <= idx <= hi:
            conv = block.conv
            ho, wo = geo[idx]
            total += conv.active_connections() * ho * wo * conv.k * conv.k
    return total


def conv_output_geometry(net):
    """Output (H', W') per conv index, keyed 1-based."""
    maps, h, w = net.spec.input_shape
    out = {}
    idx = 0
    for block in net.blocks:
        if isinstance(block, ConvBlock):
            idx += 1
            h, w = block.conv.out_size(h, w)
            out[idx] = (h, w)
        elif isinstance(block, Pool):
            h = (h - block.window) // block.stride + 1
            w = (w - block.window) // block.stride + 1
    return out


# ---------------------------------------------------------------------------
# checkpoint persistence
# ---------------------------------------------------------------------------


def _tensor_entries(net):
    entries = []
    conv_idx = fc_idx = 0
    for block in net.blocks:
        if isinstance(block, ConvBlock):
            conv_idx += 1
            p = f"conv{conv_idx}"
            entries += [
                (f"{p}/kernels", block.conv.kernels),
                (f"{p}/biases", block.conv.biases),
                (f"{p}/connectivity", block.conv.connectivity),
                (f"{p}/bn_gamma", block.bn.gamma),
                (f"{p}/bn_beta", block.bn.beta),
                (f"{p}/bn_mean", block.bn.running_mean),
                (f"{p}/bn_var", block.bn.running_var),
            ]
        elif isinstance(block, Dense):
            fc_idx += 1
            entries += [(f"fc{fc_idx}/weights", block.weights), (f"fc{fc_idx}/biases", block.biases)]
        elif isinstance(block, Classifier):
            entries += [("classifier/weights", block.weights), ("classifier/biases", block.biases)]
    return entries


def save(net, path):
    """Write a checkpoint: magic, version, JSON header, raw little-endian
    tensor payloads, trailing CRC32 of everything before it."""
    entries = _tensor_entries(net)
    manifest = []
    offset = 0
    payloads = []
    for name, arr in entries:
        data = np.ascontiguousarray(arr)
        le = data.astype(data.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        manifest.append(
            {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape), "offset": offset}
        )
        payloads.append(raw)
        offset += len(raw)
    conv_pads = [b.conv.pad for _, b in net.conv_blocks()]
    bn = net.conv_blocks()[0][1].bn if net.conv_blocks() else None
    header = {
        "format_version": CHECKPOINT_VERSION,
        "arch": archparse.render_architecture(net.spec),
        "input_shape": list(net.spec.input_shape),
        "mode": net.mode,
        "pad_mode": net.pad_mode,
        "conv_pads": conv_pads,
        "seed": net.seed,
        "bn_momentum": bn.momentum if bn else None,
        "bn_epsilon": bn.epsilon if bn else None,
        "meta": net.meta,
        "tensors": manifest,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = (
        CHECKPOINT_MAGIC
        + CHECKPOINT_VERSION.to_bytes(4, "little")
        + len(hbytes).to_bytes(8, "little")
        + hbytes
        + b"".join(payloads)
    )
    crc = zlib.crc32(body)
    with open(path, "wb") as fh:
        fh.write(body + crc.to_bytes(4, "little"))


def load(path):
    """Read a checkpoint; verifies the CRC before constructing anything."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    stored_crc = int.from_bytes(blob[-4:], "little")
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch, refusing to load")
    version = int.from_bytes(blob[4:8], "little")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    hlen = int.from_bytes(blob[8:16], "little")
    try:
        header = json.loads(blob[16 : 16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from exc
    payload = blob[16 + hlen : -4]

    tensors = {}
    for entry in header["tensors"]:
        dt = np.dtype(entry["dtype"]).newbyteorder("<")
        shape = tuple(entry["shape"])
        nbytes = dt.itemsize * int(np.prod(shape)) if shape else dt.itemsize
        raw = payload[entry["offset"] : entry["offset"] + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(raw, dtype=dt).reshape(shape)
        tensors[entry["name"]] = np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("=")))

    spec = archparse.parse_architecture(
        header["arch"], tuple(header["input_shape"]), header.get("pad_mode", "same")
    )
    net = _assemble(spec, header, tensors)
    net.meta = dict(header.get("meta", {}))
    return net


def _assemble(spec, header, tensors):
    blocks = []
    conv_idx = fc_idx = 0
    pads = header["conv_pads"]
    for layer in spec.layers:
        if isinstance(layer, Conv):
            p = f"conv{conv_idx + 1}"
            conv = ConvLayer(
                kernels=tensors[f"{p}/kernels"],
                biases=tensors[f"{p}/biases"],
                connectivity=tensors[f"{p}/connectivity"],
                stride=1,
                pad=pads[conv_idx],
            )
            conv.validate()
            bn = BatchNormParams(
                gamma=tensors[f"{p}/bn_gamma"],
                beta=tensors[f"{p}/bn_beta"],
                running_mean=tensors[f"{p}/bn_mean"],
                running_var=tensors[f"{p}/bn_var"],
                momentum=header["bn_momentum"],
                epsilon=header["bn_epsilon"],
            )
            blocks.append(ConvBlock(conv=conv, bn=bn))
            conv_idx += 1
        elif isinstance(layer, MaxPool):
            blocks.append(Pool(window=layer.window, stride=layer.stride))
        elif isinstance(layer, FC):
            fc_idx += 1
            blocks.append(Dense(weights=tensors[f"fc{fc_idx}/weights"], biases=tensors[f"fc{fc_idx}/biases"]))
        else:
            blocks.append(
                Classifier(weights=tensors["classifier/weights"], biases=tensors["classifier/biases"])
            )
    return Network(
        spec=spec,
        blocks=blocks,
        seed=header["seed"],
        mode=header["mode"],
        pad_mode=header.get("pad_mode", "same"),
    )
