"""Cost accounting and wall-clock benchmarking of masked convolution.

MAC counts are exact and deterministic and are the only quantities tests
may assert on; wall-clock numbers are medians over repetitions, reported
for information only because desk machines vary.
"""

import time
from dataclasses import dataclass, replace

import numpy as np

from . import layers, network as network_mod
from .errors import ShapeError
from .layers import ConvLayer, MacCounter
from .network import Classifier, ConvBlock, Dense


@dataclass
class CostModel:
    """Per-layer cost rows plus totals.

    Conv rows carry MACs per sample, active kernel count, connectivity flag
    bits (``in_maps * out_maps`` regardless of sparsity), and active weight
    bytes. FC rows carry MACs and weight bytes.
    """

    rows: list
    totals: dict

    def to_json(self):
        import json

        return json.dumps({"rows": self.rows, "totals": self.totals}, sort_keys=True)

    def to_text(self):
        header = f"{'layer':<12}{'macs/sample':>14}{'active kernels':>16}{'flag bits':>11}{'weight bytes':>14}"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            lines.append(
                f"{row['layer']:<12}{row['macs']:>14}{row.get('active_kernels', ''):>16}"
                f"{row.get('flag_bits', ''):>11}{row['weight_bytes']:>14}"
            )
        lines.append("-" * len(header))
        t = self.totals
        lines.append(
            f"{'total':<12}{t['macs']:>14}{t['active_kernels']:>16}{t['flag_bits']:>11}{t['weight_bytes']:>14}"
        )
        return "\n".join(lines)


def cost_model(net):
    """Exact per-layer inference costs of a network."""
    itemsize = np.dtype(net.dtype).itemsize
    geo = network_mod.conv_output_geometry(net)
    rows = []
    totals = {"macs": 0, "active_kernels": 0, "flag_bits": 0, "weight_bytes": 0}
    conv_idx = fc_idx = 0
    for block in net.blocks:
        if isinstance(block, ConvBlock):
            conv_idx += 1
            conv = block.conv
            ho, wo = geo[conv_idx]
            active = conv.active_connections()
            row = {
                "layer": f"conv{conv_idx}",
                "macs": active * ho * wo * conv.k * conv.k,
                "active_kernels": active,
                "flag_bits": conv.out_maps * conv.in_maps,
                "weight_bytes": active * conv.k * conv.k * itemsize,
            }
        elif isinstance(block, (Dense, Classifier)):
            fc_idx += 1
            name = "classifier" if isinstance(block, Classifier) else f"fc{fc_idx}"
            row = {
                "layer": name,
                "macs": int(np.prod(block.weights.shape)),
                "weight_bytes": block.weights.size * itemsize,
            }
        else:
            continue
        rows.append(row)
        for key in totals:
            totals[key] += row.get(key, 0)
    return CostModel(rows=rows, totals=totals)


def bench_conv(layer, x, reps=5, warmup=2):
    """Time the masked layer against its dense twin on the same input.

    Returns exact MAC counts and median/min timings in milliseconds.
    Speedup is reported, never asserted.
    """
    if reps < 3:
        raise ShapeError("bench needs reps >= 3 after warmup")
    dense = replace(
        layer,
        connectivity=np.ones_like(layer.connectivity),
    )

    def measure(conv):
        counter = MacCounter()
        layers.conv_forward(x, conv, counter=counter)  # count once
        for _ in range(warmup):
            layers.conv_forward(x, conv, counter=None)
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            layers.conv_forward(x, conv, counter=None)
            times.append((time.perf_counter() - t0) * 1000.0)
        return counter.total, float(np.median(times)), float(min(times))

    mac_dense, dense_ms, dense_min = measure(dense)
    mac_masked, masked_ms, masked_min = measure(layer)
    return {
        "mac_dense": mac_dense,
        "mac_masked": mac_masked,
        "dense_ms": dense_ms,
        "dense_ms_min": dense_min,
        "masked_ms": masked_ms,
        "masked_ms_min": masked_min,
        "speedup": dense_ms / masked_ms if masked_ms else float("inf"),
    }


def bench_network(net, batch_size=16, reps=5, warmup=2, rng=None):
    """CSV-ready rows benchmarking every conv layer of a network."""
    rng = rng or np.random.default_rng(0)
    maps, h, w = net.spec.input_shape
    rows = []
    x = rng.standard_normal((batch_size, maps, h, w)).astype(net.dtype)
    conv_idx = 0
    for block in net.blocks:
        if isinstance(block, ConvBlock):
            conv_idx += 1
            result = bench_conv(block.conv, x, reps=reps, warmup=warmup)
            sparsity = 1.0 - block.conv.active_connections() / (
                block.conv.out_maps * block.conv.in_maps
            )
            rows.append({"layer": f"conv{conv_idx}", "sparsity": sparsity, **result})
            x = layers.conv_forward(x, block.conv, counter=None)
            x, _ = layers.batchnorm_forward(x, block.bn, training=False)
            x = layers.relu(x)
        elif hasattr(block, "window"):
            x, _ = layers.maxpool_forward(x, block.window, block.stride)
        else:
            break
    return rows
