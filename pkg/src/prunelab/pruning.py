"""Pruning masks, candidate selection, mask application, and accounting.

Two granularities:

* ``fmap``   prune whole output feature maps; applying the mask removes the
  map's incoming kernels, bias and batch-norm channel, plus the outgoing
  kernels (or FC rows) in the next layer, yielding a physically thinner
  network.
* ``kernel`` prune individual (in_map, out_map) connections; applying the
  mask clears connectivity flags and zeroes the kernels, leaving the
  network shape unchanged.

Mask evaluation uses overlay semantics: connectivity flags are cleared on
a lightweight copy (weights shared, never mutated) and the masked network
is scored as-is. Overlay and physical application produce bit-identical
forward passes.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import network as network_mod
from .errors import MaskError, ShapeError
from .network import Classifier, ConvBlock, Dense, Network, Pool
from .archparse import Conv, NetworkSpec

GRANULARITIES = ("fmap", "kernel")


def round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass
class PruningMask:
    """Per-layer sets of pruned units over a contiguous range of conv layers.

    ``prune`` maps a 1-based conv index to a sorted list of output-map
    indices (fmap) or ``(in_map, out_map)`` pairs (kernel). ``ratio`` is the
    requested per-layer fraction; masks built from explicit sets may carry
    ``ratio=None``.
    """

    granularity: str
    layer_range: tuple
    prune: dict
    ratio: float = None
    seed: int = None

    def total_pruned(self):
        return sum(len(v) for v in self.prune.values())

    def to_json(self):
        return json.dumps(
            {
                "granularity": self.granularity,
                "layer_range": list(self.layer_range),
                "prune": {str(k): [list(p) if isinstance(p, tuple) else p for p in v]
                          for k, v in self.prune.items()},
                "ratio": self.ratio,
                "seed": self.seed,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("granularity") not in GRANULARITIES:
            raise MaskError(f"unknown granularity {doc.get('granularity')!r}")
        prune = {}
        for key, entries in doc["prune"].items():
            idx = int(key)
            if doc["granularity"] == "kernel":
                prune[idx] = sorted(tuple(int(v) for v in pair) for pair in entries)
            else:
                prune[idx] = sorted(int(v) for v in entries)
        return cls(
            granularity=doc["granularity"],
            layer_range=tuple(doc["layer_range"]),
            prune=prune,
            ratio=doc.get("ratio"),
            seed=doc.get("seed"),
        )

    def validate(self, net, allow_orphans=False):
        lo, hi = _check_range(net, self.layer_range)
        if set(self.prune) - set(range(lo, hi + 1)):
            raise MaskError("mask prunes layers outside its range")
        for idx in range(lo, hi + 1):
            conv = net.conv_block(idx).conv
            entries = self.prune.get(idx, [])
            if self.granularity == "fmap":
                if any(not 0 <= j < conv.out_maps for j in entries):
                    raise MaskError(f"conv{idx}: feature-map index out of range")
                if len(set(entries)) != len(entries):
                    raise MaskError(f"conv{idx}: duplicate feature-map entries")
            else:
                seen = set()
                for i, o in entries:
                    if not (0 <= i < conv.in_maps and 0 <= o < conv.out_maps):
                        raise MaskError(f"conv{idx}: connection ({i},{o}) out of range")
                    if conv.connectivity[o, i] == 0:
                        raise MaskError(f"conv{idx}: connection ({i},{o}) is already pruned")
                    if (i, o) in seen:
                        raise MaskError(f"conv{idx}: duplicate connection ({i},{o})")
                    seen.add((i, o))
                if not allow_orphans:
                    remaining = conv.connectivity.sum(axis=1).astype(np.int64)
                    for i, o in entries:
                        remaining[o] -= 1
                    if (remaining == 0).any():
                        raise MaskError(
                            f"conv{idx}: mask would orphan a feature map "
                            "(pass allow_orphans=True to permit)"
                        )


def _check_range(net, layer_range):
    lo, hi = layer_range
    if not (1 <= lo <= hi <= net.num_convs()):
        raise MaskError(f"conv layer range {layer_range} invalid for {net.num_convs()} conv layers")
    return lo, hi


def default_layer_range(net):
    """All conv layers except the first, which stays unpruned by default."""
    if net.num_convs() < 2:
        raise MaskError("network has no prunable conv layers beyond conv1")
    return (2, net.num_convs())


def enumerate_candidates(net, granularity, layer_range):
    """Number of prunable units in the range: output maps for ``fmap``,
    active connections for ``kernel``."""
    lo, hi = _check_range(net, layer_range)
    total = 0
    for idx in range(lo, hi + 1):
        conv = net.conv_block(idx).conv
        total += conv.out_maps if granularity == "fmap" else conv.active_connections()
    return total


def sample_mask(net, granularity, ratio, layer_range, rng, allow_orphans=False,
                max_attempts=10000):
    """Uniform per-layer sample of ``round_half_up(ratio * units)`` units.

    Kernel masks reject layer samples that would orphan a feature map
    (every incoming connection pruned) unless ``allow_orphans`` is set.
    Deterministic for a given rng state.
    """
    if granularity not in GRANULARITIES:
        raise MaskError(f"unknown granularity {granularity!r}")
    if not 0.0 <= ratio <= 1.0:
        raise MaskError(f"ratio {ratio} outside [0, 1]")
    lo, hi = _check_range(net, layer_range)
    prune = {}
    for idx in range(lo, hi + 1):
        conv = net.conv_block(idx).conv
        if granularity == "fmap":
            count = round_half_up(ratio * conv.out_maps)
            chosen = rng.choice(conv.out_maps, size=count, replace=False)
            prune[idx] = sorted(int(j) for j in chosen)
        else:
            active = np.argwhere(conv.connectivity.T == 1)  # rows of (in, out)
            count = round_half_up(ratio * len(active))
            incoming = conv.connectivity.sum(axis=1).astype(np.int64)
            for attempt in range(max_attempts):
                chosen = active[rng.choice(len(active), size=count, replace=False)]
                if allow_orphans:
                    break
                losses = np.bincount(chosen[:, 1], minlength=conv.out_maps)
                if ((incoming - losses) > 0).all():
                    break
            else:
                raise MaskError(
                    f"conv{idx}: could not sample {count}/{len(active)} connections "
                    "without orphaning a map; pass allow_orphans=True"
                )
            prune[idx] = sorted((int(i), int(o)) for i, o in chosen)
    return PruningMask(
        granularity=granularity, layer_range=(lo, hi), prune=prune, ratio=ratio
    )


# ---------------------------------------------------------------------------
# overlay evaluation
# ---------------------------------------------------------------------------


def _consumer_index(net, block_pos):
    """Position of the block consuming the given conv block's output maps."""
    for pos in range(block_pos + 1, len(net.blocks)):
        if isinstance(net.blocks[pos], (ConvBlock, Dense, Classifier)):
            return pos
    return None


def _conv_positions(net):
    return {idx: pos for idx, pos in
            zip([i for i, _ in net.conv_blocks()],
                [p for p, b in enumerate(net.blocks) if isinstance(b, ConvBlock)])}


def overlay_network(net, mask, allow_orphans=True):
    """Masked view of ``net``: fresh connectivity (and FC rows for fmap
    masks at the conv/FC boundary), all other arrays shared read-only."""
    mask.validate(net, allow_orphans=allow_orphans)
    blocks = list(net.blocks)
    positions = _conv_positions(net)
    geometry = net.geometry()
    freshened = set()

    def fresh_conn(pos):
        if pos not in freshened:
            block = blocks[pos]
            conn = block.conv.connectivity.copy()
            blocks[pos] = replace(block, conv=replace(block.conv, connectivity=conn))
            freshened.add(pos)
        return blocks[pos].conv.connectivity

    for idx in range(mask.layer_range[0], mask.layer_range[1] + 1):
        entries = mask.prune.get(idx, [])
        if not entries:
            continue
        pos = positions[idx]
        if mask.granularity == "kernel":
            conn = fresh_conn(pos)
            for i, o in entries:
                conn[o, i] = 0
        else:
            conn = fresh_conn(pos)
            conn[entries, :] = 0  # stop computing the pruned maps
            consumer = _consumer_index(net, pos)
            if consumer is None:
                continue
            target = blocks[consumer]
            if isinstance(target, ConvBlock):
                tconn = fresh_conn(consumer)
                tconn[:, entries] = 0
            else:
                maps, h, w = geometry[pos]
                weights = target.weights.copy()
                rows = weights.reshape(maps, h * w, -1)
                rows[entries] = 0.0
                blocks[consumer] = replace(target, weights=rows.reshape(weights.shape))
    return Network(spec=net.spec, blocks=blocks, seed=net.seed, mode=net.mode,
                   pad_mode=net.pad_mode, meta=dict(net.meta))


def evaluate_mask(net, mask, val_set, batch_size=256):
    """Validation MCR of the overlay-masked network; the original network is
    never mutated and no retraining happens."""
    return network_mod.evaluate_mcr(overlay_network(net, mask), val_set, batch_size)


def select_best_of_n(net, val_set, granularity, ratio, layer_range, n, rng,
                     workers=1, dedup=False, allow_orphans=False, batch_size=256):
    """Sample ``n`` random masks, score each on the validation set, return
    ``(best_mask, best_mcr, all_mcrs)``.

    Masks are generated sequentially from ``rng`` before any evaluation, so
    the candidate list does not depend on evaluation parallelism; ties
    break to the lowest generation index.
    """
    if n < 1:
        raise MaskError("n must be >= 1")
    masks = []
    seen = set()
    attempts = 0
    while len(masks) < n:
        mask = sample_mask(net, granularity, ratio, layer_range, rng,
                           allow_orphans=allow_orphans)
        if dedup:
            key = mask.to_json()
            attempts += 1
            if key in seen:
                if attempts > 100 * n:
                    raise MaskError("mask space too small to draw n distinct masks")
                continue
            seen.add(key)
        masks.append(mask)

    def score(mask):
        return evaluate_mask(net, mask, val_set, batch_size)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            mcrs = list(pool.map(score, masks))
    else:
        mcrs = [score(m) for m in masks]
    best_idx = int(np.argmin(mcrs))
    return masks[best_idx], mcrs[best_idx], mcrs


def weight_sum_select(net, ratio, layer_range):
    """Feature-map mask of the per-layer lowest absolute-weight-sum maps.

    The importance of map ``j`` is the absolute sum of all its incoming
    kernel weights; the lowest-scoring maps are pruned, ties breaking to
    the lowest map index.
    """
    if not 0.0 <= ratio <= 1.0:
        raise MaskError(f"ratio {ratio} outside [0, 1]")
    lo, hi = _check_range(net, layer_range)
    prune = {}
    for idx in range(lo, hi + 1):
        conv = net.conv_block(idx).conv
        scores = np.abs(conv.kernels).sum(axis=(1, 2, 3))
        count = round_half_up(ratio * conv.out_maps)
        order = np.argsort(scores, kind="stable")
        prune[idx] = sorted(int(j) for j in order[:count])
    return PruningMask(granularity="fmap", layer_range=(lo, hi), prune=prune, ratio=ratio)


# ---------------------------------------------------------------------------
# physical application
# ---------------------------------------------------------------------------


def apply_kernel_mask(net, mask, allow_orphans=True):
    """Clear connectivity flags and zero the pruned kernels on a copy."""
    if mask.granularity != "kernel":
        raise MaskError("apply_kernel_mask needs a kernel-granularity mask")
    mask.validate(net, allow_orphans=allow_orphans)
    out = net.clone()
    for idx, entries in mask.prune.items():
        conv = out.conv_block(idx).conv
        for i, o in entries:
            conv.connectivity[o, i] = 0
            conv.kernels[o, i] = 0.0
    return out


def apply_feature_map_mask(net, mask):
    """Physically remove pruned maps, producing a thinner network.

    Incoming kernels, bias and batch-norm channels of each pruned map are
    deleted; the consuming layer loses the matching kernel columns (conv)
    or weight rows (FC/classifier). The thin network's forward pass equals
    the overlay-masked original exactly.
    """
    if mask.granularity != "fmap":
        raise MaskError("apply_feature_map_mask needs a feature-map mask")
    mask.validate(net)
    out = net.clone()
    positions = _conv_positions(out)
    geometry = net.geometry()
    for idx in sorted(mask.prune):
        entries = mask.prune[idx]
        if not entries:
            continue
        pos = positions[idx]
        block = out.blocks[pos]
        conv = block.conv
        if len(entries) >= conv.out_maps:
            raise MaskError(f"conv{idx}: cannot prune every feature map of a layer")
        keep = np.array([j for j in range(conv.out_maps) if j not in set(entries)])
        block.conv = replace(
            conv,
            kernels=np.ascontiguousarray(conv.kernels[keep]),
            biases=np.ascontiguousarray(conv.biases[keep]),
            connectivity=np.ascontiguousarray(conv.connectivity[keep]),
        )
        block.bn = replace(
            block.bn,
            gamma=np.ascontiguousarray(block.bn.gamma[keep]),
            beta=np.ascontiguousarray(block.bn.beta[keep]),
            running_mean=np.ascontiguousarray(block.bn.running_mean[keep]),
            running_var=np.ascontiguousarray(block.bn.running_var[keep]),
        )
        consumer = _consumer_index(out, pos)
        if consumer is not None:
            target = out.blocks[consumer]
            if isinstance(target, ConvBlock):
                target.conv = replace(
                    target.conv,
                    kernels=np.ascontiguousarray(target.conv.kernels[:, keep]),
                    connectivity=np.ascontiguousarray(target.conv.connectivity[:, keep]),
                )
            else:
                maps, h, w = geometry[pos]
                rows = target.weights.reshape(maps, h * w, -1)
                target.weights = np.ascontiguousarray(rows[keep].reshape(-1, target.weights.shape[1]))
    out.spec = _thin_spec(net.spec, mask)
    return out


def _thin_spec(spec, mask):
    layers = []
    conv_idx = 0
    for layer in spec.layers:
        if isinstance(layer, Conv):
            conv_idx += 1
            pruned = len(mask.prune.get(conv_idx, []))
            layers.append(Conv(maps=layer.maps - pruned, k=layer.k))
        else:
            layers.append(layer)
    return NetworkSpec(input_shape=spec.input_shape, layers=tuple(layers))


# ---------------------------------------------------------------------------
# accounting
# ---------------------------------------------------------------------------


@dataclass
class PruneReport:
    """Before/after accounting per conv layer plus aggregates."""

    layer_range: tuple
    layers: list  # one dict per conv layer in range
    aggregate: dict

    def to_json(self):
        return json.dumps(
            {"layer_range": list(self.layer_range), "layers": self.layers,
             "aggregate": self.aggregate},
            sort_keys=True,
        )

    def to_text(self):
        header = (
            f"{'layer':<7}{'maps':>11}{'conn':>15}{'pruned':>8}"
            f"{'weights':>19}{'macs/sample':>24}{'fmap%':>8}{'kern%':>8}"
        )
        lines = [header, "-" * len(header)]
        for row in self.layers:
            lines.append(
                f"conv{row['layer']:<3}"
                f"{row['maps_before']:>5}->{row['maps_after']:<5}"
                f"{row['conns_before']:>7}->{row['conns_after']:<7}"
                f"{row['pruned_kernels']:>7}"
                f"{row['weights_before']:>9}->{row['weights_after']:<9}"
                f"{row['macs_before']:>12}->{row['macs_after']:<11}"
                f"{row['fmap_pruned_pct']:>7.1f}"
                f"{row['kernel_prune_ratio_pct']:>8.1f}"
            )
        agg = self.aggregate
        lines.append("-" * len(header))
        lines.append(
            f"aggregate over conv{self.layer_range[0]}..conv{self.layer_range[1]}: "
            f"weights {agg['weights_before']}->{agg['weights_after']} "
            f"({agg['weight_prune_pct']:.2f}% pruned), "
            f"kernels {agg['conns_before']}->{agg['conns_after']} "
            f"({agg['kernel_prune_pct']:.2f}% pruned), "
            f"macs {agg['macs_before']}->{agg['macs_after']} "
            f"({agg['mac_prune_pct']:.2f}% pruned)"
        )
        return "\n".join(lines)


def pruning_report(before, after, layer_range=None):
    """Exact per-layer and aggregate counts between two comparable networks."""
    if before.num_convs() != after.num_convs():
        raise ShapeError("networks have different conv layer counts")
    if layer_range is None:
        layer_range = (1, before.num_convs())
    lo, hi = layer_range
    if not (1 <= lo <= hi <= before.num_convs()):
        raise ShapeError(f"bad layer range {layer_range}")
    geo_before = network_mod.conv_output_geometry(before)
    geo_after = network_mod.conv_output_geometry(after)
    rows = []
    totals = {"weights_before": 0, "weights_after": 0, "conns_before": 0,
              "conns_after": 0, "macs_before": 0, "macs_after": 0}
    for idx in range(lo, hi + 1):
        cb = before.conv_block(idx).conv
        ca = after.conv_block(idx).conv
        if cb.k != ca.k or cb.stride != ca.stride or cb.pad != ca.pad:
            raise ShapeError(f"conv{idx}: geometry differs, networks not comparable")
        if geo_before[idx] != geo_after[idx]:
            raise ShapeError(f"conv{idx}: output extents differ, networks not comparable")
        k2 = cb.k * cb.k
        hw = geo_before[idx][0] * geo_before[idx][1]
        conns_b, conns_a = cb.active_connections(), ca.active_connections()
        row = {
            "layer": idx,
            "maps_before": cb.out_maps,
            "maps_after": ca.out_maps,
            "conns_before": conns_b,
            "conns_after": conns_a,
            "pruned_kernels": conns_b - conns_a,
            "weights_before": conns_b * k2,
            "weights_after": conns_a * k2,
            "macs_before": conns_b * hw * k2,
            "macs_after": conns_a * hw * k2,
            "fmap_pruned_pct": 100.0 * (1.0 - ca.out_maps / cb.out_maps),
            "kernel_prune_ratio_pct": 100.0 * (conns_b - conns_a) / conns_b if conns_b else 0.0,
        }
        rows.append(row)
        for key in totals:
            totals[key] += row[key]
    aggregate = dict(totals)
    aggregate["weight_prune_pct"] = (
        100.0 * (1.0 - totals["weights_after"] / totals["weights_before"])
        if totals["weights_before"] else 0.0
    )
    aggregate["kernel_prune_pct"] = (
        100.0 * (1.0 - totals["conns_after"] / totals["conns_before"])
        if totals["conns_before"] else 0.0
    )
    aggregate["mac_prune_pct"] = (
        100.0 * (1.0 - totals["macs_after"] / totals["macs_before"])
        if totals["macs_before"] else 0.0
    )
    return PruneReport(layer_range=(lo, hi), layers=rows, aggregate=aggregate)


# ---------------------------------------------------------------------------
# combined schedule
# ---------------------------------------------------------------------------


@dataclass
class CombinedConfig:
    """Settings for the two-stage feature-map-then-kernel pipeline."""

    retrain: "TrainConfig"
    candidates: int = 100
    layer_range: tuple = None
    seed: int = 0
    workers: int = 1
    allow_orphans: bool = False
    batch_size: int = 256


def combined_prune(net, fmap_ratio, kernel_ratio, data, config):
    """Feature-map prune, retrain, kernel prune, retrain.

    ``data`` is ``(train_set, val_set)``. Returns ``(final_net, report,
    stages)`` where the report compares the final network with the input
    network and ``stages`` carries the per-stage masks, reports and
    training logs. A zero ratio skips its stage entirely.
    """
    from .trainer import retrain as retrain_fn  # local import avoids a cycle

    train_set, val_set = data
    layer_range = config.layer_range or default_layer_range(net)
    rng = np.random.default_rng(config.seed)
    stages = {}
    original = net
    current = net

    if fmap_ratio > 0:
        mask, mcr, mcrs = select_best_of_n(
            current, val_set, "fmap", fmap_ratio, layer_range,
            config.candidates, rng, workers=config.workers,
            batch_size=config.batch_size,
        )
        thin = apply_feature_map_mask(current, mask)
        thin, log = retrain_fn(thin, train_set, val_set, config.retrain)
        stages["fmap"] = {
            "mask": mask, "selected_mcr": mcr, "candidate_mcrs": mcrs,
            "report": pruning_report(current, thin, layer_range), "log": log,
        }
        current = thin

    if kernel_ratio > 0:
        mask, mcr, mcrs = select_best_of_n(
            current, val_set, "kernel", kernel_ratio, layer_range,
            config.candidates, rng, workers=config.workers,
            allow_orphans=config.allow_orphans, batch_size=config.batch_size,
        )
        masked = apply_kernel_mask(current, mask, allow_orphans=config.allow_orphans)
        masked, log = retrain_fn(masked, train_set, val_set, config.retrain)
        stages["kernel"] = {
            "mask": mask, "selected_mcr": mcr, "candidate_mcrs": mcrs,
            "report": pruning_report(current, masked, layer_range), "log": log,
        }
        current = masked

    report = pruning_report(original, current, layer_range)
    if stages:
        # headline combined ratio: sum of per-stage weight fractions, each
        # relative to its own stage input (the convention behind the
        # "more than 75%" style summaries this package reproduces)
        report.aggregate["stage_weight_prune_pct_sum"] = sum(
            s["report"].aggregate["weight_prune_pct"] for s in stages.values()
        )
    return current, report, stages
