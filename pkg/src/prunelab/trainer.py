"""Mini-batch training with RMSProp-scaled SGD and batch normalization.

Retraining a pruned network uses the same loop; masked conv connections
receive exactly zero gradient upstream, so their weights never move and a
post-run check verifies they are still exactly zero.
"""

import copy
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import layers, network
from .errors import ConfigError, NumericError, ShapeError
from .network import Classifier, ConvBlock, Dense, Network, Pool


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 128
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    lr_schedule: tuple = ()  # ((epoch, multiplier), ...)
    seed: int = 0
    mode: str = "float32"

    def validate(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batch norm needs 2 samples)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ConfigError("rmsprop_decay must lie in (0, 1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def lr_at(self, epoch):
        mult = 1.0
        for start, m in sorted(self.lr_schedule):
            if epoch >= start:
                mult = m
        return self.learning_rate * mult


@dataclass
class OptimizerState:
    """Per-parameter running mean-square gradient accumulators."""

    accumulators: dict = field(default_factory=dict)

    def accumulator_for(self, name, param):
        if name not in self.accumulators:
            self.accumulators[name] = np.zeros_like(param)
        return self.accumulators[name]


@dataclass
class ExperimentLog:
    """Append-only record of a train/prune/retrain run, JSON-lines on disk."""

    kind: str
    seed: int
    mode: str
    config: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, **record):
        self.records.append(record)

    def to_jsonl(self, path):
        with open(path, "w") as fh:
            head = {"log": self.kind, "seed": self.seed, "mode": self.mode,
                    "config": self.config, "meta": self.meta}
            fh.write(json.dumps(head, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path):
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        head = lines[0]
        log = cls(kind=head["log"], seed=head["seed"], mode=head["mode"],
                  config=head.get("config", {}), meta=head.get("meta", {}))
        log.records = lines[1:]
        return log


def trainable_parameters(net):
    """(name, array) pairs in a fixed order; names match checkpoint entries."""
    params = []
    conv_idx = fc_idx = 0
    for block in net.blocks:
        if isinstance(block, ConvBlock):
            conv_idx += 1
            p = f"conv{conv_idx}"
            params += [
                (f"{p}/kernels", block.conv.kernels),
                (f"{p}/biases", block.conv.biases),
                (f"{p}/bn_gamma", block.bn.gamma),
                (f"{p}/bn_beta", block.bn.beta),
            ]
        elif isinstance(block, Dense):
            fc_idx += 1
            params += [(f"fc{fc_idx}/weights", block.weights), (f"fc{fc_idx}/biases", block.biases)]
        elif isinstance(block, Classifier):
            params += [("classifier/weights", block.weights), ("classifier/biases", block.biases)]
    return params


def rmsprop_step(params, grads, state, config):
    """``s <- d*s + (1-d)*g^2``; ``p <- p - lr*g/sqrt(s + eps)`` in place.

    ``config`` must expose ``learning_rate`` (already schedule-scaled by the
    caller when applicable), ``rmsprop_decay`` and ``rmsprop_epsilon``.
    """
    d = config.rmsprop_decay
    eps = config.rmsprop_epsilon
    lr = config.learning_rate
    for name, p in params:
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, want {p.shape}")
        if not np.isfinite(g).all():
            raise NumericError(
                f"non-finite gradient for {name}: "
                f"min={np.nanmin(g)}, max={np.nanmax(g)}, nan={int(np.isnan(g).sum())}"
            )
        s = state.accumulator_for(name, p)
        s *= d
        s += (1.0 - d) * g * g
        p -= lr * g / np.sqrt(s + eps)
    return params, state


def _backward(net, caches, grad):
    grads = {}
    conv_idx = net.num_convs()
    fc_idx = sum(isinstance(b, Dense) for b in net.blocks)
    for entry in reversed(caches):
        kind = entry[0]
        if kind == "classifier":
            _, pre = entry
            block = next(b for b in net.blocks if isinstance(b, Classifier))
            grad, gw, gb = layers.dense_backward(pre, block.weights, grad)
            grads["classifier/weights"] = gw
            grads["classifier/biases"] = gb
        elif kind == "dense":
            _, pre, z = entry
            block = [b for b in net.blocks if isinstance(b, Dense)][fc_idx - 1]
            grad = layers.relu_backward(z, grad)
            grad, gw, gb = layers.dense_backward(pre, block.weights, grad)
            grads[f"fc{fc_idx}/weights"] = gw
            grads[f"fc{fc_idx}/biases"] = gb
            fc_idx -= 1
        elif kind == "flatten":
            _, shape = entry
            grad = grad.reshape(shape)
        elif kind == "pool":
            _, pool_cache = entry
            grad = layers.maxpool_backward(pool_cache, grad)
        elif kind == "conv":
            _, pre, bn_cache, y = entry
            block = net.conv_block(conv_idx)
            grad = layers.relu_backward(y, grad)
            grad, ggamma, gbeta = layers.batchnorm_backward(bn_cache, grad)
            grad, gk, gb = layers.conv_backward(pre, block.conv, grad)
            grads[f"conv{conv_idx}/kernels"] = gk
            grads[f"conv{conv_idx}/biases"] = gb
            grads[f"conv{conv_idx}/bn_gamma"] = ggamma
            grads[f"conv{conv_idx}/bn_beta"] = gbeta
            conv_idx -= 1
    return grads


def train_step(net, batch_x, batch_y, state, config, lr):
    """One forward/backward/update pass; returns the mean batch loss."""
    caches = []
    logits = network.forward(net, batch_x, training=True, caches=caches)
    losses, _, grad = layers.softmax_xent(logits, batch_y)
    grad = grad / np.asarray(len(batch_y), dtype=grad.dtype)
    grads = _backward(net, caches, grad)
    step_cfg = copy.copy(config)
    step_cfg.learning_rate = lr
    rmsprop_step(trainable_parameters(net), grads, state, step_cfg)
    return float(losses.mean())


def train(net, train_set, val_set, config, augment=None, log_kind="train"):
    """Seeded shuffled mini-batch training; keeps the best-validation net.

    Returns ``(best_net, log)``. The log holds one record per epoch:
    ``{epoch, train_loss, val_mcr, lr, wall_ms}``.
    """
    config.validate()
    if len(train_set.labels) == 0 or len(val_set.labels) == 0:
        raise ConfigError("cannot train on an empty dataset")
    if config.mode and config.mode != net.mode:
        raise ConfigError(f"config mode {config.mode} != network mode {net.mode}")
    rng = np.random.default_rng(config.seed)
    state = OptimizerState()
    log = ExperimentLog(kind=log_kind, seed=config.seed, mode=net.mode, config=asdict(config))
    best = (float("inf"), None)
    n = len(train_set.labels)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        lr = config.lr_at(epoch)
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            if len(idx) < 2:
                continue  # batch norm needs at least two samples
            bx = train_set.samples[idx]
            if augment is not None:
                bx = augment(bx, rng)
            loss = train_step(net, bx, train_set.labels[idx], state, config, lr)
            batch_losses.append(loss)
        val_mcr = network.evaluate_mcr(net, val_set)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        log.append(
            epoch=epoch,
            train_loss=float(np.mean(batch_losses)),
            val_mcr=val_mcr,
            lr=lr,
            wall_ms=wall_ms,
        )
        if epoch == 1 and batch_losses:
            log.meta["epoch1_first_batch_loss"] = batch_losses[0]
            log.meta["epoch1_last_batch_loss"] = batch_losses[-1]
        if val_mcr < best[0]:
            best = (val_mcr, epoch)
            best_net = net.clone()
    if best[1] is None:
        best_net = net
    log.meta["best_epoch"] = best[1]
    log.meta["best_val_mcr"] = best[0] if best[1] is not None else None
    best_net.meta = dict(best_net.meta)
    best_net.meta.update(epochs=config.epochs, train_seed=config.seed, best_epoch=best[1])
    return best_net, log


def retrain(net, train_set, val_set, config, augment=None):
    """Training round that must leave every pruning mask untouched."""
    frozen = [
        (idx, block.conv.connectivity == 0)
        for idx, block in net.conv_blocks()
        if (block.conv.connectivity == 0).any()
    ]
    best_net, log = train(net, train_set, val_set, config, augment=augment, log_kind="retrain")
    for candidate in (net, best_net):
        for idx, dead in frozen:
            kernels = candidate.conv_block(idx).conv.kernels
            if np.abs(kernels[dead]).max(initial=0.0) != 0.0:
                raise NumericError(f"retraining moved masked kernels in conv{idx}")
    return best_net, log
