"""Command-line surface: train, prune, retrain, sweeps, reports, benchmarks.

One experiment writes into one output directory: the fully resolved
``config.json``, checkpoints, JSON-lines logs, mask/report JSON, and CSV
curves. Rerunning with the emitted config reproduces outputs bit-for-bit
in single-threaded mode. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numeric failure.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bench as bench_mod
from . import data as data_mod
from . import network as network_mod
from . import pruning, trainer
from .errors import (
    ArchitectureError,
    CheckpointError,
    ConfigError,
    DataError,
    MaskError,
    NumericError,
    PruneLabError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

CSV_SCHEMAS = {
    "sweep-ratio": "granularity,ratio,val_mcr_pre,val_mcr_post,test_mcr_pre,test_mcr_post",
    "sweep-n": "ratio,n,seed,best_val_mcr",
    "compare-criteria": "ratio,best_of_n_val_mcr,weight_sum_val_mcr,best_of_n_test_mcr,weight_sum_test_mcr",
    "bench": "layer,sparsity,mac_dense,mac_masked,dense_ms,masked_ms",
}


@dataclass
class ExperimentConfig:
    """Fully resolved settings for one command invocation."""

    command: str
    out: str = None
    arch: str = None
    pad_mode: str = "valid"
    mode: str = "float32"
    seed: int = 0
    # dataset
    dataset: str = "synthetic"
    data_dir: str = None
    train_images: str = None
    train_labels: str = None
    test_images: str = None
    test_labels: str = None
    synthetic_train_n: int = 6000
    synthetic_test_n: int = 2000
    image_size: int = 28
    val_fraction: float = 0.2
    split_seed: int = 0
    apply_gcn: bool = False
    apply_zca: bool = False
    # training
    epochs: int = 5
    batch_size: int = 128
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    lr_schedule: tuple = ()
    # pruning
    checkpoint: str = None
    before: str = None
    after: str = None
    granularity: str = "kernel"
    granularities: tuple = ("fmap", "kernel")
    ratio: float = 0.5
    ratios: tuple = (0.3, 0.5, 0.7)
    n_candidates: int = 100
    n_values: tuple = (1, 10, 100)
    seeds: int = 1
    criterion: str = "random"
    layer_range: tuple = None
    mask: str = None
    allow_orphans: bool = False
    fmap_ratio: float = 0.0
    kernel_ratio: float = 0.0
    retrain_epochs: int = 3
    workers: int = 1
    eval_batch: int = 256

    def validate(self):
        if self.mode not in ("float32", "float64"):
            raise ConfigError(f"unknown arithmetic mode {self.mode!r}")
        if self.dataset not in ("synthetic", "idx", "cifar10"):
            raise ConfigError(f"unknown dataset kind {self.dataset!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.granularity not in pruning.GRANULARITIES:
            raise ConfigError(f"unknown granularity {self.granularity!r}")
        if self.criterion not in ("random", "weightsum"):
            raise ConfigError(f"unknown criterion {self.criterion!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def train_config(self, epochs=None, seed=None):
        return trainer.TrainConfig(
            epochs=self.epochs if epochs is None else epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            rmsprop_decay=self.rmsprop_decay,
            rmsprop_epsilon=self.rmsprop_epsilon,
            lr_schedule=tuple(tuple(e) for e in self.lr_schedule),
            seed=self.seed if seed is None else seed,
            mode=self.mode,
        )


def load_datasets(cfg):
    """Build (train, val, test) per the config's dataset settings."""
    if cfg.dataset == "synthetic":
        full = data_mod.synthetic_digits(cfg.synthetic_train_n, cfg.seed, image_size=cfg.image_size)
        test = data_mod.synthetic_digits(
            cfg.synthetic_test_n, cfg.seed + 100003, image_size=cfg.image_size
        )
    elif cfg.dataset == "idx":
        paths = [cfg.train_images, cfg.train_labels, cfg.test_images, cfg.test_labels]
        if any(p is None for p in paths):
            raise ConfigError("idx dataset needs --train-images/--train-labels/--test-images/--test-labels")
        full = data_mod.load_idx(cfg.train_images, cfg.train_labels)
        test = data_mod.load_idx(cfg.test_images, cfg.test_labels)
    else:
        if cfg.data_dir is None:
            raise ConfigError("cifar10 dataset needs --data-dir")
        batches = [os.path.join(cfg.data_dir, f"data_batch_{i}.bin") for i in range(1, 6)]
        full = data_mod.load_cifar10([p for p in batches if os.path.exists(p)] or batches)
        test = data_mod.load_cifar10(os.path.join(cfg.data_dir, "test_batch.bin"))
    train, val = data_mod.split_validation(full, cfg.val_fraction, cfg.split_seed)
    if cfg.apply_gcn:
        train, val, test = data_mod.gcn(train), data_mod.gcn(val), data_mod.gcn(test)
    if cfg.apply_zca:
        transform = data_mod.zca_fit(train)
        train = data_mod.zca_apply(transform, train)
        val = data_mod.zca_apply(transform, val)
        test = data_mod.zca_apply(transform, test)
    return train, val, test


def _outdir(cfg):
    if not cfg.out:
        raise ConfigError(f"{cfg.command} needs --out DIR")
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _write_config(cfg, out):
    doc = asdict(cfg)
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)


def _write_csv(out, name, schema_key, rows, header_comments=()):
    path = os.path.join(out, name)
    with open(path, "w") as fh:
        fh.write(f"# schema={schema_key}-v1\n")
        for comment in header_comments:
            fh.write(f"# {comment}\n")
        columns = CSV_SCHEMAS[schema_key].split(",")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in columns) + "\n")
    return path


def _layer_range(cfg, net):
    if cfg.layer_range is not None:
        return tuple(cfg.layer_range)
    return pruning.default_layer_range(net)


def _prune_rng(cfg, offset=0):
    return np.random.default_rng(cfg.seed + offset)


def _select(cfg, net, val_set, granularity, ratio, rng):
    layer_range = _layer_range(cfg, net)
    if cfg.criterion == "weightsum":
        if granularity != "fmap":
            raise ConfigError("the weight-sum criterion selects feature maps only")
        mask = pruning.weight_sum_select(net, ratio, layer_range)
        mcr = pruning.evaluate_mask(net, mask, val_set, cfg.eval_batch)
        return mask, mcr, [mcr]
    return pruning.select_best_of_n(
        net, val_set, granularity, ratio, layer_range, cfg.n_candidates, rng,
        workers=cfg.workers, allow_orphans=cfg.allow_orphans, batch_size=cfg.eval_batch,
    )


def _apply(net, mask, allow_orphans):
    if mask.granularity == "fmap":
        return pruning.apply_feature_map_mask(net, mask)
    return pruning.apply_kernel_mask(net, mask, allow_orphans=allow_orphans)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(cfg):
    out = _outdir(cfg)
    _write_config(cfg, out)
    train_set, val_set, test_set = load_datasets(cfg)
    input_shape = train_set.samples.shape[1:]
    if cfg.arch is None:
        raise ConfigError("train needs --arch")
    net = network_mod.build(cfg.arch, input_shape, cfg.seed, mode=cfg.mode, pad_mode=cfg.pad_mode)
    best, log = trainer.train(net, train_set, val_set, cfg.train_config())
    ckpt = os.path.join(out, "best.ckpt")
    network_mod.save(best, ckpt)
    log.meta["test"] = network_mod.evaluate_record(best, test_set, "test")
    log.to_jsonl(os.path.join(out, "train_log.jsonl"))
    print(json.dumps({"checkpoint": ckpt, "best_val_mcr": log.meta["best_val_mcr"],
                      "test_mcr": log.meta["test"]["mcr"]}, sort_keys=True))
    return EXIT_OK


def cmd_prune(cfg):
    out = _outdir(cfg)
    _write_config(cfg, out)
    if cfg.checkpoint is None:
        raise ConfigError("prune needs --checkpoint")
    net = network_mod.load(cfg.checkpoint)
    _, val_set, test_set = load_datasets(cfg)
    if cfg.mask:
        with open(cfg.mask) as fh:
            mask = pruning.PruningMask.from_json(fh.read())
        pre_val = pruning.evaluate_mask(net, mask, val_set, cfg.eval_batch)
    else:
        rng = _prune_rng(cfg)
        mask, pre_val, _ = _select(cfg, net, val_set, mask_granularity(cfg), cfg.ratio, rng)
    pruned = _apply(net, mask, cfg.allow_orphans)
    report = pruning.pruning_report(net, pruned, _layer_range(cfg, net))
    ckpt = os.path.join(out, "pruned.ckpt")
    network_mod.save(pruned, ckpt)
    with open(os.path.join(out, "mask.json"), "w") as fh:
        fh.write(mask.to_json())
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(report.to_text() + "\n")
    summary = {
        "checkpoint": ckpt,
        "pre_retrain_val_mcr": pre_val,
        "pre_retrain_test_mcr": network_mod.evaluate_mcr(pruned, test_set, cfg.eval_batch),
        "weight_prune_pct": report.aggregate["weight_prune_pct"],
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def mask_granularity(cfg):
    return "fmap" if cfg.criterion == "weightsum" else cfg.granularity


def cmd_retrain(cfg):
    out = _outdir(cfg)
    _write_config(cfg, out)
    if cfg.checkpoint is None:
        raise ConfigError("retrain needs --checkpoint")
    net = network_mod.load(cfg.checkpoint)
    train_set, val_set, test_set = load_datasets(cfg)
    best, log = trainer.retrain(net, train_set, val_set, cfg.train_config())
    ckpt = os.path.join(out, "retrained.ckpt")
    network_mod.save(best, ckpt)
    log.meta["test"] = network_mod.evaluate_record(best, test_set, "test")
    log.to_jsonl(os.path.join(out, "retrain_log.jsonl"))
    print(json.dumps({"checkpoint": ckpt, "best_val_mcr": log.meta["best_val_mcr"],
                      "test_mcr": log.meta["test"]["mcr"]}, sort_keys=True))
    return EXIT_OK


def cmd_sweep_ratio(cfg):
    out = _outdir(cfg)
    _write_config(cfg, out)
    if cfg.checkpoint is None:
        raise ConfigError("sweep-ratio needs --checkpoint (a trained baseline)")
    baseline = network_mod.load(cfg.checkpoint)
    train_set, val_set, test_set = load_datasets(cfg)
    base_val = network_mod.evaluate_mcr(baseline, val_set, cfg.eval_batch)
    base_test = network_mod.evaluate_mcr(baseline, test_set, cfg.eval_batch)
    rows = []
    for granularity in cfg.granularities:
        for ridx, ratio in enumerate(cfg.ratios):
            if ratio == 0:
                rows.append({
                    "granularity": granularity, "ratio": ratio,
                    "val_mcr_pre": base_val, "val_mcr_post": base_val,
                    "test_mcr_pre": base_test, "test_mcr_post": base_test,
                })
                continue
            rng = _prune_rng(cfg, offset=1000 * ridx)
            mask, val_pre, _ = _select(cfg, baseline, val_set, granularity, ratio, rng)
            pruned = _apply(baseline, mask, cfg.allow_orphans)
            test_pre = network_mod.evaluate_mcr(pruned, test_set, cfg.eval_batch)
            retrained, _ = trainer.retrain(
                pruned, train_set, val_set, cfg.train_config(epochs=cfg.retrain_epochs)
            )
            rows.append({
                "granularity": granularity, "ratio": ratio,
                "val_mcr_pre": val_pre,
                "val_mcr_post": network_mod.evaluate_mcr(retrained, val_set, cfg.eval_batch),
                "test_mcr_pre": test_pre,
                "test_mcr_post": network_mod.evaluate_mcr(retrained, test_set, cfg.eval_batch),
            })
    path = _write_csv(
        out, "sweep_ratio.csv", "sweep-ratio", rows,
        header_comments=[
            f"baseline_val_mcr={base_val}",
            f"tolerance_val_mcr={base_val + 1.0}",
            f"baseline_test_mcr={base_test}",
            f"tolerance_test_mcr={base_test + 1.0}",
        ],
    )
    print(json.dumps({"csv": path, "rows": len(rows)}, sort_keys=True))
    return EXIT_OK


def cmd_sweep_n(cfg):
    out = _outdir(cfg)
    _write_config(cfg, out)
    if cfg.checkpoint is None:
        raise ConfigError("sweep-n needs --checkpoint (a trained baseline)")
    baseline = network_mod.load(cfg.checkpoint)
    _, val_set, _ = load_datasets(cfg)
    n_values = sorted(set(int(n) for n in cfg.n_values))
    layer_range = _layer_range(cfg, baseline)
    rows = []
    for seed_idx in range(cfg.seeds):
        rng = _prune_rng(cfg, offset=7919 * seed_idx)
        _, _, mcrs = pruning.select_best_of_n(
            baseline, val_set, cfg.granularity, cfg.ratio, layer_range,
            max(n_values), rng, workers=cfg.workers,
            allow_orphans=cfg.allow_orphans, batch_size=cfg.eval_batch,
        )
        # best-of-N over the first N candidates of one stream: each prefix
        # minimum is a faithful best-of-N sample and N is monotone by builds
        for n in n_values:
            rows.append({
                "ratio": cfg.ratio, "n": n, "seed": cfg.seed + 7919 * seed_idx,
                "best_val_mcr": min(mcrs[:n]),
            })
    path = _write_csv(out, "sweep_n.csv", "sweep-n", rows)
    print(json.dumps({"csv": path, "rows": len(rows)}, sort_keys=True))
    return EXIT_OK


def cmd_compare_criteria(cfg):
    out = _outdir(cfg)
    _write_config(cfg, out)
    if cfg.checkpoint is None:
        raise ConfigError("compare-criteria needs --checkpoint (a trained baseline)")
    baseline = network_mod.load(cfg.checkpoint)
    _, val_set, test_set = load_datasets(cfg)
    layer_range = _layer_range(cfg, baseline)
    rows = []
    for ridx, ratio in enumerate(cfg.ratios):
        rng = _prune_rng(cfg, offset=1000 * ridx)
        best_mask, best_val, _ = pruning.select_best_of_n(
            baseline, val_set, "fmap", ratio, layer_range, cfg.n_candidates, rng,
            workers=cfg.workers, batch_size=cfg.eval_batch,
        )
        ws_mask = pruning.weight_sum_select(baseline, ratio, layer_range)
        ws_val = pruning.evaluate_mask(baseline, ws_mask, val_set, cfg.eval_batch)
        rows.append({
            "ratio": ratio,
            "best_of_n_val_mcr": best_val,
            "weight_sum_val_mcr": ws_val,
            "best_of_n_test_mcr": pruning.evaluate_mask(baseline, best_mask, test_set, cfg.eval_batch),
            "weight_sum_test_mcr": pruning.evaluate_mask(baseline, ws_mask, test_set, cfg.eval_batch),
        })
    path = _write_csv(out, "compare_criteria.csv", "compare-criteria", rows)
    print(json.dumps({"csv": path, "rows": len(rows)}, sort_keys=True))
    return EXIT_OK


def cmd_combined(cfg):
    out = _outdir(cfg)
    _write_config(cfg, out)
    if cfg.checkpoint is None:
        raise ConfigError("combined needs --checkpoint (a trained baseline)")
    baseline = network_mod.load(cfg.checkpoint)
    train_set, val_set, test_set = load_datasets(cfg)
    combined_cfg = pruning.CombinedConfig(
        retrain=cfg.train_config(epochs=cfg.retrain_epochs),
        candidates=cfg.n_candidates,
        layer_range=cfg.layer_range and tuple(cfg.layer_range),
        seed=cfg.seed,
        workers=cfg.workers,
        allow_orphans=cfg.allow_orphans,
        batch_size=cfg.eval_batch,
    )
    final, report, stages = pruning.combined_prune(
        baseline, cfg.fmap_ratio, cfg.kernel_ratio, (train_set, val_set), combined_cfg
    )
    ckpt = os.path.join(out, "combined.ckpt")
    network_mod.save(final, ckpt)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(report.to_text() + "\n")
    for name, stage in stages.items():
        with open(os.path.join(out, f"{name}_mask.json"), "w") as fh:
            fh.write(stage["mask"].to_json())
        with open(os.path.join(out, f"{name}_report.json"), "w") as fh:
            fh.write(stage["report"].to_json())
        stage["log"].to_jsonl(os.path.join(out, f"{name}_retrain_log.jsonl"))
    print(json.dumps({
        "checkpoint": ckpt,
        "test_mcr": network_mod.evaluate_mcr(final, test_set, cfg.eval_batch),
        "weight_prune_pct": report.aggregate["weight_prune_pct"],
        "stage_weight_prune_pct_sum": report.aggregate.get("stage_weight_prune_pct_sum"),
    }, sort_keys=True))
    return EXIT_OK


def cmd_report(cfg):
    if cfg.before is None or cfg.after is None:
        raise ConfigError("report needs --before and --after checkpoints")
    before = network_mod.load(cfg.before)
    after = network_mod.load(cfg.after)
    layer_range = cfg.layer_range and tuple(cfg.layer_range)
    report = pruning.pruning_report(before, after, layer_range)
    if cfg.out:
        out = _outdir(cfg)
        with open(os.path.join(out, "report.json"), "w") as fh:
            fh.write(report.to_json())
        with open(os.path.join(out, "report.txt"), "w") as fh:
            fh.write(report.to_text() + "\n")
    print(report.to_json())
    print(report.to_text(), file=sys.stderr)
    return EXIT_OK


def cmd_bench(cfg):
    out = _outdir(cfg)
    _write_config(cfg, out)
    if cfg.checkpoint is None:
        raise ConfigError("bench needs --checkpoint")
    net = network_mod.load(cfg.checkpoint)
    rows = bench_mod.bench_network(net, batch_size=16, rng=np.random.default_rng(cfg.seed))
    path = _write_csv(out, "bench.csv", "bench", rows)
    print(json.dumps({"csv": path, "rows": len(rows)}, sort_keys=True))
    return EXIT_OK


def cmd_info(cfg):
    if cfg.checkpoint is None:
        raise ConfigError("info needs --checkpoint")
    net = network_mod.load(cfg.checkpoint)
    from .archparse import render_architecture

    model = bench_mod.cost_model(net)
    doc = {
        "arch": render_architecture(net.spec),
        "input_shape": list(net.spec.input_shape),
        "mode": net.mode,
        "pad_mode": net.pad_mode,
        "seed": net.seed,
        "meta": net.meta,
        "active_conv_weights": network_mod.count_weights(net),
        "macs_per_sample": network_mod.count_macs(net),
        "cost_model": json.loads(model.to_json()),
    }
    print(json.dumps(doc, sort_keys=True, indent=2))
    print(model.to_text(), file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "prune": cmd_prune,
    "retrain": cmd_retrain,
    "sweep-ratio": cmd_sweep_ratio,
    "sweep-n": cmd_sweep_n,
    "compare-criteria": cmd_compare_criteria,
    "combined": cmd_combined,
    "report": cmd_report,
    "bench": cmd_bench,
    "info": cmd_info,
}


def _csv_list(kind):
    def parse(text):
        return tuple(kind(v) for v in text.split(",") if v)

    return parse


def _range_arg(text):
    lo, _, hi = text.partition("-")
    return (int(lo), int(hi or lo))


def build_parser():
    parser = argparse.ArgumentParser(prog="prunelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file; explicit flags win")
        p.add_argument("--out")
        p.add_argument("--arch")
        p.add_argument("--pad-mode", dest="pad_mode", choices=("same", "valid"))
        p.add_argument("--mode", choices=("float32", "float64"))
        p.add_argument("--seed", type=int)
        p.add_argument("--dataset", choices=("synthetic", "idx", "cifar10"))
        p.add_argument("--data-dir", dest="data_dir")
        p.add_argument("--train-images", dest="train_images")
        p.add_argument("--train-labels", dest="train_labels")
        p.add_argument("--test-images", dest="test_images")
        p.add_argument("--test-labels", dest="test_labels")
        p.add_argument("--synthetic-train-n", dest="synthetic_train_n", type=int)
        p.add_argument("--synthetic-test-n", dest="synthetic_test_n", type=int)
        p.add_argument("--image-size", dest="image_size", type=int)
        p.add_argument("--val-fraction", dest="val_fraction", type=float)
        p.add_argument("--split-seed", dest="split_seed", type=int)
        p.add_argument("--gcn", dest="apply_gcn", action="store_const", const=True)
        p.add_argument("--zca", dest="apply_zca", action="store_const", const=True)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", dest="learning_rate", type=float)
        p.add_argument("--rmsprop-decay", dest="rmsprop_decay", type=float)
        p.add_argument("--rmsprop-epsilon", dest="rmsprop_epsilon", type=float)
        p.add_argument("--checkpoint")
        p.add_argument("--before")
        p.add_argument("--after")
        p.add_argument("--granularity", choices=pruning.GRANULARITIES)
        p.add_argument("--granularities", type=_csv_list(str))
        p.add_argument("--ratio", type=float)
        p.add_argument("--ratios", type=_csv_list(float))
        p.add_argument("--n", dest="n_candidates", type=int)
        p.add_argument("--n-values", dest="n_values", type=_csv_list(int))
        p.add_argument("--seeds", type=int)
        p.add_argument("--criterion", choices=("random", "weightsum"))
        p.add_argument("--layers", dest="layer_range", type=_range_arg,
                       help="conv layer range, e.g. 2-6")
        p.add_argument("--mask", help="replay a mask JSON file")
        p.add_argument("--allow-orphans", dest="allow_orphans", action="store_const", const=True)
        p.add_argument("--fmap-ratio", dest="fmap_ratio", type=float)
        p.add_argument("--kernel-ratio", dest="kernel_ratio", type=float)
        p.add_argument("--retrain-epochs", dest="retrain_epochs", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--eval-batch", dest="eval_batch", type=int)
    return parser


def resolve_config(args):
    """Merge precedence: explicit flags > config file > defaults."""
    file_values = {}
    if args.config:
        try:
            with open(args.config) as fh:
                file_values = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        file_values.pop("command", None)
    merged = {"command": args.command}
    valid = {f.name for f in ExperimentConfig.__dataclass_fields__.values()}
    unknown = set(file_values) - valid
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged.update(file_values)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        merged[key] = value
    for tuple_key in ("granularities", "ratios", "n_values", "lr_schedule", "layer_range"):
        if tuple_key in merged and merged[tuple_key] is not None:
            merged[tuple_key] = tuple(
                tuple(v) if isinstance(v, list) else v for v in merged[tuple_key]
            )
    return ExperimentConfig(**merged).validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ArchitectureError, MaskError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PruneLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
