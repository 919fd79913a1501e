import numpy as np
import pytest

import prunelab as pl
from prunelab.errors import ConfigError, NumericError
from prunelab.trainer import OptimizerState, rmsprop_step


def toy_two_blob_dataset(n, seed):
    """Linearly separable two-class images: bright left vs bright right."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n).astype(np.int64)
    samples = rng.normal(0.0, 0.05, size=(n, 1, 6, 6))
    for i in range(n):
        if labels[i]:
            samples[i, 0, :, 3:] += 1.0
        else:
            samples[i, 0, :, :3] += 1.0
    return pl.Dataset(samples=np.clip(samples, 0, 2), labels=labels, class_count=2)


class TestRmsprop:
    def test_zero_gradient_keeps_params(self):
        p = np.array([1.0, -2.0, 3.0])
        s0 = np.array([0.5, 0.5, 0.5])
        state = OptimizerState(accumulators={"p": s0.copy()})
        cfg = pl.TrainConfig(epochs=1, learning_rate=0.1)
        rmsprop_step([("p", p)], {"p": np.zeros(3)}, state, cfg)
        assert np.array_equal(p, [1.0, -2.0, 3.0])
        np.testing.assert_allclose(state.accumulators["p"], 0.9 * s0)

    def test_hand_evaluated_scalar_update(self):
        p = np.array([1.0])
        state = OptimizerState()
        cfg = pl.TrainConfig(epochs=1, learning_rate=0.1, rmsprop_decay=0.9,
                             rmsprop_epsilon=1e-8)
        rmsprop_step([("p", p)], {"p": np.array([1.0])}, state, cfg)
        assert state.accumulators["p"][0] == pytest.approx(0.1, rel=1e-12)
        assert p[0] == pytest.approx(1.0 - 0.1 / np.sqrt(0.1 + 1e-8), rel=1e-9)
        assert p[0] == pytest.approx(0.683772, abs=1e-6)

    def test_two_steps_match_scalar_reimplementation(self):
        p = np.array([0.5])
        g = np.array([0.3])
        state = OptimizerState()
        cfg = pl.TrainConfig(epochs=1, learning_rate=0.05, rmsprop_decay=0.8,
                             rmsprop_epsilon=1e-7)
        ps, ss = 0.5, 0.0
        for _ in range(2):
            rmsprop_step([("p", p)], {"p": g}, state, cfg)
            ss = 0.8 * ss + 0.2 * 0.3**2
            ps = ps - 0.05 * 0.3 / np.sqrt(ss + 1e-7)
        assert abs(p[0] - ps) < 1e-12
        assert abs(state.accumulators["p"][0] - ss) < 1e-12

    def test_non_finite_gradient_aborts(self):
        state = OptimizerState()
        cfg = pl.TrainConfig(epochs=1)
        with pytest.raises(NumericError, match="non-finite"):
            rmsprop_step([("p", np.ones(2))], {"p": np.array([1.0, np.nan])}, state, cfg)


class TestTrainConfig:
    def test_batch_size_floor(self):
        with pytest.raises(ConfigError):
            pl.TrainConfig(epochs=1, batch_size=1).validate()

    def test_lr_schedule(self):
        cfg = pl.TrainConfig(epochs=10, learning_rate=0.1, lr_schedule=((4, 0.5), (8, 0.1)))
        assert cfg.lr_at(1) == 0.1
        assert cfg.lr_at(4) == pytest.approx(0.05)
        assert cfg.lr_at(9) == pytest.approx(0.01)


class TestTrain:
    def test_toy_problem_reaches_zero_mcr(self):
        pl.set_arithmetic_mode("float32")
        net = pl.build("2C3-8FC-2Softmax", (1, 6, 6), seed=0, mode="float32")
        train = toy_two_blob_dataset(256, 1)
        val = toy_two_blob_dataset(64, 2)
        cfg = pl.TrainConfig(epochs=20, batch_size=32, learning_rate=3e-3, seed=0, mode="float32")
        best, log = pl.train(net, train, val, cfg)
        assert log.meta["best_val_mcr"] == 0.0
        assert pl.evaluate_mcr(best, val) == 0.0

    def test_zero_epochs_returns_unchanged(self):
        net = pl.build("2C3-2Softmax", (1, 6, 6), seed=0, mode="float32")
        before = {n: p.copy() for n, p in pl.trainable_parameters(net)}
        cfg = pl.TrainConfig(epochs=0, mode="float32")
        out, log = pl.train(net, toy_two_blob_dataset(64, 1), toy_two_blob_dataset(16, 2), cfg)
        assert log.records == []
        for name, p in pl.trainable_parameters(out):
            assert np.array_equal(p, before[name])

    def test_lr_zero_is_rejected(self):
        cfg = pl.TrainConfig(epochs=1, learning_rate=0.0)
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_same_seed_identical_logs_and_nets(self, tmp_path):
        results = []
        for _ in range(2):
            net = pl.build("2C3-8FC-2Softmax", (1, 6, 6), seed=5, mode="float32")
            cfg = pl.TrainConfig(epochs=3, batch_size=32, seed=9, mode="float32")
            best, log = pl.train(net, toy_two_blob_dataset(128, 3), toy_two_blob_dataset(32, 4), cfg)
            path = tmp_path / f"run{len(results)}.ckpt"
            pl.save(best, path)
            results.append((path.read_bytes(), [
                {k: v for k, v in r.items() if k != "wall_ms"} for r in log.records
            ]))
        assert results[0][0] == results[1][0]
        assert results[0][1] == results[1][1]

    def test_empty_dataset_rejected(self):
        net = pl.build("2C3-2Softmax", (1, 6, 6), seed=0, mode="float32")
        empty = pl.Dataset(samples=np.zeros((0, 1, 6, 6)), labels=np.zeros(0, dtype=np.int64), class_count=2)
        with pytest.raises(ConfigError):
            pl.train(net, empty, toy_two_blob_dataset(16, 0), pl.TrainConfig(epochs=1, mode="float32"))

    def test_first_epoch_loss_decreases_for_most_seeds(self):
        pl.set_arithmetic_mode("float32")
        train = toy_two_blob_dataset(256, 11)
        val = toy_two_blob_dataset(32, 12)
        wins = 0
        seeds = range(20)
        for seed in seeds:
            net = pl.build("2C3-8FC-2Softmax", (1, 6, 6), seed=seed, mode="float32")
            cfg = pl.TrainConfig(epochs=1, batch_size=32, learning_rate=3e-3, seed=seed, mode="float32")
            _, log = pl.train(net, train, val, cfg)
            if log.meta["epoch1_last_batch_loss"] < log.meta["epoch1_first_batch_loss"]:
                wins += 1
        assert wins >= 0.95 * len(seeds)


class TestRetrain:
    def _masked_net(self):
        net = pl.build("2C3-4C3-8FC-2Softmax", (1, 6, 6), seed=0, mode="float32")
        rng = np.random.default_rng(3)
        mask = pl.sample_mask(net, "kernel", 0.5, (2, 2), rng)
        return pl.apply_kernel_mask(net, mask)

    def test_zero_epochs_unchanged(self):
        net = self._masked_net()
        before = {n: p.copy() for n, p in pl.trainable_parameters(net)}
        out, _ = pl.retrain(net, toy_two_blob_dataset(64, 1), toy_two_blob_dataset(16, 2),
                            pl.TrainConfig(epochs=0, mode="float32"))
        for name, p in pl.trainable_parameters(out):
            assert np.array_equal(p, before[name])

    def test_masked_kernels_stay_exactly_zero(self):
        net = self._masked_net()
        dead = net.conv_block(2).conv.connectivity == 0
        assert dead.any()
        out, _ = pl.retrain(net, toy_two_blob_dataset(128, 5), toy_two_blob_dataset(32, 6),
                            pl.TrainConfig(epochs=5, batch_size=32, mode="float32"))
        assert np.abs(out.conv_block(2).conv.kernels[dead]).max() == 0.0
        assert np.array_equal(out.conv_block(2).conv.connectivity, net.conv_block(2).conv.connectivity)
        # and the live kernels did move
        live = ~dead
        assert not np.array_equal(out.conv_block(2).conv.kernels[live],
                                  self._masked_net().conv_block(2).conv.kernels[live])


class TestExperimentLog:
    def test_jsonl_round_trip(self, tmp_path):
        log = pl.ExperimentLog(kind="train", seed=3, mode="float32", config={"epochs": 2})
        log.append(epoch=1, train_loss=0.5, val_mcr=10.0, lr=1e-3, wall_ms=12.0)
        log.append(epoch=2, train_loss=0.4, val_mcr=8.0, lr=1e-3, wall_ms=11.0)
        log.meta["best_epoch"] = 2
        path = tmp_path / "log.jsonl"
        log.to_jsonl(path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 3
        loaded = pl.ExperimentLog.from_jsonl(path)
        assert loaded.records == log.records
        assert loaded.meta["best_epoch"] == 2
        assert set(loaded.records[0]) == {"epoch", "train_loss", "val_mcr", "lr", "wall_ms"}
