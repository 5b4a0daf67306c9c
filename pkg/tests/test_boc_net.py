import math

import numpy as np
import pytest

from contourqa.boc_net import (
    NetworkConfig,
    OrdinalScheme,
    TrainConfig,
    build_network,
    corn_loss,
    config_hash,
    fine_tune,
    forward,
    load_checkpoint,
    mc_forward,
    mc_forward_batch,
    new_model,
    save_checkpoint,
    train,
)
from contourqa.errors import ConfigurationError
from contourqa.nn import derive_rng

MLP = NetworkConfig(backbone="mlp_features")
TINY_CNN = NetworkConfig(backbone="small_cnn", image_size=8, conv_channels=(3, 4), dense_width=8)


def finite_difference_worst_error(netcfg, seed, n=6, weight_decay=1e-4, h=1e-4):
    """Worst relative error between analytic and central-difference gradients,
    over every parameter coordinate."""
    net = build_network(netcfg, seed)
    rng = np.random.default_rng(seed + 1000)
    x = rng.normal(size=(n,) + netcfg.input_shape())
    y = rng.integers(0, 3, size=n)
    _, grads = corn_loss(net, x, y, weight_decay=weight_decay, mode="deterministic")
    worst = 0.0
    for (_, _, arr), grad in zip(net.param_entries(), grads):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = corn_loss(net, x, y, weight_decay=weight_decay, mode="deterministic")
            flat[i] = orig - h
            down, _ = corn_loss(net, x, y, weight_decay=weight_decay, mode="deterministic")
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            err = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-6)
            worst = max(worst, err)
    return worst


class TestForward:
    def test_zero_parameters_give_half(self):
        net = build_network(MLP, 0)
        for _, _, arr in net.param_entries():
            arr[...] = 0.0
        assert forward(net, np.ones(6)).tolist() == [0.5, 0.5]

    def test_fixed_rng_stream_repeats(self):
        net = build_network(MLP, 1)
        x = np.ones(6)
        a = forward(net, x, "eval_stochastic", derive_rng(5))
        b = forward(net, x, "eval_stochastic", derive_rng(5))
        assert np.array_equal(a, b)

    def test_dropout_zero_modes_agree(self):
        cfg = NetworkConfig(backbone="mlp_features", dropout_rate=0.0)
        net = build_network(cfg, 2)
        x = np.linspace(-1, 1, 6)
        det = forward(net, x, "deterministic")
        sto = forward(net, x, "train_stochastic", derive_rng(0))
        assert np.array_equal(det, sto)

    def test_outputs_in_unit_interval(self):
        net = build_network(TINY_CNN, 3)
        x = np.random.default_rng(0).normal(size=(4,) + TINY_CNN.input_shape())
        probs = forward(net, x, "eval_stochastic", derive_rng(1))
        assert probs.shape == (4, 2)
        assert ((probs > 0) & (probs < 1)).all()


class TestCornLoss:
    def test_saturated_correct_heads_drive_loss_to_zero(self):
        net = build_network(MLP, 0)
        x = np.ones((1, 6))
        # push the head biases to saturate both units toward one
        head = net.layers[-1]
        head.W[...] = 0.0
        head.b[...] = 30.0
        for layer in net.layers[:-1]:
            for arr in layer.param_arrays():
                arr[...] = 0.0
        loss, _ = corn_loss(net, x, np.array([2]), mode="deterministic")
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_class_zero_only_first_unit(self):
        # with y=0 the second unit's subset is empty: loss = -log(1 - f1)
        net = build_network(MLP, 4)
        x = np.random.default_rng(0).normal(size=(1, 6))
        loss, _ = corn_loss(net, x, np.array([0]), mode="deterministic")
        f1 = forward(net, x, "deterministic")[0, 0]
        assert loss == pytest.approx(-math.log(1.0 - f1), rel=1e-9)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(1)
        for seed in range(5):
            net = build_network(MLP, seed)
            x = rng.normal(size=(8, 6))
            y = rng.integers(0, 3, size=8)
            loss, _ = corn_loss(net, x, y, mode="deterministic")
            assert loss >= 0.0

    # seeds keep every preactivation away from a ReLU kink at the 1e-4 step,
    # so the central difference is a valid derivative estimate everywhere
    @pytest.mark.parametrize(
        "netcfg,seed",
        [(MLP, 0), (MLP, 1), (MLP, 3), (TINY_CNN, 1), (TINY_CNN, 3), (TINY_CNN, 4)],
    )
    def test_gradient_matches_finite_differences(self, netcfg, seed):
        assert finite_difference_worst_error(netcfg, seed) < 1e-4


class TestTraining:
    def separable(self, n=200, seed=0):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 3, size=n)
        x = rng.normal(size=(n, 6)) * 0.3
        x[:, 0] += 2.0 * y
        return x, y

    def test_zero_epochs_returns_initial_parameters(self):
        x, y = self.separable()
        cfg = TrainConfig(epochs=0, seed=5)
        params, trace = train(cfg, MLP, (x, y))
        fresh = build_network(MLP, seed=int(derive_rng(5, 0).integers(2**63))).snapshot()
        assert trace == []
        assert all(np.array_equal(a, b) for a, b in zip(params.values, fresh.values))

    def test_separable_data_reaches_95(self):
        from contourqa.boc_net import _predict_deterministic

        x, y = self.separable()
        cfg = TrainConfig(epochs=60, learning_rate=3e-3, seed=3, lr_milestones=(36, 51))
        params, _ = train(cfg, MLP, (x, y))
        net = new_model(MLP, params)
        assert float((_predict_deterministic(net, x) == y).mean()) >= 0.95

    def test_same_seed_identical_traces_and_params(self):
        x, y = self.separable()
        cfg = TrainConfig(epochs=6, seed=9)
        p1, t1 = train(cfg, MLP, (x, y))
        p2, t2 = train(cfg, MLP, (x, y))
        assert [s.train_loss for s in t1] == [s.train_loss for s in t2]
        assert all(np.array_equal(a, b) for a, b in zip(p1.values, p2.values))

    def test_single_class_warns_but_trains(self):
        x = np.random.default_rng(0).normal(size=(20, 6))
        y = np.zeros(20, dtype=int)
        with pytest.warns(UserWarning, match="single class"):
            train(TrainConfig(epochs=1, seed=0), MLP, (x, y))

    def test_lr_schedule(self):
        cfg = TrainConfig(epochs=10, learning_rate=1.0, lr_milestones=(3, 7))
        assert cfg.lr_at(1) == 1.0
        assert cfg.lr_at(3) == pytest.approx(0.2)
        assert cfg.lr_at(7) == pytest.approx(0.04)
        assert cfg.lr_at(10) == pytest.approx(0.04)

    def test_validation_returns_best(self):
        x, y = self.separable(160, 1)
        xv, yv = self.separable(60, 2)
        cfg = TrainConfig(epochs=10, learning_rate=3e-3, seed=4)
        params, trace = train(cfg, MLP, (x, y), validation=(xv, yv))
        from contourqa.boc_net import _predict_deterministic

        net = new_model(MLP, params)
        best = max(s.val_accuracy for s in trace)
        assert float((_predict_deterministic(net, xv) == yv).mean()) == pytest.approx(best)


class TestFineTune:
    def pretrained(self):
        x, y = TestTraining().separable(120, 3)
        params, _ = train(TrainConfig(epochs=4, seed=1), MLP, (x, y))
        return params, (x, y)

    def test_all_zero_rates_keep_parameters(self):
        params, data = self.pretrained()
        groups = [("features", 0.0), ("trunk", 0.0), ("head", 0.0)]
        tuned, _ = fine_tune(params, groups, TrainConfig(epochs=3, seed=2), MLP, data)
        assert all(np.array_equal(a, b) for a, b in zip(params.values, tuned.values))

    def test_frozen_group_is_bit_identical(self):
        params, data = self.pretrained()
        groups = [("features", 0.0), ("trunk", 1e-3), ("head", 1e-3)]
        tuned, _ = fine_tune(params, groups, TrainConfig(epochs=3, seed=2), MLP, data)
        for name, group, before, after in zip(params.names, params.groups, params.values, tuned.values):
            if group == "features":
                assert np.array_equal(before, after), name
            elif name == "head.W":
                assert not np.array_equal(before, after)

    def test_group_mismatch_raises(self):
        params, data = self.pretrained()
        with pytest.raises(ConfigurationError):
            fine_tune(params, [("features", 0.0), ("head", 1e-3)], TrainConfig(epochs=1), MLP, data)


class TestMcForward:
    def test_dropout_zero_passes_identical(self):
        cfg = NetworkConfig(backbone="mlp_features", dropout_rate=0.0)
        net = build_network(cfg, 5)
        probs = mc_forward(net, np.ones(6), t=5, seed=1)
        assert np.ptp(probs, axis=0).tolist() == [0.0, 0.0]

    def test_single_pass_matches_stochastic_forward(self):
        net = build_network(MLP, 6)
        x = np.ones(6)
        probs = mc_forward(net, x, t=1, seed=4)
        direct = forward(net, x[None, :], "eval_stochastic", derive_rng(4, 0))
        assert np.array_equal(probs[0], direct[0])

    def test_default_pass_count_is_20(self):
        net = build_network(MLP, 6)
        assert mc_forward(net, np.ones(6)).shape == (20, 2)

    def test_deterministic_given_seed(self):
        net = build_network(MLP, 7)
        x = np.random.default_rng(0).normal(size=(3, 6))
        a = mc_forward_batch(net, x, t=4, seed=9)
        b = mc_forward_batch(net, x, t=4, seed=9)
        assert np.array_equal(a, b)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = build_network(TINY_CNN, 11)
        params = net.snapshot()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, TINY_CNN, params)
        cfg2, loaded = load_checkpoint(path)
        assert cfg2 == TINY_CNN
        assert config_hash(cfg2) == config_hash(TINY_CNN)
        # values pass through float32 storage; a second save must be identical
        save_checkpoint(tmp_path / "again.ckpt", cfg2, loaded)
        assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes() or all(
            np.array_equal(a.astype(np.float32), b) for a, b in zip(params.values, loaded.values)
        )
        cfg3, loaded2 = load_checkpoint(tmp_path / "again.ckpt")
        assert all(np.array_equal(a, b) for a, b in zip(loaded.values, loaded2.values))

    def test_magic_rejected(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(bad)

    def test_loaded_network_reproduces_outputs(self, tmp_path):
        net = build_network(MLP, 12)
        x = np.random.default_rng(1).normal(size=(4, 6))
        before = forward(net, x, "deterministic")
        save_checkpoint(tmp_path / "m.ckpt", MLP, net.snapshot())
        cfg, params = load_checkpoint(tmp_path / "m.ckpt")
        after = forward(new_model(cfg, params), x, "deterministic")
        # float32 storage rounds parameters; outputs agree to that precision
        assert np.allclose(before, after, atol=1e-6)


class TestOrdinalScheme:
    def test_k3_codings(self):
        scheme = OrdinalScheme(3)
        assert scheme.encode(0) == (0, 0)
        assert scheme.encode(1) == (1, 0)
        assert scheme.encode(2) == (1, 1)

    def test_invalid_label(self):
        with pytest.raises(ValueError):
            OrdinalScheme(3).encode(3)
