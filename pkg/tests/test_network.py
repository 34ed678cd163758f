"""Network assembly, batch norm, rate decoding, and checkpoint round-trips."""

import numpy as np
import pytest

from spikessm import autodiff as ad
from spikessm.network import (
    BatchNorm,
    NetworkConfig,
    batch_norm_step,
    build_network,
    load_checkpoint,
    rate_decode,
    save_checkpoint,
    time_accumulate,
)
from spikessm.neuron import init_state, layer_step


def small_cfg(**kw):
    base = dict(c_in=3, c_out=4, num_hidden_layers=2, h=5, n=2, n_out=2)
    base.update(kw)
    return NetworkConfig(**base)


class TestBuildNetwork:
    def test_reference_shape_and_parameter_count(self):
        # the published sequential-digits configuration lands at ~113k
        cfg = NetworkConfig(c_in=1, c_out=10, num_hidden_layers=2,
                            h=96, n=8, n_out=8)
        net = build_network(cfg, seed=0)
        assert net.w_in.data.shape == (96, 1)
        assert net.w_hidden[0].data.shape == (96, 96 * 8)
        assert net.w_out.data.shape == (10, 96 * 8)
        assert abs(net.num_trainable() - 113_000) < 500

    def test_single_hidden_layer_valid(self):
        net = build_network(small_cfg(num_hidden_layers=1), seed=1)
        assert len(net.layers) == 1 and len(net.w_hidden) == 0

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            small_cfg(h=0)
        with pytest.raises(ValueError):
            small_cfg(dropout_rate=1.0)


class TestForward:
    def test_all_zero_weights_give_zero_logits(self):
        net = build_network(small_cfg(), seed=2)
        for name, t, _ in net.named_params():
            t.data[:] = 0.0
        batch = np.random.default_rng(0).normal(size=(3, 7, 3))
        logits, _ = net.forward(batch, train=True)
        np.testing.assert_array_equal(logits.data, np.zeros((3, 7, 4)))

    def test_single_step_reduces_to_composed_affine_neuron_step(self):
        cfg = small_cfg(batch_norm=False, num_hidden_layers=1)
        net = build_network(cfg, seed=3)
        x = np.random.default_rng(1).normal(size=(1, 1, 3))
        logits, _ = net.forward(x)

        cur = x[0, 0] @ net.w_in.data.T
        state = init_state(net.layers[0], 1)
        state, s = layer_step(net.layers[0], state, cur[None, :])
        manual = s.data.reshape(1, -1) @ net.w_out.data.T
        np.testing.assert_allclose(logits.data[0, 0], manual[0], atol=1e-12)

    def test_eval_determinism(self):
        net = build_network(small_cfg(), seed=4)
        batch = np.random.default_rng(2).normal(size=(2, 9, 3))
        a, _ = net.forward(batch)
        b, _ = net.forward(batch)
        np.testing.assert_array_equal(a.data, b.data)

    def test_spike_record_shape_and_codomain(self):
        cfg = small_cfg(activation="signed")
        net = build_network(cfg, seed=5)
        batch = np.random.default_rng(3).normal(size=(2, 6, 3)) * 3
        _, rec = net.forward(batch)
        assert rec.spikes.shape == (2, 6, 2, 5, 2)
        assert set(np.unique(rec.spikes)) <= {-1.0, 0.0, 1.0}

    def test_non_finite_batch_rejected(self):
        net = build_network(small_cfg(), seed=6)
        batch = np.zeros((1, 2, 3))
        batch[0, 1, 1] = np.nan
        with pytest.raises(ValueError):
            net.forward(batch)

    def test_dropout_needs_rng_in_train_mode(self):
        net = build_network(small_cfg(dropout_rate=0.5), seed=7)
        with pytest.raises(ValueError):
            net.forward(np.zeros((2, 3, 3)), train=True)


class TestChannelMask:
    def test_all_channels_dropped_logits_constant(self):
        net = build_network(small_cfg(), seed=8)
        net.channel_mask = np.zeros(2)
        rng = np.random.default_rng(4)
        l1, _ = net.forward(rng.normal(size=(2, 5, 3)))
        l2, _ = net.forward(rng.normal(size=(2, 5, 3)) * 7)
        np.testing.assert_allclose(l1.data, l2.data, atol=1e-12)

    def test_empty_mask_is_identity(self):
        net = build_network(small_cfg(), seed=9)
        batch = np.random.default_rng(5).normal(size=(2, 5, 3))
        base, _ = net.forward(batch)
        net.channel_mask = np.ones(2)
        masked, _ = net.forward(batch)
        np.testing.assert_array_equal(base.data, masked.data)


class TestRateDecode:
    def test_constant_one_hot(self):
        logits = np.tile(np.array([0.0, 0.0, 1.0, 0.0]), (2, 6, 1))
        np.testing.assert_array_equal(rate_decode(logits), [2, 2])

    def test_tie_breaks_to_lowest_index(self):
        logits = np.ones((3, 4, 5))
        np.testing.assert_array_equal(rate_decode(logits), [0, 0, 0])

    def test_argmax_of_accumulation(self):
        acc = np.array([[1.0, 3.0, 2.0]])
        np.testing.assert_array_equal(rate_decode(acc), [1])

    def test_time_permutation_invariance(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(size=(4, 9, 3))
        perm = rng.permutation(9)
        np.testing.assert_array_equal(rate_decode(logits),
                                      rate_decode(logits[:, perm]))

    def test_masked_accumulation(self):
        logits = np.zeros((1, 3, 2))
        logits[0, 2] = [5.0, 0.0]   # masked out below
        logits[0, 0] = [0.0, 1.0]
        mask = np.array([[1.0, 1.0, 0.0]])
        np.testing.assert_array_equal(rate_decode(logits, mask), [1])

    def test_time_accumulate_matches_sum(self):
        logits = ad.Tensor(np.arange(24, dtype=float).reshape(2, 3, 4))
        np.testing.assert_array_equal(time_accumulate(logits).data,
                                      logits.data.sum(axis=1))


class TestBatchNorm:
    def test_constant_channel_returns_shift(self):
        bn = BatchNorm(3)
        bn.beta.data[:] = [1.0, -2.0, 0.5]
        x = np.full((8, 3), 7.0)
        out = batch_norm_step(bn, x, mode="train")
        np.testing.assert_allclose(out.data, np.tile(bn.beta.data, (8, 1)),
                                   atol=1e-9)

    def test_eval_passthrough_with_identity_stats(self):
        bn = BatchNorm(2, eps=0.0)
        x = np.random.default_rng(7).normal(size=(5, 2))
        out = batch_norm_step(bn, x, mode="eval")
        np.testing.assert_allclose(out.data, x, atol=1e-12)

    def test_train_mode_normalizes(self):
        bn = BatchNorm(4, eps=1e-12)
        x = np.random.default_rng(8).normal(loc=3.0, scale=2.0, size=(512, 4))
        out = batch_norm_step(bn, x, mode="train").data
        assert np.abs(out.mean(axis=0)).max() < 1e-6
        assert np.abs(out.var(axis=0) - 1.0).max() < 1e-6

    def test_running_stats_updated(self):
        bn = BatchNorm(1, momentum=0.5)
        x = np.array([[2.0], [4.0]])
        batch_norm_step(bn, x, mode="train")
        assert bn.running_mean[0] == pytest.approx(1.5)  # 0.5*0 + 0.50*3
        assert bn.running_var[0] == pytest.approx(0.5 * 1.0 + 0.5 * 1.0)

    def test_invalid_mode(self):
        with pytest.raises(ValueError):
            batch_norm_step(BatchNorm(1), np.zeros((2, 1)), mode="predict")

    def test_train_backward_matches_fd(self):
        # note sum(out**2) alone is invariant under batch norm; weight the
        # elements so the loss actually depends on the input
        rng = np.random.default_rng(9)
        x0 = rng.normal(size=(6, 3))
        weights = rng.normal(size=(6, 3))
        bn = BatchNorm(3)
        bn.gamma.data[:] = rng.normal(size=3)
        bn.beta.data[:] = rng.normal(size=3)

        def f(vec):
            bn_local = BatchNorm(3)
            bn_local.gamma.data[:] = bn.gamma.data
            bn_local.beta.data[:] = bn.beta.data
            out = bn_local.forward(ad.Tensor(vec.reshape(6, 3)), train=True)
            return float(((weights * out.data) ** 2).sum())

        fd = ad.finite_difference_grad(f, x0.ravel(), eps=1e-6)
        xt = ad.parameter(x0)
        with ad.Tape() as tape:
            out = bn.forward(xt, train=True)
            loss = ad.tsum(ad.square(ad.mul(ad.Tensor(weights), out)))
            tape.backward(loss)
        assert np.linalg.norm(xt.grad.ravel() - fd) / np.linalg.norm(fd) < 1e-6


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path):
        net = build_network(small_cfg(regime="unstable"), seed=10)
        # dirty the running stats so the round trip is non-trivial
        batch = np.random.default_rng(10).normal(size=(4, 6, 3))
        net.forward(batch, train=True)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(net, path, extra={"rng_state": "sentinel", "epoch": 3})
        loaded, extra = load_checkpoint(path)
        assert extra == {"rng_state": "sentinel", "epoch": 3}
        for (na, ta, _), (nb, tb, _) in zip(net.named_params(),
                                            loaded.named_params()):
            assert na == nb
            assert ta.data.tobytes() == tb.data.tobytes()
        for ba, bb in zip(net.bns, loaded.bns):
            assert ba.running_mean.tobytes() == bb.running_mean.tobytes()
            assert ba.running_var.tobytes() == bb.running_var.tobytes()
        out_a, _ = net.forward(batch)
        out_b, _ = loaded.forward(batch)
        assert out_a.data.tobytes() == out_b.data.tobytes()

    def test_version_check(self, tmp_path):
        net = build_network(small_cfg(), seed=11)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(net, path)
        import json

        import numpy as np_
        blob = dict(np_.load(path))
        meta = json.loads(bytes(blob["meta"]).decode())
        meta["version"] = 999
        blob["meta"] = np_.frombuffer(json.dumps(meta).encode(), dtype=np_.uint8)
        with open(path, "wb") as fh:
            np_.savez(fh, **blob)
        with pytest.raises(ValueError):
            load_checkpoint(path)
