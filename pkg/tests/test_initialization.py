"""Eigenvalue initialization, destabilization, and clipping rules."""

import numpy as np
import pytest

from spikessm.initialization import (
    InitConfig,
    bilinear,
    clip_eigenvalues,
    destabilize,
    init_eigenvalues,
    init_projection,
    s4d_lin_init,
)


class TestBilinear:
    def test_hand_value(self):
        # lambda=-0.5, delta=0.1 -> 0.975/1.025
        got = bilinear(np.array([-0.5 + 0j]), 0.1)[0]
        assert got.real == pytest.approx(0.975 / 1.025, abs=1e-9)
        assert got.imag == pytest.approx(0.0)

    def test_delta_to_zero_limit(self):
        lam = np.array([-0.5 + 3j, 2.0 - 1j])
        got = bilinear(lam, 1e-12)
        np.testing.assert_allclose(got, np.ones(2), atol=1e-9)


class TestS4dLinInit:
    def test_shape_and_dtype(self):
        lam = s4d_lin_init(InitConfig(n=8, num_neurons=5, seed=1))
        assert lam.shape == (5, 8)
        assert lam.dtype == np.complex128

    def test_moduli_cluster_below_one(self):
        lam = s4d_lin_init(InitConfig(n=8, num_neurons=64, seed=2))
        mod = np.abs(lam)
        assert np.all(mod >= 0.9) and np.all(mod < 1.0)

    def test_no_conjugate_pairs(self):
        lam = s4d_lin_init(InitConfig(n=6, num_neurons=1, seed=3))[0]
        # imaginary parts are nonnegative and distinct for k >= 1
        assert np.all(lam.imag >= 0.0)
        assert len(np.unique(np.round(lam.imag, 12))) == 6

    def test_deterministic_given_seed(self):
        cfg = InitConfig(n=4, num_neurons=3, seed=11)
        np.testing.assert_array_equal(s4d_lin_init(cfg), s4d_lin_init(cfg))

    def test_invalid_range(self):
        with pytest.raises(ValueError):
            InitConfig(n=4, delta_min=0.5, delta_max=0.1)
        with pytest.raises(ValueError):
            InitConfig(n=4, delta_min=0.0)


class TestDestabilize:
    def test_every_second_scaled(self):
        got = destabilize(np.array([0.9, 0.9]))
        np.testing.assert_allclose(got, [0.9, 1.35])

    def test_single_entry_unchanged(self):
        np.testing.assert_allclose(destabilize(np.array([0.9])), [0.9])

    def test_half_moduli_above_one(self):
        lam = s4d_lin_init(InitConfig(n=8, num_neurons=16, seed=5))
        out = destabilize(lam)
        assert np.all((np.abs(out) > 1.0).sum(axis=-1) == 4)

    def test_phases_unchanged(self):
        lam = s4d_lin_init(InitConfig(n=4, num_neurons=2, seed=6))
        out = destabilize(lam)
        np.testing.assert_allclose(np.angle(out), np.angle(lam), atol=1e-12)

    def test_at_least_one_unstable_for_n2(self):
        lam = init_eigenvalues(InitConfig(n=2, num_neurons=8, seed=7,
                                          regime="unstable"))
        assert np.all(np.abs(lam).max(axis=-1) > 1.0)


class TestClipEigenvalues:
    def test_modulus_rescaled_phase_kept(self):
        lam = np.array([1.2 * np.exp(0.3j)])
        out = clip_eigenvalues(lam)
        assert np.abs(out[0]) == pytest.approx(1.0)
        assert np.angle(out[0]) == pytest.approx(0.3)

    def test_inside_unchanged(self):
        np.testing.assert_array_equal(clip_eigenvalues(np.array([0.5 + 0j])),
                                      np.array([0.5 + 0j]))

    def test_max_modulus_post_condition(self):
        rng = np.random.default_rng(8)
        lam = rng.normal(size=20) * 2 + 1j * rng.normal(size=20)
        out = clip_eigenvalues(lam)
        assert np.abs(out).max() <= 1.0 + 1e-15
        assert np.abs(out).max() == pytest.approx(min(np.abs(lam).max(), 1.0))

    def test_all_moduli_at_most_one_exactly(self):
        lam = destabilize(s4d_lin_init(InitConfig(n=8, num_neurons=4, seed=9)))
        assert np.all(np.abs(clip_eigenvalues(lam)) <= 1.0)


class TestInitProjection:
    def test_bias_exactly_zero(self):
        _, c_bias = init_projection(4, 3, seed=0, num_neurons=2)
        assert c_bias.shape == (2, 3)
        np.testing.assert_array_equal(c_bias, np.zeros_like(c_bias))

    def test_deterministic(self):
        c1, _ = init_projection(4, 3, seed=42)
        c2, _ = init_projection(4, 3, seed=42)
        np.testing.assert_array_equal(c1, c2)

    def test_standard_normal_moments(self):
        c, _ = init_projection(100, 100, seed=1, num_neurons=10)
        parts = np.concatenate([c.real.ravel(), c.imag.ravel()])
        assert parts.size == 2 * 10**5
        assert abs(parts.mean()) < 0.01
        assert abs(parts.std() - 1.0) < 0.01

    def test_invalid_dims(self):
        with pytest.raises(ValueError):
            init_projection(0, 3, seed=0)
