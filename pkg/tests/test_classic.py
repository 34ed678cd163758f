"""Classic neuron steps, hand-evaluated examples, and embedding oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikessm.classic import (
    AdLifParams,
    GeneralNeuronParams,
    LifParams,
    adlif_as_general,
    adlif_step,
    general_step,
    hard_reset_step,
    lif_as_general,
    lif_step,
)


class TestGeneralStep:
    def test_zero_state_zero_input(self):
        p = GeneralNeuronParams(A=[[1.0]], B=[1.0], R=[1.0],
                                theta_region=lambda v: v[0] >= 1.0)
        v_next, s = general_step(p, [0.0], 0.0)
        assert s == 0
        np.testing.assert_array_equal(v_next, [0.0])

    def test_lif_embedding_hand_value(self):
        # u=1.2, alpha=0.9, theta=1, i=0: spike, u' = 0.9*1.2 - 0.9 = 0.18
        p = lif_as_general(LifParams(alpha=0.9, theta=1.0))
        v_next, s = general_step(p, [1.2], 0.0)
        assert s == 1
        assert v_next[0] == pytest.approx(0.18)

    def test_pure_integrator(self):
        p = GeneralNeuronParams(A=np.eye(2), B=[1.0, 1.0], R=[0.0, 0.0],
                                theta_region=lambda v: False)
        v_next, _ = general_step(p, [0.5, -0.5], 0.25)
        np.testing.assert_allclose(v_next, [0.75, -0.25])

    def test_dimension_mismatch(self):
        p = GeneralNeuronParams(A=np.eye(2), B=[1.0, 0.0], R=[0.0, 0.0],
                                theta_region=lambda v: False)
        with pytest.raises(ValueError):
            general_step(p, [1.0], 0.0)

    def test_inconsistent_params_rejected(self):
        with pytest.raises(ValueError):
            GeneralNeuronParams(A=np.eye(2), B=[1.0], R=[0.0, 0.0],
                                theta_region=lambda v: False)


class TestHardResetStep:
    def _params(self, v_rst):
        return GeneralNeuronParams(A=[[1.0]], B=[1.0], R=[0.0],
                                   theta_region=lambda v: v[0] >= 1.0,
                                   v_rst=v_rst)

    def test_spiking_state_forced_to_reset_state(self):
        v_next, s = hard_reset_step(self._params([0.0]), [1.5], 0.3)
        assert s == 1
        np.testing.assert_array_equal(v_next, [0.0])

    def test_non_spiking_matches_general_without_r(self):
        v_next, s = hard_reset_step(self._params([0.0]), [0.4], 0.3)
        assert s == 0
        assert v_next[0] == pytest.approx(0.7)

    def test_custom_reset_state(self):
        v_next, s = hard_reset_step(self._params([0.5]), [2.0], 0.0)
        assert s == 1
        assert v_next[0] == pytest.approx(0.5)

    def test_missing_v_rst(self):
        p = GeneralNeuronParams(A=[[1.0]], B=[1.0], R=[0.0],
                                theta_region=lambda v: True)
        with pytest.raises(ValueError):
            hard_reset_step(p, [0.0], 0.0)


class TestScalarSteps:
    def test_lif_hand_value(self):
        u_next, s = lif_step(LifParams(alpha=0.5, theta=1.0), 0.0, 2.0)
        assert s == 0
        assert u_next == pytest.approx(1.0)

    def test_adlif_zero_fixed_point(self):
        u, w, s = adlif_step(AdLifParams(0.9, 0.8, 0.1, 0.2), 0.0, 0.0, 0.0)
        assert (u, w, s) == (0.0, 0.0, 0)

    def test_adlif_hand_value(self):
        u, w, s = adlif_step(AdLifParams(alpha=0.9, beta=0.8, a=0.1, b=0.2,
                                         theta=1.0), 1.5, 0.0, 0.0)
        assert s == 1
        assert u == pytest.approx(0.45)
        assert w == pytest.approx(0.35)

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            LifParams(alpha=0.5, theta=0.0)


class TestEmbeddings:
    def test_lif_matrices(self):
        p = lif_as_general(LifParams(alpha=0.5, theta=1.0))
        assert p.A[0, 0] == 0.5
        assert p.B[0] == 0.5
        assert p.R[0] == 0.5

    def test_adlif_leak_matrix(self):
        p = adlif_as_general(AdLifParams(alpha=0.9, beta=0.8, a=0.1, b=0.2))
        np.testing.assert_allclose(p.A, [[0.9, -0.1], [0.1, 0.8]])

    def test_lif_trajectory_equivalence_1000_steps(self):
        rng = np.random.default_rng(3)
        lif = LifParams(alpha=0.9, theta=1.0)
        gen = lif_as_general(lif)
        u, v = 0.0, np.zeros(1)
        for _ in range(1000):
            i = rng.normal()
            u, s_l = lif_step(lif, u, i)
            v, s_g = general_step(gen, v, i)
            assert s_l == s_g
            assert abs(v[0] - u) <= 1e-12

    def test_adlif_trajectory_equivalence_1000_steps(self):
        rng = np.random.default_rng(4)
        ad = AdLifParams(alpha=0.95, beta=0.85, a=0.3, b=0.5, theta=1.0)
        gen = adlif_as_general(ad)
        u = w = 0.0
        v = np.zeros(2)
        for _ in range(1000):
            i = rng.normal() * 2.0
            u, w, s_a = adlif_step(ad, u, w, i)
            v, s_g = general_step(gen, v, i)
            assert s_a == s_g
            assert abs(v[0] - u) <= 1e-12 and abs(v[1] - w) <= 1e-12

    @given(alpha=st.floats(0.05, 0.999), theta=st.floats(0.2, 3.0),
           seed=st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_lif_equivalence_property(self, alpha, theta, seed):
        rng = np.random.default_rng(seed)
        lif = LifParams(alpha=alpha, theta=theta)
        gen = lif_as_general(lif)
        u, v = 0.0, np.zeros(1)
        for _ in range(100):
            i = rng.normal() * theta
            u, s_l = lif_step(lif, u, i)
            v, s_g = general_step(gen, v, i)
            assert s_l == s_g and abs(v[0] - u) <= 1e-12

    def test_lif_decays_monotonically_without_input(self):
        lif = LifParams(alpha=0.8, theta=10.0)  # high threshold: no spikes
        u = 5.0
        prev = abs(u)
        for _ in range(50):
            u, s = lif_step(lif, u, 0.0)
            assert s == 0
            assert abs(u) <= prev
            prev = abs(u)
