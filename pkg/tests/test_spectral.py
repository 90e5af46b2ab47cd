import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memcap.channel_model import ChannelSpec
from memcap.errors import NoiseSingular
from memcap.spectral import (
    FrequencyGrid,
    integrate,
    noise_referred_eigenvalues,
    trapezoid_grid,
    uniform_grid,
    whiten,
    whiten_grid,
    whiten_matrices,
)

from conftest import random_spec


class TestGrids:
    def test_single_node(self):
        g = uniform_grid(1)
        np.testing.assert_allclose(g.nodes, [0.0], atol=1e-15)
        np.testing.assert_allclose(g.weights, [2 * np.pi])

    def test_two_nodes(self):
        g = uniform_grid(2)
        np.testing.assert_allclose(g.nodes, [-np.pi / 2, np.pi / 2])
        np.testing.assert_allclose(g.weights, [np.pi, np.pi])

    def test_four_nodes(self):
        np.testing.assert_allclose(uniform_grid(4).nodes, np.pi * np.array([-3, -1, 1, 3]) / 4)

    @given(st.integers(1, 5000))
    def test_weights_sum(self, N):
        for g in (uniform_grid(N), trapezoid_grid(N)):
            assert abs(g.weights.sum() - 2 * np.pi) < 1e-12
            assert np.all(np.diff(g.nodes) > 0)

    def test_trapezoid_includes_edges(self):
        g = trapezoid_grid(8)
        assert g.nodes[0] == -np.pi and g.nodes[-1] == np.pi
        assert g.weights[0] == pytest.approx(g.weights[1] / 2)

    def test_rejects_bad_grids(self):
        with pytest.raises(ValueError):
            uniform_grid(0)
        with pytest.raises(ValueError):
            FrequencyGrid(np.array([0.0, 0.0]), np.array([np.pi, np.pi]))
        with pytest.raises(ValueError):
            FrequencyGrid(np.array([0.0]), np.array([6.0]))
        with pytest.raises(ValueError):
            FrequencyGrid(np.array([-4.0, 0.0]), np.array([np.pi, np.pi]))


class TestIntegrate:
    @pytest.mark.parametrize("N", [1, 7, 64])
    def test_constant(self, N):
        assert integrate(uniform_grid(N), np.ones(N)) == pytest.approx(2 * np.pi, abs=1e-13)

    def test_cos(self):
        g = uniform_grid(64)
        assert abs(integrate(g, np.cos(g.nodes))) < 1e-12
        assert integrate(g, np.cos(g.nodes) ** 2) == pytest.approx(np.pi, abs=1e-10)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            integrate(uniform_grid(4), np.ones(5))


class TestWhiten:
    def test_identity_white(self):
        s = whiten(ChannelSpec.memoryless(np.eye(3), 0.5 * np.eye(3)), 0.2)
        np.testing.assert_allclose(s.W, 2 * np.eye(3), atol=1e-14)
        np.testing.assert_allclose(s.eigvals, [2, 2, 2])

    def test_two_tap_dc(self, two_tap):
        assert whiten(two_tap, 0.0).W[0, 0].real == pytest.approx(2.25)

    def test_diagonal(self):
        s = whiten(ChannelSpec.memoryless(np.diag([1.0, 2.0]), np.eye(2)), 1.0)
        np.testing.assert_allclose(s.eigvals, [4, 1])

    def test_singular_noise_propagates(self):
        with pytest.raises(NoiseSingular):
            whiten(ChannelSpec.scalar([1.0], noise=[1.0, 0.5]), np.pi)

    def test_rank_deficient_channel_clipped(self):
        # 1 receive, 2 transmit antennas: W has rank one, second eigenvalue exactly zero
        spec = ChannelSpec(2, 1, [(0, [[1.0, 2.0]]), (1, [[0.3, 0.1j]])], [(0, [[1.0]])])
        f = whiten_grid(spec, uniform_grid(32))
        assert np.all(f.eigvals[:, 1] == 0.0)
        assert np.all(np.isinf(f.noise_levels[:, 1]))

    def test_field_indexing(self, mimo_2x2):
        f = whiten_grid(mimo_2x2, uniform_grid(8))
        assert len(f) == 8 and f.n == 2
        samples = list(f)
        assert samples[3].theta == f.theta[3]
        np.testing.assert_array_equal(samples[3].W, f.W[3])


class TestInvariants:
    def test_reconstruction_unitarity(self, rng):
        for _ in range(20):
            spec = random_spec(rng)
            f = whiten_grid(spec, uniform_grid(16))
            U, lam = f.eigvecs, f.eigvals
            eye = np.eye(spec.n_tx)
            np.testing.assert_allclose(np.conj(np.swapaxes(U, 1, 2)) @ U, np.broadcast_to(eye, U.shape), atol=1e-10)
            rec = (U * lam[:, None, :]) @ np.conj(np.swapaxes(U, 1, 2))
            err = np.linalg.norm(rec - f.W, axis=(1, 2))
            assert np.all(err <= 1e-10 * np.linalg.norm(f.W, axis=(1, 2)))
            assert np.all(np.diff(lam, axis=1) <= 0) and np.all(lam >= 0)

    def test_w_hermitian_psd(self, rng):
        f = whiten_grid(random_spec(rng, n=3), uniform_grid(16))
        assert np.array_equal(f.W, np.conj(np.swapaxes(f.W, 1, 2)))

    def test_eigenvalue_identity(self, rng):
        for _ in range(20):
            spec = random_spec(rng)
            f = whiten_grid(spec, uniform_grid(16))
            levels = noise_referred_eigenvalues(f.H, f.R)
            np.testing.assert_allclose(np.sort(levels, axis=1), np.sort(1.0 / f.eigvals, axis=1), rtol=1e-8)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.05, 3), st.floats(0.1, 4))
    def test_scalar_w(self, a, s2):
        f = whiten_matrices(np.array([[[a]]]), np.array([[[s2]]]))
        assert f.eigvals[0, 0] == pytest.approx(a * a / s2)
