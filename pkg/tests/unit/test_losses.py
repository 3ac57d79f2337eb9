"""
Unit tests for refinement losses, the Wasserstein critic and gradient checking.
"""
import numpy as np
import pytest

from src.learning.critic import (
    CriticParams,
    critic_backward,
    critic_forward,
    critic_gap,
    init_critic,
    wgan_critic_step,
)
from src.learning.gradcheck import grad_check, numerical_gradient
from src.learning.losses import (
    adversarial_loss,
    combined_refinement_loss,
    masked_reconstruction_loss,
    osm_reconstruction_loss,
)
from src.utils.config import LossWeights
from src.utils.errors import ValidationError

SEEDS = range(20)


def _one_layer(w: float, b: float) -> CriticParams:
    return CriticParams((np.array([[w]]),), (np.array([b]),))


class TestGradCheck:
    """Test the finite-difference checker itself."""

    def test_square(self):
        """Test x^2 at 3 has gradient 6."""
        assert grad_check(lambda x: (float(x @ x), 2 * x), np.array([3.0])) < 1e-8
        assert numerical_gradient(lambda x: (float(x @ x), 2 * x), np.array([3.0]))[0] == pytest.approx(6.0)

    def test_linear(self):
        """Test a linear function is checked to machine precision."""
        a = np.array([1.5, -2.0, 0.25])
        assert grad_check(lambda x: (float(a @ x), a), np.zeros(3)) < 1e-8

    def test_wrong_gradient_is_flagged(self):
        """Test a gradient off by a factor of two is detected."""
        assert grad_check(lambda x: (float(x @ x), 4 * x), np.array([1.0, 2.0])) > 0.3


class TestMaskedReconstruction:
    """Test L_reconst."""

    def test_equal_maps(self):
        """Test identical maps have zero loss."""
        a = np.random.default_rng(0).random((3, 3, 2))
        assert masked_reconstruction_loss(a, a, np.ones((3, 3)))[0] == 0.0

    def test_single_cell(self):
        """Test one cell off by 0.5 with four masked cells gives 0.0625 and gradient -0.25."""
        a = np.zeros((2, 2, 2))
        a[1, 1, 0] = 0.5
        b = np.zeros((2, 2, 2))
        value, grad_a, grad_b = masked_reconstruction_loss(a, b, np.ones((2, 2)))
        assert value == pytest.approx(0.0625)
        assert grad_b[1, 1, 0] == pytest.approx(-0.25)
        assert grad_a[1, 1, 0] == pytest.approx(0.25)
        assert grad_b[1, 1, 1] == 0.0

    def test_unmasked_cells_ignored(self):
        """Test differences outside the mask contribute nothing."""
        a = np.zeros((2, 1, 1))
        b = np.array([[[0.0]], [[5.0]]])
        value, grad_a, _ = masked_reconstruction_loss(a, b, np.array([[1.0], [0.0]]))
        assert value == 0.0
        assert not grad_a.any()

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        """Test both gradients against finite differences on random 4x4 maps."""
        rng = np.random.default_rng(seed)
        a, b = rng.random((2, 4, 4, 3))
        mask = rng.random((4, 4)) < 0.6
        mask[0, 0] = True
        assert grad_check(lambda x: masked_reconstruction_loss(x, b, mask)[:2], a) < 1e-5
        assert grad_check(lambda x: masked_reconstruction_loss(a, x, mask)[::2], b) < 1e-5

    def test_empty_mask(self):
        """Test an empty mask is rejected."""
        with pytest.raises(ValidationError):
            masked_reconstruction_loss(np.zeros((2, 2, 1)), np.zeros((2, 2, 1)), np.zeros((2, 2)))


class TestOsmReconstruction:
    """Test L_OSM."""

    def test_single_cell(self):
        """Test one cell differing by 1 gives 1."""
        final = np.zeros((2, 2, 1))
        osm = final.copy()
        osm[0, 1, 0] = 1.0
        assert osm_reconstruction_loss(final, osm)[0] == 1.0

    def test_quadratic_scaling(self):
        """Test doubling the difference quadruples the loss."""
        rng = np.random.default_rng(1)
        final, osm = rng.random((2, 3, 3, 2))
        base = osm_reconstruction_loss(final, osm)[0]
        doubled = osm_reconstruction_loss(osm + 2 * (final - osm), osm)[0]
        assert doubled == pytest.approx(4 * base)

    def test_shape_mismatch(self):
        """Test maps must share their shape."""
        with pytest.raises(ValidationError):
            osm_reconstruction_loss(np.zeros((2, 2, 1)), np.zeros((2, 3, 1)))


class TestAdversarialAndCombined:
    """Test L_sim and L = L_sim + lambda * L_reconst."""

    def test_adversarial_value(self):
        """Test the mean score difference and its gradient."""
        value, grad = adversarial_loss(np.array([3.0, 1.0]), np.array([0.0, 1.0, 2.0, 3.0]))
        assert value == pytest.approx(0.5)
        assert grad.tolist() == [-0.25] * 4

    def test_empty_scores(self):
        """Test empty score batches are rejected."""
        with pytest.raises(ValidationError):
            adversarial_loss(np.array([]), np.array([1.0]))

    def test_combined(self):
        """Test the weighted sum."""
        assert combined_refinement_loss(2.0, 3.0, 0.0) == 2.0
        assert combined_refinement_loss(2.0, 3.0, 1.0) == 5.0

    def test_large_lambda_follows_reconstruction(self):
        """Test at lambda = 1e6 the gradient direction is the reconstruction direction."""
        rng = np.random.default_rng(2)
        critic = init_critic(24, (8, 8), 0.01, rng)
        for _ in range(10):
            outputs, target = rng.random((2, 2, 4, 3))
            mask = np.ones((2, 4))
            _, g_rec, _ = masked_reconstruction_loss(outputs, target, mask)
            g_sim, _ = critic_backward(outputs.reshape(1, -1), critic, np.array([-1.0]))
            total = g_sim.ravel() + 1e6 * g_rec.ravel()
            cosine = total @ g_rec.ravel() / (np.linalg.norm(total) * np.linalg.norm(g_rec))
            assert np.arccos(min(1.0, cosine)) < 1e-3


class TestCritic:
    """Test the critic network."""

    def test_hand_forward(self):
        """Test w=2, b=1 at x=3 scores 7."""
        assert critic_forward(np.array([3.0]), _one_layer(2.0, 1.0)) == 7.0

    def test_zero_weights_give_bias(self):
        """Test a critic with zero weights returns its final bias."""
        params = CriticParams(
            (np.zeros((4, 3)), np.zeros((3, 1))), (np.zeros(3), np.array([0.7]))
        )
        scores = critic_forward(np.random.default_rng(0).random((5, 4)), params)
        np.testing.assert_allclose(scores, 0.7)

    def test_input_length(self):
        """Test inputs must match the first layer."""
        with pytest.raises(ValidationError):
            critic_forward(np.zeros(3), _one_layer(1.0, 0.0))

    def test_layers_must_chain(self):
        """Test inconsistent layer shapes are rejected."""
        with pytest.raises(ValidationError):
            CriticParams((np.zeros((4, 3)), np.zeros((2, 1))), (np.zeros(3), np.zeros(1)))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_input_gradient(self, seed):
        """Test the gradient wrt inputs against finite differences."""
        rng = np.random.default_rng(seed)
        params = init_critic(6, (5, 4), 1.0, rng)
        weights = rng.normal(size=3)

        def f(x):
            batch = x.reshape(3, 6)
            g_x, _ = critic_backward(batch, params, weights)
            return float(weights @ critic_forward(batch, params)), g_x.ravel()

        assert grad_check(f, rng.normal(size=18), atol=1e-8) < 1e-5

    @pytest.mark.parametrize("seed", SEEDS)
    def test_parameter_gradient(self, seed):
        """Test the gradient wrt parameters against finite differences."""
        rng = np.random.default_rng(seed)
        params = init_critic(6, (5, 4), 1.0, rng)
        batch = rng.normal(size=(3, 6))

        def f(vector):
            p = params.from_vector(vector)
            _, g_p = critic_backward(batch, p, np.ones(3))
            return float(np.sum(critic_forward(batch, p))), g_p.to_vector()

        assert grad_check(f, params.to_vector(), atol=1e-8) < 1e-5

    def test_json_round_trip(self, tmp_path):
        """Test saved critics load back with their layer shapes."""
        params = init_critic(4, (3,), 0.01, np.random.default_rng(0))
        params.save(tmp_path / "critic.json")
        loaded = CriticParams.load(tmp_path / "critic.json")
        assert loaded.layer_sizes == [4, 3, 1]
        np.testing.assert_array_equal(loaded.to_vector(), params.to_vector())

    def test_malformed_dict(self):
        """Test a layer without weights is rejected."""
        with pytest.raises(ValidationError):
            CriticParams.from_dict({"layers": [{"shape": [1, 1], "bias": [0.0]}]})


class TestWganCriticStep:
    """Test clipped critic updates."""

    def test_identical_batches_leave_critic_unchanged(self):
        """Test reals equal to fakes give exactly zero update."""
        rng = np.random.default_rng(0)
        params = init_critic(5, (4, 4), 0.01, rng)
        batch = rng.random((6, 5))
        updated, loss = wgan_critic_step(batch, batch, params, LossWeights())
        np.testing.assert_array_equal(updated.to_vector(), params.to_vector())
        assert loss == 0.0

    def test_clip_bound_after_every_step(self):
        """Test parameters stay in [-c, c] from the first step on."""
        rng = np.random.default_rng(1)
        weights = LossWeights(clip_c=0.05, critic_lr=1.0)
        params = init_critic(5, (4, 4), 1.0, rng)
        for _ in range(10):
            params, _ = wgan_critic_step(rng.random((4, 5)) + 1, rng.random((4, 5)), params, weights)
            assert params.max_abs() <= 0.05

    def test_separates_toy_distributions(self):
        """Test 200 steps on reals at +1 and fakes at -1 give a positive gap."""
        rng = np.random.default_rng(3)
        weights = LossWeights(clip_c=0.5, critic_lr=0.05)
        params = init_critic(1, (4,), 0.5, rng)
        reals, fakes = np.ones((8, 1)), -np.ones((8, 1))
        for _ in range(200):
            params, _ = wgan_critic_step(reals, fakes, params, weights)
            assert params.max_abs() <= 0.5
        assert critic_gap(reals, fakes, params) > 0

    def test_empty_batch(self):
        """Test an empty fake batch is rejected."""
        params = init_critic(2, (2,), 0.01, np.random.default_rng(0))
        with pytest.raises(ValidationError):
            wgan_critic_step(np.ones((2, 2)), np.zeros((0, 2)), params, LossWeights())
