"""
Unit tests for the toy refiner and adversarial refinement training.
"""
import numpy as np
import pandas as pd
import pytest

from src.algorithms.simulator import LayoutPrior, sample_layout
from src.data_structures.grids import BevMap, SemanticGrid
from src.learning.gradcheck import grad_check
from src.learning.refiner import (
    RefinerParams,
    check_toy_scale,
    init_refiner,
    refiner_apply,
    refiner_backward,
    refiner_forward,
)
from src.learning.training import SWEEP_REL_TOL, TRACE_COLUMNS, lambda_sweep, sweep_violations, train_refiner
from src.utils.config import LossWeights
from src.utils.errors import ValidationError

FAST = LossWeights(gen_lr=1e-2, batch_size=8, critic_hidden=(16, 16), refiner_hidden=16)
SWEEP_LAMBDAS = [0.0, 1.0, 5.0, 100.0, 500.0, 1000.0, 1e6]


@pytest.fixture
def sim_sampler(toy_cfg):
    prior = LayoutPrior()
    return lambda seed: sample_layout(prior, toy_cfg, seed)


@pytest.fixture
def dataset(sim_sampler):
    """Simulator layouts with the far half of the grid unobserved."""
    maps = []
    for seed in range(100, 106):
        data = sim_sampler(seed).data.copy()
        data[:8] = 0.0
        maps.append(BevMap.from_grid(SemanticGrid(data, (0, 1, 2))))
    return maps


class TestRefiner:
    """Test the dense refiner network."""

    def test_output_is_normalized(self, dataset):
        """Test every output cell is a distribution."""
        params = init_refiner((16, 8, 3), 8, np.random.default_rng(0), scale=1.0)
        out = refiner_forward(dataset[0], params)
        assert out.is_fully_observed()
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)
        assert out.class_ids == (0, 1, 2)

    def test_zero_encoder_ignores_input(self, dataset):
        """Test zero encoder weights make the output independent of the input."""
        rng = np.random.default_rng(1)
        n = 16 * 8 * 3
        params = RefinerParams(np.zeros((n, 4)), rng.normal(size=4), rng.normal(size=(4, n)), rng.normal(size=n), (16, 8, 3))
        a = refiner_forward(dataset[0], params)
        b = refiner_forward(dataset[1], params)
        np.testing.assert_array_equal(a.data, b.data)

    @pytest.mark.parametrize("seed", range(20))
    def test_parameter_gradient(self, seed):
        """Test the parameter gradient against finite differences."""
        rng = np.random.default_rng(seed)
        params = init_refiner((2, 2, 3), 3, rng, scale=1.0)
        params = params.from_vector(params.to_vector() + rng.normal(scale=0.1, size=params.to_vector().size))
        x = rng.random((2, 12))
        g_probs = rng.normal(size=(2, 2, 2, 3))

        def f(vector):
            p = params.from_vector(vector)
            probs, cache = refiner_apply(x, p)
            return float(np.sum(g_probs * probs)), refiner_backward(cache, p, g_probs).to_vector()

        assert grad_check(f, params.to_vector(), atol=1e-8) < 1e-5

    @pytest.mark.parametrize("seed", range(5))
    def test_parameter_gradient_eight_by_eight(self, seed):
        """Test the parameter gradient on 8 x 8 maps against finite differences."""
        rng = np.random.default_rng(100 + seed)
        params = init_refiner((8, 8, 3), 2, rng, scale=0.1)
        params = params.from_vector(params.to_vector() + rng.normal(scale=0.1, size=params.to_vector().size))
        x = rng.random((2, 8 * 8 * 3))
        g_probs = rng.normal(size=(2, 8, 8, 3))

        def f(vector):
            p = params.from_vector(vector)
            probs, cache = refiner_apply(x, p)
            return float(np.sum(g_probs * probs)), refiner_backward(cache, p, g_probs).to_vector()

        assert grad_check(f, params.to_vector(), atol=1e-8) < 1e-5

    def test_shape_mismatch(self, dataset):
        """Test maps must match the refiner layout."""
        params = init_refiner((8, 8, 3), 4, np.random.default_rng(0))
        with pytest.raises(ValidationError):
            refiner_forward(dataset[0], params)

    def test_toy_scale_guard(self):
        """Test grids above 16 x 8 are refused."""
        check_toy_scale((16, 8))
        with pytest.raises(ValidationError):
            check_toy_scale((17, 8))
        with pytest.raises(ValidationError):
            init_refiner((32, 16, 3), 4, np.random.default_rng(0))

    def test_save_and_load(self, tmp_path):
        """Test parameters survive an npz round trip."""
        params = init_refiner((4, 2, 3), 5, np.random.default_rng(0))
        params.save(tmp_path / "refiner.npz")
        loaded = RefinerParams.load(tmp_path / "refiner.npz")
        assert loaded.map_shape == (4, 2, 3)
        np.testing.assert_array_equal(loaded.to_vector(), params.to_vector())

    def test_load_errors(self, tmp_path):
        """Test missing files and arrays."""
        with pytest.raises(FileNotFoundError):
            RefinerParams.load(tmp_path / "missing.npz")
        np.savez(tmp_path / "partial.npz", w1=np.zeros((2, 2)))
        with pytest.raises(ValidationError):
            RefinerParams.load(tmp_path / "partial.npz")


class TestSweepViolations:
    """Test counting rises in a lambda sweep."""

    def test_rise_within_tolerance_is_ignored(self):
        """Test a rise smaller than the relative tolerance does not count."""
        sweep = pd.DataFrame({"lambda": [0.0, 1.0, 5.0], "masked_mse": [0.3, 0.3 * (1 + SWEEP_REL_TOL / 2), 0.1]})
        assert sweep_violations(sweep) == 0

    def test_rises_counted_in_lambda_order(self):
        """Test rises are counted after sorting rows by lambda."""
        sweep = pd.DataFrame({"lambda": [5.0, 0.0, 1.0, 100.0], "masked_mse": [0.2, 0.3, 0.25, 0.4]})
        # lambda order: 0.3, 0.25, 0.2, 0.4
        assert sweep_violations(sweep) == 1
        assert sweep_violations(sweep, rel_tol=1.5) == 0

    def test_strict_comparison(self):
        """Test a zero tolerance counts any rise."""
        sweep = pd.DataFrame({"lambda": [0.0, 1.0], "masked_mse": [0.3, 0.3001]})
        assert sweep_violations(sweep, rel_tol=0.0) == 1
        assert sweep_violations(sweep) == 0

    def test_empty_sweep(self):
        """Test an empty sweep has no violations."""
        assert sweep_violations(pd.DataFrame()) == 0


class TestTrainRefiner:
    """Test adversarial refinement training."""

    def test_trace_and_clipping(self, dataset, sim_sampler):
        """Test one trace row per step and a clipped critic."""
        result = train_refiner(dataset, sim_sampler, FAST, steps=5, critic_steps_per_gen=2, sim_pool_size=16)
        assert list(result.trace.columns) == TRACE_COLUMNS
        assert result.trace["step"].tolist() == [0, 1, 2, 3, 4]
        assert result.critic.max_abs() <= FAST.clip_c
        assert result.refiner.map_shape == (16, 8, 3)

    def test_seeded_determinism(self, dataset, sim_sampler):
        """Test the same seed gives the same refiner."""
        a = train_refiner(dataset, sim_sampler, FAST, steps=3, critic_steps_per_gen=1, rng_seed=4, sim_pool_size=8)
        b = train_refiner(dataset, sim_sampler, FAST, steps=3, critic_steps_per_gen=1, rng_seed=4, sim_pool_size=8)
        np.testing.assert_array_equal(a.refiner.to_vector(), b.refiner.to_vector())
        assert a.trace.equals(b.trace)

    def test_zero_lambda_ignores_reconstruction(self, dataset, sim_sampler):
        """Test with lambda = 0 the reconstruction target has no effect on training."""
        rng = np.random.default_rng(0)
        osm = [BevMap.from_grid(SemanticGrid(rng.dirichlet(np.ones(3), size=(16, 8)), (0, 1, 2))) for _ in dataset]
        weights = FAST.model_copy(update={"lam": 0.0})
        plain = train_refiner(dataset, sim_sampler, weights, steps=3, critic_steps_per_gen=1, sim_pool_size=8)
        with_osm = train_refiner(
            dataset,
            sim_sampler,
            weights.model_copy(update={"reconstruction_target": "both"}),
            steps=3,
            critic_steps_per_gen=1,
            sim_pool_size=8,
            osm_targets=osm,
        )
        np.testing.assert_array_equal(plain.refiner.to_vector(), with_osm.refiner.to_vector())

    def test_large_lambda_aligns_with_init(self, dataset, sim_sampler):
        """Test lambda = 1e6 lowers the masked error and beats lambda = 0 on the same seed."""
        common = dict(steps=80, critic_steps_per_gen=2, rng_seed=7, sim_pool_size=32)
        strong = train_refiner(dataset, sim_sampler, FAST.model_copy(update={"lam": 1e6}), **common)
        free = train_refiner(dataset, sim_sampler, FAST.model_copy(update={"lam": 0.0}), **common)
        assert strong.final_masked_mse < strong.initial_mse
        assert strong.final_masked_mse < free.final_masked_mse
        assert strong.initial_mse == free.initial_mse

    def test_osm_target_needs_maps(self, dataset, sim_sampler):
        """Test OSM reconstruction without OSM maps is rejected."""
        weights = FAST.model_copy(update={"reconstruction_target": "osm"})
        with pytest.raises(ValidationError):
            train_refiner(dataset, sim_sampler, weights, steps=1)

    def test_empty_dataset(self, sim_sampler):
        """Test training needs data."""
        with pytest.raises(ValidationError):
            train_refiner([], sim_sampler, FAST, steps=1)

    def test_above_toy_scale(self, sim_sampler):
        """Test a 32 x 16 dataset is refused."""
        big = BevMap.from_labels(np.zeros((32, 16), dtype=int), (0, 1, 2))
        with pytest.raises(ValidationError):
            train_refiner([big], sim_sampler, FAST, steps=1)

    def test_empty_observed_mask(self, dataset, sim_sampler):
        """Test every dataset map needs an observed cell."""
        empty = BevMap.from_grid(SemanticGrid(np.zeros((16, 8, 3)), (0, 1, 2)))
        with pytest.raises(ValidationError):
            train_refiner(dataset + [empty], sim_sampler, FAST, steps=1)

    @pytest.mark.slow
    def test_lambda_sweep_is_monotone(self, dataset, sim_sampler):
        """Test final masked error does not grow with lambda, up to one adjacent rise beyond the tolerance."""
        sweep = lambda_sweep(dataset, sim_sampler, FAST, SWEEP_LAMBDAS, steps=150, rng_seed=0, critic_steps_per_gen=3)
        mse = sweep["masked_mse"].to_numpy()
        assert sweep_violations(sweep) <= 1
        assert mse[-1] < sweep["initial_mse"].iloc[-1]
