"""
Unit tests for OSM alignment.
"""
import math

import numpy as np
import pytest

from src.algorithms.align import align_osm, alignment_objective, identity_params
from src.algorithms.simulator import LayoutParams, LayoutPrior, render_layout, sample_layout
from src.algorithms.warp import BoxParams, FlowField, WarpParams, warp_grid
from src.data_structures.geometry import BevConfig
from src.data_structures.grids import BevMap, SemanticGrid
from src.learning.gradcheck import grad_check
from src.utils.config import AlignConfig
from src.utils.errors import ValidationError

ALIGN_CFG = BevConfig(k=64, l=32, extent_z_m=30.0, extent_x_m=15.0)
BOX_ONLY = AlignConfig(warp_mode="box", lambda2=0.0, lambda3=1e-4, restarts=0)


def _crossing():
    params = LayoutParams(
        topology="X-intersection",
        lane_width=3.5,
        sidewalk=True,
        intersection_distance_m=15.0,
    )
    return render_layout(params, ALIGN_CFG)


def _displaced(b_osm: BevMap, box: BoxParams) -> BevMap:
    """B_osm warped by a known box; cells touching the border become unobserved."""
    warped = warp_grid(b_osm.grid, WarpParams(box, FlowField.zeros(8, 4)))
    data = np.where(warped.mass()[..., None] >= 1.0 - 1e-9, warped.data, 0.0)
    return BevMap.from_grid(SemanticGrid(data / np.maximum(data.sum(-1, keepdims=True), 1e-300), warped.class_ids))


def _box_error(found: BoxParams, truth: BoxParams):
    return (
        abs(found.tx - truth.tx),
        abs(found.ty - truth.ty),
        abs(found.rotation - truth.rotation),
        abs(found.log_scale - truth.log_scale),
    )


class TestAlignmentObjective:
    """Test the alignment objective and its gradient."""

    def test_identical_maps_at_identity(self):
        """Test the objective vanishes for aligned maps without regularization."""
        bev = _crossing()
        cfg = AlignConfig(lambda2=0.0, lambda3=0.0)
        value, grad = alignment_objective(bev, bev, identity_params(cfg), cfg)
        assert value == 0.0
        assert not grad.any()

    def test_single_differing_cell(self):
        """Test one cell off by 0.5 in one channel among 4 observed cells gives 0.0625."""
        init = np.zeros((2, 2, 2))
        init[..., 0] = 1.0
        osm = init.copy()
        osm[0, 0, 0] = 0.5
        cfg = AlignConfig(lambda2=0.0, lambda3=0.0, flow_rows=2, flow_cols=2)
        b_init = BevMap.from_grid(SemanticGrid(init, (0, 1)))
        b_osm = BevMap.from_grid(SemanticGrid(osm, (0, 1)))
        value, _ = alignment_objective(b_init, b_osm, identity_params(cfg), cfg)
        assert value == pytest.approx(0.0625)

    def test_regularizers_are_added(self):
        """Test lambda3 adds the squared norm of theta."""
        bev = _crossing()
        cfg = AlignConfig(lambda2=0.0, lambda3=2.0, flow_rows=2, flow_cols=2)
        params = WarpParams(BoxParams(), FlowField(np.zeros((2, 2, 2))))
        base, _ = alignment_objective(bev, bev, params, cfg)
        shifted = WarpParams(BoxParams(tx=1.0), FlowField.zeros(2, 2))
        data_only, _ = alignment_objective(bev, bev, shifted, cfg.model_copy(update={"lambda3": 0.0}))
        value, _ = alignment_objective(bev, bev, shifted, cfg)
        assert base == 0.0
        assert value == pytest.approx(data_only + 2.0)

    def test_ignores_osm_outside_mask_support(self):
        """Test B_osm values that no observed cell samples do not matter."""
        rng = np.random.default_rng(0)
        init = rng.dirichlet(np.ones(2), size=(6, 6))
        init[:, 3:] = 0.0
        osm = rng.dirichlet(np.ones(2), size=(6, 6))
        other = osm.copy()
        other[:, 4:] = rng.dirichlet(np.ones(2), size=(6, 2))
        cfg = AlignConfig(lambda2=0.0, lambda3=0.0, flow_rows=2, flow_cols=2)
        b_init = BevMap.from_grid(SemanticGrid(init, (0, 1)))
        a, _ = alignment_objective(b_init, BevMap.from_grid(SemanticGrid(osm, (0, 1))), identity_params(cfg), cfg)
        b, _ = alignment_objective(b_init, BevMap.from_grid(SemanticGrid(other, (0, 1))), identity_params(cfg), cfg)
        assert a == b

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient(self, seed):
        """Test the full objective gradient against finite differences."""
        rng = np.random.default_rng(seed)
        init = rng.dirichlet(np.ones(3), size=(8, 8))
        init[rng.random((8, 8)) < 0.3] = 0.0
        init[0, 0] = [1.0, 0.0, 0.0]
        b_init = BevMap.from_grid(SemanticGrid(init, (0, 1, 2)))
        b_osm = BevMap.from_grid(SemanticGrid(rng.dirichlet(np.ones(3), size=(8, 8)), (0, 1, 2)))
        cfg = AlignConfig(lambda2=0.1, lambda3=1e-3, flow_rows=3, flow_cols=3)

        def f(vector):
            return alignment_objective(b_init, b_osm, WarpParams.from_vector(vector, 3, 3), cfg)

        x = np.concatenate(
            [rng.uniform([-1, -1, -0.2, -0.1], [1, 1, 0.2, 0.1]), rng.normal(scale=0.3, size=18)]
        )
        assert grad_check(f, x, atol=1e-8) < 1e-5

    def test_empty_mask(self):
        """Test B_init must have an observed cell."""
        empty = BevMap.from_grid(SemanticGrid(np.zeros((4, 4, 2)), (0, 1)))
        full = BevMap.from_labels(np.zeros((4, 4), dtype=int), (0, 1))
        cfg = AlignConfig(flow_rows=2, flow_cols=2)
        with pytest.raises(ValidationError):
            alignment_objective(empty, full, identity_params(cfg), cfg)
        with pytest.raises(ValidationError):
            align_osm(empty, full, cfg)

    def test_mismatched_maps(self):
        """Test maps must share shape and channels."""
        a = BevMap.from_labels(np.zeros((4, 4), dtype=int), (0, 1))
        b = BevMap.from_labels(np.zeros((4, 5), dtype=int), (0, 1))
        with pytest.raises(ValidationError):
            align_osm(a, b, AlignConfig(flow_rows=2, flow_cols=2))


class TestAlignOsm:
    """Test the optimizer."""

    def test_aligned_inputs_stay_at_identity(self):
        """Test already aligned maps give the identity warp."""
        bev = _crossing()
        result = align_osm(bev, bev, AlignConfig(restarts=2, max_iters=30))
        box = result.params.box
        assert abs(box.tx) < 0.25 and abs(box.ty) < 0.25
        assert abs(box.rotation) < math.radians(0.5)
        assert abs(box.log_scale) < 0.01
        assert result.restart == 0

    def test_recovers_known_shift(self):
        """Test a (3, -2) cell displacement is recovered within half a cell."""
        b_osm = _crossing()
        b_init = _displaced(b_osm, BoxParams(tx=3.0, ty=-2.0))
        result = align_osm(b_init, b_osm, BOX_ONLY)
        assert result.params.box.tx == pytest.approx(3.0, abs=0.5)
        assert result.params.box.ty == pytest.approx(-2.0, abs=0.5)

    def test_recovers_known_shift_with_lbfgs(self):
        """Test the L-BFGS-B route on the same displacement."""
        b_osm = _crossing()
        b_init = _displaced(b_osm, BoxParams(tx=3.0, ty=-2.0))
        result = align_osm(b_init, b_osm, BOX_ONLY.model_copy(update={"method": "lbfgs"}))
        assert result.params.box.tx == pytest.approx(3.0, abs=0.5)
        assert result.params.box.ty == pytest.approx(-2.0, abs=0.5)

    def test_strong_l2_keeps_theta_small(self):
        """Test lambda3 = 1e6 pins theta near zero."""
        b_osm = _crossing()
        b_init = _displaced(b_osm, BoxParams(tx=3.0, ty=-2.0))
        cfg = AlignConfig(lambda3=1e6, restarts=1, max_iters=40)
        result = align_osm(b_init, b_osm, cfg)
        assert np.linalg.norm(result.params.to_vector()) < 1e-3

    def test_trace_is_nonincreasing(self):
        """Test accepted objectives never increase within a restart."""
        b_osm = _crossing()
        b_init = _displaced(b_osm, BoxParams(tx=2.0, ty=1.0, rotation=0.05))
        result = align_osm(b_init, b_osm, AlignConfig(restarts=2, max_iters=60))
        assert list(result.trace.columns) == ["restart", "phase", "iteration", "objective", "step"]
        for _, group in result.trace.groupby("restart"):
            assert (np.diff(group["objective"].to_numpy()) <= 1e-15).all()
        assert result.objective == pytest.approx(result.best_trace()["objective"].iloc[-1])

    def test_best_restart_has_lowest_objective(self):
        """Test the reported restart holds the minimum final objective."""
        b_osm = _crossing()
        b_init = _displaced(b_osm, BoxParams(tx=-2.0, ty=2.0))
        result = align_osm(b_init, b_osm, AlignConfig(warp_mode="box", restarts=3, max_iters=40))
        finals = result.trace.groupby("restart")["objective"].last()
        assert result.objective == pytest.approx(finals.min())
        assert result.restart == int(finals.idxmin())

    def test_seeded_determinism(self):
        """Test the same config gives the same result."""
        b_osm = _crossing()
        b_init = _displaced(b_osm, BoxParams(tx=1.0))
        cfg = AlignConfig(restarts=2, max_iters=20, seed=5)
        a = align_osm(b_init, b_osm, cfg)
        b = align_osm(b_init, b_osm, cfg)
        np.testing.assert_array_equal(a.params.to_vector(), b.params.to_vector())

    @pytest.mark.slow
    def test_recovery_suite(self):
        """Test random similarity warps are recovered in at least 45 of 50 cases."""
        prior = LayoutPrior(
            topology_weights={"X-intersection": 1.0, "T-intersection": 1.0},
            lanes_choices=(1,),
            lane_width_range=(3.0, 3.5),
            sidewalk_prob=1.0,
            heading_jitter_deg=10.0,
            intersection_distance_range=(10.0, 20.0),
        )
        cfg = AlignConfig(warp_mode="box", lambda2=0.0, lambda3=1e-4, restarts=2)
        successes = 0
        for seed in range(50):
            rng = np.random.default_rng(1000 + seed)
            truth = BoxParams(
                float(rng.uniform(-5, 5)),
                float(rng.uniform(-5, 5)),
                math.radians(float(rng.uniform(-10, 10))),
                float(rng.uniform(-0.1, 0.1)),
            )
            b_osm = sample_layout(prior, ALIGN_CFG, seed)
            result = align_osm(_displaced(b_osm, truth), b_osm, cfg)
            dt, dty, drot, dscale = _box_error(result.params.box, truth)
            if dt <= 0.5 and dty <= 0.5 and drot <= math.radians(1.0) and dscale <= 0.02:
                successes += 1
        assert successes >= 45
