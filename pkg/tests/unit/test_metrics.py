"""
Unit tests for evaluation metrics.
"""
import math

import numpy as np
import pytest

from src.analysis.metrics import depth_metrics, mean_iou
from src.data_structures.grids import DepthMap, LabelGrid
from src.utils.errors import ValidationError


class TestMeanIou:
    """Test per-class and mean IoU."""

    def test_two_class_example(self):
        """Test one hit per class out of three cells in each union gives 1/3."""
        pred = LabelGrid(np.array([[0, 0], [1, 1]]))
        gt = LabelGrid(np.array([[0, 1], [1, 0]]))
        report = mean_iou(pred, gt)
        assert report.per_class == {0: pytest.approx(1 / 3), 1: pytest.approx(1 / 3)}
        assert report.mean == pytest.approx(1 / 3)

    def test_perfect_prediction(self):
        """Test identical maps score 1."""
        labels = LabelGrid(np.array([[0, 1, 2]]))
        assert mean_iou(labels, labels).mean == 1.0

    def test_ignore_label(self):
        """Test cells whose ground truth is ignored do not count."""
        pred = LabelGrid(np.array([[0, 1, 1]]))
        gt = LabelGrid(np.array([[0, 1, 5]]))
        report = mean_iou(pred, gt, ignore_label=5)
        assert report.per_class == {0: 1.0, 1: 1.0}

    def test_absent_class_is_skipped(self):
        """Test an evaluated class missing from both maps is left out of the mean."""
        labels = LabelGrid(np.array([[0, 0]]))
        report = mean_iou(labels, labels, eval_classes=[0, 3])
        assert report.per_class == {0: 1.0}

    def test_region(self):
        """Test evaluation restricted to a region."""
        pred = LabelGrid(np.array([[0, 1]]))
        gt = LabelGrid(np.array([[0, 0]]))
        report = mean_iou(pred, gt, region=np.array([[True, False]]))
        assert report.mean == 1.0

    def test_frame_and_dict(self, catalog):
        """Test report exports."""
        report = mean_iou(LabelGrid(np.array([[0, 3]])), LabelGrid(np.array([[0, 3]])))
        frame = report.to_frame(catalog)
        assert frame["name"].tolist() == ["road", "car"]
        assert report.to_dict() == {"per_class": {"0": 1.0, "3": 1.0}, "mean": 1.0}

    def test_shape_mismatch(self):
        """Test maps must share their shape."""
        with pytest.raises(ValidationError):
            mean_iou(LabelGrid(np.zeros((2, 2), dtype=int)), LabelGrid(np.zeros((2, 3), dtype=int)))

    def test_nothing_to_evaluate(self):
        """Test every cell ignored raises."""
        labels = LabelGrid(np.array([[5]]))
        with pytest.raises(ValidationError):
            mean_iou(labels, labels, ignore_label=5)


class TestDepthMetrics:
    """Test depth error measures."""

    def test_two_cell_example(self):
        """Test predictions 2 and 4 against ground truth 2 and 2."""
        report = depth_metrics(DepthMap.from_array(np.array([[2.0, 4.0]])), DepthMap.from_array(np.array([[2.0, 2.0]])))
        assert report.ard == pytest.approx(0.5)
        assert report.rmse == pytest.approx(math.sqrt(2.0))
        assert report.rmse_log == pytest.approx(math.log(2.0) / math.sqrt(2.0))
        assert report.delta_acc == pytest.approx(0.5)

    def test_perfect_depth(self):
        """Test identical depths have zero error and full accuracy."""
        depth = DepthMap.from_array(np.array([[1.0, 5.0], [7.0, 30.0]]))
        report = depth_metrics(depth, depth)
        assert report.to_dict() == {"ard": 0.0, "rmse": 0.0, "rmse_log": 0.0, "delta_acc": 1.0}

    def test_invalid_cells_skipped(self):
        """Test cells invalid in either map are ignored."""
        pred = DepthMap.from_array(np.array([[2.0, np.nan, 9.0]]))
        gt = DepthMap.from_array(np.array([[2.0, 3.0, np.nan]]))
        assert depth_metrics(pred, gt).rmse == 0.0

    def test_no_joint_cell(self):
        """Test disjoint validity raises."""
        pred = DepthMap.from_array(np.array([[2.0, np.nan]]))
        gt = DepthMap.from_array(np.array([[np.nan, 3.0]]))
        with pytest.raises(ValidationError):
            depth_metrics(pred, gt)
