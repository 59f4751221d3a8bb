"""
Box Geometry Tests
==================

Closed-form IoU / DIoU cases, a Monte-Carlo volume check, and the DIoU
gradient against central differences.
"""

import numpy as np
import pytest

from geodet.core.box_ops import diou_loss, diou_with_grad, iou_3d, pairwise_diou, pairwise_iou
from geodet.models.detection_models import Box3D
from geodet.utils.gradcheck import assert_gradients_close, central_difference


def unit_cube(x=0.0, y=0.0, z=0.0):
    return Box3D(center=(x, y, z), size=(1.0, 1.0, 1.0))


def random_box(rng):
    return Box3D(center=tuple(rng.uniform(-1.0, 1.0, 3)), size=tuple(rng.uniform(0.2, 2.0, 3)))


def monte_carlo_iou(rng, a, b, samples=100_000):
    """Estimate the intersection by sampling inside ``a``; volumes are exact."""
    points = rng.uniform(np.array(a.minimum), np.array(a.maximum), (samples, 3))
    in_b = np.all((points >= np.array(b.minimum)) & (points <= np.array(b.maximum)), axis=1)
    intersection = a.volume * np.count_nonzero(in_b) / samples
    return intersection / (a.volume + b.volume - intersection)


class TestIoU:
    """Test intersection over union."""

    def test_identical_cubes(self):
        assert iou_3d(unit_cube(), unit_cube()) == pytest.approx(1.0, abs=1e-12)

    def test_half_offset_cubes(self):
        assert iou_3d(unit_cube(), unit_cube(x=0.5)) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_disjoint_boxes(self):
        assert iou_3d(unit_cube(), unit_cube(x=3.0)) == 0.0

    def test_touching_faces(self):
        assert iou_3d(unit_cube(), unit_cube(x=1.0)) == 0.0

    def test_nested_boxes(self):
        outer = Box3D(center=(0, 0, 0), size=(2, 2, 2))
        assert iou_3d(outer, unit_cube()) == pytest.approx(1.0 / 8.0)

    def test_symmetric_and_bounded(self, rng):
        for _ in range(200):
            a, b = random_box(rng), random_box(rng)
            value = iou_3d(a, b)
            assert value == pytest.approx(iou_3d(b, a), abs=1e-15)
            assert 0.0 <= value <= 1.0

    def test_monte_carlo_volume(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a = random_box(rng)
            # keep pairs overlapping often enough to be informative
            b = Box3D(center=tuple(np.array(a.center) + rng.uniform(-0.5, 0.5, 3)),
                      size=tuple(rng.uniform(0.2, 2.0, 3)))
            assert iou_3d(a, b) == pytest.approx(monte_carlo_iou(rng, a, b), abs=0.01)

    def test_pairwise_matrix(self, rng):
        boxes = [random_box(rng) for _ in range(4)]
        centers = np.array([b.center for b in boxes])
        sizes = np.array([b.size for b in boxes])
        matrix = pairwise_iou(centers[:3], sizes[:3], centers, sizes)
        assert matrix.shape == (3, 4)
        assert matrix[1, 3] == pytest.approx(iou_3d(boxes[1], boxes[3]))


class TestDIoU:
    """Test the DIoU loss and its gradient."""

    def test_identical_boxes(self):
        assert diou_loss(unit_cube(), unit_cube()) == pytest.approx(0.0, abs=1e-12)

    def test_separated_cubes(self):
        assert diou_loss(unit_cube(), unit_cube(x=2.0)) == pytest.approx(1.0 + 4.0 / 11.0)

    def test_range(self, rng):
        for _ in range(200):
            value = diou_loss(random_box(rng), random_box(rng))
            assert 0.0 <= value < 2.0

    def test_pairwise_agrees_with_scalar(self, rng):
        preds = [random_box(rng) for _ in range(3)]
        gts = [random_box(rng) for _ in range(2)]
        matrix = pairwise_diou(np.array([p.center for p in preds]), np.array([p.size for p in preds]),
                               np.array([g.center for g in gts]), np.array([g.size for g in gts]))
        for m, pred in enumerate(preds):
            for g, gt in enumerate(gts):
                assert matrix[m, g] == pytest.approx(diou_loss(pred, gt), abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(50):
            pc = rng.uniform(-1, 1, (1, 3))
            ps = rng.uniform(0.3, 2.0, (1, 3))
            gc = pc + rng.uniform(-0.8, 0.8, (1, 3))
            gs = rng.uniform(0.3, 2.0, (1, 3))
            _, grad_center, grad_size = diou_with_grad(pc, ps, gc, gs)

            def loss_center(c):
                return float(diou_with_grad(c, ps, gc, gs)[0][0])

            def loss_size(s):
                return float(diou_with_grad(pc, s, gc, gs)[0][0])

            assert_gradients_close(grad_center, central_difference(loss_center, pc.copy(), step=1e-6),
                                   rtol=1e-4, atol=1e-6, name="center")
            assert_gradients_close(grad_size, central_difference(loss_size, ps.copy(), step=1e-6),
                                   rtol=1e-4, atol=1e-6, name="size")

    def test_gradient_of_disjoint_boxes_pulls_together(self):
        pc, ps = np.array([[0.0, 0.0, 0.0]]), np.ones((1, 3))
        gc, gs = np.array([[3.0, 0.0, 0.0]]), np.ones((1, 3))
        _, grad_center, _ = diou_with_grad(pc, ps, gc, gs)
        # descending the loss moves the prediction towards +x
        assert grad_center[0, 0] < 0.0
