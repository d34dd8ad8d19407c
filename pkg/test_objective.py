#!/usr/bin/env python3
"""
Objective tests: focal loss values and gradients, score fusion, action
masks and training-target assignment.
"""

import math

import numpy as np

from src.config import FocalConfig
from src.exceptions import ConfigError
from src.models.action_table import ActionTable
from src.models.detection import ImageDetections
from src.models.evaluation import GtPair
from src.numcore.gradcheck import finite_diff_check
from src.numcore.rng import make_rng
from src.numcore.tensor import Param, backward
from src.services.objective import action_mask, action_masks, focal_loss, fuse_scores, interaction_targets
from src.services.pairing_service import PairIndex

TABLE = ActionTable(np.array([
    [True, True, False, False],
    [True, False, True, False],
    [False, False, False, True],
]))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_focal_loss_scalar_value():
    loss = focal_loss(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1), dtype=bool), FocalConfig(0.5, 0.1))
    assert abs(float(loss.value) - 0.5 * 0.5 ** 0.1 * math.log(2)) < 1e-12
    assert abs(float(loss.value) - 0.3234) < 1e-4


def test_focal_loss_gamma_zero_is_weighted_bce():
    rng = make_rng(0)
    for _ in range(5):
        logits = rng.normal(size=(4, 5)) * 3
        targets = (rng.uniform(size=(4, 5)) < 0.3).astype(float)
        masks = rng.uniform(size=(4, 5)) < 0.8
        alpha = rng.uniform()
        bce = -(alpha * targets * np.log(_sigmoid(logits))
                + (1 - alpha) * (1 - targets) * np.log(_sigmoid(-logits)))
        expected = np.sum(bce * masks) / max(1, int(np.sum((targets > 0.5) & masks)))
        loss = focal_loss(logits, targets, masks, FocalConfig(alpha, 0.0))
        assert abs(float(loss.value) - expected) < 1e-12


def test_focal_loss_saturates_and_is_non_negative():
    masks = np.ones((1, 2), dtype=bool)
    loss = focal_loss(np.array([[30.0, -30.0]]), np.array([[1.0, 0.0]]), masks)
    assert 0.0 <= float(loss.value) < 1e-12
    rng = make_rng(1)
    for _ in range(10):
        logits = rng.normal(size=(3, 4)) * 4
        targets = (rng.uniform(size=(3, 4)) < 0.5).astype(float)
        assert float(focal_loss(logits, targets, np.ones((3, 4), dtype=bool)).value) >= 0.0


def test_focal_loss_normalization():
    logits = make_rng(2).normal(size=(3, 4))
    targets = np.zeros((3, 4))
    targets[0, 1] = targets[2, 3] = 1.0
    masks = np.ones((3, 4), dtype=bool)
    per_positive = float(focal_loss(logits, targets, masks).value)
    per_pair = float(focal_loss(logits, targets, masks, normalize="pairs").value)
    assert abs(per_positive * 2 - per_pair * 3) < 1e-12
    # no positives: the denominator floors at one
    zero_pos = float(focal_loss(logits, np.zeros((3, 4)), masks).value)
    assert abs(zero_pos - float(focal_loss(logits, np.zeros((3, 4)), masks, normalize="pairs").value) * 3) < 1e-12


def test_focal_loss_gradients():
    rng = make_rng(3)
    logits = Param("logits", rng.normal(size=(3, 4)) * 2)
    targets = (rng.uniform(size=(3, 4)) < 0.4).astype(float)
    masks = rng.uniform(size=(3, 4)) < 0.7
    err = finite_diff_check(lambda: focal_loss(logits, targets, masks), [logits], eps=1e-6)
    assert err < 1e-6

    logits.zero_grad()
    backward(focal_loss(logits, targets, masks))
    assert np.all(logits.grad[~masks] == 0.0)


def test_fuse_scores():
    assert np.allclose(fuse_scores(1.0, 1.0, [1.0], 0.26), [1.0])
    s_a = np.array([0.1, 0.9, 0.4])
    assert np.allclose(fuse_scores(0.8, 0.5, s_a, 1.0), s_a)
    assert np.allclose(fuse_scores(0.8, 0.5, s_a, 0.0), 0.4)
    assert abs(float(fuse_scores(0.8, 0.5, [0.9], 0.26)[0]) - 0.494) < 1e-3
    rng = make_rng(4)
    for _ in range(20):
        s_a = rng.uniform(size=6)
        fused = fuse_scores(*rng.uniform(0.01, 1.0, 2), s_a, rng.uniform(0.05, 1.0))
        assert int(np.argmax(fused)) == int(np.argmax(s_a))


def test_fuse_scores_rejects_lambda():
    for lam in (-0.1, 1.5):
        try:
            fuse_scores(0.5, 0.5, [0.5], lam)
            assert False, f"lambda {lam} accepted"
        except ValueError:
            pass


def test_action_masks():
    assert action_mask(0, TABLE).sum() == 2
    assert np.array_equal(action_mask(2, TABLE), [False, False, False, True])
    assert action_masks([1, 2], TABLE).shape == (2, 4)
    assert action_masks([], TABLE).shape == (0, 4)
    assert ActionTable(np.ones((2, 3), dtype=bool)).mask(1).all()
    try:
        action_mask(3, TABLE)
        assert False, "class out of range accepted"
    except ValueError:
        pass
    try:
        ActionTable(np.array([[True, False], [False, False]]))
        assert False, "class without actions accepted"
    except ConfigError:
        pass


def test_interaction_targets():
    image = ImageDetections(
        image_id="img", width=200, height=200,
        boxes=[(10.0, 10.0, 60.0, 150.0), (50.0, 40.0, 120.0, 100.0), (130.0, 130.0, 190.0, 190.0)],
        scores=[0.9, 0.8, 0.7], classes=[0, 1, 2],
    )
    dets = image.to_detections()
    pairs = [PairIndex(0, 1), PairIndex(0, 2)]
    gts = [
        GtPair("img", (12.0, 12.0, 60.0, 148.0), (50.0, 42.0, 118.0, 100.0), 1, 0),
        GtPair("img", (12.0, 12.0, 60.0, 148.0), (50.0, 42.0, 118.0, 100.0), 1, 2),
        # wrong object class for pair 0
        GtPair("img", (10.0, 10.0, 60.0, 150.0), (50.0, 40.0, 120.0, 100.0), 2, 3),
        # human box far off
        GtPair("img", (100.0, 0.0, 200.0, 50.0), (130.0, 130.0, 190.0, 190.0), 2, 3),
    ]
    targets = interaction_targets(dets, pairs, gts, 4)
    assert np.array_equal(targets, [[1, 0, 1, 0], [0, 0, 0, 0]])


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")
