import json
import math

import numpy as np
import pytest

import bikt


def test_scene_and_density_conserve_count():
    image, points = bikt.generate_scene(height=64, width=64, intensity=12, seed=3)
    assert image.shape == (64, 64)
    assert points.shape[1] == 2
    density = bikt.det_to_reg(points, 64, 64)
    assert density.shape == (64, 64)
    assert bikt.density_count(density) == pytest.approx(len(points), abs=1e-6)
    adaptive = bikt.det_to_reg(points, 64, 64, mode="adaptive")
    assert adaptive.sum() == pytest.approx(len(points), abs=1e-6)


def test_focal_values():
    one, zero = np.ones((1, 1)), np.zeros((1, 1))
    assert bikt.focal_mse_loss(zero, one) == pytest.approx(0.25, abs=1e-9)
    s = 1 / (1 + math.exp(-1))
    assert bikt.focal_mse_loss(one, zero) == pytest.approx(0.1 * s * s, abs=1e-9)


def test_loss_gradients_shape():
    rng = np.random.default_rng(0)
    pred = rng.normal(size=(16, 16))
    target = (rng.random((16, 16)) < 0.1).astype(float)
    loss, grad = bikt.phi_total_loss(pred, target, grad=True)
    assert np.isfinite(loss)
    assert grad.shape == (16, 16)
    assert bikt.dms_ssim_loss(target, target) == pytest.approx(0.0, abs=1e-12)


def test_binarize_recovers_points():
    pts = np.array([[10.0, 12.0], [40.0, 30.0]])
    loc = bikt.points_to_localization(pts, 48, 48)
    found, scores = bikt.binarize_and_merge(loc)
    assert sorted(map(tuple, found)) == sorted(map(tuple, pts))
    assert len(scores) == 2


def test_fusion_and_nms():
    dets = np.array([[10, 10, 4, 0.9], [11, 10, 4, 0.5], [30, 30, 4, 0.7]], dtype=float)
    kept = bikt.nms(dets, 3.0)
    assert kept.shape == (2, 4)
    w = bikt.build_weight_map(dets, 40, 40, k=5)
    assert w.max() == pytest.approx(0.9)
    reg, det = np.full((40, 40), 0.2), np.zeros((40, 40))
    fused = bikt.fuse_density(reg, det, w)
    assert np.all(fused <= reg + 1e-12)


def test_evaluation():
    m = bikt.count_metrics([10, 20], [12, 16])
    assert m["mae"] == pytest.approx(3.0)
    assert m["mse"] == pytest.approx(math.sqrt(10))
    truth = np.array([[5.0, 5.0], [20.0, 20.0]])
    curve = bikt.localization_map([(truth, np.array([0.9, 0.8]))], [truth])
    assert curve["map"] == pytest.approx(1.0)
    assert len(curve["ap"]) == 100
    assert bikt.match_points(truth, np.array([0.9, 0.8]), truth, 1.0) == [True, True]


def test_config_and_errors(tmp_path):
    cfg = bikt.load_config()
    assert cfg["kernel"]["beta"] == 0.3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"transfer": {"cyclez": 1}}))
    with pytest.raises(bikt.ConfigError):
        bikt.load_config(bad)
    assert "transfer" in bikt.command_names()


def test_run_command_reports_missing_stage(tmp_path):
    status, _, err = bikt.run_command("transfer", out=str(tmp_path / "run"))
    assert status != 0
    assert json.loads(err)["error"] == "missing_stage"
