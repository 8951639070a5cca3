import json

import numpy as np
import pytest

import flowgs

SMALL = dict(
    synth__width=40,
    synth__height=32,
    synth__focal=22,
    synth__frames=4,
    synth__gaussians=400,
)
QUICK = dict(iters__init=20, iters__scene=3, iters__pose=4, iters__test_pose=4, threads=1)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("flowgs")
    flowgs.synth(root / "data", **SMALL)
    return root


def read_poses(path):
    return np.loadtxt(path, ndmin=2)


def test_default_config_values():
    c = flowgs.default_config()
    assert c["iters"]["pose"] == 30
    assert c["lr"]["pose"] == 4e-3
    assert c["gamma"] == 0.9


def test_ground_truth_scene_renders_its_own_images(dataset):
    data = dataset / "data"
    k = [float(v) for v in (data / "intrinsics.txt").read_text().split()]
    gt = read_poses(data / "gt_poses.txt")
    out = flowgs.render(str(data / "gt_scene.bin"), gt[0], k)
    assert out["color"].shape == (32, 40, 3)
    assert out["alpha"].min() >= 0.0 and out["alpha"].max() <= 1.0
    assert flowgs.psnr(out["color"], out["color"]) == 100.0
    assert flowgs.ssim(out["color"], out["color"]) == pytest.approx(1.0)


def test_reconstruct_reports_trajectory(dataset):
    metrics = flowgs.reconstruct(dataset / "data", dataset / "run", **QUICK)
    assert metrics["schema_version"] == 1
    assert metrics["trajectory"]["frames"] == 4
    est = read_poses(dataset / "run" / "trajectory.txt")
    gt = read_poses(dataset / "data" / "gt_poses.txt")
    direct = flowgs.evaluate_trajectory(est, gt)
    assert direct["ate"] == pytest.approx(metrics["trajectory"]["ate"], abs=1e-12)
    meta = json.loads((dataset / "run" / "metadata.json").read_text())
    assert meta["config"]["iters"]["scene"] == 3


def test_identical_trajectories_score_zero():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(6, 4))
    poses = np.hstack([q / np.linalg.norm(q, axis=1, keepdims=True), rng.normal(size=(6, 3))])
    m = flowgs.evaluate_trajectory(poses, poses)
    assert m["ate"] < 1e-12 and m["rpe_t"] < 1e-12 and m["rpe_r_deg"] < 1e-9


def test_errors_surface_as_exceptions(tmp_path):
    bad = tmp_path / "scene.bin"
    bad.write_bytes(b"not a scene")
    with pytest.raises(flowgs.FlowgsError, match="FormatError"):
        flowgs.scene_size(str(bad))
    assert flowgs.run_cli(["reconstruct", str(tmp_path / "missing"), str(tmp_path / "out")]) != 0
