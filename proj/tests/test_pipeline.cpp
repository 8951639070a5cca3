#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "flowgs/image_io.hpp"
#include "flowgs/pipeline.hpp"
#include "flowgs/rasterizer.hpp"

namespace flowgs {
namespace {

namespace fs = std::filesystem;

SynthConfig tiny_synth(std::uint64_t seed = 3) {
  SynthConfig c;
  c.width = 64;
  c.height = 48;
  c.focal = 35.0;
  c.frames = 6;
  c.gaussians = 1500;
  c.seed = seed;
  return c;
}

PipelineConfig quick_pipeline() {
  PipelineConfig c;
  c.init_iters = 60;
  c.scene_iters = 10;
  c.pose_iters = 20;
  c.densify_every = 50;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("flowgs_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<PoseSE3> random_trajectory(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<PoseSE3> poses;
  for (int i = 0; i < n; ++i) {
    const QuatVec q = QuatVec(g(rng), g(rng), g(rng), g(rng)).normalized();
    poses.emplace_back(q, Eigen::Vector3d(g(rng), g(rng), g(rng)));
  }
  return poses;
}

TEST(SplitRole, HoldsOutEveryEighthFrame) {
  EXPECT_EQ(split_role(0, 8), FrameRole::Train);
  EXPECT_EQ(split_role(6, 8), FrameRole::Train);
  EXPECT_EQ(split_role(7, 8), FrameRole::Test);
  EXPECT_EQ(split_role(15, 8), FrameRole::Test);
  EXPECT_EQ(split_role(7, 0), FrameRole::Train);
}

TEST(Trajectory, IdenticalTrajectoriesScoreZero) {
  std::mt19937_64 rng(1);
  const auto poses = random_trajectory(12, rng);
  const TrajectoryMetrics m = evaluate_trajectory(poses, poses);
  EXPECT_NEAR(m.ate, 0.0, 1e-12);
  EXPECT_NEAR(m.rpe_t, 0.0, 1e-12);
  EXPECT_NEAR(m.rpe_r, 0.0, 1e-6);
}

TEST(Trajectory, InvariantToGlobalSimilarity) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto gt = random_trajectory(15, rng);
    std::normal_distribution<double> g(0.0, 1.0);
    const Eigen::Matrix3d rot =
        Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng)).normalized().toRotationMatrix();
    const Eigen::Vector3d shift(g(rng), g(rng), g(rng));
    const double s = 0.3 + std::abs(g(rng));
    // World change x' = s R x + shift applied to camera-to-world poses.
    std::vector<PoseSE3> est;
    for (const PoseSE3& p : gt) {
      const Eigen::Matrix3d rw = p.rotation_matrix() * rot.transpose();
      const Eigen::Vector3d c = s * rot * p.center() + shift;
      est.emplace_back(Eigen::Quaterniond(rw), -rw * c);
    }
    const TrajectoryMetrics m = evaluate_trajectory(est, gt);
    EXPECT_NEAR(m.ate, 0.0, 1e-9);
    EXPECT_NEAR(m.rpe_t, 0.0, 1e-9);
    EXPECT_NEAR(m.rpe_r, 0.0, 1e-6);
    EXPECT_NEAR(m.scale, 1.0 / s, 1e-9);
  }
}

TEST(Trajectory, SingleOffsetIsBoundedByUnalignedRmse) {
  // Without alignment the RMSE is 1/sqrt(N); the similarity fit can only lower it.
  std::mt19937_64 rng(3);
  const int n = 10;
  const auto gt = random_trajectory(n, rng);
  std::vector<PoseSE3> est = gt;
  const Eigen::Vector3d c = est[4].center() + Eigen::Vector3d(1.0, 0.0, 0.0);
  est[4] = PoseSE3(est[4].rotation(), -(est[4].rotation_matrix() * c));
  double sq = 0.0;
  for (int i = 0; i < n; ++i) sq += (est[i].center() - gt[i].center()).squaredNorm();
  EXPECT_NEAR(std::sqrt(sq / n), 1.0 / std::sqrt(n), 1e-12);
  const TrajectoryMetrics m = evaluate_trajectory(est, gt);
  EXPECT_GT(m.ate, 0.0);
  EXPECT_LE(m.ate, 1.0 / std::sqrt(n) + 1e-12);
}

TEST(Trajectory, RejectsLengthMismatch) {
  std::mt19937_64 rng(4);
  const auto a = random_trajectory(5, rng);
  const auto b = random_trajectory(4, rng);
  try {
    evaluate_trajectory(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
  EXPECT_THROW(evaluate_trajectory({a[0]}, {a[0]}), Error);
}

TEST(Umeyama, RecoversKnownSimilarity) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Eigen::Vector3d> src, dst;
  const Eigen::Matrix3d r = Eigen::Quaterniond(0.3, -0.5, 0.2, 0.7).normalized().toRotationMatrix();
  for (int i = 0; i < 20; ++i) {
    src.emplace_back(g(rng), g(rng), g(rng));
    dst.push_back(2.5 * r * src.back() + Eigen::Vector3d(1, -2, 3));
  }
  const Similarity s = umeyama(src, dst);
  EXPECT_NEAR(s.s, 2.5, 1e-12);
  EXPECT_LT((s.r - r).norm(), 1e-12);
  EXPECT_LT((s.t - Eigen::Vector3d(1, -2, 3)).norm(), 1e-12);
}

TEST(Synthetic, IsDeterministic) {
  const SyntheticDataset a = generate_synthetic(tiny_synth());
  const SyntheticDataset b = generate_synthetic(tiny_synth());
  EXPECT_EQ(cloud_fingerprint(a.gt_cloud), cloud_fingerprint(b.gt_cloud));
  for (size_t i = 0; i < a.frames.size(); ++i) {
    EXPECT_EQ(a.frames[i].image.data(), b.frames[i].image.data());
    EXPECT_EQ(a.frames[i].prior_depth.data(), b.frames[i].prior_depth.data());
  }
}

TEST(Synthetic, IngestedFlowMatchesProjectionFlowUnderGroundTruth) {
  SynthConfig cfg = tiny_synth();
  cfg.frames = 9;
  const SyntheticDataset data = generate_synthetic(cfg);
  const fs::path dir = scratch_dir("flow_consistency");
  write_dataset(dir, data);
  const Dataset loaded = load_dataset(dir, cfg.test_every);
  ASSERT_EQ(loaded.frames.size(), data.frames.size());
  int checked = 0;
  for (size_t i = 0; i < loaded.frames.size(); ++i) {
    const FrameRecord& f = loaded.frames[i];
    if (f.prior_flow_forward.empty()) continue;
    // Next train frame.
    size_t j = i + 1;
    while (loaded.frames[j].role != FrameRole::Train) ++j;
    const FlowField ref = projection_flow(data.gt_depths[i], loaded.gt_poses[i],
                                          loaded.gt_poses[j], loaded.k);
    for (size_t p = 0; p < ref.u.size(); ++p) {
      ASSERT_EQ(ref.valid[p], f.prior_flow_forward.valid[p]);
      if (!ref.valid[p]) continue;
      EXPECT_NEAR(f.prior_flow_forward.u[p], ref.u[p], 1e-6);
      EXPECT_NEAR(f.prior_flow_forward.v[p], ref.v[p], 1e-6);
    }
    ++checked;
  }
  EXPECT_EQ(checked, 7);  // frame 6 pairs with 8, skipping test frame 7
  fs::remove_all(dir);
}

TEST(Synthetic, AffineDepthPerturbationIsInvisibleToDepthLoss) {
  SynthConfig cfg = tiny_synth();
  cfg.perturb_depth = true;
  const SyntheticDataset data = generate_synthetic(cfg);
  for (size_t i = 0; i < data.frames.size(); ++i) {
    Mask valid(cfg.width, cfg.height, 0);
    for (size_t p = 0; p < valid.size(); ++p) valid[p] = data.gt_depths[i][p] > 0.0;
    const DepthLoss l = depth_loss(data.gt_depths[i], data.frames[i].prior_depth, valid);
    EXPECT_NEAR(l.value, 0.0, 1e-9);
  }
}

TEST(Synthetic, OutlierPatchIsRejectedByRigidMask) {
  SynthConfig cfg = tiny_synth();
  cfg.outlier_fraction = 0.1;
  const SyntheticDataset data = generate_synthetic(cfg);
  const FrameRecord& f = data.frames[1];
  const Mask& bad = data.outliers[1];
  ASSERT_FALSE(bad.empty());
  const Mask m = rigid_mask(f.prior_flow_forward, data.gt_poses[1], data.gt_poses[2], data.k, 0.5);
  int outliers = 0, removed = 0, inliers = 0, kept = 0;
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      if (!f.prior_flow_forward.valid(x, y)) continue;
      const long lx = std::lround(x + f.prior_flow_forward.u(x, y));
      const long ly = std::lround(y + f.prior_flow_forward.v(x, y));
      if (lx < 0 || ly < 0 || lx >= cfg.width || ly >= cfg.height) continue;
      const bool pass = m(static_cast<int>(lx), static_cast<int>(ly));
      if (bad(x, y)) {
        ++outliers;
        removed += !pass;
      } else {
        ++inliers;
        kept += pass;
      }
    }
  }
  ASSERT_GT(outliers, 0);
  EXPECT_GE(removed, 0.95 * outliers);
  EXPECT_GE(kept, 0.90 * inliers);
}

TEST(Dataset, RoundTripsThroughDisk) {
  const SyntheticDataset data = generate_synthetic(tiny_synth());
  const fs::path dir = scratch_dir("roundtrip");
  write_dataset(dir, data);
  const Dataset loaded = load_dataset(dir);
  ASSERT_EQ(loaded.frames.size(), data.frames.size());
  EXPECT_EQ(loaded.k.fx, data.k.fx);
  EXPECT_EQ(loaded.k.cy, data.k.cy);
  for (size_t i = 0; i < data.frames.size(); ++i) {
    EXPECT_EQ(loaded.frames[i].image.data(), data.frames[i].image.data());
    EXPECT_EQ(loaded.frames[i].prior_depth.data(), data.frames[i].prior_depth.data());
    EXPECT_EQ(loaded.gt_poses[i].translation(), data.gt_poses[i].translation());
    EXPECT_EQ(loaded.gt_poses[i].quat_wxyz(), data.gt_poses[i].quat_wxyz());
  }
  fs::remove_all(dir);
}

TEST(Dataset, MissingIntrinsicsNamesTheFile) {
  const SyntheticDataset data = generate_synthetic(tiny_synth());
  const fs::path dir = scratch_dir("missing_intrinsics");
  write_dataset(dir, data);
  fs::remove(dir / "intrinsics.txt");
  try {
    load_dataset(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
    EXPECT_NE(std::string(e.what()).find("intrinsics.txt"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Dataset, GroundTruthLengthMustMatch) {
  const SyntheticDataset data = generate_synthetic(tiny_synth());
  const fs::path dir = scratch_dir("gt_length");
  write_dataset(dir, data);
  std::vector<PoseSE3> fewer(data.gt_poses.begin(), data.gt_poses.end() - 1);
  write_poses(dir / "gt_poses.txt", fewer);
  EXPECT_THROW(load_dataset(dir), Error);
  fs::remove_all(dir);
}

TEST(Reconstruct, RequiresTwoTrainFrames) {
  SyntheticDataset data = generate_synthetic(tiny_synth());
  std::vector<FrameRecord> one(data.frames.begin(), data.frames.begin() + 1);
  try {
    reconstruct(one, data.k, quick_pipeline());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
  }
}

TEST(Reconstruct, RequiresFirstFrameDepth) {
  SyntheticDataset data = generate_synthetic(tiny_synth());
  data.frames[0].prior_depth = DepthMap();
  EXPECT_THROW(reconstruct(data.frames, data.k, quick_pipeline()), Error);
}

TEST(Reconstruct, ZeroMotionPairStaysAtIdentity) {
  SyntheticDataset data = generate_synthetic(tiny_synth());
  std::vector<FrameRecord> frames(2, data.frames[0]);
  frames[1].index = 1;
  frames[0].prior_flow_forward = FlowField(data.k.width, data.k.height);
  for (size_t i = 0; i < frames[0].prior_flow_forward.valid.size(); ++i) {
    frames[0].prior_flow_forward.valid[i] = 1;
  }
  PipelineConfig cfg = quick_pipeline();
  cfg.init_iters = 150;
  const ReconstructionResult r = reconstruct(frames, data.k, cfg);
  ASSERT_EQ(r.poses.size(), 2u);
  const PoseSE3& p = r.poses[1];
  EXPECT_LT(rotation_angle(p.rotation(), Eigen::Quaterniond::Identity()), 1e-3);
  EXPECT_LT(p.translation().norm(), 1e-3);
}

TEST(Reconstruct, FitsTheFirstFrameDuringInitialization) {
  SyntheticDataset data = generate_synthetic(tiny_synth());
  PipelineConfig cfg = quick_pipeline();
  cfg.init_iters = 300;
  std::vector<FrameRecord> frames(data.frames.begin(), data.frames.begin() + 2);
  const ReconstructionResult r = reconstruct(frames, data.k, cfg);
  bool logged = false;
  for (const auto& e : r.events) {
    if (e.find("init-phase PSNR") != std::string::npos) {
      logged = true;
      const double db = std::stod(e.substr(e.find("PSNR") + 5));
      EXPECT_GE(db, 30.0) << e;
    }
  }
  EXPECT_TRUE(logged);
}

TEST(Reconstruct, IsBitwiseDeterministic) {
  SyntheticDataset data = generate_synthetic(tiny_synth());
  auto f1 = data.frames, f2 = data.frames;
  const ReconstructionResult a = reconstruct(f1, data.k, quick_pipeline());
  const ReconstructionResult b = reconstruct(f2, data.k, quick_pipeline());
  EXPECT_EQ(cloud_fingerprint(a.cloud), cloud_fingerprint(b.cloud));
  ASSERT_EQ(a.poses.size(), b.poses.size());
  for (size_t i = 0; i < a.poses.size(); ++i) {
    EXPECT_EQ(a.poses[i].quat_wxyz(), b.poses[i].quat_wxyz());
    EXPECT_EQ(a.poses[i].translation(), b.poses[i].translation());
  }
  EXPECT_EQ(a.events, b.events);
}

TEST(Reconstruct, TestFramesDoNotTouchTheCloud) {
  SynthConfig cfg = tiny_synth();
  cfg.frames = 9;
  SyntheticDataset data = generate_synthetic(cfg);
  auto with_test = data.frames;
  std::vector<FrameRecord> train_only;
  for (const auto& f : data.frames) {
    if (f.role == FrameRole::Train) train_only.push_back(f);
  }
  ASSERT_LT(train_only.size(), with_test.size());
  const ReconstructionResult a = reconstruct(with_test, data.k, quick_pipeline());
  const ReconstructionResult b = reconstruct(train_only, data.k, quick_pipeline());
  EXPECT_EQ(cloud_fingerprint(a.cloud), cloud_fingerprint(b.cloud));
  EXPECT_FALSE(with_test[7].estimated_pose.has_value());
}

TEST(Reconstruct, GaussianCountChangesAreLogged) {
  SyntheticDataset data = generate_synthetic(tiny_synth());
  PipelineConfig cfg = quick_pipeline();
  cfg.densify.grad_threshold = 1e-6;  // force growth
  const ReconstructionResult r = reconstruct(data.frames, data.k, cfg);
  size_t last = 0;
  for (const auto& e : r.events) {
    if (e.rfind("densify", 0) != 0) continue;
    last = std::stoul(e.substr(e.find("-> ") + 3));
  }
  ASSERT_GT(last, 0u);
  EXPECT_EQ(last, r.cloud.size());
}

TEST(Reconstruct, RawCloudSavesToTheReturnedCloud) {
  SyntheticDataset data = generate_synthetic(tiny_synth());
  std::vector<FrameRecord> frames(data.frames.begin(), data.frames.begin() + 3);
  const ReconstructionResult r = reconstruct(frames, data.k, quick_pipeline());
  const fs::path dir = scratch_dir("raw_save");
  fs::create_directories(dir);
  save_scene(dir / "scene.bin", r.raw_cloud);
  EXPECT_EQ(cloud_fingerprint(load_scene(dir / "scene.bin")), cloud_fingerprint(r.cloud));
  fs::remove_all(dir);
}

TEST(Nvs, OwnRendersScoreAtTheCap) {
  const SyntheticDataset data = generate_synthetic(tiny_synth());
  std::vector<FrameRecord> frames = data.frames;
  for (size_t i = 0; i < frames.size(); ++i) {
    frames[i].estimated_pose = data.gt_poses[i];
    frames[i].image = quantize_8bit(render(data.gt_cloud, data.gt_poses[i], data.k).color);
  }
  const NvsMetrics m = evaluate_nvs(data.gt_cloud, frames, data.k);
  ASSERT_EQ(m.frames.size(), frames.size());
  EXPECT_EQ(m.mean_psnr, 100.0);
  EXPECT_NEAR(m.mean_ssim, 1.0, 1e-12);
}

TEST(Nvs, TestPosesRecoverFromNeighbourInterpolation) {
  SynthConfig cfg = tiny_synth();
  cfg.frames = 9;
  const SyntheticDataset data = generate_synthetic(cfg);
  std::vector<FrameRecord> frames = data.frames;
  for (size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].role == FrameRole::Train) frames[i].estimated_pose = data.gt_poses[i];
  }
  PipelineConfig pc;
  estimate_test_poses(frames, data.gt_cloud, data.k, pc);
  ASSERT_TRUE(frames[7].estimated_pose.has_value());
  const PoseSE3& p = *frames[7].estimated_pose;
  EXPECT_LT(rotation_angle(p.rotation(), data.gt_poses[7].rotation()) * 180.0 / M_PI, 0.1);
  EXPECT_LT((p.center() - data.gt_poses[7].center()).norm(), 0.01 * cfg.distance * cfg.scale);
}

}  // namespace
}  // namespace flowgs
