#include "flowgs/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include <Eigen/SVD>

#include "flowgs/image_io.hpp"
#include "flowgs/rasterizer.hpp"

namespace flowgs {

namespace {

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double cloud_radius(const GaussianCloud& cloud) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : cloud.positions) mean += p;
  mean /= static_cast<double>(cloud.size());
  double r = 0.0;
  for (const auto& p : cloud.positions) r = std::max(r, (p - mean).norm());
  return std::max(r, 1e-6);
}

/// Drops flow vectors whose landing pixel is not covered by the predicted render.
Mask landing_visibility(const FlowField& flow, const DepthMap& alpha_next, double gamma) {
  Mask m(flow.width(), flow.height(), 0);
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      if (!flow.valid(x, y)) continue;
      const long lx = std::lround(x + flow.u(x, y));
      const long ly = std::lround(y + flow.v(x, y));
      if (lx < 0 || ly < 0 || lx >= flow.width() || ly >= flow.height()) continue;
      m(x, y) = alpha_next(static_cast<int>(lx), static_cast<int>(ly)) > gamma ? 1 : 0;
    }
  }
  return m;
}

PoseSE3 blend_poses(const PoseSE3& a, const PoseSE3& b, double w) {
  QuatVec qa = a.quat_wxyz(), qb = b.quat_wxyz();
  if (qa.dot(qb) < 0.0) qb = -qb;
  return PoseSE3(QuatVec(((1.0 - w) * qa + w * qb).normalized()),
                 (1.0 - w) * a.translation() + w * b.translation());
}

}  // namespace

FrameRole split_role(int index, int test_every) {
  if (test_every <= 1) return FrameRole::Train;
  return index % test_every == test_every - 1 ? FrameRole::Test : FrameRole::Train;
}

void PipelineConfig::validate() const {
  weights.validate();
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::ConfigError, what);
  };
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  require(beta > 0.0, "beta must be positive");
  require(pose_iters >= 0 && scene_iters >= 0 && init_iters >= 0 && test_pose_iters >= 0,
          "iteration counts must be non-negative");
  require(densify_every >= 0, "densify_every must be non-negative");
  require(init.stride >= 1, "init stride must be >= 1");
  require(init.sh_degree >= 0 && init.sh_degree <= kMaxShDegree, "sh_degree must lie in [0, 3]");
  require(init.opacity > 0.0 && init.opacity < 1.0, "init opacity must lie in (0, 1)");
  require(pose_lr > 0.0, "pose_lr must be positive");
}

ReconstructionResult reconstruct(std::vector<FrameRecord>& frames, const CameraIntrinsics& k,
                                 const PipelineConfig& config, const Logger& log) {
  config.validate();
  k.validate();
  std::vector<size_t> train;
  for (size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].role == FrameRole::Train) train.push_back(i);
  }
  if (train.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "reconstruct: at least 2 train frames are required");
  }
  for (size_t i : train) {
    if (!frames[i].image.same_shape(k.width, k.height)) {
      throw Error(ErrorCode::DimensionMismatch,
                  fmt("frame %d: image size does not match intrinsics", frames[i].index));
    }
  }
  FrameRecord& first = frames[train[0]];
  if (first.prior_depth.empty()) {
    throw Error(ErrorCode::InvalidArgument, "reconstruct: the first frame needs a depth prior");
  }

  ReconstructionResult res;
  auto emit = [&](const std::string& line) {
    res.events.push_back(line);
    if (log) log(line);
  };
  std::mt19937_64 rng(config.seed);

  first.estimated_pose = PoseSE3::identity();
  GaussianCloud cloud = init_from_depth(first.image, first.prior_depth, PoseSE3::identity(), k,
                                        config.init);
  const double extent = cloud_radius(cloud);
  DensifyOptions densify = config.densify;
  densify.scene_extent = extent;
  SceneOptimizer optimizer(cloud, config.learning_rates, extent);
  emit(fmt("init: %zu Gaussians from frame %d, extent %.4g", cloud.size(), first.index, extent));

  SceneObjectiveOptions scene_opts;
  scene_opts.weights = config.weights;
  scene_opts.gamma = config.gamma;
  PoseEstimationOptions pose_opts;
  pose_opts.iters = config.pose_iters;
  pose_opts.weights = config.weights;
  pose_opts.adam.lr = config.pose_lr;

  size_t processed = 1;
  auto build_views = [&] {
    std::vector<SceneFrameView> views;
    for (size_t a = 0; a < processed; ++a) {
      const FrameRecord& f = frames[train[a]];
      SceneFrameView v;
      v.image = &f.image;
      v.pose = *f.estimated_pose;
      if (!f.prior_depth.empty()) v.prior_depth = &f.prior_depth;
      if (a + 1 < processed && !f.prior_flow_forward.empty()) {
        v.prior_flow = &f.prior_flow_forward;
        v.next_pose = *frames[train[a + 1]].estimated_pose;
        if (!f.rigid.empty()) v.rigid_mask = &f.rigid;
      }
      views.push_back(v);
    }
    return views;
  };

  int scene_step = 0;
  auto scene_round = [&](int iters, int frame_index) {
    const std::vector<SceneFrameView> views = build_views();
    for (int it = 0; it < iters; ++it) {
      SceneStepResult step;
      try {
        step = optimize_scene_step(views, cloud, k, optimizer, scene_opts, rng);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteLoss) throw;
        throw Error(ErrorCode::NonFiniteLoss,
                    fmt("scene optimization after frame %d: %s", frame_index, e.what()));
      }
      if (step.skipped_groups > 0) {
        emit(fmt("scene step %d: skipped %d parameter groups with non-finite gradients",
                 scene_step, step.skipped_groups));
      }
      ++scene_step;
      if (config.densify_every > 0 && scene_step % config.densify_every == 0) {
        const size_t before = cloud.size();
        const DensifyResult d = optimizer.densify(cloud, densify, rng);
        if (cloud.size() != before || d.pruned > 0) {
          emit(fmt("densify at step %d: %zu -> %zu Gaussians (cloned %d, split %d, pruned %d)",
                   scene_step, before, cloud.size(), d.cloned, d.split, d.pruned));
        }
      }
    }
  };

  scene_round(config.init_iters, first.index);
  {
    const RenderOutput out = render(cloud, PoseSE3::identity(), k);
    emit(fmt("frame %d: init-phase PSNR %.2f dB after %d iterations", first.index,
             psnr(out.color, first.image), config.init_iters));
  }

  for (size_t m = 1; m < train.size(); ++m) {
    FrameRecord& prev = frames[train[m - 1]];
    FrameRecord& cur = frames[train[m]];
    const PoseSE3 prev_pose = *prev.estimated_pose;
    PoseSE3 init = prev_pose;
    if (m > 1) {
      const FrameRecord& prev2 = frames[train[m - 2]];
      const double steps = static_cast<double>(cur.index - prev.index) / (prev.index - prev2.index);
      init = predict_pose_const_velocity(*prev2.estimated_pose, prev_pose, steps);
    }
    if (!cur.image.same_shape(k.width, k.height)) {
      throw Error(ErrorCode::DimensionMismatch, fmt("frame %d: bad image size", cur.index));
    }

    FrameDiagnostics diag;
    diag.index = cur.index;
    FlowConstraint fc;
    const bool use_flow = !prev.prior_flow_forward.empty() && config.weights.lambda_flow > 0.0;
    if (use_flow) {
      const RenderOutput src = render(cloud, prev_pose, k);
      fc.source_pose = prev_pose;
      fc.prior = prev.prior_flow_forward;
      fc.source_depth = src.depth;
      Mask vis = visibility_map(src, config.gamma);
      for (size_t i = 0; i < vis.size(); ++i) {
        if (!vis[i]) fc.source_depth[i] = 0.0;
      }
      if (config.use_visibility_mask) {
        const RenderOutput pred = render(cloud, init, k);
        vis = combine_mask(vis, landing_visibility(fc.prior, pred.alpha, config.gamma));
      }
      prev.visibility = vis;
      if (config.use_rigid_mask && m >= 2) {
        const FrameRecord& pp = frames[train[m - 2]];
        prev.rigid = rigid_mask(pp.prior_flow_forward, *pp.estimated_pose, prev_pose, k,
                                config.beta);
      } else {
        prev.rigid = Mask();
      }
      fc.mask = prev.rigid.empty() ? vis : combine_mask(vis, prev.rigid);
      for (size_t i = 0; i < fc.mask.size(); ++i) {
        if (fc.prior.valid[i] && fc.source_depth[i] > 0.0 && !fc.mask[i]) ++diag.masked_out;
      }
    }

    PoseEstimate est;
    try {
      est = estimate_pose(cloud, k, cur.image, use_flow ? &fc : nullptr, init, pose_opts);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteLoss) throw;
      throw Error(ErrorCode::NonFiniteLoss, fmt("frame %d: %s", cur.index, e.what()));
    }
    if (!std::isfinite(est.best_objective) || !est.pose.translation().allFinite()) {
      throw Error(ErrorCode::NonFiniteLoss,
                  fmt("frame %d: pose estimation produced a non-finite result", cur.index));
    }
    cur.estimated_pose = est.pose;
    ++processed;

    diag.initial_objective = est.initial_objective;
    diag.best_objective = est.best_objective;
    diag.best_iteration = est.best_iteration;
    if (use_flow) {
      diag.flow_pixels =
          evaluate_pose_objective(cloud, k, cur.image, &fc, est.pose, pose_opts, false).flow_pixels;
    }

    scene_round(config.scene_iters, cur.index);
    diag.gaussians = cloud.size();
    res.diagnostics.push_back(diag);
    emit(fmt("frame %d: pose objective %.6g -> %.6g (iter %d), flow px %zu, masked %zu, %zu Gaussians",
             cur.index, diag.initial_objective, diag.best_objective, diag.best_iteration,
             diag.flow_pixels, diag.masked_out, diag.gaussians));
  }

  res.raw_cloud = cloud;
  res.cloud = quantize_to_float(cloud);
  for (size_t i : train) {
    res.frame_indices.push_back(frames[i].index);
    res.poses.push_back(*frames[i].estimated_pose);
  }
  return res;
}

void estimate_test_poses(std::vector<FrameRecord>& frames, const GaussianCloud& cloud,
                         const CameraIntrinsics& k, const PipelineConfig& config) {
  PoseEstimationOptions opts;
  opts.iters = config.test_pose_iters;
  opts.weights = config.weights;
  opts.weights.lambda_flow = 0.0;
  opts.adam.lr = config.pose_lr;
  for (size_t i = 0; i < frames.size(); ++i) {
    FrameRecord& f = frames[i];
    if (f.role != FrameRole::Test) continue;
    const FrameRecord* before = nullptr;
    const FrameRecord* after = nullptr;
    for (size_t j = i; j-- > 0;) {
      if (frames[j].role == FrameRole::Train && frames[j].estimated_pose) {
        before = &frames[j];
        break;
      }
    }
    for (size_t j = i + 1; j < frames.size(); ++j) {
      if (frames[j].role == FrameRole::Train && frames[j].estimated_pose) {
        after = &frames[j];
        break;
      }
    }
    if (before == nullptr && after == nullptr) {
      throw Error(ErrorCode::InvalidArgument, "estimate_test_poses: no posed train frames");
    }
    PoseSE3 init;
    if (before != nullptr && after != nullptr) {
      const double w = static_cast<double>(f.index - before->index) /
                       static_cast<double>(after->index - before->index);
      init = blend_poses(*before->estimated_pose, *after->estimated_pose, w);
    } else {
      init = *(before != nullptr ? before : after)->estimated_pose;
    }
    f.estimated_pose = estimate_pose(cloud, k, f.image, nullptr, init, opts).pose;
  }
}

NvsMetrics evaluate_nvs(const GaussianCloud& cloud, const std::vector<FrameRecord>& frames,
                        const CameraIntrinsics& k, bool quantize) {
  NvsMetrics m;
  for (const FrameRecord& f : frames) {
    if (!f.estimated_pose) continue;
    RgbImage img = render(cloud, *f.estimated_pose, k).color;
    if (quantize) img = quantize_8bit(img);
    m.frames.push_back({f.index, psnr(img, f.image), ssim(img, f.image)});
  }
  for (const auto& fm : m.frames) {
    m.mean_psnr += fm.psnr;
    m.mean_ssim += fm.ssim;
  }
  if (!m.frames.empty()) {
    m.mean_psnr /= static_cast<double>(m.frames.size());
    m.mean_ssim /= static_cast<double>(m.frames.size());
  }
  return m;
}

Similarity umeyama(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst) {
  if (src.size() != dst.size() || src.empty()) {
    throw Error(ErrorCode::LengthMismatch, "umeyama: point sets differ in length");
  }
  const double n = static_cast<double>(src.size());
  Eigen::Vector3d ms = Eigen::Vector3d::Zero(), md = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    ms += src[i];
    md += dst[i];
  }
  ms /= n;
  md /= n;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double var = 0.0;
  for (size_t i = 0; i < src.size(); ++i) {
    cov += (dst[i] - md) * (src[i] - ms).transpose();
    var += (src[i] - ms).squaredNorm();
  }
  cov /= n;
  var /= n;
  Similarity out;
  if (var <= 0.0) {
    out.t = md - ms;
    return out;
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  out.r = svd.matrixU() * d * svd.matrixV().transpose();
  out.s = (svd.singularValues().asDiagonal() * d).trace() / var;
  out.t = md - out.s * out.r * ms;
  return out;
}

TrajectoryMetrics evaluate_trajectory(const std::vector<PoseSE3>& estimated,
                                      const std::vector<PoseSE3>& ground_truth) {
  if (estimated.size() != ground_truth.size()) {
    throw Error(ErrorCode::LengthMismatch,
                fmt("evaluate_trajectory: %zu estimated vs %zu ground-truth poses",
                    estimated.size(), ground_truth.size()));
  }
  if (estimated.size() < 2) {
    throw Error(ErrorCode::LengthMismatch, "evaluate_trajectory: need at least 2 poses");
  }
  const size_t n = estimated.size();
  std::vector<Eigen::Vector3d> ce(n), cg(n);
  for (size_t i = 0; i < n; ++i) {
    ce[i] = estimated[i].center();
    cg[i] = ground_truth[i].center();
  }
  const Similarity sim = umeyama(ce, cg);
  TrajectoryMetrics m;
  m.scale = sim.s;
  std::vector<Eigen::Vector3d> aligned(n);
  std::vector<Eigen::Matrix3d> rot_est(n), rot_gt(n);  // camera-to-world
  double sq = 0.0;
  for (size_t i = 0; i < n; ++i) {
    aligned[i] = sim.s * sim.r * ce[i] + sim.t;
    sq += (aligned[i] - cg[i]).squaredNorm();
    rot_est[i] = sim.r * estimated[i].rotation_matrix().transpose();
    rot_gt[i] = ground_truth[i].rotation_matrix().transpose();
  }
  m.ate = std::sqrt(sq / static_cast<double>(n));
  for (size_t i = 0; i + 1 < n; ++i) {
    const Eigen::Matrix3d dr_est = rot_est[i].transpose() * rot_est[i + 1];
    const Eigen::Matrix3d dr_gt = rot_gt[i].transpose() * rot_gt[i + 1];
    const Eigen::Vector3d dt_est = rot_est[i].transpose() * (aligned[i + 1] - aligned[i]);
    const Eigen::Vector3d dt_gt = rot_gt[i].transpose() * (cg[i + 1] - cg[i]);
    m.rpe_t += (dr_gt.transpose() * (dt_est - dt_gt)).norm();
    const Eigen::Quaterniond err(dr_gt.transpose() * dr_est);
    m.rpe_r += rotation_angle(Eigen::Quaterniond::Identity(), err) * 180.0 / M_PI;
  }
  m.rpe_t /= static_cast<double>(n - 1);
  m.rpe_r /= static_cast<double>(n - 1);
  return m;
}

double trajectory_extent(const std::vector<PoseSE3>& poses) {
  double e = 0.0;
  for (size_t i = 0; i < poses.size(); ++i) {
    for (size_t j = i + 1; j < poses.size(); ++j) {
      e = std::max(e, (poses[i].center() - poses[j].center()).norm());
    }
  }
  return e;
}

}  // namespace flowgs
