#include "flowgs/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace flowgs {

bool AdamState::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "AdamState::step: size mismatch");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) return false;
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, steps_);
  const double bc2 = 1.0 - std::pow(config_.beta2, steps_);
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grads[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grads[i] * grads[i];
    const double m_hat = m_[i] / bc1;
    const double v_hat = v_[i] / bc2;
    params[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
  }
  return true;
}

void AdamState::remap(std::span<const int> origin, const std::vector<bool>& carried,
                      size_t block) {
  std::vector<double> m(origin.size() * block, 0.0), v(origin.size() * block, 0.0);
  for (size_t i = 0; i < origin.size(); ++i) {
    if (!carried[i]) continue;
    const size_t src = static_cast<size_t>(origin[i]) * block;
    for (size_t j = 0; j < block; ++j) {
      m[i * block + j] = m_[src + j];
      v[i * block + j] = v_[src + j];
    }
  }
  m_ = std::move(m);
  v_ = std::move(v);
}

std::array<double, 7> PoseParams::packed() const {
  return {q[0], q[1], q[2], q[3], t[0], t[1], t[2]};
}

void PoseParams::unpack(std::span<const double, 7> v) {
  q = QuatVec(v[0], v[1], v[2], v[3]);
  t = Eigen::Vector3d(v[4], v[5], v[6]);
}

std::array<double, 7> PoseParams::raw_gradient(const PoseGradient& g) const {
  // g.q is already projected onto the tangent space of the unit sphere.
  const double n = q.norm();
  return {g.q[0] / n, g.q[1] / n, g.q[2] / n, g.q[3] / n, g.t[0], g.t[1], g.t[2]};
}

PoseSE3 predict_pose_const_velocity(const PoseSE3& pose_prev2, const PoseSE3& pose_prev,
                                    double steps) {
  const QuatVec q1 = pose_prev.quat_wxyz();
  QuatVec q0 = pose_prev2.quat_wxyz();
  if (q0.dot(q1) < 0.0) q0 = -q0;
  const QuatVec dq = q1 - q0;
  const Eigen::Vector3d dt = pose_prev.translation() - pose_prev2.translation();
  if (dq.isZero(0.0) && dt.isZero(0.0)) return pose_prev;
  return PoseSE3(QuatVec((q1 + steps * dq).normalized()), pose_prev.translation() + steps * dt);
}

PoseObjective evaluate_pose_objective(const GaussianCloud& cloud, const CameraIntrinsics& k,
                                      const RgbImage& target, const FlowConstraint* flow,
                                      const PoseSE3& pose, const PoseEstimationOptions& options,
                                      bool want_grad) {
  const LossWeights& w = options.weights;
  PoseObjective res;
  const RenderOutput out = render(cloud, pose, k, options.render);
  const ImageLoss rgb = photometric_loss(out.color, target, w.lambda_dssim);
  res.rgb = rgb.value;
  if (want_grad && w.lambda_rgb > 0.0) {
    RgbImage d_color = rgb.grad;
    for (auto& px : d_color.data()) px *= w.lambda_rgb;
    res.grad = render_backward(cloud, pose, k, out, d_color, {}, {}).pose;
  }
  if (flow != nullptr && w.lambda_flow > 0.0) {
    const FlowField pf = projection_flow(flow->source_depth, flow->source_pose, pose, k,
                                         options.render.z_near);
    const FlowLoss fl = flow_loss(pf, flow->prior, flow->mask);
    res.flow = fl.value;
    res.flow_pixels = fl.count;
    if (want_grad && fl.count > 0) {
      Grid<double> gu = fl.grad_u, gv = fl.grad_v;
      for (auto& g : gu.data()) g *= w.lambda_flow;
      for (auto& g : gv.data()) g *= w.lambda_flow;
      res.grad += projection_flow_backward(flow->source_depth, flow->source_pose, pose, k, pf,
                                           gu, gv)
                      .d_pose_next;
    }
  }
  res.total = pose_objective(w, res.rgb, res.flow);
  return res;
}

PoseEstimate estimate_pose(const GaussianCloud& cloud, const CameraIntrinsics& k,
                           const RgbImage& target, const FlowConstraint* flow,
                           const PoseSE3& init, const PoseEstimationOptions& options) {
  if (options.iters < 0) throw Error(ErrorCode::InvalidArgument, "iters must be >= 0");
  PoseEstimate est;
  est.pose = init;
  PoseObjective cur =
      evaluate_pose_objective(cloud, k, target, flow, init, options, options.iters > 0);
  if (!std::isfinite(cur.total)) {
    throw Error(ErrorCode::NonFiniteLoss, "pose objective is not finite at the initial pose");
  }
  est.initial_objective = est.best_objective = cur.total;
  est.history.push_back(cur.total);

  PoseParams params(init);
  AdamState adam(7, options.adam);
  for (int it = 1; it <= options.iters; ++it) {
    auto x = params.packed();
    const auto g = params.raw_gradient(cur.grad);
    if (!adam.step(x, g)) break;
    params.unpack(x);
    const PoseSE3 pose = params.pose();
    cur = evaluate_pose_objective(cloud, k, target, flow, pose, options, it < options.iters);
    est.history.push_back(cur.total);
    if (!std::isfinite(cur.total)) break;
    if (cur.total < est.best_objective) {
      est.best_objective = cur.total;
      est.best_iteration = it;
      est.pose = pose;
    }
  }
  return est;
}

SceneObjective evaluate_scene_objective(const GaussianCloud& cloud, const CameraIntrinsics& k,
                                        const SceneFrameView& frame,
                                        const SceneObjectiveOptions& options) {
  const LossWeights& w = options.weights;
  SceneObjective res;
  const RenderOutput out = render(cloud, frame.pose, k, options.render);
  const ImageLoss rgb = photometric_loss(out.color, *frame.image, w.lambda_dssim);
  res.rgb = rgb.value;
  RgbImage d_color = rgb.grad;
  for (auto& px : d_color.data()) px *= w.lambda_rgb;

  const Mask visible = visibility_map(out.alpha, options.gamma);
  DepthMap d_depth(out.depth.width(), out.depth.height(), 0.0);

  if (frame.prior_depth != nullptr && w.lambda_depth > 0.0) {
    try {
      const DepthLoss dl = depth_loss(out.depth, *frame.prior_depth, visible);
      res.depth = dl.value;
      for (size_t i = 0; i < d_depth.size(); ++i) d_depth[i] += w.lambda_depth * dl.grad[i];
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientValidPixels) throw;
    }
  }

  if (frame.prior_flow != nullptr && w.lambda_flow > 0.0) {
    DepthMap src = out.depth;
    for (size_t i = 0; i < src.size(); ++i) {
      if (!visible[i]) src[i] = 0.0;
    }
    const FlowField pf = projection_flow(src, frame.pose, frame.next_pose, k,
                                         options.render.z_near);
    const Mask mask = frame.rigid_mask != nullptr ? combine_mask(*frame.rigid_mask, visible)
                                                  : visible;
    const FlowLoss fl = flow_loss(pf, *frame.prior_flow, mask);
    res.flow = fl.value;
    if (fl.count > 0) {
      Grid<double> gu = fl.grad_u, gv = fl.grad_v;
      for (auto& g : gu.data()) g *= w.lambda_flow;
      for (auto& g : gv.data()) g *= w.lambda_flow;
      const ProjectionFlowGrad pg =
          projection_flow_backward(src, frame.pose, frame.next_pose, k, pf, gu, gv);
      for (size_t i = 0; i < d_depth.size(); ++i) {
        if (visible[i]) d_depth[i] += pg.d_depth[i];
      }
    }
  }

  res.total = scene_objective(w, res.rgb, res.flow, res.depth);
  res.grads = render_backward(cloud, frame.pose, k, out, d_color, d_depth, {});
  return res;
}

namespace {

template <class Vec>
std::span<double> flat(std::vector<Vec>& v) {
  return {v.data()->data(), v.size() * Vec::SizeAtCompileTime};
}

template <class Vec>
std::span<const double> flat(const std::vector<Vec>& v) {
  return {v.data()->data(), v.size() * Vec::SizeAtCompileTime};
}

AdamConfig with_lr(AdamConfig c, double lr) {
  c.lr = lr;
  return c;
}

}  // namespace

SceneOptimizer::SceneOptimizer(const GaussianCloud& cloud, const SceneLearningRates& lrs,
                               double scene_extent, const AdamConfig& base)
    : extent_(scene_extent), sh_stride_(static_cast<int>(cloud.sh_stride())) {
  const size_t n = cloud.size();
  positions_ = AdamState(n * 3, with_lr(base, lrs.position * scene_extent));
  rotations_ = AdamState(n * 4, with_lr(base, lrs.rotation));
  scales_ = AdamState(n * 3, with_lr(base, lrs.scale));
  opacity_ = AdamState(n, with_lr(base, lrs.opacity));
  sh_dc_ = AdamState(n * 3, with_lr(base, lrs.sh_dc));
  sh_rest_ = AdamState(n * (sh_stride_ - 3), with_lr(base, lrs.sh_rest));
  grad_accum_.assign(n, 0.0);
  grad_views_.assign(n, 0);
}

int SceneOptimizer::step(GaussianCloud& cloud, const SceneGradients& grads) {
  const size_t n = cloud.size();
  if (grads.positions.size() != n || positions_.size() != n * 3) {
    throw Error(ErrorCode::DimensionMismatch, "SceneOptimizer::step: cloud size changed");
  }
  int skipped = 0;
  if (n == 0) return 0;
  skipped += !positions_.step(flat(cloud.positions), flat(grads.positions));
  skipped += !rotations_.step(flat(cloud.rotations), flat(grads.rotations));
  for (auto& q : cloud.rotations) q.normalize();
  skipped += !scales_.step(flat(cloud.log_scales), flat(grads.log_scales));
  skipped += !opacity_.step(cloud.opacity_logits, grads.opacity_logits);

  const size_t stride = static_cast<size_t>(sh_stride_);
  const size_t rest = stride - 3;
  std::vector<double> dc(n * 3), dc_g(n * 3), hi(n * rest), hi_g(n * rest);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < 3; ++j) {
      dc[i * 3 + j] = cloud.sh[i * stride + j];
      dc_g[i * 3 + j] = grads.sh[i * stride + j];
    }
    for (size_t j = 0; j < rest; ++j) {
      hi[i * rest + j] = cloud.sh[i * stride + 3 + j];
      hi_g[i * rest + j] = grads.sh[i * stride + 3 + j];
    }
  }
  skipped += !sh_dc_.step(dc, dc_g);
  if (rest > 0) skipped += !sh_rest_.step(hi, hi_g);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < 3; ++j) cloud.sh[i * stride + j] = dc[i * 3 + j];
    for (size_t j = 0; j < rest; ++j) cloud.sh[i * stride + 3 + j] = hi[i * rest + j];
  }

  for (size_t i = 0; i < n; ++i) {
    if (grads.visible[i] && std::isfinite(grads.mean2d_grad_norm[i])) {
      grad_accum_[i] += grads.mean2d_grad_norm[i];
      ++grad_views_[i];
    }
  }
  return skipped;
}

std::vector<double> SceneOptimizer::mean_grad_norms() const {
  std::vector<double> out(grad_accum_.size(), 0.0);
  for (size_t i = 0; i < out.size(); ++i) {
    if (grad_views_[i] > 0) out[i] = grad_accum_[i] / grad_views_[i];
  }
  return out;
}

DensifyResult SceneOptimizer::densify(GaussianCloud& cloud, const DensifyOptions& options,
                                      std::mt19937_64& rng) {
  DensifyResult res = densify_and_prune(cloud, mean_grad_norms(), options, rng);
  positions_.remap(res.origin, res.carried, 3);
  rotations_.remap(res.origin, res.carried, 4);
  scales_.remap(res.origin, res.carried, 3);
  opacity_.remap(res.origin, res.carried, 1);
  sh_dc_.remap(res.origin, res.carried, 3);
  sh_rest_.remap(res.origin, res.carried, static_cast<size_t>(sh_stride_) - 3);
  cloud = res.cloud;
  grad_accum_.assign(cloud.size(), 0.0);
  grad_views_.assign(cloud.size(), 0);
  return res;
}

void SceneOptimizer::reset_statistics() {
  std::fill(grad_accum_.begin(), grad_accum_.end(), 0.0);
  std::fill(grad_views_.begin(), grad_views_.end(), 0);
}

SceneStepResult optimize_scene_step(std::span<const SceneFrameView> frames, GaussianCloud& cloud,
                                    const CameraIntrinsics& k, SceneOptimizer& optimizer,
                                    const SceneObjectiveOptions& options, std::mt19937_64& rng) {
  if (frames.empty()) throw Error(ErrorCode::InvalidArgument, "optimize_scene_step: no frames");
  SceneStepResult res;
  std::uniform_int_distribution<size_t> pick(0, frames.size() - 1);
  res.frame = pick(rng);
  res.objective = evaluate_scene_objective(cloud, k, frames[res.frame], options);
  if (!std::isfinite(res.objective.total)) {
    throw Error(ErrorCode::NonFiniteLoss,
                "scene objective is not finite on frame " + std::to_string(res.frame));
  }
  res.skipped_groups = optimizer.step(cloud, res.objective.grads);
  return res;
}

}  // namespace flowgs
