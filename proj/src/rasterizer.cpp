#include "flowgs/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "flowgs/parallel.hpp"
#include "splat.hpp"

namespace flowgs {

namespace detail {

struct RenderState {
  int width = 0;
  int height = 0;
  int tiles_x = 0;
  int tiles_y = 0;
  RenderOptions options;
  QuatVec pose_q;
  Eigen::Vector3d pose_t;
  CameraIntrinsics k;
  std::uint64_t fingerprint = 0;
  size_t cloud_size = 0;

  /// Projected Gaussians, sorted front to back.
  std::vector<Splat> splats;
  /// CSR tile lists of indices into `splats`; each list stays depth sorted.
  std::vector<size_t> tile_offsets;
  std::vector<int> tile_entries;
  /// Per pixel: end position (within its tile list) of the processed prefix.
  std::vector<int> pixel_end;
};

}  // namespace detail

namespace {

using detail::Splat;

struct PixelAccum {
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double depth = 0.0;
  double alpha = 0.0;
  double transmittance = 1.0;
};

/// Opacity of a splat at pixel (x, y); false when outside its footprint.
inline bool splat_alpha(const Splat& s, double x, double y, double clamp, double& alpha,
                        double& gauss, bool& clamped, double& dx, double& dy) {
  dx = x - s.mean2d.x();
  dy = y - s.mean2d.y();
  if (dx * dx + dy * dy > s.radius_sq) return false;
  const double power =
      -0.5 * (s.conic(0, 0) * dx * dx + 2.0 * s.conic(0, 1) * dx * dy + s.conic(1, 1) * dy * dy);
  gauss = std::exp(power);
  const double raw = s.opacity * gauss;
  clamped = raw > clamp;
  alpha = clamped ? clamp : raw;
  return true;
}

std::vector<Splat> project_all(const GaussianCloud& cloud, const PoseSE3& pose,
                               const CameraIntrinsics& k, const RenderOptions& options) {
  const detail::ViewFrame view(pose, k, options.z_near);
  std::vector<Splat> projected(cloud.size());
  std::vector<std::uint8_t> keep(cloud.size(), 0);
  parallel_for(cloud.size(), [&](size_t i) {
    keep[i] = detail::project_splat(cloud, i, view, projected[i]) ? 1 : 0;
  });
  std::vector<Splat> out;
  out.reserve(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (keep[i]) out.push_back(projected[i]);
  }
  std::sort(out.begin(), out.end(), [](const Splat& a, const Splat& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.index < b.index;
  });
  return out;
}

RenderOutput make_output(int w, int h) {
  RenderOutput out;
  out.color = RgbImage(w, h, Eigen::Vector3d::Zero());
  out.depth = DepthMap(w, h, 0.0);
  out.alpha = DepthMap(w, h, 0.0);
  out.transmittance = DepthMap(w, h, 1.0);
  return out;
}

void store_pixel(RenderOutput& out, int x, int y, const PixelAccum& acc) {
  out.color(x, y) = acc.color;
  out.depth(x, y) = acc.depth;
  out.alpha(x, y) = acc.alpha;
  out.transmittance(x, y) = acc.transmittance;
}

void check_inputs(const GaussianCloud& cloud, const CameraIntrinsics& k) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyScene, "render: cloud is empty");
  k.validate();
}

// 10 doubles of 2D-space gradient per tile-list entry.
struct EntryGrad {
  Eigen::Vector2d mean2d = Eigen::Vector2d::Zero();
  double conic_a = 0.0, conic_b = 0.0, conic_c = 0.0;  // b: sum of both off-diagonals
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double depth = 0.0;
  double opacity = 0.0;
};

template <class T>
void mix(std::uint64_t& h, const T& v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
}

}  // namespace

DepthMap expected_depth(const RenderOutput& output, double min_alpha) {
  DepthMap d(output.depth.width(), output.depth.height(), 0.0);
  for (size_t i = 0; i < d.size(); ++i) {
    if (output.alpha[i] > min_alpha) d[i] = output.depth[i] / output.alpha[i];
  }
  return d;
}

std::uint64_t cloud_fingerprint(const GaussianCloud& cloud) {
  std::uint64_t h = 1469598103934665603ull;
  mix(h, cloud.sh_degree);
  mix(h, cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    for (int c = 0; c < 3; ++c) mix(h, cloud.positions[i][c]);
    for (int c = 0; c < 4; ++c) mix(h, cloud.rotations[i][c]);
    for (int c = 0; c < 3; ++c) mix(h, cloud.log_scales[i][c]);
    mix(h, cloud.opacity_logits[i]);
  }
  for (double v : cloud.sh) mix(h, v);
  return h;
}

void SceneGradients::reset(const GaussianCloud& cloud) {
  const size_t n = cloud.size();
  positions.assign(n, Eigen::Vector3d::Zero());
  rotations.assign(n, QuatVec::Zero());
  log_scales.assign(n, Eigen::Vector3d::Zero());
  opacity_logits.assign(n, 0.0);
  sh.assign(n * cloud.sh_stride(), 0.0);
  pose = PoseGradient{};
  mean2d_grad_norm.assign(n, 0.0);
  visible.assign(n, 0);
}

RenderOutput render(const GaussianCloud& cloud, const PoseSE3& pose, const CameraIntrinsics& k,
                    const RenderOptions& options) {
  check_inputs(cloud, k);
  auto state = std::make_shared<detail::RenderState>();
  state->width = k.width;
  state->height = k.height;
  state->tiles_x = (k.width + kTileSize - 1) / kTileSize;
  state->tiles_y = (k.height + kTileSize - 1) / kTileSize;
  state->options = options;
  state->pose_q = pose.quat_wxyz();
  state->pose_t = pose.translation();
  state->k = k;
  state->fingerprint = cloud_fingerprint(cloud);
  state->cloud_size = cloud.size();
  state->splats = project_all(cloud, pose, k, options);

  // Bin splats into tiles by the bounding box of their circular footprint.
  const int tiles = state->tiles_x * state->tiles_y;
  std::vector<Eigen::Vector4i> rect(state->splats.size());
  std::vector<size_t> counts(tiles, 0);
  for (size_t s = 0; s < state->splats.size(); ++s) {
    const Splat& sp = state->splats[s];
    const double r = std::sqrt(sp.radius_sq);
    const double x0 = std::max(0.0, std::floor(sp.mean2d.x() - r));
    const double x1 = std::min(k.width - 1.0, std::ceil(sp.mean2d.x() + r));
    const double y0 = std::max(0.0, std::floor(sp.mean2d.y() - r));
    const double y1 = std::min(k.height - 1.0, std::ceil(sp.mean2d.y() + r));
    if (!(x0 <= x1) || !(y0 <= y1)) {
      rect[s] = {0, -1, 0, -1};
      continue;
    }
    rect[s] = {static_cast<int>(x0) / kTileSize, static_cast<int>(x1) / kTileSize,
               static_cast<int>(y0) / kTileSize, static_cast<int>(y1) / kTileSize};
    for (int ty = rect[s][2]; ty <= rect[s][3]; ++ty) {
      for (int tx = rect[s][0]; tx <= rect[s][1]; ++tx) ++counts[ty * state->tiles_x + tx];
    }
  }
  state->tile_offsets.assign(tiles + 1, 0);
  for (int t = 0; t < tiles; ++t) state->tile_offsets[t + 1] = state->tile_offsets[t] + counts[t];
  state->tile_entries.resize(state->tile_offsets.back());
  std::vector<size_t> cursor(state->tile_offsets.begin(), state->tile_offsets.end() - 1);
  for (size_t s = 0; s < state->splats.size(); ++s) {
    for (int ty = rect[s][2]; ty <= rect[s][3]; ++ty) {
      for (int tx = rect[s][0]; tx <= rect[s][1]; ++tx) {
        state->tile_entries[cursor[ty * state->tiles_x + tx]++] = static_cast<int>(s);
      }
    }
  }

  RenderOutput out = make_output(k.width, k.height);
  state->pixel_end.assign(static_cast<size_t>(k.width) * k.height, 0);
  parallel_for(static_cast<size_t>(tiles), [&](size_t tile) {
    const int tx = static_cast<int>(tile) % state->tiles_x;
    const int ty = static_cast<int>(tile) / state->tiles_x;
    const size_t begin = state->tile_offsets[tile];
    const size_t end = state->tile_offsets[tile + 1];
    for (int y = ty * kTileSize; y < std::min(k.height, (ty + 1) * kTileSize); ++y) {
      for (int x = tx * kTileSize; x < std::min(k.width, (tx + 1) * kTileSize); ++x) {
        PixelAccum acc;
        int last = 0;
        for (size_t e = begin; e < end; ++e) {
          const Splat& s = state->splats[state->tile_entries[e]];
          double a, g, dx, dy;
          bool clamped;
          if (!splat_alpha(s, x, y, options.alpha_clamp, a, g, clamped, dx, dy)) continue;
          const double next_t = acc.transmittance * (1.0 - a);
          if (options.early_termination && next_t < options.transmittance_cutoff) break;
          const double w = a * acc.transmittance;
          acc.color += w * s.color;
          acc.depth += w * s.depth;
          acc.alpha += w;
          acc.transmittance = next_t;
          last = static_cast<int>(e - begin) + 1;
        }
        store_pixel(out, x, y, acc);
        state->pixel_end[static_cast<size_t>(y) * k.width + x] = last;
      }
    }
  });
  out.state = std::move(state);
  return out;
}

RenderOutput naive_render(const GaussianCloud& cloud, const PoseSE3& pose,
                          const CameraIntrinsics& k, const RenderOptions& options) {
  check_inputs(cloud, k);
  const std::vector<Splat> splats = project_all(cloud, pose, k, options);
  RenderOutput out = make_output(k.width, k.height);
  parallel_for(static_cast<size_t>(k.height), [&](size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < k.width; ++x) {
      PixelAccum acc;
      for (const Splat& s : splats) {
        double a, g, dx, dy;
        bool clamped;
        if (!splat_alpha(s, x, y, options.alpha_clamp, a, g, clamped, dx, dy)) continue;
        const double w = a * acc.transmittance;
        acc.color += w * s.color;
        acc.depth += w * s.depth;
        acc.alpha += w;
        acc.transmittance *= 1.0 - a;
      }
      store_pixel(out, x, y, acc);
    }
  });
  return out;
}

SceneGradients render_backward(const GaussianCloud& cloud, const PoseSE3& pose,
                               const CameraIntrinsics& k, const RenderOutput& output,
                               const RgbImage& d_color, const DepthMap& d_depth,
                               const DepthMap& d_alpha) {
  const auto* state = output.state.get();
  if (state == nullptr || state->cloud_size != cloud.size() || state->width != k.width ||
      state->height != k.height || state->pose_q != pose.quat_wxyz() ||
      state->pose_t != pose.translation() || state->k.fx != k.fx || state->k.fy != k.fy ||
      state->k.cx != k.cx || state->k.cy != k.cy ||
      state->fingerprint != cloud_fingerprint(cloud)) {
    throw Error(ErrorCode::StaleRenderState,
                "render_backward: blend records do not match the cloud, pose or camera");
  }
  const bool has_color = !d_color.empty();
  const bool has_depth = !d_depth.empty();
  const bool has_alpha = !d_alpha.empty();
  if (has_color) require_same_shape(d_color, output.color, "render_backward d_color");
  if (has_depth) require_same_shape(d_depth, output.depth, "render_backward d_depth");
  if (has_alpha) require_same_shape(d_alpha, output.alpha, "render_backward d_alpha");

  SceneGradients grads;
  grads.reset(cloud);
  const double clamp = state->options.alpha_clamp;

  // Pass 1: per-pixel reverse compositing into per-entry 2D gradients.
  std::vector<EntryGrad> entry_grads(state->tile_entries.size());
  const size_t tiles = state->tile_offsets.size() - 1;
  parallel_for(tiles, [&](size_t tile) {
    struct Hit {
      size_t entry;
      double a, t, g, dx, dy;
      bool clamped;
    };
    std::vector<Hit> hits;
    const int tx = static_cast<int>(tile) % state->tiles_x;
    const int ty = static_cast<int>(tile) / state->tiles_x;
    const size_t begin = state->tile_offsets[tile];
    for (int y = ty * kTileSize; y < std::min(k.height, (ty + 1) * kTileSize); ++y) {
      for (int x = tx * kTileSize; x < std::min(k.width, (tx + 1) * kTileSize); ++x) {
        const Eigen::Vector3d gc = has_color ? d_color(x, y) : Eigen::Vector3d::Zero();
        const double gd = has_depth ? d_depth(x, y) : 0.0;
        const double ga = has_alpha ? d_alpha(x, y) : 0.0;
        if (gc.isZero(0.0) && gd == 0.0 && ga == 0.0) continue;

        hits.clear();
        double t = 1.0;
        const size_t end = begin + state->pixel_end[static_cast<size_t>(y) * k.width + x];
        for (size_t e = begin; e < end; ++e) {
          const Splat& s = state->splats[state->tile_entries[e]];
          Hit h{};
          if (!splat_alpha(s, x, y, clamp, h.a, h.g, h.clamped, h.dx, h.dy)) continue;
          h.entry = e;
          h.t = t;
          hits.push_back(h);
          t *= 1.0 - h.a;
        }
        double after = 0.0;  // sum over later hits of w_k * v_k
        for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
          const Splat& s = state->splats[state->tile_entries[it->entry]];
          EntryGrad& eg = entry_grads[it->entry];
          const double w = it->a * it->t;
          const double v = gc.dot(s.color) + gd * s.depth + ga;
          eg.color += w * gc;
          eg.depth += w * gd;
          const double d_a = it->t * v - after / (1.0 - it->a);
          after += w * v;
          if (it->clamped) continue;
          eg.opacity += d_a * it->g;
          const double d_pow = d_a * s.opacity * it->g;
          const Eigen::Vector2d delta(it->dx, it->dy);
          eg.mean2d += d_pow * (s.conic * delta);
          eg.conic_a += d_pow * (-0.5 * it->dx * it->dx);
          eg.conic_b += d_pow * (-it->dx * it->dy);
          eg.conic_c += d_pow * (-0.5 * it->dy * it->dy);
        }
      }
    }
  });

  // Pass 2: reduce entries into splats in fixed (tile, list) order.
  const size_t ns = state->splats.size();
  std::vector<EntryGrad> splat_grads(ns);
  for (size_t e = 0; e < state->tile_entries.size(); ++e) {
    EntryGrad& dst = splat_grads[state->tile_entries[e]];
    const EntryGrad& src = entry_grads[e];
    dst.mean2d += src.mean2d;
    dst.conic_a += src.conic_a;
    dst.conic_b += src.conic_b;
    dst.conic_c += src.conic_c;
    dst.color += src.color;
    dst.depth += src.depth;
    dst.opacity += src.opacity;
  }

  // Pass 3: chain 2D gradients into 3D parameters, per splat.
  const detail::ViewFrame view(pose, k, state->options.z_near);
  const Eigen::Matrix3d& w_rot = view.rot;
  std::vector<Eigen::Matrix3d> pose_d_rot(ns, Eigen::Matrix3d::Zero());
  std::vector<Eigen::Vector3d> pose_d_t(ns, Eigen::Vector3d::Zero());
  const int ncoeff = cloud.coeffs();
  parallel_for(ns, [&](size_t si) {
    const Splat& s = state->splats[si];
    const EntryGrad& g = splat_grads[si];
    const size_t i = static_cast<size_t>(s.index);
    grads.visible[i] = 1;
    grads.mean2d_grad_norm[i] =
        std::hypot(g.mean2d.x() * 0.5 * k.width, g.mean2d.y() * 0.5 * k.height);

    const Eigen::Vector3d& mu = cloud.positions[i];
    const Eigen::Vector3d& p = s.p_cam;
    const double iz = 1.0 / p.z();
    const double iz2 = iz * iz;

    // Opacity.
    grads.opacity_logits[i] = g.opacity * s.opacity * (1.0 - s.opacity);

    // Conic -> 2D covariance -> 3D covariance and Jacobian.
    Eigen::Matrix2d g_conic;
    g_conic << g.conic_a, 0.5 * g.conic_b, 0.5 * g.conic_b, g.conic_c;
    const Eigen::Matrix2d g_cov2d = -s.conic * g_conic * s.conic;
    const Eigen::Matrix<double, 2, 3> jac = detail::perspective_jacobian(p, k);
    const Eigen::Matrix<double, 2, 3> m = jac * w_rot;
    const QuatVec& q = cloud.rotations[i];
    const Eigen::Matrix3d rot = quat_to_matrix(q.normalized());
    const Eigen::Vector3d scale = cloud.log_scales[i].array().exp();
    const Eigen::Matrix3d rs = rot * scale.asDiagonal();
    const Eigen::Matrix3d sigma = rs * rs.transpose();
    const Eigen::Matrix3d g_sigma = m.transpose() * g_cov2d * m;
    const Eigen::Matrix<double, 2, 3> g_m = 2.0 * g_cov2d * m * sigma;
    const Eigen::Matrix<double, 2, 3> g_jac = g_m * w_rot.transpose();
    Eigen::Matrix3d d_rot_pose = jac.transpose() * g_m;

    const Eigen::Matrix3d g_rs = (g_sigma + g_sigma.transpose()) * rs;
    for (int j = 0; j < 3; ++j) {
      grads.log_scales[i][j] = g_rs.col(j).dot(rot.col(j)) * scale[j];
    }
    grads.rotations[i] = rotation_grad_to_quat(g_rs * scale.asDiagonal(), q);

    Eigen::Vector3d g_p = Eigen::Vector3d::Zero();
    g_p.x() += g_jac(0, 2) * (-k.fx * iz2);
    g_p.y() += g_jac(1, 2) * (-k.fy * iz2);
    g_p.z() += g_jac(0, 0) * (-k.fx * iz2) + g_jac(0, 2) * (2.0 * k.fx * p.x() * iz2 * iz) +
               g_jac(1, 1) * (-k.fy * iz2) + g_jac(1, 2) * (2.0 * k.fy * p.y() * iz2 * iz);

    // Mean and depth.
    g_p.x() += g.mean2d.x() * k.fx * iz;
    g_p.y() += g.mean2d.y() * k.fy * iz;
    g_p.z() += -g.mean2d.x() * k.fx * p.x() * iz2 - g.mean2d.y() * k.fy * p.y() * iz2 + g.depth;

    Eigen::Vector3d g_mu = w_rot.transpose() * g_p;
    Eigen::Vector3d g_t = g_p;
    d_rot_pose += g_p * mu.transpose();

    // View-dependent color.
    Eigen::Vector3d g_col = g.color;
    for (int ch = 0; ch < 3; ++ch) {
      if (s.color_clamped[ch]) g_col[ch] = 0.0;
    }
    const Eigen::Vector3d v = mu - view.center;
    const double vn = v.norm();
    const Eigen::Vector3d dir = v / vn;
    std::array<double, 16> basis{};
    std::array<Eigen::Vector3d, 16> d_basis;
    sh_basis(cloud.sh_degree, dir, basis, d_basis);
    const auto coeffs = cloud.sh_of(i);
    double* g_sh = grads.sh.data() + i * cloud.sh_stride();
    Eigen::Vector3d g_dir = Eigen::Vector3d::Zero();
    for (int c = 0; c < ncoeff; ++c) {
      double proj = 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        g_sh[c * 3 + ch] = basis[c] * g_col[ch];
        proj += coeffs[c * 3 + ch] * g_col[ch];
      }
      if (c > 0) g_dir += proj * d_basis[c];
    }
    const Eigen::Vector3d g_v = (g_dir - dir * dir.dot(g_dir)) / vn;
    g_mu += g_v;
    const Eigen::Vector3d g_center = -g_v;
    // center = -R^T t
    g_t += -(w_rot * g_center);
    d_rot_pose += -(view.t * g_center.transpose());

    grads.positions[i] = g_mu;
    pose_d_rot[si] = d_rot_pose;
    pose_d_t[si] = g_t;
  });

  Eigen::Matrix3d d_rot = Eigen::Matrix3d::Zero();
  Eigen::Vector3d d_t = Eigen::Vector3d::Zero();
  for (size_t si = 0; si < ns; ++si) {
    d_rot += pose_d_rot[si];
    d_t += pose_d_t[si];
  }
  grads.pose.q = rotation_grad_to_quat(d_rot, pose.quat_wxyz());
  grads.pose.t = d_t;
  return grads;
}

Mask visibility_map(const DepthMap& alpha, double gamma) {
  Mask m(alpha.width(), alpha.height(), 0);
  for (size_t i = 0; i < alpha.size(); ++i) m[i] = alpha[i] > gamma ? 1 : 0;
  return m;
}

}  // namespace flowgs
