#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "flowgs/image_io.hpp"
#include "flowgs/pipeline.hpp"
#include "flowgs/rasterizer.hpp"

namespace flowgs {

namespace {

constexpr double kPatchHalfWidth = 3.6;
constexpr double kPatchHalfHeight = 2.8;

struct Wave {
  double fx, fy, phase;
  Eigen::Vector3d amp;
};

struct Surface {
  double relief;

  double height(double x, double y) const {
    return relief * std::sin(0.9 * x + 0.3) * std::cos(0.7 * y - 0.2);
  }
  Eigen::Vector3d normal(double x, double y) const {
    const double dx = relief * 0.9 * std::cos(0.9 * x + 0.3) * std::cos(0.7 * y - 0.2);
    const double dy = -relief * 0.7 * std::sin(0.9 * x + 0.3) * std::sin(0.7 * y - 0.2);
    return Eigen::Vector3d(-dx, -dy, 1.0).normalized();
  }
};

}  // namespace

void SynthConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::ConfigError, what);
  };
  require(width >= 16 && height >= 16, "synth: image must be at least 16x16");
  require(scale > 0.0, "synth: scale must be positive");
  require(focal > 0.0, "synth: focal must be positive");
  require(frames >= 2, "synth: at least 2 frames");
  require(gaussians >= 16, "synth: at least 16 Gaussians");
  require(distance > 0.5, "synth: distance must exceed 0.5");
  require(lateral >= 0.0 && advance >= 0.0 && advance < distance - 1.0,
          "synth: bad trajectory shape");
  require(depth_scale_lo > 0.0 && depth_scale_lo <= depth_scale_hi, "synth: bad depth scale range");
  require(depth_shift >= 0.0, "synth: depth_shift must be non-negative");
  require(outlier_fraction >= 0.0 && outlier_fraction <= 0.5,
          "synth: outlier_fraction must lie in [0, 0.5]");
  require(outlier_min_px > 0.0 && outlier_min_px <= outlier_max_px, "synth: bad outlier range");
  require(test_every >= 0, "synth: test_every must be non-negative");
}

SyntheticDataset generate_synthetic(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SyntheticDataset out;
  out.k = {config.focal, config.focal, 0.5 * (config.width - 1), 0.5 * (config.height - 1),
           config.width, config.height};

  std::vector<Wave> waves(7);
  for (Wave& w : waves) {
    w.fx = (unit(rng) * 2.0 - 1.0) * 3.5;
    w.fy = (unit(rng) * 2.0 - 1.0) * 3.5;
    w.phase = unit(rng) * 2.0 * M_PI;
    w.amp = Eigen::Vector3d(unit(rng), unit(rng), unit(rng)) * 0.12;
  }
  const Eigen::Vector3d base(0.45 + 0.1 * unit(rng), 0.45 + 0.1 * unit(rng),
                             0.45 + 0.1 * unit(rng));
  auto albedo = [&](double x, double y) -> Eigen::Vector3d {
    if (config.low_texture) {
      const double light = 1.0 + 0.12 * x / kPatchHalfWidth - 0.05 * y / kPatchHalfHeight;
      return Eigen::Vector3d(0.62, 0.48, 0.42) * light;
    }
    Eigen::Vector3d c = base;
    for (const Wave& w : waves) c += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
    return c.cwiseMax(0.05).cwiseMin(0.95).eval();
  };

  const Surface surface{config.relief};
  const double aspect = kPatchHalfWidth / kPatchHalfHeight;
  const int ny = std::max(2, static_cast<int>(std::lround(std::sqrt(config.gaussians / aspect))));
  const int nx = std::max(2, config.gaussians / ny);
  const double sx = 2.0 * kPatchHalfWidth / nx, sy = 2.0 * kPatchHalfHeight / ny;
  GaussianCloud& gt = out.gt_cloud;
  gt.sh_degree = 1;
  gt.resize(static_cast<size_t>(nx) * ny);
  size_t i = 0;
  for (int gy = 0; gy < ny; ++gy) {
    for (int gx = 0; gx < nx; ++gx, ++i) {
      const double x = -kPatchHalfWidth + (gx + 0.25 + 0.5 * unit(rng)) * sx;
      const double y = -kPatchHalfHeight + (gy + 0.25 + 0.5 * unit(rng)) * sy;
      gt.positions[i] = Eigen::Vector3d(x, y, surface.height(x, y));
      const Eigen::Quaterniond q =
          Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), surface.normal(x, y));
      gt.rotations[i] = QuatVec(q.w(), q.x(), q.y(), q.z());
      gt.log_scales[i] = Eigen::Vector3d(std::log(0.7 * sx), std::log(0.7 * sy), std::log(0.01));
      gt.opacity_logits[i] = logit(0.95);
      const Eigen::Vector3d c = albedo(x, y);
      auto sh = gt.sh_of(i);
      for (int ch = 0; ch < 3; ++ch) sh[ch] = (c[ch] - 0.5) / kShC0;
    }
  }
  for (size_t j = 0; j < gt.size(); ++j) {
    gt.positions[j] *= config.scale;
    gt.log_scales[j].array() += std::log(config.scale);
  }
  gt = quantize_to_float(gt);

  const double yaw = config.yaw_degrees * M_PI / 180.0;
  for (int f = 0; f < config.frames; ++f) {
    const double s = static_cast<double>(f) / (config.frames - 1);
    const double e = s * s * (3.0 - 2.0 * s);  // starts and ends at rest
    const double bob = 0.5 * (1.0 - std::cos(2.0 * M_PI * s));
    const Eigen::Vector3d eye(config.lateral * (e - 0.5), config.vertical_wobble * bob,
                              -config.distance + config.advance * e);
    const Eigen::Matrix3d c2w =
        (Eigen::AngleAxisd(yaw * (e - 0.5), Eigen::Vector3d::UnitY()) *
         Eigen::AngleAxisd(-0.5 * config.vertical_wobble / config.distance * bob,
                           Eigen::Vector3d::UnitX()))
            .toRotationMatrix();
    const Eigen::Matrix3d r = c2w.transpose();
    out.gt_poses.emplace_back(Eigen::Quaterniond(r).normalized(), -r * eye * config.scale);
  }

  std::uniform_real_distribution<double> scale_dist(config.depth_scale_lo, config.depth_scale_hi);
  std::uniform_real_distribution<double> shift_dist(-config.depth_shift, config.depth_shift);
  for (int f = 0; f < config.frames; ++f) {
    FrameRecord rec;
    rec.index = f;
    rec.role = split_role(f, config.test_every);
    const RenderOutput r = naive_render(gt, out.gt_poses[f], out.k);
    rec.image = quantize_8bit(r.color);
    DepthMap depth = expected_depth(r);
    for (double& d : depth.data()) d = static_cast<float>(d);  // as stored on disk
    out.gt_depths.push_back(depth);
    if (config.perturb_depth) {
      const double a = scale_dist(rng), b = shift_dist(rng);
      for (double& d : depth.data()) {
        if (d > 0.0) d = std::max(a * d + b, 1e-3);
      }
    }
    rec.prior_depth = std::move(depth);
    out.frames.push_back(std::move(rec));
  }

  // Outlier region: a fixed rectangle covering outlier_fraction of the image.
  const double side = std::sqrt(config.outlier_fraction);
  const int rw = static_cast<int>(std::lround(side * config.width));
  const int rh = static_cast<int>(std::lround(side * config.height));
  const int rx = static_cast<int>(0.65 * config.width) - rw / 2;
  const int ry = static_cast<int>(0.4 * config.height) - rh / 2;
  std::uniform_real_distribution<double> off_dist(config.outlier_min_px, config.outlier_max_px);

  out.outliers.assign(out.frames.size(), Mask());
  int prev = -1;
  for (int f = 0; f < config.frames; ++f) {
    if (out.frames[f].role != FrameRole::Train) continue;
    if (prev >= 0) {
      FlowField flow = projection_flow(out.gt_depths[prev], out.gt_poses[prev], out.gt_poses[f],
                                       out.k);
      for (size_t j = 0; j < flow.u.size(); ++j) {
        flow.u[j] = static_cast<float>(flow.u[j]);
        flow.v[j] = static_cast<float>(flow.v[j]);
      }
      if (rw > 0 && rh > 0) {
        const FundamentalMatrix fm =
            fundamental_from_poses(out.gt_poses[prev], out.gt_poses[f], out.k);
        Mask bad(config.width, config.height, 0);
        const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;  // one coherent offset per pair
        for (int y = std::max(ry, 0); y < std::min(ry + rh, config.height); ++y) {
          for (int x = std::max(rx, 0); x < std::min(rx + rw, config.width); ++x) {
            if (!flow.valid(x, y)) continue;
            const Eigen::Vector3d l = fm.f * Eigen::Vector3d(x, y, 1.0);
            const Eigen::Vector2d n = Eigen::Vector2d(l.x(), l.y()).normalized();
            const double d = sign * off_dist(rng);
            flow.u(x, y) = static_cast<float>(flow.u(x, y) + d * n.x());
            flow.v(x, y) = static_cast<float>(flow.v(x, y) + d * n.y());
            bad(x, y) = 1;
          }
        }
        out.outliers[prev] = std::move(bad);
      }
      out.frames[prev].prior_flow_forward = std::move(flow);
    }
    prev = f;
  }
  return out;
}

}  // namespace flowgs
