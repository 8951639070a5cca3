#pragma once

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Core>

#include "flowgs/gaussian_scene.hpp"
#include "flowgs/geometry.hpp"

namespace flowgs::testing {

inline CameraIntrinsics small_camera(int width = 40, int height = 32) {
  CameraIntrinsics k;
  k.fx = k.fy = 0.9 * width;
  k.cx = 0.5 * width - 0.3;
  k.cy = 0.5 * height + 0.2;
  k.width = width;
  k.height = height;
  return k;
}

inline QuatVec random_unit_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  QuatVec q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized();
}

inline PoseSE3 small_motion(std::mt19937_64& rng, double angle, double shift) {
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::Vector3d axis = Eigen::Vector3d(n(rng), n(rng), n(rng)).normalized();
  const Eigen::Vector3d t(n(rng), n(rng), n(rng));
  return PoseSE3(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis)), shift * t.normalized());
}

/// Gaussians scattered inside the frustum of an identity camera, depth 2..4.
inline GaussianCloud random_cloud(size_t n, std::uint64_t seed, const CameraIntrinsics& k,
                                  int sh_degree = 1, double scale_lo = 0.04,
                                  double scale_hi = 0.15) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nrm(0.0, 1.0);
  GaussianCloud c;
  c.sh_degree = sh_degree;
  c.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const double z = 2.0 + 2.0 * u(rng);
    const double px = (0.1 + 0.8 * u(rng)) * k.width;
    const double py = (0.1 + 0.8 * u(rng)) * k.height;
    c.positions[i] = {(px - k.cx) / k.fx * z, (py - k.cy) / k.fy * z, z};
    c.rotations[i] = random_unit_quat(rng);
    for (int a = 0; a < 3; ++a) c.log_scales[i][a] = std::log(scale_lo + (scale_hi - scale_lo) * u(rng));
    c.opacity_logits[i] = -1.0 + 3.0 * u(rng);
    auto sh = c.sh_of(i);
    for (int ch = 0; ch < 3; ++ch) sh[ch] = (u(rng) - 0.5) / kShC0 * 0.8;
    for (size_t j = 3; j < sh.size(); ++j) sh[j] = 0.2 * nrm(rng);
  }
  return c;
}

/// Central difference of f at x along a single coordinate.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace flowgs::testing
