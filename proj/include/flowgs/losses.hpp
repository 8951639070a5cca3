#pragma once

#include <cstddef>

#include "flowgs/flow.hpp"
#include "flowgs/types.hpp"

namespace flowgs {

struct LossWeights {
  double lambda_dssim = 0.2;
  double lambda_rgb = 1.0;
  double lambda_flow = 0.1;
  double lambda_depth = 0.05;

  void validate() const;
};

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Mean SSIM over pixels and channels: 11x11 Gaussian window (sigma 1.5),
/// zero padding, unit-range constants.
double ssim(const RgbImage& a, const RgbImage& b);

struct SsimResult {
  double value = 0.0;
  RgbImage grad;  // d value / d a
};
SsimResult ssim_with_grad(const RgbImage& a, const RgbImage& b);

/// 10 log10(1 / MSE) on unit-range RGB, capped (identical images hit the cap).
double psnr(const RgbImage& a, const RgbImage& b, double cap_db = 100.0);

struct ImageLoss {
  double value = 0.0;
  RgbImage grad;
};

/// (1 - lambda) * L1 + lambda * (1 - SSIM) / 2, gradient w.r.t. `rendered`.
ImageLoss photometric_loss(const RgbImage& rendered, const RgbImage& target,
                           double lambda_dssim);

struct FlowLoss {
  double value = 0.0;
  Grid<double> grad_u;
  Grid<double> grad_v;
  size_t count = 0;
};

/// Mean squared residual norm over pixels that are masked and valid in both
/// fields; zero (with zero gradient) when no pixel qualifies.
FlowLoss flow_loss(const FlowField& projection, const FlowField& prior, const Mask& mask);

struct DepthLoss {
  double value = 0.0;
  DepthMap grad;
  double scale = 1.0;
  double shift = 0.0;
  size_t count = 0;
};

inline constexpr size_t kMinDepthPixels = 10;

/// Least-squares scale/shift alignment of `prior` to `rendered` over valid
/// pixels (mask set, both depths finite, prior > 0), then mean absolute error.
/// The gradient is exact, including the dependence of the alignment on
/// `rendered`. Throws InsufficientValidPixels below 10 pixels.
DepthLoss depth_loss(const DepthMap& rendered, const DepthMap& prior, const Mask& valid);

/// lambda_rgb * L_rgb + lambda_flow * L_flow.
double pose_objective(const LossWeights& w, double l_rgb, double l_flow);
/// lambda_rgb * L_rgb + lambda_flow * L_flow + lambda_depth * L_depth.
double scene_objective(const LossWeights& w, double l_rgb, double l_flow, double l_depth);

}  // namespace flowgs
