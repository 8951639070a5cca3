#include "flowgs/losses.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace flowgs {

void LossWeights::validate() const {
  if (!(lambda_dssim >= 0.0 && lambda_dssim <= 1.0)) {
    throw Error(ErrorCode::ConfigError, "lambda_dssim must lie in [0, 1]");
  }
  if (!(lambda_rgb >= 0.0) || !(lambda_flow >= 0.0) || !(lambda_depth >= 0.0)) {
    throw Error(ErrorCode::ConfigError, "loss weights must be non-negative");
  }
}

namespace {

std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

/// Separable "same" Gaussian filter with zero padding. Self-adjoint.
std::vector<double> blur(const std::vector<double>& in, int w, int h) {
  static const auto g = ssim_kernel();
  constexpr int r = kSsimWindow / 2;
  std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int j = -r; j <= r; ++j) {
        const int xx = x + j;
        if (xx >= 0 && xx < w) s += g[j + r] * in[static_cast<size_t>(y) * w + xx];
      }
      tmp[static_cast<size_t>(y) * w + x] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int j = -r; j <= r; ++j) {
        const int yy = y + j;
        if (yy >= 0 && yy < h) s += g[j + r] * tmp[static_cast<size_t>(yy) * w + x];
      }
      out[static_cast<size_t>(y) * w + x] = s;
    }
  }
  return out;
}

SsimResult ssim_impl(const RgbImage& a, const RgbImage& b, bool want_grad) {
  require_same_shape(a, b, "ssim");
  const int w = a.width(), h = a.height();
  const size_t n = a.size();
  const double inv_count = 1.0 / (3.0 * static_cast<double>(n));
  SsimResult res;
  if (want_grad) res.grad = RgbImage(w, h, Eigen::Vector3d::Zero());

  double ssim_sum = 0.0;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (int ch = 0; ch < 3; ++ch) {
    for (size_t i = 0; i < n; ++i) {
      x[i] = a[i][ch];
      y[i] = b[i][ch];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mu1 = blur(x, w, h), mu2 = blur(y, w, h);
    const auto e11 = blur(xx, w, h), e22 = blur(yy, w, h), e12 = blur(xy, w, h);
    std::vector<double> d_mu(n), d_e11(n), d_e12(n);
    for (size_t i = 0; i < n; ++i) {
      const double s1 = e11[i] - mu1[i] * mu1[i];
      const double s2 = e22[i] - mu2[i] * mu2[i];
      const double s12 = e12[i] - mu1[i] * mu2[i];
      const double n1 = 2.0 * mu1[i] * mu2[i] + kSsimC1;
      const double n2 = 2.0 * s12 + kSsimC2;
      const double d1 = mu1[i] * mu1[i] + mu2[i] * mu2[i] + kSsimC1;
      const double d2 = s1 + s2 + kSsimC2;
      const double den = d1 * d2;
      const double s = n1 * n2 / den;
      ssim_sum += s;
      if (!want_grad) continue;
      d_mu[i] = inv_count * (2.0 * mu2[i] * (n2 - n1) - 2.0 * mu1[i] * s * (d2 - d1)) / den;
      d_e11[i] = inv_count * (-s / d2);
      // s / n2 == n1 / den; this form cancels exactly against d_e11 when a == b.
      d_e12[i] = inv_count * 2.0 * (n2 != 0.0 ? s / n2 : n1 / den);
    }
    if (!want_grad) continue;
    const auto g_mu = blur(d_mu, w, h), g_e11 = blur(d_e11, w, h), g_e12 = blur(d_e12, w, h);
    for (size_t i = 0; i < n; ++i) {
      res.grad[i][ch] = g_mu[i] + 2.0 * x[i] * g_e11[i] + y[i] * g_e12[i];
    }
  }
  res.value = ssim_sum / (3.0 * static_cast<double>(n));
  return res;
}

}  // namespace

double ssim(const RgbImage& a, const RgbImage& b) { return ssim_impl(a, b, false).value; }

SsimResult ssim_with_grad(const RgbImage& a, const RgbImage& b) {
  return ssim_impl(a, b, true);
}

double psnr(const RgbImage& a, const RgbImage& b, double cap_db) {
  require_same_shape(a, b, "psnr");
  double sum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]).squaredNorm();
  const double mse = sum / (3.0 * static_cast<double>(a.size()));
  if (mse == 0.0) return cap_db;
  return std::min(cap_db, 10.0 * std::log10(1.0 / mse));
}

ImageLoss photometric_loss(const RgbImage& rendered, const RgbImage& target,
                           double lambda_dssim) {
  require_same_shape(rendered, target, "photometric_loss");
  const double inv_count = 1.0 / (3.0 * static_cast<double>(rendered.size()));
  ImageLoss out;
  out.grad = RgbImage(rendered.width(), rendered.height(), Eigen::Vector3d::Zero());
  double l1 = 0.0;
  for (size_t i = 0; i < rendered.size(); ++i) {
    for (int ch = 0; ch < 3; ++ch) {
      const double d = rendered[i][ch] - target[i][ch];
      l1 += std::abs(d);
      const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      out.grad[i][ch] = (1.0 - lambda_dssim) * sign * inv_count;
    }
  }
  out.value = (1.0 - lambda_dssim) * l1 * inv_count;
  if (lambda_dssim > 0.0) {
    const SsimResult s = ssim_with_grad(rendered, target);
    out.value += lambda_dssim * 0.5 * (1.0 - s.value);
    for (size_t i = 0; i < rendered.size(); ++i) out.grad[i] -= 0.5 * lambda_dssim * s.grad[i];
  }
  return out;
}

FlowLoss flow_loss(const FlowField& projection, const FlowField& prior, const Mask& mask) {
  require_same_shape(projection.u, prior.u, "flow_loss");
  require_same_shape(projection.u, mask, "flow_loss mask");
  FlowLoss out;
  out.grad_u = Grid<double>(projection.width(), projection.height(), 0.0);
  out.grad_v = out.grad_u;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] && projection.valid[i] && prior.valid[i]) ++out.count;
  }
  if (out.count == 0) return out;
  const double inv = 1.0 / static_cast<double>(out.count);
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!(mask[i] && projection.valid[i] && prior.valid[i])) continue;
    const double du = projection.u[i] - prior.u[i];
    const double dv = projection.v[i] - prior.v[i];
    out.value += (du * du + dv * dv) * inv;
    out.grad_u[i] = 2.0 * du * inv;
    out.grad_v[i] = 2.0 * dv * inv;
  }
  return out;
}

DepthLoss depth_loss(const DepthMap& rendered, const DepthMap& prior, const Mask& valid) {
  require_same_shape(rendered, prior, "depth_loss");
  require_same_shape(rendered, valid, "depth_loss mask");
  std::vector<size_t> idx;
  for (size_t i = 0; i < rendered.size(); ++i) {
    if (valid[i] && std::isfinite(rendered[i]) && std::isfinite(prior[i]) && prior[i] > 0.0) {
      idx.push_back(i);
    }
  }
  if (idx.size() < kMinDepthPixels) {
    throw Error(ErrorCode::InsufficientValidPixels,
                "depth_loss: " + std::to_string(idx.size()) + " valid pixels, need 10");
  }
  const double n = static_cast<double>(idx.size());
  double mean_p = 0.0, mean_r = 0.0;
  for (size_t i : idx) {
    mean_p += prior[i];
    mean_r += rendered[i];
  }
  mean_p /= n;
  mean_r /= n;
  double sxx = 0.0, sxy = 0.0;
  for (size_t i : idx) {
    const double dp = prior[i] - mean_p;
    sxx += dp * dp;
    sxy += dp * (rendered[i] - mean_r);
  }
  DepthLoss out;
  out.count = idx.size();
  out.grad = DepthMap(rendered.width(), rendered.height(), 0.0);
  const bool has_scale = sxx > 1e-300;
  out.scale = has_scale ? sxy / sxx : 0.0;
  out.shift = mean_r - out.scale * mean_p;

  double sum_sign = 0.0, sum_sign_p = 0.0;
  for (size_t i : idx) {
    const double r = rendered[i] - (out.scale * prior[i] + out.shift);
    out.value += std::abs(r) / n;
    const double sg = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
    out.grad[i] = sg / n;
    sum_sign += sg;
    sum_sign_p += sg * prior[i];
  }
  // d scale/d R_i = (P_i - mean_p) / sxx; d shift/d R_i = 1/n - mean_p * d scale/d R_i.
  for (size_t i : idx) {
    const double ds = has_scale ? (prior[i] - mean_p) / sxx : 0.0;
    const double db = 1.0 / n - mean_p * ds;
    out.grad[i] -= (sum_sign_p / n) * ds + (sum_sign / n) * db;
  }
  return out;
}

double pose_objective(const LossWeights& w, double l_rgb, double l_flow) {
  return w.lambda_rgb * l_rgb + w.lambda_flow * l_flow;
}

double scene_objective(const LossWeights& w, double l_rgb, double l_flow, double l_depth) {
  return w.lambda_rgb * l_rgb + w.lambda_flow * l_flow + w.lambda_depth * l_depth;
}

}  // namespace flowgs
