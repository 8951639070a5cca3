#include "flowgs/gaussian_scene.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <unordered_map>

#include "splat.hpp"

namespace flowgs {

static_assert(std::endian::native == std::endian::little,
              "scene and image formats assume a little-endian host");

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

double GaussianCloud::opacity(size_t i) const { return sigmoid(opacity_logits[i]); }

void GaussianCloud::resize(size_t n) {
  positions.resize(n, Eigen::Vector3d::Zero());
  rotations.resize(n, QuatVec(1.0, 0.0, 0.0, 0.0));
  log_scales.resize(n, Eigen::Vector3d::Zero());
  opacity_logits.resize(n, 0.0);
  sh.resize(n * sh_stride(), 0.0);
}

void GaussianCloud::push_back_from(const GaussianCloud& src, size_t i) {
  positions.push_back(src.positions[i]);
  rotations.push_back(src.rotations[i]);
  log_scales.push_back(src.log_scales[i]);
  opacity_logits.push_back(src.opacity_logits[i]);
  const auto s = src.sh_of(i);
  sh.insert(sh.end(), s.begin(), s.end());
}

void GaussianCloud::validate() const {
  const size_t n = size();
  if (sh_degree < 0 || sh_degree > kMaxShDegree) {
    throw Error(ErrorCode::InvalidArgument, "cloud: unsupported SH degree");
  }
  if (rotations.size() != n || log_scales.size() != n || opacity_logits.size() != n ||
      sh.size() != n * sh_stride()) {
    throw Error(ErrorCode::InvalidArgument, "cloud: parameter arrays disagree in length");
  }
  for (size_t i = 0; i < n; ++i) {
    if (!positions[i].allFinite() || !rotations[i].allFinite() || !log_scales[i].allFinite() ||
        !std::isfinite(opacity_logits[i])) {
      throw Error(ErrorCode::InvalidArgument,
                  "cloud: non-finite parameter at Gaussian " + std::to_string(i));
    }
    if (std::abs(rotations[i].norm() - 1.0) > 1e-9) {
      throw Error(ErrorCode::InvalidArgument,
                  "cloud: rotation not unit norm at Gaussian " + std::to_string(i));
    }
  }
  for (double v : sh) {
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "cloud: non-finite SH");
  }
}

Eigen::Matrix3d build_covariance(const QuatVec& rotation, const Eigen::Vector3d& log_scale) {
  const Eigen::Matrix3d rs =
      quat_to_matrix(rotation.normalized()) * log_scale.array().exp().matrix().asDiagonal();
  return rs * rs.transpose();
}

namespace {

constexpr double kShC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                            -1.0925484305920792, 0.5462742152960396};
constexpr double kShC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                            0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                            -0.5900435899266435};

}  // namespace

void sh_basis(int degree, const Eigen::Vector3d& dir, std::span<double> basis,
              std::span<Eigen::Vector3d> d_basis) {
  const double x = dir.x(), y = dir.y(), z = dir.z();
  const bool want_d = !d_basis.empty();
  basis[0] = kShC0;
  if (want_d) d_basis[0].setZero();
  if (degree < 1) return;
  basis[1] = -kShC1 * y;
  basis[2] = kShC1 * z;
  basis[3] = -kShC1 * x;
  if (want_d) {
    d_basis[1] = {0.0, -kShC1, 0.0};
    d_basis[2] = {0.0, 0.0, kShC1};
    d_basis[3] = {-kShC1, 0.0, 0.0};
  }
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  basis[4] = kShC2[0] * x * y;
  basis[5] = kShC2[1] * y * z;
  basis[6] = kShC2[2] * (2.0 * zz - xx - yy);
  basis[7] = kShC2[3] * x * z;
  basis[8] = kShC2[4] * (xx - yy);
  if (want_d) {
    d_basis[4] = kShC2[0] * Eigen::Vector3d(y, x, 0.0);
    d_basis[5] = kShC2[1] * Eigen::Vector3d(0.0, z, y);
    d_basis[6] = kShC2[2] * Eigen::Vector3d(-2.0 * x, -2.0 * y, 4.0 * z);
    d_basis[7] = kShC2[3] * Eigen::Vector3d(z, 0.0, x);
    d_basis[8] = kShC2[4] * Eigen::Vector3d(2.0 * x, -2.0 * y, 0.0);
  }
  if (degree < 3) return;
  basis[9] = kShC3[0] * y * (3.0 * xx - yy);
  basis[10] = kShC3[1] * x * y * z;
  basis[11] = kShC3[2] * y * (4.0 * zz - xx - yy);
  basis[12] = kShC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
  basis[13] = kShC3[4] * x * (4.0 * zz - xx - yy);
  basis[14] = kShC3[5] * z * (xx - yy);
  basis[15] = kShC3[6] * x * (xx - 3.0 * yy);
  if (want_d) {
    d_basis[9] = kShC3[0] * Eigen::Vector3d(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
    d_basis[10] = kShC3[1] * Eigen::Vector3d(y * z, x * z, x * y);
    d_basis[11] = kShC3[2] * Eigen::Vector3d(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
    d_basis[12] = kShC3[3] * Eigen::Vector3d(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
    d_basis[13] = kShC3[4] * Eigen::Vector3d(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
    d_basis[14] = kShC3[5] * Eigen::Vector3d(2.0 * x * z, -2.0 * y * z, xx - yy);
    d_basis[15] = kShC3[6] * Eigen::Vector3d(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
  }
}

Eigen::Vector3d eval_sh(int degree, std::span<const double> coeffs,
                        const Eigen::Vector3d& view_dir) {
  std::array<double, 16> basis{};
  sh_basis(degree, view_dir, basis);
  Eigen::Vector3d c(0.5, 0.5, 0.5);
  const int n = sh_coeff_count(degree);
  for (int k = 0; k < n; ++k) {
    for (int ch = 0; ch < 3; ++ch) c[ch] += basis[k] * coeffs[k * 3 + ch];
  }
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

namespace detail {

bool project_splat(const GaussianCloud& cloud, size_t i, const ViewFrame& view, Splat& out) {
  const Eigen::Vector3d& mu = cloud.positions[i];
  const Eigen::Vector3d p = view.rot * mu + view.t;
  if (!(p.z() > view.z_near)) return false;

  const CameraIntrinsics& k = view.k;
  const Eigen::Matrix<double, 2, 3> m = perspective_jacobian(p, k) * view.rot;
  const Eigen::Matrix3d sigma = build_covariance(cloud.rotations[i], cloud.log_scales[i]);
  Eigen::Matrix2d cov = m * sigma * m.transpose();
  cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
  cov(0, 0) += kCovDilation;
  cov(1, 1) += kCovDilation;

  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  if (!(det > 0.0)) return false;
  out.conic << cov(1, 1) / det, -cov(0, 1) / det, -cov(1, 0) / det, cov(0, 0) / det;

  const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
  const double half_diff = 0.5 * (cov(0, 0) - cov(1, 1));
  const double lambda_max = mid + std::sqrt(half_diff * half_diff + cov(0, 1) * cov(0, 1));

  out.index = static_cast<int>(i);
  out.p_cam = p;
  out.mean2d = {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
  out.cov2d = cov;
  out.radius_sq = 9.0 * lambda_max;
  out.depth = p.z();

  const Eigen::Vector3d dir = (mu - view.center).normalized();
  std::array<double, 16> basis{};
  sh_basis(cloud.sh_degree, dir, basis);
  const auto coeffs = cloud.sh_of(i);
  Eigen::Vector3d c(0.5, 0.5, 0.5);
  for (int kk = 0; kk < cloud.coeffs(); ++kk) {
    for (int ch = 0; ch < 3; ++ch) c[ch] += basis[kk] * coeffs[kk * 3 + ch];
  }
  for (int ch = 0; ch < 3; ++ch) {
    out.color_clamped[ch] = c[ch] < 0.0 || c[ch] > 1.0;
    out.color[ch] = std::clamp(c[ch], 0.0, 1.0);
  }
  out.opacity = cloud.opacity(i);
  return true;
}

}  // namespace detail

ProjectedGaussian project_gaussian(const GaussianCloud& cloud, size_t index,
                                   const PoseSE3& pose, const CameraIntrinsics& k,
                                   double z_near) {
  const detail::ViewFrame view(pose, k, z_near);
  detail::Splat s;
  if (!detail::project_splat(cloud, index, view, s)) {
    throw Error(ErrorCode::DepthBehindCamera,
                "project_gaussian: Gaussian " + std::to_string(index) + " is behind the camera");
  }
  ProjectedGaussian out;
  out.mean2d = s.mean2d;
  out.cov2d = s.cov2d;
  out.depth = s.depth;
  out.view_color = s.color;
  out.alpha = s.opacity;
  return out;
}

std::vector<double> mean_neighbor_distance(std::span<const Eigen::Vector3d> points,
                                           int neighbors) {
  const size_t n = points.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;

  Eigen::Vector3d lo = points[0], hi = points[0];
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double extent = std::max((hi - lo).maxCoeff(), 1e-12);
  // Sized for points spread over a surface: a handful per occupied cell.
  const double cell = std::max(extent * 2.0 / std::sqrt(static_cast<double>(n)), 1e-12);
  const Eigen::Vector3i dims =
      ((hi - lo) / cell).array().floor().cast<int>().matrix() + Eigen::Vector3i::Ones();

  auto key = [&](const Eigen::Vector3i& c) {
    return (static_cast<std::int64_t>(c.x()) * dims.y() + c.y()) * dims.z() + c.z();
  };
  auto cell_of = [&](const Eigen::Vector3d& p) {
    return ((p - lo) / cell).array().floor().cast<int>().matrix().cwiseMin(dims - Eigen::Vector3i::Ones()).eval();
  };

  std::unordered_map<std::int64_t, std::vector<int>> grid;
  for (size_t i = 0; i < n; ++i) grid[key(cell_of(points[i]))].push_back(static_cast<int>(i));

  const int want = static_cast<int>(std::min<size_t>(neighbors, n - 1));
  const int max_ring = dims.maxCoeff();
  std::vector<double> best;
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3i c = cell_of(points[i]);
    best.clear();
    for (int r = 0; r <= max_ring; ++r) {
      for (int dx = -r; dx <= r; ++dx) {
        for (int dy = -r; dy <= r; ++dy) {
          for (int dz = -r; dz <= r; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            const Eigen::Vector3i q = c + Eigen::Vector3i(dx, dy, dz);
            if ((q.array() < 0).any() || (q.array() >= dims.array()).any()) continue;
            const auto it = grid.find(key(q));
            if (it == grid.end()) continue;
            for (int j : it->second) {
              if (static_cast<size_t>(j) == i) continue;
              best.push_back((points[j] - points[i]).squaredNorm());
            }
          }
        }
      }
      if (static_cast<int>(best.size()) >= want) {
        std::nth_element(best.begin(), best.begin() + (want - 1), best.end());
        // Anything outside ring r is at least r * cell away.
        if (best[want - 1] <= (r * cell) * (r * cell)) break;
      }
    }
    std::partial_sort(best.begin(), best.begin() + want, best.end());
    double sum = 0.0;
    for (int k = 0; k < want; ++k) sum += std::sqrt(best[k]);
    out[i] = sum / want;
  }
  return out;
}

GaussianCloud init_from_depth(const RgbImage& image, const DepthMap& depth,
                              const PoseSE3& pose, const CameraIntrinsics& k,
                              const InitOptions& options) {
  require_same_shape(image, depth, "init_from_depth");
  if (options.stride < 1) throw Error(ErrorCode::InvalidArgument, "init_from_depth: stride < 1");

  GaussianCloud cloud;
  cloud.sh_degree = options.sh_degree;
  std::vector<double> pixel_footprint;
  for (int y = 0; y < depth.height(); y += options.stride) {
    for (int x = 0; x < depth.width(); x += options.stride) {
      const double d = depth(x, y);
      if (!std::isfinite(d) || !(d > 0.0)) continue;
      const size_t i = cloud.size();
      cloud.resize(i + 1);
      cloud.positions[i] = unproject({x, y}, d, pose, k);
      cloud.opacity_logits[i] = logit(options.opacity);
      auto sh = cloud.sh_of(i);
      for (int ch = 0; ch < 3; ++ch) sh[ch] = (image(x, y)[ch] - 0.5) / kShC0;
      pixel_footprint.push_back(d * options.stride / std::min(k.fx, k.fy));
    }
  }
  if (cloud.empty()) throw Error(ErrorCode::EmptyInit, "init_from_depth: no valid depth pixels");

  const auto dist = mean_neighbor_distance(cloud.positions);
  for (size_t i = 0; i < cloud.size(); ++i) {
    const double s = cloud.size() > 1 ? std::max(dist[i], 1e-7) : pixel_footprint[i];
    cloud.log_scales[i].setConstant(std::log(s));
  }
  return cloud;
}

DensifyResult densify_and_prune(const GaussianCloud& cloud, std::span<const double> grad_accum,
                                const DensifyOptions& options, std::mt19937_64& rng) {
  if (grad_accum.size() != cloud.size()) {
    throw Error(ErrorCode::DimensionMismatch, "densify_and_prune: gradient length != N");
  }
  const size_t n = cloud.size();
  const double split_limit = options.percent_dense * options.scene_extent;
  const double log_divisor = std::log(options.split_scale_divisor);

  std::vector<char> clone(n, 0), split(n, 0), prune(n, 0);
  for (size_t i = 0; i < n; ++i) {
    if (grad_accum[i] > options.grad_threshold) {
      const double max_scale = std::exp(cloud.log_scales[i].maxCoeff());
      (max_scale > split_limit ? split : clone)[i] = 1;
    }
  }

  DensifyResult result;
  GaussianCloud& out = result.cloud;
  out.sh_degree = cloud.sh_degree;
  auto emit = [&](size_t src, bool carried) {
    out.push_back_from(cloud, src);
    result.origin.push_back(static_cast<int>(src));
    result.carried.push_back(carried);
  };

  for (size_t i = 0; i < n; ++i) {
    if (split[i]) continue;
    if (cloud.opacity(i) < options.opacity_floor) {
      prune[i] = 1;
      continue;
    }
    emit(i, true);
  }
  for (size_t i = 0; i < n; ++i) {
    if (!clone[i] || prune[i]) continue;
    emit(i, false);
    ++result.cloned;
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  for (size_t i = 0; i < n; ++i) {
    if (!split[i]) continue;
    if (cloud.opacity(i) < options.opacity_floor) {
      prune[i] = 1;
      continue;
    }
    const Eigen::Matrix3d rot = quat_to_matrix(cloud.rotations[i]);
    const Eigen::Vector3d scale = cloud.log_scales[i].array().exp();
    for (int c = 0; c < 2; ++c) {
      Eigen::Vector3d offset(normal(rng), normal(rng), normal(rng));
      emit(i, false);
      out.positions.back() = cloud.positions[i] + rot * scale.cwiseProduct(offset);
      out.log_scales.back() = cloud.log_scales[i].array() - log_divisor;
    }
    ++result.split;
  }
  for (size_t i = 0; i < n; ++i) result.pruned += prune[i];

  if (out.empty()) {
    // Keep the most opaque Gaussian so the cloud never becomes empty.
    size_t keep = 0;
    for (size_t i = 1; i < n; ++i) {
      if (cloud.opacity_logits[i] > cloud.opacity_logits[keep]) keep = i;
    }
    emit(keep, true);
    --result.pruned;
  }
  return result;
}

GaussianCloud quantize_to_float(const GaussianCloud& cloud) {
  auto q = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  GaussianCloud out = cloud;
  for (size_t i = 0; i < out.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      out.positions[i][c] = q(out.positions[i][c]);
      out.log_scales[i][c] = q(out.log_scales[i][c]);
    }
    for (int c = 0; c < 4; ++c) out.rotations[i][c] = q(out.rotations[i][c]);
    out.opacity_logits[i] = q(out.opacity_logits[i]);
  }
  for (double& v : out.sh) v = q(v);
  // Rotations are renormalized at load time; mirror that here.
  for (auto& r : out.rotations) r.normalize();
  return out;
}

namespace {

template <class T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& is, const std::filesystem::path& path) {
  T v{};
  const auto offset = static_cast<long long>(is.tellg());
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw Error(ErrorCode::FormatError, path.string() + ": truncated at byte offset " +
                                            std::to_string(offset));
  }
  return v;
}

}  // namespace

void save_scene(const std::filesystem::path& path, const GaussianCloud& cloud) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  os.write("FSGS", 4);
  write_raw<std::uint32_t>(os, kSceneFormatVersion);
  write_raw<std::uint64_t>(os, cloud.size());
  write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(cloud.sh_degree));
  const size_t n = cloud.size();
  auto column = [&](auto&& get) {
    for (size_t i = 0; i < n; ++i) write_raw<float>(os, static_cast<float>(get(i)));
  };
  for (int c = 0; c < 3; ++c) column([&](size_t i) { return cloud.positions[i][c]; });
  for (int c = 0; c < 4; ++c) column([&](size_t i) { return cloud.rotations[i][c]; });
  for (int c = 0; c < 3; ++c) column([&](size_t i) { return cloud.log_scales[i][c]; });
  column([&](size_t i) { return cloud.opacity_logits[i]; });
  for (size_t c = 0; c < cloud.sh_stride(); ++c) {
    column([&](size_t i) { return cloud.sh[i * cloud.sh_stride() + c]; });
  }
  if (!os) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

GaussianCloud load_scene(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FSGS", 4) != 0) {
    throw Error(ErrorCode::FormatError, path.string() + ": bad magic at byte offset 0");
  }
  const auto version = read_raw<std::uint32_t>(is, path);
  if (version != kSceneFormatVersion) {
    throw Error(ErrorCode::FormatError, path.string() + ": unsupported version " +
                                            std::to_string(version) + " at byte offset 4");
  }
  const auto n64 = read_raw<std::uint64_t>(is, path);
  const auto degree = read_raw<std::uint32_t>(is, path);
  if (degree > static_cast<std::uint32_t>(kMaxShDegree)) {
    throw Error(ErrorCode::FormatError, path.string() + ": bad SH degree at byte offset 16");
  }
  if (n64 > (1ull << 32)) {
    throw Error(ErrorCode::FormatError, path.string() + ": implausible count at byte offset 8");
  }
  GaussianCloud cloud;
  cloud.sh_degree = static_cast<int>(degree);
  const size_t n = static_cast<size_t>(n64);
  cloud.resize(n);
  auto column = [&](auto&& set) {
    for (size_t i = 0; i < n; ++i) set(i, static_cast<double>(read_raw<float>(is, path)));
  };
  for (int c = 0; c < 3; ++c) column([&](size_t i, double v) { cloud.positions[i][c] = v; });
  for (int c = 0; c < 4; ++c) column([&](size_t i, double v) { cloud.rotations[i][c] = v; });
  for (int c = 0; c < 3; ++c) column([&](size_t i, double v) { cloud.log_scales[i][c] = v; });
  column([&](size_t i, double v) { cloud.opacity_logits[i] = v; });
  for (size_t c = 0; c < cloud.sh_stride(); ++c) {
    column([&](size_t i, double v) { cloud.sh[i * cloud.sh_stride() + c] = v; });
  }
  for (auto& r : cloud.rotations) {
    if (!(r.norm() > 0.0)) throw Error(ErrorCode::FormatError, path.string() + ": zero rotation");
    r.normalize();
  }
  return cloud;
}

void export_ply(const std::filesystem::path& path, const GaussianCloud& cloud) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
     << "\nproperty float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (size_t i = 0; i < cloud.size(); ++i) {
    const auto sh = cloud.sh_of(i);
    os << static_cast<float>(cloud.positions[i].x()) << ' '
       << static_cast<float>(cloud.positions[i].y()) << ' '
       << static_cast<float>(cloud.positions[i].z());
    for (int ch = 0; ch < 3; ++ch) {
      const double c = std::clamp(kShC0 * sh[ch] + 0.5, 0.0, 1.0);
      os << ' ' << static_cast<int>(std::lround(c * 255.0));
    }
    os << '\n';
  }
}

}  // namespace flowgs
