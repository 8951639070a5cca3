#include "flowgs/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace flowgs {

namespace {

constexpr float kFloMagic = 202021.25f;
constexpr float kFloUnknown = 1e10f;
constexpr double kFloInvalidThreshold = 1e9;

[[noreturn]] void format_error(const std::filesystem::path& path, long long offset,
                               const std::string& what) {
  throw Error(ErrorCode::FormatError,
              path.string() + ": " + what + " at byte offset " + std::to_string(offset));
}

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  return os;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

RgbImage quantize_8bit(const RgbImage& image) {
  RgbImage out = image;
  for (auto& px : out.data()) {
    for (int c = 0; c < 3; ++c) px[c] = to_byte(px[c]) / 255.0;
  }
  return out;
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorCode::IoError, "missing file " + path.string());
    }
    throw Error(ErrorCode::FormatError, path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw Error(ErrorCode::FormatError, path.string() + ": " + msg);
  }
  RgbImage out(static_cast<int>(img.width), static_cast<int>(img.height));
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = Eigen::Vector3d(buffer[3 * i], buffer[3 * i + 1], buffer[3 * i + 2]) / 255.0;
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  std::vector<std::uint8_t> buffer(image.size() * 3);
  for (size_t i = 0; i < image.size(); ++i) {
    for (int c = 0; c < 3; ++c) buffer[3 * i + c] = to_byte(image[i][c]);
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw Error(ErrorCode::IoError, path.string() + ": " + img.message);
  }
}

DepthMap read_pfm(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_all(path);
  size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) format_error(path, static_cast<long long>(start), "truncated header");
    return std::string(bytes.data() + start, pos - start);
  };
  const size_t magic_at = pos;
  const std::string magic = token();
  if (magic != "Pf") format_error(path, static_cast<long long>(magic_at), "expected 'Pf' magic");
  int width = 0, height = 0;
  double scale = 0.0;
  const size_t dims_at = pos;
  try {
    width = std::stoi(token());
    height = std::stoi(token());
    scale = std::stod(token());
  } catch (const std::logic_error&) {
    format_error(path, static_cast<long long>(dims_at), "malformed header");
  }
  if (width <= 0 || height <= 0) format_error(path, static_cast<long long>(dims_at), "bad size");
  if (scale >= 0.0) {
    format_error(path, static_cast<long long>(dims_at), "big-endian PFM is not supported");
  }
  ++pos;  // single whitespace byte after the scale
  const size_t need = static_cast<size_t>(width) * height * sizeof(float);
  if (bytes.size() < pos + need) {
    format_error(path, static_cast<long long>(bytes.size()), "truncated pixel data");
  }
  DepthMap out(width, height);
  const char* data = bytes.data() + pos;
  for (int row = 0; row < height; ++row) {
    for (int x = 0; x < width; ++x) {
      float f;
      std::memcpy(&f, data + (static_cast<size_t>(row) * width + x) * sizeof(float), sizeof f);
      out(x, height - 1 - row) = f;
    }
  }
  return out;
}

void write_pfm(const std::filesystem::path& path, const DepthMap& map) {
  auto os = open_out(path);
  os << "Pf\n" << map.width() << ' ' << map.height() << "\n-1.0\n";
  for (int row = map.height() - 1; row >= 0; --row) {
    for (int x = 0; x < map.width(); ++x) {
      const float f = static_cast<float>(map(x, row));
      os.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
  }
  if (!os) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

FlowField read_flo(const std::filesystem::path& path) {
  const std::vector<char> bytes = read_all(path);
  if (bytes.size() < 12) format_error(path, static_cast<long long>(bytes.size()), "truncated header");
  float magic;
  std::int32_t width, height;
  std::memcpy(&magic, bytes.data(), 4);
  std::memcpy(&width, bytes.data() + 4, 4);
  std::memcpy(&height, bytes.data() + 8, 4);
  if (magic != kFloMagic) format_error(path, 0, "bad .flo magic");
  if (width <= 0 || height <= 0) format_error(path, 4, "bad size");
  const size_t need = 12 + static_cast<size_t>(width) * height * 2 * sizeof(float);
  if (bytes.size() < need) {
    format_error(path, static_cast<long long>(bytes.size()), "truncated flow data");
  }
  FlowField flow(width, height);
  const char* data = bytes.data() + 12;
  for (size_t i = 0; i < flow.u.size(); ++i) {
    float uv[2];
    std::memcpy(uv, data + i * 2 * sizeof(float), sizeof uv);
    const bool ok = std::isfinite(uv[0]) && std::isfinite(uv[1]) &&
                    std::abs(uv[0]) <= kFloInvalidThreshold &&
                    std::abs(uv[1]) <= kFloInvalidThreshold;
    flow.valid[i] = ok ? 1 : 0;
    flow.u[i] = ok ? uv[0] : 0.0;
    flow.v[i] = ok ? uv[1] : 0.0;
  }
  return flow;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  auto os = open_out(path);
  const std::int32_t width = flow.width(), height = flow.height();
  os.write(reinterpret_cast<const char*>(&kFloMagic), 4);
  os.write(reinterpret_cast<const char*>(&width), 4);
  os.write(reinterpret_cast<const char*>(&height), 4);
  for (size_t i = 0; i < flow.u.size(); ++i) {
    float uv[2] = {kFloUnknown, kFloUnknown};
    if (flow.valid[i]) {
      uv[0] = static_cast<float>(flow.u[i]);
      uv[1] = static_cast<float>(flow.v[i]);
    }
    os.write(reinterpret_cast<const char*>(uv), sizeof uv);
  }
  if (!os) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace flowgs
