#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "flowgs/image_io.hpp"
#include "flowgs/pipeline.hpp"

namespace flowgs {

namespace fs = std::filesystem;

namespace {

std::string frame_name(int index, const char* suffix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d%s", index, suffix);
  return buf;
}

std::ifstream open_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "missing file " + path.string());
  return is;
}

}  // namespace

CameraIntrinsics read_intrinsics(const fs::path& path) {
  std::ifstream is = open_text(path);
  CameraIntrinsics k;
  if (!(is >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) {
    throw Error(ErrorCode::FormatError,
                path.string() + ": expected 'fx fy cx cy width height'");
  }
  try {
    k.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  return k;
}

void write_intrinsics(const fs::path& path, const CameraIntrinsics& k) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %d %d\n", k.fx, k.fy, k.cx, k.cy,
                k.width, k.height);
  os << buf;
}

std::vector<PoseSE3> read_poses(const fs::path& path) {
  std::ifstream is = open_text(path);
  std::vector<PoseSE3> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream ls(line);
    QuatVec q;
    Eigen::Vector3d t;
    if (!(ls >> q[0] >> q[1] >> q[2] >> q[3] >> t[0] >> t[1] >> t[2]) || !q.allFinite() ||
        !t.allFinite() || q.norm() < 1e-12) {
      throw Error(ErrorCode::FormatError, path.string() + ":" + std::to_string(line_no) +
                                              ": expected 'qw qx qy qz tx ty tz'");
    }
    poses.emplace_back(QuatVec(q.normalized()), t);
  }
  return poses;
}

void write_poses(const fs::path& path, const std::vector<PoseSE3>& poses) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  char buf[512];
  for (const PoseSE3& p : poses) {
    const QuatVec q = p.quat_wxyz();
    const Eigen::Vector3d& t = p.translation();
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", q[0], q[1],
                  q[2], q[3], t[0], t[1], t[2]);
    os << buf;
  }
}

Dataset load_dataset(const fs::path& dir, int test_every) {
  if (!fs::is_directory(dir)) {
    throw Error(ErrorCode::IoError, "dataset directory not found: " + dir.string());
  }
  Dataset ds;
  ds.k = read_intrinsics(dir / "intrinsics.txt");
  const fs::path images = dir / "images";
  if (!fs::is_directory(images)) throw Error(ErrorCode::IoError, "missing directory " + images.string());

  std::vector<int> indices;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.path().extension() != ".png") continue;
    const std::string stem = entry.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), ::isdigit)) {
      throw Error(ErrorCode::FormatError, entry.path().string() + ": image names must be numeric");
    }
    indices.push_back(std::stoi(stem));
  }
  std::sort(indices.begin(), indices.end());
  if (indices.empty()) throw Error(ErrorCode::IoError, "no images in " + images.string());

  for (int index : indices) {
    FrameRecord rec;
    rec.index = index;
    rec.role = split_role(index, test_every);
    const fs::path img = images / frame_name(index, ".png");
    rec.image = read_png(img);
    if (!rec.image.same_shape(ds.k.width, ds.k.height)) {
      throw Error(ErrorCode::DimensionMismatch, img.string() + ": size differs from intrinsics");
    }
    const fs::path depth = dir / "depth" / frame_name(index, ".pfm");
    if (fs::exists(depth)) {
      rec.prior_depth = read_pfm(depth);
      if (!rec.prior_depth.same_shape(ds.k.width, ds.k.height)) {
        throw Error(ErrorCode::DimensionMismatch, depth.string() + ": size differs from intrinsics");
      }
    }
    const fs::path flow = dir / "flow" / frame_name(index, "_fwd.flo");
    if (rec.role == FrameRole::Train && fs::exists(flow)) {
      rec.prior_flow_forward = read_flo(flow);
      if (!rec.prior_flow_forward.u.same_shape(ds.k.width, ds.k.height)) {
        throw Error(ErrorCode::DimensionMismatch, flow.string() + ": size differs from intrinsics");
      }
    }
    ds.frames.push_back(std::move(rec));
  }

  const fs::path gt = dir / "gt_poses.txt";
  if (fs::exists(gt)) {
    ds.gt_poses = read_poses(gt);
    if (ds.gt_poses.size() != ds.frames.size()) {
      throw Error(ErrorCode::LengthMismatch,
                  gt.string() + ": " + std::to_string(ds.gt_poses.size()) + " poses for " +
                      std::to_string(ds.frames.size()) + " images");
    }
  }
  return ds;
}

void write_dataset(const fs::path& dir, const SyntheticDataset& data) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "flow");
  write_intrinsics(dir / "intrinsics.txt", data.k);
  for (const FrameRecord& f : data.frames) {
    write_png(dir / "images" / frame_name(f.index, ".png"), f.image);
    if (!f.prior_depth.empty()) write_pfm(dir / "depth" / frame_name(f.index, ".pfm"), f.prior_depth);
    if (!f.prior_flow_forward.empty()) {
      write_flo(dir / "flow" / frame_name(f.index, "_fwd.flo"), f.prior_flow_forward);
    }
  }
  write_poses(dir / "gt_poses.txt", data.gt_poses);
}

}  // namespace flowgs
