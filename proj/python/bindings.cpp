#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "../tools/cli.hpp"
#include "flowgs/config.hpp"
#include "flowgs/losses.hpp"
#include "flowgs/pipeline.hpp"
#include "flowgs/rasterizer.hpp"

namespace py = pybind11;

namespace flowgs {
namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

PoseSE3 pose_from(const Array& a, py::ssize_t row = 0) {
  auto r = a.unchecked<2>();
  return PoseSE3(QuatVec(r(row, 0), r(row, 1), r(row, 2), r(row, 3)),
                 Eigen::Vector3d(r(row, 4), r(row, 5), r(row, 6)));
}

std::vector<PoseSE3> poses_from(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != 7) {
    throw Error(ErrorCode::DimensionMismatch,
                "poses must be an (N, 7) array of qw qx qy qz tx ty tz");
  }
  std::vector<PoseSE3> out;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out.push_back(pose_from(a, i));
  return out;
}

RgbImage image_from(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) {
    throw Error(ErrorCode::DimensionMismatch, "images must be (H, W, 3) arrays");
  }
  auto r = a.unchecked<3>();
  RgbImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) img(x, y) = {r(y, x, 0), r(y, x, 1), r(y, x, 2)};
  }
  return img;
}

Array to_array(const RgbImage& img) {
  Array out({img.height(), img.width(), 3});
  auto w = out.mutable_unchecked<3>();
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) w(y, x, c) = img(x, y)[c];
    }
  }
  return out;
}

Array to_array(const DepthMap& map) {
  Array out({map.height(), map.width()});
  auto w = out.mutable_unchecked<2>();
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) w(y, x) = map(x, y);
  }
  return out;
}

CameraIntrinsics intrinsics_from(const std::vector<double>& v) {
  if (v.size() != 6) {
    throw Error(ErrorCode::DimensionMismatch, "intrinsics are fx fy cx cy width height");
  }
  return {v[0], v[1], v[2], v[3], static_cast<int>(v[4]), static_cast<int>(v[5])};
}

}  // namespace
}  // namespace flowgs

PYBIND11_MODULE(_core, m) {
  using namespace flowgs;
  m.doc() = "Bindings for the flowgs reconstruction library";

  static py::exception<Error> error(m, "FlowgsError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(to_string(e.code())) + ": " + e.what()).c_str());
    }
  });

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<const char*> argv{"flowgs"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    py::gil_scoped_release release;
    return cli::run(static_cast<int>(argv.size()), argv.data());
  }, py::arg("args"), "Runs the command-line tool in-process; returns its exit code.");

  m.def("default_config", [] { return to_json(RunConfig{}); },
        "Every tunable with its default, as JSON.");

  m.def("render", [](const std::string& scene, const Array& pose, const std::vector<double>& k) {
    if (pose.size() != 7) throw Error(ErrorCode::DimensionMismatch, "pose is qw qx qy qz tx ty tz");
    const double* p = pose.data();
    const GaussianCloud cloud = load_scene(scene);
    const PoseSE3 at(QuatVec(p[0], p[1], p[2], p[3]), Eigen::Vector3d(p[4], p[5], p[6]));
    const RenderOutput r = render(cloud, at, intrinsics_from(k));
    py::dict out;
    out["color"] = to_array(r.color);
    out["depth"] = to_array(expected_depth(r));
    out["alpha"] = to_array(r.alpha);
    return out;
  }, py::arg("scene_path"), py::arg("pose"), py::arg("intrinsics"),
     "Renders a scene file at one pose (qw qx qy qz tx ty tz).");

  m.def("scene_size", [](const std::string& scene) { return load_scene(scene).size(); },
        py::arg("scene_path"));

  m.def("evaluate_trajectory", [](const Array& est, const Array& gt) {
    const TrajectoryMetrics t = evaluate_trajectory(poses_from(est), poses_from(gt));
    py::dict out;
    out["ate"] = t.ate;
    out["rpe_t"] = t.rpe_t;
    out["rpe_r_deg"] = t.rpe_r;
    out["scale"] = t.scale;
    return out;
  }, py::arg("estimated"), py::arg("ground_truth"));

  m.def("psnr", [](const Array& a, const Array& b) { return psnr(image_from(a), image_from(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(image_from(a), image_from(b)); });
}
