#include "flowgs/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace flowgs {

namespace {

using nlohmann::json;

template <class Config, class F>
void visit(Config& c, F&& f) {
  auto& p = c.pipeline;
  f("threads", c.threads);
  f("seed", p.seed);
  f("gamma", p.gamma);
  f("beta", p.beta);
  f("loss.lambda_dssim", p.weights.lambda_dssim);
  f("loss.lambda_rgb", p.weights.lambda_rgb);
  f("loss.lambda_flow", p.weights.lambda_flow);
  f("loss.lambda_depth", p.weights.lambda_depth);
  f("iters.pose", p.pose_iters);
  f("iters.scene", p.scene_iters);
  f("iters.init", p.init_iters);
  f("iters.test_pose", p.test_pose_iters);
  f("test_every", p.test_every);
  f("masks.rigid", p.use_rigid_mask);
  f("masks.visibility", p.use_visibility_mask);
  f("init.stride", p.init.stride);
  f("init.sh_degree", p.init.sh_degree);
  f("init.opacity", p.init.opacity);
  f("densify.every", p.densify_every);
  f("densify.opacity_floor", p.densify.opacity_floor);
  f("densify.grad_threshold", p.densify.grad_threshold);
  f("densify.percent_dense", p.densify.percent_dense);
  f("densify.split_scale_divisor", p.densify.split_scale_divisor);
  f("lr.pose", p.pose_lr);
  f("lr.position", p.learning_rates.position);
  f("lr.sh_dc", p.learning_rates.sh_dc);
  f("lr.sh_rest", p.learning_rates.sh_rest);
  f("lr.opacity", p.learning_rates.opacity);
  f("lr.scale", p.learning_rates.scale);
  f("lr.rotation", p.learning_rates.rotation);
  auto& s = c.synth;
  f("synth.width", s.width);
  f("synth.height", s.height);
  f("synth.focal", s.focal);
  f("synth.frames", s.frames);
  f("synth.gaussians", s.gaussians);
  f("synth.seed", s.seed);
  f("synth.low_texture", s.low_texture);
  f("synth.distance", s.distance);
  f("synth.relief", s.relief);
  f("synth.advance", s.advance);
  f("synth.lateral", s.lateral);
  f("synth.vertical_wobble", s.vertical_wobble);
  f("synth.yaw_degrees", s.yaw_degrees);
  f("synth.perturb_depth", s.perturb_depth);
  f("synth.depth_scale_lo", s.depth_scale_lo);
  f("synth.depth_scale_hi", s.depth_scale_hi);
  f("synth.depth_shift", s.depth_shift);
  f("synth.outlier_fraction", s.outlier_fraction);
  f("synth.outlier_min_px", s.outlier_min_px);
  f("synth.outlier_max_px", s.outlier_max_px);
  f("synth.test_every", s.test_every);
  f("synth.scale", s.scale);
}

json::json_pointer pointer_of(const std::string& dotted) {
  std::string p = "/" + dotted;
  for (char& ch : p) {
    if (ch == '.') ch = '/';
  }
  return json::json_pointer(p);
}

[[noreturn]] void bad_value(const std::string& key, const char* expected) {
  throw Error(ErrorCode::ConfigError, "config key '" + key + "' expects " + expected);
}

void assign(const std::string& key, const json& v, double& out) {
  if (!v.is_number()) bad_value(key, "a number");
  out = v.get<double>();
}
void assign(const std::string& key, const json& v, int& out) {
  if (!v.is_number_integer()) bad_value(key, "an integer");
  out = v.get<int>();
}
void assign(const std::string& key, const json& v, std::uint64_t& out) {
  if (!v.is_number_unsigned()) bad_value(key, "a non-negative integer");
  out = v.get<std::uint64_t>();
}
void assign(const std::string& key, const json& v, bool& out) {
  if (!v.is_boolean()) bad_value(key, "true or false");
  out = v.get<bool>();
}

void set_key(RunConfig& c, const std::string& key, const json& value) {
  bool found = false;
  visit(c, [&](const char* name, auto& field) {
    if (key == name) {
      assign(key, value, field);
      found = true;
    }
  });
  if (!found) throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "'");
}

void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else {
      out[key] = *it;
    }
  }
}

void validate(const RunConfig& c) {
  c.pipeline.validate();
  c.synth.validate();
  if (c.threads < 0) throw Error(ErrorCode::ConfigError, "threads must be non-negative");
}

}  // namespace

std::string to_json(const RunConfig& config, int indent) {
  json j = json::object();
  visit(config, [&](const char* name, const auto& field) { j[pointer_of(name)] = field; });
  return j.dump(indent);
}

RunConfig parse_run_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  std::map<std::string, json> leaves;
  flatten(j, "", leaves);
  RunConfig c;
  for (const auto& [key, value] : leaves) set_key(c, key, value);
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoError, "missing file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw Error(ErrorCode::ConfigError,
                "override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  set_key(config, key, value);
  validate(config);
}

}  // namespace flowgs
