#include <gtest/gtest.h>

#include "flowgs/config.hpp"

namespace flowgs {
namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::IoError;
}

TEST(RunConfig, DefaultsRoundTripThroughJson) {
  const RunConfig d;
  const RunConfig back = parse_run_config(to_json(d));
  EXPECT_EQ(to_json(back), to_json(d));
  EXPECT_EQ(back.pipeline.pose_iters, 30);
  EXPECT_EQ(back.pipeline.gamma, 0.9);
  EXPECT_EQ(back.pipeline.beta, 0.5);
  EXPECT_EQ(back.pipeline.pose_lr, 4e-3);
}

TEST(RunConfig, PartialFileOverridesOnlyItsKeys) {
  const RunConfig c = parse_run_config(R"({"iters": {"pose": 12}, "beta": 0.25})");
  EXPECT_EQ(c.pipeline.pose_iters, 12);
  EXPECT_EQ(c.pipeline.beta, 0.25);
  EXPECT_EQ(c.pipeline.scene_iters, 30);
}

TEST(RunConfig, RejectsUnknownKeys) {
  EXPECT_EQ(code_of([] { parse_run_config(R"({"iters": {"poze": 3}})"); }),
            ErrorCode::ConfigError);
  try {
    parse_run_config(R"({"gama": 0.5})");
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("gama"), std::string::npos);
  }
}

TEST(RunConfig, RejectsMistypedAndInvalidValues) {
  EXPECT_EQ(code_of([] { parse_run_config(R"({"iters": {"pose": 1.5}})"); }),
            ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { parse_run_config(R"({"masks": {"rigid": 1}})"); }),
            ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { parse_run_config(R"({"gamma": 1.5})"); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { parse_run_config("{not json"); }), ErrorCode::ConfigError);
}

TEST(RunConfig, OverridesUseDottedKeys) {
  RunConfig c;
  apply_override(c, "iters.pose=0");
  apply_override(c, "masks.rigid=false");
  apply_override(c, "loss.lambda_flow=0");
  EXPECT_EQ(c.pipeline.pose_iters, 0);
  EXPECT_FALSE(c.pipeline.use_rigid_mask);
  EXPECT_EQ(c.pipeline.weights.lambda_flow, 0.0);
  EXPECT_NE(to_json(c).find("\"pose\": 0"), std::string::npos);
  EXPECT_EQ(code_of([&] { apply_override(c, "nope=1"); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { apply_override(c, "iters.pose"); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { apply_override(c, "iters.pose=abc"); }), ErrorCode::ConfigError);
}

TEST(RunConfig, MissingFileIsAnIoError) {
  EXPECT_EQ(code_of([] { load_run_config("/nonexistent/run.json"); }), ErrorCode::IoError);
}

}  // namespace
}  // namespace flowgs
