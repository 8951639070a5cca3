#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "../tools/cli.hpp"
#include "flowgs/image_io.hpp"
#include "flowgs/pipeline.hpp"
#include "flowgs/rasterizer.hpp"
#include "json.hpp"

namespace flowgs {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string> kSmallScene = {
    "--set", "synth.width=48",      "--set", "synth.height=40", "--set", "synth.focal=26",
    "--set", "synth.frames=9",      "--set", "synth.gaussians=600", "--set", "synth.seed=5"};
const std::vector<std::string> kQuickRun = {
    "--set", "iters.init=40",  "--set", "iters.scene=5", "--set", "iters.pose=8",
    "--set", "iters.test_pose=8", "--set", "densify.every=30", "--threads", "1"};

int flowgs(std::vector<std::string> args, const std::vector<std::string>& extra = {}) {
  args.insert(args.end(), extra.begin(), extra.end());
  std::vector<const char*> argv{"flowgs"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

/// Relative path -> file bytes, for whole-directory comparisons.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("flowgs_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    ASSERT_EQ(flowgs({"synth", (root_ / "data").string()}, kSmallScene), 0);
    ASSERT_EQ(flowgs({"reconstruct", (root_ / "data").string(), (root_ / "run").string()},
                     kQuickRun),
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path root_;
};
fs::path Cli::root_;

TEST_F(Cli, SynthIsBitwiseRepeatable) {
  ASSERT_EQ(flowgs({"synth", (root_ / "data_again").string()}, kSmallScene), 0);
  EXPECT_EQ(snapshot(root_ / "data"), snapshot(root_ / "data_again"));
  EXPECT_TRUE(fs::exists(root_ / "data" / "gt_scene.bin"));
  EXPECT_TRUE(fs::exists(root_ / "data" / "flow" / "000000_fwd.flo"));
}

TEST_F(Cli, ReconstructWritesEveryArtifact) {
  for (const char* name : {"scene.bin", "trajectory.txt", "metrics.json", "metadata.json"}) {
    EXPECT_TRUE(fs::exists(root_ / "run" / name)) << name;
  }
  EXPECT_FALSE(fs::exists(root_ / "run" / "error.json"));
  EXPECT_EQ(read_poses(root_ / "run" / "trajectory.txt").size(), 9u);
  const json m = read_json(root_ / "run" / "metrics.json");
  EXPECT_EQ(m["schema_version"], 1);
  EXPECT_TRUE(m.contains("trajectory"));
  EXPECT_EQ(m["trajectory"]["frames"], 8);
  EXPECT_EQ(m["nvs_test"]["frames"].size(), 1u);
  const json meta = read_json(root_ / "run" / "metadata.json");
  EXPECT_EQ(meta["config"]["iters"]["scene"], 5);
  EXPECT_EQ(meta["config"]["gamma"], 0.9);
  EXPECT_EQ(meta["frames"]["test"], json::array({7}));
}

TEST_F(Cli, ReconstructIsRepeatableAndLeavesInputUntouched) {
  const auto before = snapshot(root_ / "data");
  ASSERT_EQ(flowgs({"reconstruct", (root_ / "data").string(), (root_ / "run2").string()},
                   kQuickRun),
            0);
  EXPECT_EQ(snapshot(root_ / "data"), before);
  EXPECT_EQ(snapshot(root_ / "run"), snapshot(root_ / "run2"));
}

TEST_F(Cli, RefusesToWriteIntoItsInput) {
  const auto before = snapshot(root_ / "data");
  EXPECT_NE(flowgs({"reconstruct", (root_ / "data").string(), (root_ / "data").string()},
                   kQuickRun),
            0);
  auto after = snapshot(root_ / "data");
  after.erase("error.json");
  EXPECT_EQ(after, before);
  fs::remove(root_ / "data" / "error.json");
}

TEST_F(Cli, IterationFlagIsHonoredAndEchoed) {
  const fs::path out = root_ / "zero_pose";
  ASSERT_EQ(flowgs({"reconstruct", (root_ / "data").string(), out.string(), "--iters-pose", "0"},
                   kQuickRun),
            0);
  const json meta = read_json(out / "metadata.json");
  EXPECT_EQ(meta["config"]["iters"]["pose"], 0);
  for (const json& f : read_json(out / "metrics.json")["frames"]) {
    EXPECT_EQ(f["best_iteration"], 0);
  }
}

TEST_F(Cli, MissingIntrinsicsIsAnActionableError) {
  const fs::path broken = root_ / "no_intrinsics";
  fs::copy(root_ / "data", broken, fs::copy_options::recursive);
  fs::remove(broken / "intrinsics.txt");
  const fs::path out = root_ / "no_intrinsics_out";
  EXPECT_NE(flowgs({"reconstruct", broken.string(), out.string()}, kQuickRun), 0);
  const json err = read_json(out / "error.json");
  EXPECT_EQ(err["error"]["code"], "IoError");
  EXPECT_NE(err["error"]["message"].get<std::string>().find("intrinsics.txt"), std::string::npos);
}

TEST_F(Cli, UnknownConfigKeyIsRejected) {
  const fs::path out = root_ / "bad_key";
  EXPECT_NE(flowgs({"reconstruct", (root_ / "data").string(), out.string(), "--set", "gama=0.5"}),
            0);
  const json err = read_json(out / "error.json");
  EXPECT_EQ(err["error"]["code"], "ConfigError");
  EXPECT_NE(err["error"]["message"].get<std::string>().find("gama"), std::string::npos);
}

TEST_F(Cli, RenderReproducesTrainingRendersBitwise) {
  const fs::path out = root_ / "renders";
  ASSERT_EQ(flowgs({"render", (root_ / "run" / "scene.bin").string(),
                    (root_ / "run" / "trajectory.txt").string(), out.string(), "--intrinsics",
                    (root_ / "data" / "intrinsics.txt").string()}),
            0);
  const auto files = snapshot(out);
  EXPECT_EQ(files.size(), 18u);  // 9 poses -> 9 PNG + 9 PFM

  const GaussianCloud cloud = load_scene(root_ / "run" / "scene.bin");
  const std::vector<PoseSE3> poses = read_poses(root_ / "run" / "trajectory.txt");
  const CameraIntrinsics k = read_intrinsics(root_ / "data" / "intrinsics.txt");
  const RenderOutput r = render(cloud, poses[3], k);
  write_png(root_ / "expected.png", r.color);
  write_pfm(root_ / "expected.pfm", expected_depth(r));
  EXPECT_EQ(files.at("000003.png"), slurp(root_ / "expected.png"));
  EXPECT_EQ(files.at("000003.pfm"), slurp(root_ / "expected.pfm"));
}

TEST_F(Cli, RenderRejectsBadSceneMagic) {
  const fs::path bad = root_ / "bad_scene" / "scene.bin";
  fs::create_directories(bad.parent_path());
  std::string bytes = slurp(root_ / "run" / "scene.bin");
  bytes[0] ^= 0x5a;
  std::ofstream(bad, std::ios::binary) << bytes;
  const fs::path out = root_ / "bad_render";
  EXPECT_NE(flowgs({"render", bad.string(), (root_ / "run" / "trajectory.txt").string(),
                    out.string(), "--intrinsics", (root_ / "data" / "intrinsics.txt").string()}),
            0);
  EXPECT_EQ(read_json(out / "error.json")["error"]["code"], "FormatError");
}

TEST_F(Cli, EvaluateGroundTruthSceneHitsTheCap) {
  const fs::path out = root_ / "eval_gt.json";
  ASSERT_EQ(flowgs({"evaluate", (root_ / "data" / "gt_scene.bin").string(),
                    (root_ / "data").string(), "--all-frames", "--out", out.string()}),
            0);
  const json m = read_json(out);
  EXPECT_EQ(m["schema_version"], 1);
  EXPECT_FALSE(m.contains("trajectory"));
  EXPECT_EQ(m["nvs_all"]["frames"].size(), 9u);
  EXPECT_EQ(m["nvs_all"]["mean_psnr"], 100.0);
  EXPECT_EQ(m["nvs_all"]["mean_ssim"], 1.0);
}

TEST_F(Cli, EvaluateReportsTrajectoryWhenGroundTruthIsPresent) {
  const fs::path out = root_ / "eval_run.json";
  ASSERT_EQ(flowgs({"evaluate", (root_ / "run" / "scene.bin").string(), (root_ / "data").string(),
                    "--out", out.string()}),
            0);
  const json m = read_json(out);
  ASSERT_TRUE(m.contains("trajectory"));
  // trajectory.txt re-normalizes quaternions on load, so agreement is to rounding.
  const json at_reconstruct = read_json(root_ / "run" / "metrics.json")["trajectory"];
  for (const char* key : {"ate", "rpe_t", "rpe_r_deg", "scale"}) {
    EXPECT_NEAR(m["trajectory"][key].get<double>(), at_reconstruct[key].get<double>(), 1e-12)
        << key;
  }
  EXPECT_GE(m["trajectory"]["ate"].get<double>(), 0.0);
}

TEST_F(Cli, UsageErrorsExitNonzero) {
  EXPECT_NE(flowgs({}), 0);
  EXPECT_NE(flowgs({"render", "only_one_arg"}), 0);
  EXPECT_EQ(flowgs({"--help"}), 0);
}

}  // namespace
}  // namespace flowgs
