#include "dualuv/camera.hpp"
#include "dualuv/gaussians.hpp"
#include "dualuv/image.hpp"
#include "dualuv/skinning.hpp"
#include "dualuv/tensor_io.hpp"
#include "dualuv/tracker.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace dualuv;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("dualuv_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
    spit("cam.json",
         R"({"fx": 120, "fy": 120, "cx": 32, "cy": 32, "width": 64, "height": 64,
             "R": [1, 0, 0, 0, 1, 0, 0, 0, 1], "t": [0, 0, 4]})");
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void spit(const std::string& name, const std::string& text) const {
    std::ofstream out(dir_ / name, std::ios::binary);
    out << text;
  }

  int run(const std::string& args) const {
    const std::string cmd = std::string(DUALUV_CLI) + " " + args + " > " + path("stdout.txt") + " 2> " +
                            path("stderr.txt");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  // Zero-pose init plus its own projected joints.
  void write_fit_inputs(double x_override) const {
    const SkinnedBody body = make_tube_body();
    const ParamLayout layout = make_layout(body);
    const BodyParams zero = BodyParams::zeros(layout);
    spit("init.json", params_to_json(body, {zero}));
    const PinholeCamera cam = read_camera(path("cam.json"));
    std::vector<std::string> labels;
    for (const Joint& j : body.joints()) labels.push_back(j.name);
    Observations obs;
    obs.keypoints = synthesize_keypoints(body, zero, cam, labels);
    if (x_override != 0.0) obs.keypoints[0].pixel.x() = x_override;
    spit("kp.json", observations_to_json(obs));
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SuccessfulCommandsExitZero) {
  EXPECT_EQ(run("mesh-info builtin:icosphere:2"), 0);
  EXPECT_EQ(run("sample-surface builtin:cube -n 50 -o " + path("s.bin")), 0);
  EXPECT_FALSE(read_tensors(path("s.bin")).empty());
  EXPECT_EQ(run("rasterize builtin:cube " + path("cam.json") + " -o " + path("d.bin") + " --mask " + path("m.pgm")), 0);
  EXPECT_TRUE(fs::exists(path("m.pgm")));
  EXPECT_EQ(run("compose-prompts -n 3 --regime role -o " + path("p.jsonl")), 0);
  EXPECT_EQ(run("--help"), 0);

  FeatureMap tex(8, 8, 3);
  for (std::size_t i = 0; i < tex.data().size(); ++i) tex.data()[i] = static_cast<double>(i % 7) / 6.0;
  write_ppm(path("tex.ppm"), tex);
  EXPECT_EQ(run("roundtrip builtin:icosphere:2 " + path("tex.ppm") + " " + path("cam.json") + " --grid 8 8"), 0);
  FeatureMap feat(64, 64, 2, 0.5);
  write_tensors(path("f.bin"), {to_tensor(feat)});
  EXPECT_EQ(run("encode-uv builtin:icosphere:2 " + path("cam.json") + " " + path("f.bin") + " " + path("e.bin") +
                " --samples 2000"),
            0);
  EXPECT_GE(read_tensors(path("e.bin")).size(), 2u);

  GaussianSet g;
  g.positions = {Eigen::Vector3d::Zero()};
  g.rotations = {Eigen::Quaterniond::Identity()};
  g.scales = {Eigen::Vector3d::Constant(0.2)};
  g.colors = {Eigen::Vector3d(1, 0, 0)};
  g.opacities = {0.9};
  g.anchors = {SurfaceSample{}};
  write_gaussians(path("g.bin"), g);
  EXPECT_EQ(run("render " + path("g.bin") + " - " + path("cam.json") + " " + path("r.ppm")), 0);
  EXPECT_TRUE(fs::exists(path("r.ppm")));

  write_fit_inputs(0.0);
  EXPECT_EQ(run("fit-pose " + path("init.json") + " " + path("kp.json") + " - " + path("cam.json") +
                " --stage body --steps 2 -o " + path("out.json")),
            0);
  EXPECT_TRUE(fs::exists(path("out.json")));
}

TEST_F(Cli, FormatAndIoFailuresExitTwo) {
  spit("bad.bin", "XXXXgarbage");
  EXPECT_EQ(run("render " + path("bad.bin") + " - " + path("cam.json") + " " + path("r.ppm")), 2);
  EXPECT_EQ(run("mesh-info " + path("missing.obj")), 2);
  EXPECT_EQ(run("rasterize builtin:cube " + path("missing.json") + " -o " + path("d.bin")), 2);
  EXPECT_EQ(run("mesh-info builtin:nothing"), 2);
  spit("broken.json", "{\"fx\": ");
  EXPECT_EQ(run("rasterize builtin:cube " + path("broken.json") + " -o " + path("d.bin")), 2);

  // Argument errors.
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("no-such-command"), 2);
  write_fit_inputs(0.0);
  EXPECT_EQ(run("fit-pose " + path("init.json") + " " + path("kp.json") + " - " + path("cam.json") +
                " --stage elbow -o " + path("out.json")),
            2);
  spit("cfg.json", R"({"unknown": 1})");
  EXPECT_EQ(run("mesh-info builtin:cube --config " + path("cfg.json")), 2);
}

TEST_F(Cli, NumericFailureExitsOne) {
  write_fit_inputs(1e308);
  EXPECT_EQ(run("fit-pose " + path("init.json") + " " + path("kp.json") + " - " + path("cam.json") +
                " --stage body --steps 2 -o " + path("out.json")),
            1);
  std::ifstream err(path("stderr.txt"));
  const std::string msg{std::istreambuf_iterator<char>(err), {}};
  EXPECT_FALSE(msg.empty());
}
