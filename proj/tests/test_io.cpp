#include "dualuv/config.hpp"
#include "dualuv/error.hpp"
#include "dualuv/image.hpp"
#include "dualuv/random.hpp"
#include "dualuv/skinning.hpp"
#include "dualuv/tensor_io.hpp"
#include "dualuv/tracker.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace dualuv;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() /
            ("dualuv_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

}  // namespace

TEST(Config, DefaultsOverridesAndValidation) {
  const PipelineConfig d = parse_config("{}");
  EXPECT_EQ(d.core_grid.height, 512);
  EXPECT_EQ(d.shell_grid.width, 128);
  EXPECT_EQ(d.adam.lr, 1e-3);
  EXPECT_EQ(d.conf_thresh, 0.6);
  EXPECT_FALSE(d.shell_delta.has_value());

  const PipelineConfig c = parse_config(R"({"core_grid": [64, 32], "shell_delta": 0.05, "kernel": "tent",
      "loss_weights": {"scale": 0.5}, "stage_weights": {"hand": {"hand": 7}}, "adam": {"lr": 0.01},
      "steps": {"body": 12}, "seed": 9})");
  EXPECT_EQ(c.core_grid.height, 64);
  EXPECT_EQ(c.core_grid.width, 32);
  EXPECT_EQ(*c.shell_delta, 0.05);
  EXPECT_EQ(c.kernel, ScatterKernel::kTent);
  EXPECT_EQ(c.loss.scale, 0.5);
  EXPECT_EQ(c.loss.offset, 1.0);
  EXPECT_EQ(c.hand.hand, 7.0);
  EXPECT_EQ(c.hand.reproj, 1e1);
  EXPECT_EQ(c.adam.lr, 0.01);
  EXPECT_EQ(c.steps(Stage::kBody), 12);
  EXPECT_EQ(c.seed, 9u);

  const PipelineConfig back = parse_config(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));

  EXPECT_THROW(parse_config(R"({"no_such_key": 1})"), Error);
  EXPECT_THROW(parse_config(R"({"adam": {"momentum": 1}})"), Error);
  EXPECT_THROW(parse_config(R"({"core_grid": [0, 8]})"), Error);
  EXPECT_THROW(parse_config(R"({"adam": {"lr": 0}})"), Error);
  EXPECT_THROW(parse_config(R"({"conf_thresh": 1.5})"), Error);
  EXPECT_THROW(parse_config(R"({"kernel": "gauss"})"), Error);
  EXPECT_THROW(parse_config("[1, 2"), IoError);
}

TEST(Tensor, RoundTripAllTypes) {
  TempDir dir;
  const Tensor a(DType::kF64, {2, 3}, {1.5, -2.25, 3e-300, 4e300, 0.0, -0.0});
  const Tensor b(DType::kF32, {4}, {1.0, 0.5, -3.25, 1e10});
  const Tensor c(DType::kU8, {1, 1, 3}, {0.0, 127.0, 255.0});
  write_tensors(dir / "t.bin", {a, b, c});
  const auto back = read_tensors(dir / "t.bin");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].dims, a.dims);
  EXPECT_EQ(back[0].values, a.values);
  EXPECT_EQ(back[1].dtype, DType::kF32);
  EXPECT_EQ(back[1].values, b.values);
  EXPECT_EQ(back[2].values, c.values);

  // Header layout: magic, u32 version, u8 dtype, u8 rank, u64 dims.
  const std::string bytes = encode_tensor(a);
  EXPECT_EQ(bytes.substr(0, 4), "TNSR");
  EXPECT_EQ(bytes.size(), 4u + 4 + 1 + 1 + 2 * 8 + 6 * 8);
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), kTensorVersion);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[9]), 2);

  // Writing the decoded records again gives the same bytes.
  write_tensors(dir / "t2.bin", back);
  EXPECT_EQ(slurp(dir / "t.bin"), slurp(dir / "t2.bin"));
}

TEST(Tensor, CorruptFilesAreIoErrors) {
  TempDir dir;
  std::string good = encode_tensor(Tensor(DType::kF64, {3}, {1, 2, 3}));
  std::string bad = good;
  bad[0] = 'X';
  spit(dir / "magic.bin", bad);
  try {
    read_tensors(dir / "magic.bin");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
  spit(dir / "short.bin", good.substr(0, good.size() - 5));
  EXPECT_THROW(read_tensors(dir / "short.bin"), IoError);
  std::string version = good;
  version[4] = 9;
  spit(dir / "version.bin", version);
  EXPECT_THROW(read_tensors(dir / "version.bin"), IoError);
  EXPECT_THROW(read_tensors(dir / "missing.bin"), IoError);
  EXPECT_THROW(Tensor(DType::kF64, {2, 2}, {1, 2, 3}), Error);
}

TEST(Tensor, FeatureMapConversion) {
  FeatureMap m(3, 4, 2);
  Rng r(1);
  for (double& v : m.data()) v = r.normal();
  const Tensor t = to_tensor(m);
  EXPECT_EQ(t.dims, (std::vector<std::uint64_t>{3, 4, 2}));
  const FeatureMap back = to_feature_map(t);
  EXPECT_EQ(back.data(), m.data());
}

TEST(Netpbm, RoundTrips) {
  TempDir dir;
  GrayImage g(5, 3);
  for (std::size_t i = 0; i < g.pixels.size(); ++i) g.pixels[i] = static_cast<std::uint8_t>(i * 17);
  write_pgm(dir / "g.pgm", g);
  const GrayImage gb = read_pgm(dir / "g.pgm");
  EXPECT_EQ(gb.width, 5);
  EXPECT_EQ(gb.height, 3);
  EXPECT_EQ(gb.pixels, g.pixels);
  EXPECT_EQ(slurp(dir / "g.pgm").substr(0, 11), "P5\n5 3\n255\n");

  FeatureMap c(2, 3, 3);
  for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] = static_cast<double>(i) / 17.0;
  write_ppm(dir / "c.ppm", c);
  const FeatureMap cb = read_ppm(dir / "c.ppm");
  ASSERT_EQ(cb.channels(), 3);
  for (std::size_t i = 0; i < c.data().size(); ++i) EXPECT_NEAR(cb.data()[i], c.data()[i], 0.5 / 255.0 + 1e-12);

  spit(dir / "bad.pgm", "P2\n1 1\n255\n0");
  EXPECT_THROW(read_pgm(dir / "bad.pgm"), IoError);
  spit(dir / "short.pgm", "P5\n4 4\n255\nab");
  EXPECT_THROW(read_pgm(dir / "short.pgm"), IoError);
  EXPECT_EQ(to_byte(1.0), 255);
  EXPECT_EQ(to_byte(-1.0), 0);
  EXPECT_EQ(to_byte(0.5), 128);
}

TEST(Rig, RoundTrip) {
  TempDir dir;
  const SkinnedBody body = make_tube_body();
  write_rig(dir / "tube.json", body);
  const SkinnedBody back = read_rig(dir / "tube.json");
  ASSERT_EQ(back.joint_count(), body.joint_count());
  for (int j = 0; j < body.joint_count(); ++j) {
    EXPECT_EQ(back.joints()[j].name, body.joints()[j].name);
    EXPECT_EQ(back.joints()[j].parent, body.joints()[j].parent);
    EXPECT_EQ(back.joints()[j].rest_position, body.joints()[j].rest_position);
  }
  EXPECT_EQ(back.rest_mesh().vertices(), body.rest_mesh().vertices());
  EXPECT_EQ(back.rest_mesh().face_count(), body.rest_mesh().face_count());
  EXPECT_EQ(back.shape_basis(), body.shape_basis());
  EXPECT_EQ(back.expr_basis(), body.expr_basis());
  ASSERT_EQ(back.weights().size(), body.weights().size());
  for (std::size_t v = 0; v < body.weights().size(); ++v) {
    ASSERT_EQ(back.weights()[v].size(), body.weights()[v].size());
    for (std::size_t k = 0; k < body.weights()[v].size(); ++k) {
      EXPECT_EQ(back.weights()[v][k].joint, body.weights()[v][k].joint);
      EXPECT_EQ(back.weights()[v][k].weight, body.weights()[v][k].weight);
    }
  }
  EXPECT_EQ(load_body("builtin:tube").joint_count(), body.joint_count());
  EXPECT_THROW(load_body("builtin:octopus"), Error);
}

TEST(Observations, JsonForms) {
  const Observations o = parse_observations(
      R"({"keypoints": [{"label": "neck", "x": 1.5, "y": 2, "conf": 0.9}], "head_vertices": [{"label": "v:3", "x": 0, "y": 0}]})");
  ASSERT_EQ(o.keypoints.size(), 1u);
  EXPECT_EQ(o.keypoints[0].label, "neck");
  EXPECT_EQ(o.keypoints[0].pixel, Eigen::Vector2d(1.5, 2.0));
  EXPECT_EQ(o.keypoints[0].conf, 0.9);
  ASSERT_EQ(o.head_vertices.size(), 1u);
  const Observations bare = parse_observations(R"([{"label": "pelvis", "x": 3, "y": 4, "conf": 1}])");
  EXPECT_EQ(bare.keypoints.size(), 1u);
  const Observations back = parse_observations(observations_to_json(o));
  EXPECT_EQ(back.keypoints[0].pixel, o.keypoints[0].pixel);
  EXPECT_EQ(back.head_vertices[0].label, "v:3");
  EXPECT_THROW(parse_observations(R"({"keypoints": [{"x": 1}]})"), Error);
}
