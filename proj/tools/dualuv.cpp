// dualuv command-line tool. Exit codes: 0 ok, 1 numeric failure, 2 I/O,
// format or usage failure.

#include "dualuv/camera.hpp"
#include "dualuv/config.hpp"
#include "dualuv/error.hpp"
#include "dualuv/gaussians.hpp"
#include "dualuv/image.hpp"
#include "dualuv/mesh.hpp"
#include "dualuv/random.hpp"
#include "dualuv/raster.hpp"
#include "dualuv/roundtrip.hpp"
#include "dualuv/sampler.hpp"
#include "dualuv/skinning.hpp"
#include "dualuv/tensor_io.hpp"
#include "dualuv/tracker.hpp"
#include "dualuv/uv_scatter.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

using namespace dualuv;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNumeric = 1;
constexpr int kExitIo = 2;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// builtin:icosphere[:subdivisions], builtin:cube, builtin:quad, builtin:tube,
// or an OBJ path.
TriMesh load_mesh(const std::string& spec) {
  if (spec.rfind("builtin:", 0) != 0) return read_obj(spec);
  const std::string name = spec.substr(8);
  if (name == "cube") return make_unit_cube();
  if (name == "quad") return make_quad(0.5, 0.0);
  if (name == "tube") return canonical_pose(make_tube_body()).mesh;
  if (name.rfind("icosphere", 0) == 0) {
    int sub = 3;
    if (name.size() > 9) {
      if (name[9] != ':') throw IoError("unknown builtin mesh '" + spec + "'");
      try {
        sub = std::stoi(name.substr(10));
      } catch (const std::exception&) {
        throw IoError("bad icosphere subdivision in '" + spec + "'");
      }
      if (sub < 0 || sub > 7) throw Error("icosphere subdivision must be in [0, 7]");
    }
    return make_icosphere(sub);
  }
  throw IoError("unknown builtin mesh '" + spec + "'");
}

FeatureMap load_features(const std::string& path) {
  if (ends_with(path, ".ppm")) return read_ppm(path);
  const auto tensors = read_tensors(path);
  if (tensors.empty()) throw IoError(path + " holds no tensor");
  return to_feature_map(tensors.front());
}

Tensor coverage_tensor(const std::vector<std::uint8_t>& mask, int height, int width) {
  std::vector<double> v(mask.begin(), mask.end());
  return Tensor(DType::kU8, {static_cast<std::uint64_t>(height), static_cast<std::uint64_t>(width)}, std::move(v));
}

ojson vec3(const Eigen::Vector3d& v) { return ojson::array({v.x(), v.y(), v.z()}); }

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;

  PipelineConfig load() const {
    PipelineConfig c = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "Pipeline config JSON");
  cmd->add_option("--seed", common.seed, "Master seed (overrides the config)");
}

// ---------------------------------------------------------------------------

struct MeshInfoArgs {
  std::string mesh;
  std::string out;
};

int cmd_mesh_info(const MeshInfoArgs& a) {
  const TriMesh mesh = load_mesh(a.mesh);
  std::size_t degenerate = 0;
  Eigen::Vector2d uv_min = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector2d uv_max = -uv_min;
  for (std::size_t f = 0; f < mesh.face_count(); ++f) {
    if (mesh.face_area(static_cast<int>(f)) <= 0.0) ++degenerate;
    for (int k = 0; k < 3; ++k) {
      uv_min = uv_min.cwiseMin(mesh.faces()[f].uv(k));
      uv_max = uv_max.cwiseMax(mesh.faces()[f].uv(k));
    }
  }
  std::size_t fallback = 0;
  for (auto f : mesh.vertex_normals().fallback) fallback += f != 0;

  ojson j;
  j["vertices"] = mesh.vertex_count();
  j["faces"] = mesh.face_count();
  j["degenerate_faces"] = degenerate;
  j["fallback_normals"] = fallback;
  j["area"] = mesh.total_area();
  if (!mesh.empty()) {
    j["bbox_min"] = vec3(mesh.bbox_min());
    j["bbox_max"] = vec3(mesh.bbox_max());
    j["bbox_diagonal"] = mesh.bbox_diagonal();
    j["uv_min"] = {uv_min.x(), uv_min.y()};
    j["uv_max"] = {uv_max.x(), uv_max.y()};
    j["default_shell_delta"] = default_shell_delta(mesh);
  }
  write_text(a.out, j.dump(2) + "\n");
  return kExitOk;
}

struct SampleArgs {
  Common common;
  std::string mesh;
  std::string out;
  std::optional<int> count;
};

// Rows: face, b0, b1, b2, u, v, x, y, z.
int cmd_sample_surface(const SampleArgs& a) {
  const PipelineConfig cfg = a.common.load();
  const TriMesh mesh = load_mesh(a.mesh);
  const int count = a.count.value_or(cfg.surface_samples);
  const auto samples = sample_surface_uniform(mesh, count, stream_seed(cfg.seed, "sample-surface"));
  std::vector<double> v;
  v.reserve(samples.size() * 9);
  for (const auto& s : samples) {
    v.insert(v.end(), {static_cast<double>(s.face), s.bary.x(), s.bary.y(), s.bary.z(), s.uv.x(), s.uv.y(),
                       s.pos.x(), s.pos.y(), s.pos.z()});
  }
  write_tensors(a.out, {Tensor(DType::kF64, {samples.size(), 9}, std::move(v))});
  return kExitOk;
}

struct RasterArgs {
  std::string mesh;
  std::string camera;
  std::string depth_out;
  std::string mask_out;
  bool no_cull = false;
};

// Depth (H x W, +inf where empty) and face id (H x W, -1 where empty).
int cmd_rasterize(const RasterArgs& a) {
  const TriMesh mesh = load_mesh(a.mesh);
  const PinholeCamera cam = read_camera(a.camera);
  RasterOptions ro;
  ro.cull_backfaces = !a.no_cull;
  const DepthBuffer db = rasterize(mesh, cam, ro);
  const std::vector<std::uint64_t> dims{static_cast<std::uint64_t>(db.height), static_cast<std::uint64_t>(db.width)};
  std::vector<double> faces(db.face.begin(), db.face.end());
  write_tensors(a.depth_out, {Tensor(DType::kF64, dims, db.depth), Tensor(DType::kF64, dims, std::move(faces))});
  if (!a.mask_out.empty()) write_pgm(a.mask_out, mask_to_pgm(db.coverage, db.width, db.height));
  std::cerr << "covered pixels: " << db.covered_count() << "\n";
  return kExitOk;
}

struct EncodeArgs {
  Common common;
  std::string mesh;
  std::string camera;
  std::string features;
  std::string out;
  std::string image_mask;
  std::optional<int> samples;
};

// Records: core features, core coverage, shell features, shell coverage.
int cmd_encode_uv(const EncodeArgs& a) {
  const PipelineConfig cfg = a.common.load();
  const TriMesh mesh = load_mesh(a.mesh);
  const PinholeCamera cam = read_camera(a.camera);
  const FeatureMap features = load_features(a.features);
  GrayImage fg;
  EncodeOptions opt;
  opt.kernel = cfg.kernel;
  opt.eps = cfg.scatter_eps;
  opt.visibility_eps_rel = cfg.visibility_eps;
  if (!a.image_mask.empty()) {
    fg = read_pgm(a.image_mask);
    opt.image_mask = &fg;
  }
  const auto samples =
      sample_surface_uniform(mesh, a.samples.value_or(cfg.surface_samples), stream_seed(cfg.seed, "encode-uv"));

  opt.grid = cfg.core_grid;
  const EncodeResult core = core_uv_encode(mesh, cam, features, samples, opt);
  const ShellMesh shell = build_shell(mesh, cfg.shell_delta.value_or(default_shell_delta(mesh)));
  opt.grid = cfg.shell_grid;
  const EncodeResult sh = shell_uv_encode(mesh, shell, cam, features, samples, opt);

  write_tensors(a.out, {to_tensor(core.grid.features),
                        coverage_tensor(core.grid.coverage(), core.grid.height(), core.grid.width()),
                        to_tensor(sh.grid.features),
                        coverage_tensor(sh.grid.coverage(), sh.grid.height(), sh.grid.width())});
  std::cerr << "core texels: " << core.grid.covered_count() << ", shell texels: " << sh.grid.covered_count() << "\n";
  return kExitOk;
}

struct RenderArgs {
  std::string gaussians;
  std::string pose;
  std::string camera;
  std::string out;
  std::string alpha_out;
  std::string rig = "builtin:tube";
  int frame = 0;
  std::vector<double> background{0.0, 0.0, 0.0};
};

int cmd_render(const RenderArgs& a) {
  const GaussianSet canonical = read_gaussians(a.gaussians);
  const PinholeCamera cam = read_camera(a.camera);
  GaussianSet gset = canonical;
  if (a.pose != "-") {
    const SkinnedBody body = load_body(a.rig);
    const auto frames = read_params(body, a.pose);
    if (a.frame < 0 || a.frame >= static_cast<int>(frames.size())) {
      throw IoError("pose file has no frame " + std::to_string(a.frame));
    }
    const ParamLayout layout = make_layout(body);
    const auto x = frames[a.frame].flatten(layout);
    const PosedBody<double> posed = pose_flat<double>(body, layout, std::span<const double>(x));
    const TriMesh canonical_mesh = canonical_pose(body).mesh;
    gset = rig_to_pose(canonical, canonical_mesh, canonical_mesh.with_vertices(posed.vertices));
  }
  SplatOptions so;
  so.background = Eigen::Vector3d(a.background[0], a.background[1], a.background[2]);
  const FeatureMap rgba = splat_render(gset, cam, so);
  write_ppm(a.out, rgba);
  if (!a.alpha_out.empty()) write_pgm(a.alpha_out, alpha_to_pgm(rgba));
  return kExitOk;
}

struct FitArgs {
  Common common;
  std::string init;
  std::string keypoints;
  std::string mask;
  std::string camera;
  std::string stage = "all";
  std::string view = "front";
  std::string out;
  std::string trace;
  std::string rig = "builtin:tube";
  std::optional<int> steps;
  bool upper_body = false;
  bool upright = false;
};

std::vector<Observations> load_frame_observations(const std::string& path) {
  const std::string text = read_text(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
  std::vector<Observations> out;
  if (j.is_object() && j.contains("frames")) {
    if (!j["frames"].is_array()) throw IoError(path + ": frames must be an array");
    for (const auto& f : j["frames"]) out.push_back(parse_observations(f.dump()));
  } else {
    out.push_back(parse_observations(text));
  }
  return out;
}

int cmd_fit_pose(const FitArgs& a) {
  const PipelineConfig cfg = a.common.load();
  const SkinnedBody body = load_body(a.rig);
  const PinholeCamera cam = read_camera(a.camera);
  const auto init = read_params(body, a.init);
  const auto obs = load_frame_observations(a.keypoints);
  if (obs.size() != init.size()) {
    throw IoError("keypoints hold " + std::to_string(obs.size()) + " frames, init holds " +
                  std::to_string(init.size()));
  }
  std::optional<DistanceField> df;
  if (a.mask != "-") {
    const GrayImage mask = read_pgm(a.mask);
    if (mask.width != cam.width || mask.height != cam.height) throw IoError("mask size differs from the camera");
    df = distance_transform(mask);
  }
  std::vector<FrameInput> frames;
  for (std::size_t i = 0; i < init.size(); ++i) frames.push_back({init[i], obs[i], df ? &*df : nullptr});

  TrackerOptions opt;
  opt.adam = cfg.adam;
  opt.sigma = cfg.gmof_sigma;
  opt.conf_thresh = cfg.conf_thresh;
  opt.upper_body = a.upper_body;
  opt.upright = a.upright;
  opt.view = view_from_string(a.view);

  std::vector<std::pair<Stage, std::vector<double>>> traces;
  std::vector<BodyParams> result;
  const auto run = [&](Stage stage, std::span<const BodyParams> current) {
    TrackerOptions o = opt;
    o.steps = a.steps.value_or(cfg.steps(stage));
    o.weights = cfg.weights(stage);
    StageResult r = run_stage(body, cam, frames, current, stage, o);
    traces.emplace_back(stage, std::move(r.trace));
    return std::move(r.params);
  };
  if (a.stage == "all") {
    result = run(Stage::kBody, init);
    if (opt.view != ViewKind::kLeft && opt.view != ViewKind::kRight) result = run(Stage::kHead, result);
    result = run(Stage::kHand, result);
  } else {
    result = run(stage_from_string(a.stage), init);
  }
  write_text(a.out, params_to_json(body, result));
  if (!a.trace.empty()) write_text(a.trace, traces_to_csv(traces));
  return kExitOk;
}

struct PromptArgs {
  Common common;
  std::string vocab;  // empty: data/vocab/default.json here, then the source tree
  std::string regime = "outfit";
  int count = 1;
  int negatives = 4;
  std::string refine_cmd;
  std::string out;
};

std::filesystem::path default_vocab_path() {
  const std::filesystem::path local = "data/vocab/default.json";
  if (std::filesystem::exists(local)) return local;
  return std::filesystem::path(DUALUV_DATA_DIR) / "vocab" / "default.json";
}

int cmd_compose_prompts(const PromptArgs& a) {
  const PipelineConfig cfg = a.common.load();
  const FactorVocabulary vocab = load_vocab(a.vocab.empty() ? default_vocab_path() : std::filesystem::path(a.vocab));
  const Regime regime = regime_from_string(a.regime);
  if (a.count < 0) throw Error("--count must be non-negative");
  std::string text;
  for (int i = 0; i < a.count; ++i) {
    const std::uint64_t seed = stream_seed(cfg.seed, "scene:" + std::to_string(i));
    const ComposedScene scene = sample_scene(vocab, regime, seed, a.negatives);
    if (a.refine_cmd.empty()) {
      text += scene.to_json_line() + "\n";
      continue;
    }
    ojson j = ojson::parse(scene.to_json_line());
    const RefineResult r = refine_external(scene.prompt, a.refine_cmd);
    j["refined"] = r.text;
    j["refined_ok"] = r.refined;
    if (!r.refined) j["refine_note"] = r.note;
    text += j.dump() + "\n";
  }
  write_text(a.out, text);
  return kExitOk;
}

struct RoundtripArgs {
  Common common;
  std::string mesh;
  std::string texture;
  std::string camera;
  std::string out;
  std::vector<int> grid;
  std::optional<int> samples;
  double tolerance = 0.05;
};

int cmd_roundtrip(const RoundtripArgs& a) {
  const PipelineConfig cfg = a.common.load();
  const TriMesh mesh = load_mesh(a.mesh);
  const FeatureMap texture = read_ppm(a.texture);
  const PinholeCamera cam = read_camera(a.camera);
  RoundtripOptions opt;
  opt.grid = a.grid.empty() ? GridSize{texture.height(), texture.width()} : GridSize{a.grid[0], a.grid[1]};
  if (opt.grid.height < 1 || opt.grid.width < 1) throw Error("--grid must be positive");
  opt.samples = a.samples.value_or(RoundtripOptions{}.samples);
  opt.seed = stream_seed(cfg.seed, "roundtrip");
  opt.tolerance = a.tolerance;
  opt.kernel = cfg.kernel;
  write_text(a.out, texture_roundtrip(mesh, cam, texture, opt).to_json());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-UV avatar toolkit"};
  app.require_subcommand(1);

  MeshInfoArgs mi;
  auto* c_info = app.add_subcommand("mesh-info", "Mesh statistics as JSON");
  c_info->add_option("mesh", mi.mesh, "OBJ path or builtin:<name>")->required();
  c_info->add_option("-o,--out", mi.out, "Output JSON (stdout by default)");

  SampleArgs sa;
  auto* c_sample = app.add_subcommand("sample-surface", "Area-uniform surface samples");
  add_common(c_sample, sa.common);
  c_sample->add_option("mesh", sa.mesh)->required();
  c_sample->add_option("-o,--out", sa.out, "Output tensor file")->required();
  c_sample->add_option("-n,--count", sa.count, "Sample count")->check(CLI::PositiveNumber);

  RasterArgs ra;
  auto* c_raster = app.add_subcommand("rasterize", "Depth buffer and coverage mask");
  c_raster->add_option("mesh", ra.mesh)->required();
  c_raster->add_option("camera", ra.camera)->required();
  c_raster->add_option("-o,--out", ra.depth_out, "Depth and face-id tensors")->required();
  c_raster->add_option("--mask", ra.mask_out, "Coverage PGM");
  c_raster->add_flag("--no-cull", ra.no_cull, "Keep back faces");

  EncodeArgs ea;
  auto* c_encode = app.add_subcommand("encode-uv", "Scatter image features into core and shell UV grids");
  add_common(c_encode, ea.common);
  c_encode->add_option("mesh", ea.mesh)->required();
  c_encode->add_option("camera", ea.camera)->required();
  c_encode->add_option("features", ea.features, "Feature tensor or PPM")->required();
  c_encode->add_option("out", ea.out, "Output tensor file")->required();
  c_encode->add_option("--image-mask", ea.image_mask, "Foreground PGM for outside-mask filtering");
  c_encode->add_option("--samples", ea.samples, "Surface sample count")->check(CLI::PositiveNumber);

  RenderArgs rn;
  auto* c_render = app.add_subcommand("render", "Splat gaussians posed on the rig");
  c_render->add_option("gaussians", rn.gaussians)->required();
  c_render->add_option("pose", rn.pose, "Params JSON, or - for the canonical pose")->required();
  c_render->add_option("camera", rn.camera)->required();
  c_render->add_option("out", rn.out, "Output PPM")->required();
  c_render->add_option("--alpha", rn.alpha_out, "Alpha PGM");
  c_render->add_option("--rig", rn.rig, "builtin:tube or a rig header");
  c_render->add_option("--frame", rn.frame, "Frame index in the pose file");
  c_render->add_option("--background", rn.background, "r g b in [0, 1]")->expected(3);

  FitArgs fa;
  auto* c_fit = app.add_subcommand("fit-pose", "Refine body parameters against keypoints and a mask");
  add_common(c_fit, fa.common);
  c_fit->add_option("init", fa.init)->required();
  c_fit->add_option("keypoints", fa.keypoints)->required();
  c_fit->add_option("mask", fa.mask, "Foreground PGM, or - for none")->required();
  c_fit->add_option("camera", fa.camera)->required();
  c_fit->add_option("--stage", fa.stage)->check(CLI::IsMember({"body", "head", "hand", "all"}));
  c_fit->add_option("--view", fa.view)->check(CLI::IsMember({"front", "left", "right", "back"}));
  c_fit->add_option("-o,--out", fa.out, "Refined params JSON")->required();
  c_fit->add_option("--trace", fa.trace, "Loss trace CSV");
  c_fit->add_option("--rig", fa.rig);
  c_fit->add_option("--steps", fa.steps, "Steps per stage (overrides the config)")->check(CLI::NonNegativeNumber);
  c_fit->add_flag("--upper-body", fa.upper_body);
  c_fit->add_flag("--upright", fa.upright);

  PromptArgs pa;
  auto* c_prompt = app.add_subcommand("compose-prompts", "Sample scene descriptions as JSON lines");
  add_common(c_prompt, pa.common);
  c_prompt->add_option("--vocab", pa.vocab);
  c_prompt->add_option("--regime", pa.regime)->check(CLI::IsMember({"outfit", "role"}));
  c_prompt->add_option("-n,--count", pa.count)->check(CLI::NonNegativeNumber);
  c_prompt->add_option("--negatives", pa.negatives, "Negative terms per scene")->check(CLI::NonNegativeNumber);
  c_prompt->add_option("--refine-cmd", pa.refine_cmd, "Shell command that rewrites each prompt on stdin");
  c_prompt->add_option("-o,--out", pa.out, "Output file (stdout by default)");

  RoundtripArgs rt;
  auto* c_rt = app.add_subcommand("roundtrip", "Render a textured mesh, encode it back and score the texels");
  add_common(c_rt, rt.common);
  c_rt->add_option("mesh", rt.mesh)->required();
  c_rt->add_option("texture", rt.texture, "Texture PPM")->required();
  c_rt->add_option("camera", rt.camera)->required();
  c_rt->add_option("-o,--out", rt.out, "Report JSON (stdout by default)");
  c_rt->add_option("--grid", rt.grid, "UV grid height width")->expected(2);
  c_rt->add_option("--samples", rt.samples)->check(CLI::PositiveNumber);
  c_rt->add_option("--tolerance", rt.tolerance);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitIo;
  }

  try {
    if (*c_info) return cmd_mesh_info(mi);
    if (*c_sample) return cmd_sample_surface(sa);
    if (*c_raster) return cmd_rasterize(ra);
    if (*c_encode) return cmd_encode_uv(ea);
    if (*c_render) return cmd_render(rn);
    if (*c_fit) return cmd_fit_pose(fa);
    if (*c_prompt) return cmd_compose_prompts(pa);
    if (*c_rt) return cmd_roundtrip(rt);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitIo;
}
