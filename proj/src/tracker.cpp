#include "dualuv/tracker.hpp"

#include "dualuv/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace dualuv {

using json = nlohmann::json;

ParamLayout make_layout(const SkinnedBody& body) {
  ParamLayout layout;
  for (int j = 0; j < body.joint_count(); ++j) {
    const Joint& joint = body.joints()[j];
    switch (joint.group) {
      case JointGroup::kBody:
        if (joint.parent >= 0) layout.body_joints.push_back(j);
        break;
      case JointGroup::kLeftHand: layout.lhand_joints.push_back(j); break;
      case JointGroup::kRightHand: layout.rhand_joints.push_back(j); break;
      case JointGroup::kJaw:
        if (layout.jaw_joint < 0) layout.jaw_joint = j;
        break;
    }
  }
  layout.shape = body.shape_count();
  layout.expr = body.expr_count();
  return layout;
}

BodyParams BodyParams::zeros(const ParamLayout& layout) {
  BodyParams p;
  p.body.assign(layout.body_joints.size(), Eigen::Vector3d::Zero());
  p.lhand.assign(layout.lhand_joints.size(), Eigen::Vector3d::Zero());
  p.rhand.assign(layout.rhand_joints.size(), Eigen::Vector3d::Zero());
  p.beta.assign(layout.shape, 0.0);
  p.psi.assign(layout.expr, 0.0);
  return p;
}

BodyParams BodyParams::unflatten(const ParamLayout& layout, std::span<const double> x) {
  if (static_cast<int>(x.size()) != layout.size()) throw Error("unflatten: parameter vector has the wrong size");
  BodyParams p = zeros(layout);
  auto v3 = [&](int off) { return Eigen::Vector3d(x[off], x[off + 1], x[off + 2]); };
  p.glob = v3(layout.glob());
  for (std::size_t k = 0; k < p.body.size(); ++k) p.body[k] = v3(layout.body() + 3 * static_cast<int>(k));
  for (std::size_t k = 0; k < p.lhand.size(); ++k) p.lhand[k] = v3(layout.lhand() + 3 * static_cast<int>(k));
  for (std::size_t k = 0; k < p.rhand.size(); ++k) p.rhand[k] = v3(layout.rhand() + 3 * static_cast<int>(k));
  p.jaw = v3(layout.jaw());
  for (int k = 0; k < layout.shape; ++k) p.beta[k] = x[layout.beta() + k];
  for (int k = 0; k < layout.expr; ++k) p.psi[k] = x[layout.psi() + k];
  p.t = v3(layout.trans());
  return p;
}

std::vector<double> BodyParams::flatten(const ParamLayout& layout) const {
  if (body.size() != layout.body_joints.size() || lhand.size() != layout.lhand_joints.size() ||
      rhand.size() != layout.rhand_joints.size() || static_cast<int>(beta.size()) != layout.shape ||
      static_cast<int>(psi.size()) != layout.expr) {
    throw Error("body parameters do not match the rig layout");
  }
  std::vector<double> x;
  x.reserve(layout.size());
  auto put = [&](const Eigen::Vector3d& v) { x.insert(x.end(), {v.x(), v.y(), v.z()}); };
  put(glob);
  for (const auto& v : body) put(v);
  for (const auto& v : lhand) put(v);
  for (const auto& v : rhand) put(v);
  put(jaw);
  x.insert(x.end(), beta.begin(), beta.end());
  x.insert(x.end(), psi.begin(), psi.end());
  put(t);
  return x;
}

// ---------------------------------------------------------------------------
// Parameter files

namespace {

json vec3_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

json names_json(const SkinnedBody& body, const std::vector<int>& joints) {
  json out = json::array();
  for (int j : joints) out.push_back(body.joints()[j].name);
  return out;
}

Eigen::Vector3d read_vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw IoError(std::string("params: '") + what + "' must hold 3 numbers");
  return Eigen::Vector3d(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

std::vector<Eigen::Vector3d> read_vec3_block(const json& j, std::size_t count, const char* what) {
  std::vector<Eigen::Vector3d> out;
  if (!j.is_array()) throw IoError(std::string("params: '") + what + "' must be an array");
  if (j.size() == count && (count == 0 || j[0].is_array())) {
    for (const auto& e : j) out.push_back(read_vec3(e, what));
    return out;
  }
  if (j.size() == 3 * count) {
    for (std::size_t k = 0; k < count; ++k)
      out.emplace_back(j[3 * k].get<double>(), j[3 * k + 1].get<double>(), j[3 * k + 2].get<double>());
    return out;
  }
  throw IoError(std::string("params: '") + what + "' expects " + std::to_string(count) + " joints");
}

std::vector<double> read_scalars(const json& j, std::size_t count, const char* what) {
  if (!j.is_array() || j.size() != count) {
    throw IoError(std::string("params: '") + what + "' expects " + std::to_string(count) + " values");
  }
  std::vector<double> out;
  for (const auto& e : j) out.push_back(e.get<double>());
  return out;
}

BodyParams parse_frame(const ParamLayout& layout, const json& f) {
  if (!f.is_object()) throw IoError("params: frame must be an object");
  BodyParams p = BodyParams::zeros(layout);
  if (f.contains("glob")) p.glob = read_vec3(f["glob"], "glob");
  if (f.contains("body")) p.body = read_vec3_block(f["body"], layout.body_joints.size(), "body");
  if (f.contains("lhand")) p.lhand = read_vec3_block(f["lhand"], layout.lhand_joints.size(), "lhand");
  if (f.contains("rhand")) p.rhand = read_vec3_block(f["rhand"], layout.rhand_joints.size(), "rhand");
  if (f.contains("jaw")) p.jaw = read_vec3(f["jaw"], "jaw");
  if (f.contains("beta")) p.beta = read_scalars(f["beta"], static_cast<std::size_t>(layout.shape), "beta");
  if (f.contains("psi")) p.psi = read_scalars(f["psi"], static_cast<std::size_t>(layout.expr), "psi");
  if (f.contains("t")) p.t = read_vec3(f["t"], "t");
  for (double v : p.flatten(layout))
    if (!std::isfinite(v)) throw IoError("params: non-finite value");
  return p;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

std::string params_to_json(const SkinnedBody& body, const std::vector<BodyParams>& frames) {
  const ParamLayout layout = make_layout(body);
  nlohmann::ordered_json root;
  root["format"] = "dualuv-params";
  root["version"] = 1;
  root["body_joints"] = names_json(body, layout.body_joints);
  root["lhand_joints"] = names_json(body, layout.lhand_joints);
  root["rhand_joints"] = names_json(body, layout.rhand_joints);
  root["frames"] = nlohmann::ordered_json::array();
  for (const BodyParams& p : frames) {
    p.flatten(layout);  // validates block sizes
    nlohmann::ordered_json f;
    f["glob"] = vec3_json(p.glob);
    auto block = [](const std::vector<Eigen::Vector3d>& b) {
      json a = json::array();
      for (const auto& v : b) a.push_back(vec3_json(v));
      return a;
    };
    f["body"] = block(p.body);
    f["lhand"] = block(p.lhand);
    f["rhand"] = block(p.rhand);
    f["jaw"] = vec3_json(p.jaw);
    f["beta"] = p.beta;
    f["psi"] = p.psi;
    f["t"] = vec3_json(p.t);
    root["frames"].push_back(f);
  }
  return root.dump(2) + "\n";
}

std::vector<BodyParams> parse_params(const SkinnedBody& body, const std::string& text) {
  const ParamLayout layout = make_layout(body);
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("params: ") + e.what());
  }
  try {
    if (root.contains("body_joints")) {
      const auto names = root["body_joints"].get<std::vector<std::string>>();
      if (names.size() != layout.body_joints.size()) throw IoError("params: body joint list does not match the rig");
      for (std::size_t k = 0; k < names.size(); ++k) {
        if (names[k] != body.joints()[layout.body_joints[k]].name) {
          throw IoError("params: body joint '" + names[k] + "' is out of rig order");
        }
      }
    }
    std::vector<BodyParams> frames;
    if (root.contains("frames")) {
      for (const auto& f : root["frames"]) frames.push_back(parse_frame(layout, f));
    } else {
      frames.push_back(parse_frame(layout, root));
    }
    if (frames.empty()) throw IoError("params: no frames");
    return frames;
  } catch (const json::exception& e) {
    throw IoError(std::string("params: ") + e.what());
  }
}

std::vector<BodyParams> read_params(const SkinnedBody& body, const std::filesystem::path& path) {
  return parse_params(body, slurp(path));
}

void write_params(const std::filesystem::path& path, const SkinnedBody& body, const std::vector<BodyParams>& frames) {
  spit(path, params_to_json(body, frames));
}

// ---------------------------------------------------------------------------

double gmof(double r, double sigma) {
  const double s2 = sigma * sigma;
  const double r2 = r * r;
  return s2 * r2 / (r2 + s2);
}

double gmof_derivative(double r, double sigma) {
  const double s2 = sigma * sigma;
  const double d = r * r + s2;
  return 2.0 * s2 * s2 * r / (d * d);
}

// ---------------------------------------------------------------------------
// Keypoints

namespace {

struct Categorizer {
  std::vector<std::uint8_t> head_vertex;
  std::vector<std::uint8_t> hand_vertex;
  std::vector<KeypointCategory> joint_category;

  explicit Categorizer(const SkinnedBody& body) {
    const std::size_t nv = body.rest_mesh().vertex_count();
    head_vertex.assign(nv, 0);
    hand_vertex.assign(nv, 0);
    const int head = body.find_joint("head").value_or(-1);
    if (head >= 0)
      for (int v : body.region_vertices(head)) head_vertex[v] = 1;
    for (const char* wrist : {"left_wrist", "right_wrist"}) {
      if (auto w = body.find_joint(wrist))
        for (int v : body.region_vertices(*w)) hand_vertex[v] = 1;
    }
    joint_category.assign(body.joint_count(), KeypointCategory::kBody);
    for (int j = 0; j < body.joint_count(); ++j) {
      const Joint& joint = body.joints()[j];
      if (joint.group == JointGroup::kLeftHand || joint.group == JointGroup::kRightHand) {
        joint_category[j] = KeypointCategory::kHand;
      } else if (joint.group == JointGroup::kJaw || j == head ||
                 (joint.parent >= 0 && joint_category[joint.parent] == KeypointCategory::kHead)) {
        joint_category[j] = KeypointCategory::kHead;
      }
    }
    // Wrist subtrees below the wrist itself are hand joints.
    for (int j = 0; j < body.joint_count(); ++j) {
      const int p = body.joints()[j].parent;
      if (p < 0) continue;
      const std::string& pn = body.joints()[p].name;
      if (pn == "left_wrist" || pn == "right_wrist" || joint_category[p] == KeypointCategory::kHand) {
        if (joint_category[j] == KeypointCategory::kBody) joint_category[j] = KeypointCategory::kHand;
      }
    }
  }

  ResolvedKeypoint resolve(const SkinnedBody& body, const Keypoint& kp) const {
    ResolvedKeypoint r;
    r.label = kp.label;
    r.pixel = kp.pixel;
    r.conf = kp.conf;
    if (kp.label.rfind("v:", 0) == 0) {
      int idx = -1;
      const char* first = kp.label.data() + 2;
      const char* last = kp.label.data() + kp.label.size();
      const auto [ptr, ec] = std::from_chars(first, last, idx);
      if (ec != std::errc() || ptr != last || idx < 0 || idx >= static_cast<int>(head_vertex.size())) {
        throw Error("keypoint label '" + kp.label + "' does not name a rig vertex");
      }
      r.is_vertex = true;
      r.index = idx;
      r.category = hand_vertex[idx] ? KeypointCategory::kHand
                   : head_vertex[idx] ? KeypointCategory::kHead
                                      : KeypointCategory::kBody;
      return r;
    }
    const auto j = body.find_joint(kp.label);
    if (!j) throw Error("keypoint label '" + kp.label + "' does not name a rig joint");
    r.index = *j;
    r.category = joint_category[*j];
    return r;
  }
};

Keypoint parse_keypoint(const json& j) {
  if (!j.is_object() || !j.contains("label") || !j.contains("x") || !j.contains("y")) {
    throw IoError("keypoints: each entry needs label, x and y");
  }
  Keypoint k;
  k.label = j["label"].get<std::string>();
  k.pixel = Eigen::Vector2d(j["x"].get<double>(), j["y"].get<double>());
  k.conf = j.value("conf", 1.0);
  if (!(k.conf >= 0.0 && k.conf <= 1.0)) throw IoError("keypoints: confidence of '" + k.label + "' outside [0, 1]");
  if (!k.pixel.allFinite()) throw IoError("keypoints: non-finite position for '" + k.label + "'");
  return k;
}

std::vector<Keypoint> parse_keypoint_list(const json& j) {
  if (!j.is_array()) throw IoError("keypoints: expected an array");
  std::vector<Keypoint> out;
  for (const auto& e : j) out.push_back(parse_keypoint(e));
  return out;
}

nlohmann::ordered_json keypoints_json(const std::vector<Keypoint>& kps) {
  auto a = nlohmann::ordered_json::array();
  for (const Keypoint& k : kps) {
    nlohmann::ordered_json e;
    e["label"] = k.label;
    e["x"] = k.pixel.x();
    e["y"] = k.pixel.y();
    e["conf"] = k.conf;
    a.push_back(e);
  }
  return a;
}

}  // namespace

ResolvedKeypoint resolve_keypoint(const SkinnedBody& body, const Keypoint& kp) {
  return Categorizer(body).resolve(body, kp);
}

Observations parse_observations(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("keypoints: ") + e.what());
  }
  try {
    Observations obs;
    if (root.is_array()) {
      obs.keypoints = parse_keypoint_list(root);
      return obs;
    }
    if (!root.is_object()) throw IoError("keypoints: expected an object or array");
    if (root.contains("keypoints")) obs.keypoints = parse_keypoint_list(root["keypoints"]);
    if (root.contains("head_vertices")) obs.head_vertices = parse_keypoint_list(root["head_vertices"]);
    if (root.contains("hand_vertices")) obs.hand_vertices = parse_keypoint_list(root["hand_vertices"]);
    return obs;
  } catch (const json::exception& e) {
    throw IoError(std::string("keypoints: ") + e.what());
  }
}

Observations read_observations(const std::filesystem::path& path) { return parse_observations(slurp(path)); }

std::string observations_to_json(const Observations& obs) {
  nlohmann::ordered_json root;
  root["keypoints"] = keypoints_json(obs.keypoints);
  root["head_vertices"] = keypoints_json(obs.head_vertices);
  root["hand_vertices"] = keypoints_json(obs.hand_vertices);
  return root.dump(2) + "\n";
}

std::vector<Keypoint> synthesize_keypoints(const SkinnedBody& body, const BodyParams& params,
                                           const PinholeCamera& cam, std::span<const std::string> labels) {
  const ParamLayout layout = make_layout(body);
  const Categorizer cat(body);
  const auto flat = params.flatten(layout);
  std::vector<GradDual> x(flat.begin(), flat.end());
  const PosedBody<GradDual> posed = pose_flat<GradDual>(body, layout, x);
  std::vector<Keypoint> out;
  for (const std::string& label : labels) {
    const ResolvedKeypoint r = cat.resolve(body, Keypoint{label, {}, 1.0});
    const auto& p = r.is_vertex ? posed.vertices[r.index] : posed.joints[r.index];
    const Vec2T<GradDual> px = project_pixel<GradDual>(cam, p);
    out.push_back(Keypoint{label, Eigen::Vector2d(px(0).v, px(1).v), 1.0});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plain-double term entry points

namespace {

bool is_wrist(const SkinnedBody& body, const ResolvedKeypoint& k) {
  if (k.is_vertex) return false;
  const std::string& n = body.joints()[k.index].name;
  return n == "left_wrist" || n == "right_wrist";
}

std::vector<int> identity_slots(std::size_t n) {
  std::vector<int> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<int>(i);
  return s;
}

int required_joint(const SkinnedBody& body, const char* name) {
  const auto j = body.find_joint(name);
  if (!j) throw Error(std::string("rig has no '") + name + "' joint");
  return *j;
}

}  // namespace

std::vector<std::pair<int, int>> side_pairs(const SkinnedBody& body) {
  std::vector<std::pair<int, int>> out;
  for (const char* part : {"ear", "shoulder", "hip"}) {
    const auto l = body.find_joint(std::string("left_") + part);
    const auto r = body.find_joint(std::string("right_") + part);
    if (l && r) out.emplace_back(*l, *r);
  }
  return out;
}

TermValue reprojection_loss(const SkinnedBody& body, const BodyParams& params, const PinholeCamera& cam,
                            std::span<const Keypoint> kps, double conf_thresh, bool exclude_wrists, double sigma) {
  const ParamLayout layout = make_layout(body);
  const Categorizer cat(body);
  std::vector<ResolvedKeypoint> active;
  for (const Keypoint& k : kps) {
    ResolvedKeypoint r = cat.resolve(body, k);
    if (!(r.conf > conf_thresh)) continue;
    if (exclude_wrists && is_wrist(body, r)) continue;
    active.push_back(r);
  }
  if (active.empty()) return {0.0, false};
  const auto x = params.flatten(layout);
  const auto posed = pose_flat<double>(body, layout, x);
  const auto slots = identity_slots(posed.vertices.size());
  return {reprojection_term<double>(posed, slots, cam, active, sigma), true};
}

double mask_inside_loss(const SkinnedBody& body, const BodyParams& params, const PinholeCamera& cam,
                        const DistanceField& df) {
  const ParamLayout layout = make_layout(body);
  const auto x = params.flatten(layout);
  return mask_term<double>(pose_flat<double>(body, layout, x), cam, df);
}

double upright_loss(const SkinnedBody& body, const BodyParams& params, const Eigen::Vector3d& vertical) {
  const ParamLayout layout = make_layout(body);
  const auto x = params.flatten(layout);
  const std::vector<int> none;
  const auto posed = pose_flat<double>(body, layout, x, std::span<const int>(none));
  return upright_term<double>(posed, required_joint(body, "pelvis"), required_joint(body, "neck"),
                              vertical.normalized());
}

TermValue smoothness_loss(const SkinnedBody& body, std::span<const BodyParams> frames, const PinholeCamera& cam) {
  if (frames.size() < 3) return {0.0, false};
  const ParamLayout layout = make_layout(body);
  std::vector<std::vector<Eigen::Vector2d>> projected;
  for (const BodyParams& p : frames) {
    const auto x = p.flatten(layout);
    const auto posed = pose_flat<double>(body, layout, x);
    std::vector<Eigen::Vector2d> px;
    for (const auto& v : posed.vertices) px.push_back(project_pixel<double>(cam, v));
    projected.push_back(std::move(px));
  }
  return {smoothness_term<double>(projected), true};
}

double pose_reg_loss(const SkinnedBody& body, const BodyParams& params, const BodyParams& init) {
  const ParamLayout layout = make_layout(body);
  const auto x = params.flatten(layout);
  const auto x0 = init.flatten(layout);
  return pose_reg_term<double>(x, x0, layout.pose_end());
}

double side_alignment_loss(const SkinnedBody& body, const BodyParams& params, const PinholeCamera& cam) {
  const ParamLayout layout = make_layout(body);
  const auto x = params.flatten(layout);
  const std::vector<int> none;
  const auto posed = pose_flat<double>(body, layout, x, std::span<const int>(none));
  const auto pairs = side_pairs(body);
  return side_term<double>(posed, pairs, cam.viewing_direction());
}

// ---------------------------------------------------------------------------
// Adam

AdamResult adam_minimize(const LossFn& fn, std::vector<double> init, const AdamConfig& config) {
  if (config.steps < 0) throw Error("adam: negative step count");
  if (!(config.lr > 0.0)) throw Error("adam: learning rate must be positive");
  AdamResult out;
  out.x = std::move(init);
  const std::size_t n = out.x.size();
  std::vector<double> grad(n, 0.0), m(n, 0.0), v(n, 0.0);
  out.trace.reserve(static_cast<std::size_t>(config.steps) + 1);

  auto evaluate = [&](int step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = fn(out.x, grad);
    if (!std::isfinite(loss)) throw NumericError("adam: non-finite loss at step " + std::to_string(step));
    for (double g : grad)
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient at step " + std::to_string(step));
    return loss;
  };

  const double initial = evaluate(0);
  out.trace.push_back(initial);
  int above = 0;
  double b1t = 1.0;
  double b2t = 1.0;
  for (int step = 1; step <= config.steps; ++step) {
    b1t *= config.beta1;
    b2t *= config.beta2;
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / (1.0 - b1t);
      const double vhat = v[i] / (1.0 - b2t);
      out.x[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
    const double loss = evaluate(step);
    out.trace.push_back(loss);
    if (initial > 0.0 && loss > kDivergenceFactor * initial) {
      if (++above >= kDivergenceWindow) {
        throw NumericError("adam: diverged, loss " + std::to_string(loss) + " exceeded 10x the initial " +
                           std::to_string(initial) + " for " + std::to_string(kDivergenceWindow) +
                           " steps (step " + std::to_string(step) + ")");
      }
    } else {
      above = 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stages

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::kBody: return "body";
    case Stage::kHead: return "head";
    case Stage::kHand: return "hand";
  }
  return "?";
}

const char* to_string(ViewKind view) {
  switch (view) {
    case ViewKind::kFront: return "front";
    case ViewKind::kLeft: return "left";
    case ViewKind::kRight: return "right";
    case ViewKind::kBack: return "back";
  }
  return "?";
}

Stage stage_from_string(const std::string& name) {
  if (name == "body") return Stage::kBody;
  if (name == "head") return Stage::kHead;
  if (name == "hand") return Stage::kHand;
  throw Error("unknown stage '" + name + "'");
}

ViewKind view_from_string(const std::string& name) {
  if (name == "front") return ViewKind::kFront;
  if (name == "left") return ViewKind::kLeft;
  if (name == "right") return ViewKind::kRight;
  if (name == "back") return ViewKind::kBack;
  throw Error("unknown view '" + name + "'");
}

StageWeights default_weights(Stage stage) {
  StageWeights w;
  w.mask = 1e2;
  w.up = 1e4;
  w.side = kSideWeight;
  switch (stage) {
    case Stage::kBody:
      w.reproj = 1e2;
      w.reg = 1e2;
      w.smo = 5e2;
      break;
    case Stage::kHead:
      w.reproj = 1e2;
      w.reg = 1e2;
      w.smo = 5e4;
      w.head = 1e3;
      break;
    case Stage::kHand:
      w.reproj = 1e1;
      w.reg = 1e1;
      w.smo = 5e5;
      w.head = 1e3;
      w.hand = 1e2;
      break;
  }
  return w;
}

int default_steps(Stage stage) { return stage == Stage::kBody ? 300 : 200; }

namespace {

bool is_side(ViewKind v) { return v == ViewKind::kLeft || v == ViewKind::kRight; }

void append_block(std::vector<int>& out, int start, int count) {
  for (int i = 0; i < count; ++i) out.push_back(start + i);
}

}  // namespace

std::vector<int> free_indices(const SkinnedBody& body, const ParamLayout& layout, Stage stage, ViewKind view) {
  std::vector<int> out;
  const int nb = static_cast<int>(layout.body_joints.size());
  const int nl = static_cast<int>(layout.lhand_joints.size());
  const int nr = static_cast<int>(layout.rhand_joints.size());
  switch (stage) {
    case Stage::kBody:
    case Stage::kHead:
      append_block(out, layout.glob(), 3);
      append_block(out, layout.body(), 3 * nb);
      append_block(out, layout.lhand(), 3 * nl);
      append_block(out, layout.rhand(), 3 * nr);
      if (stage == Stage::kHead) {
        append_block(out, layout.beta(), layout.shape);
        append_block(out, layout.psi(), layout.expr);
      }
      if (!(stage == Stage::kBody && is_side(view))) append_block(out, layout.trans(), 3);
      break;
    case Stage::kHand: {
      for (int k = 0; k < nb; ++k) {
        const std::string& n = body.joints()[layout.body_joints[k]].name;
        for (const char* part : {"wrist", "shoulder", "elbow"}) {
          if (n == std::string("left_") + part || n == std::string("right_") + part) {
            append_block(out, layout.body() + 3 * k, 3);
          }
        }
      }
      append_block(out, layout.lhand(), 3 * nl);
      append_block(out, layout.rhand(), 3 * nr);
      break;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

StageWeights effective_weights(Stage stage, const TrackerOptions& options) {
  StageWeights w = options.weights ? *options.weights : default_weights(stage);
  if (!(options.upper_body || options.upright || options.view == ViewKind::kBack)) w.up = 0.0;
  if (!is_side(options.view)) w.side = 0.0;
  if (options.view == ViewKind::kBack) w.reproj = 0.0;
  if (stage == Stage::kBody) {
    w.head = 0.0;
    w.hand = 0.0;
  } else if (stage == Stage::kHead) {
    w.hand = 0.0;
  }
  return w;
}

namespace {

struct FrameData {
  std::vector<double> init;
  std::vector<double> current;
  std::vector<ResolvedKeypoint> reproj;
  std::vector<ResolvedKeypoint> head;
  std::vector<ResolvedKeypoint> hand;
  const DistanceField* mask = nullptr;
};

struct Problem {
  const SkinnedBody& body;
  ParamLayout layout;
  PinholeCamera cam;
  StageWeights w;
  double sigma = kGmofSigma;
  Eigen::Vector3d vertical;
  std::vector<FrameData> frames;
  std::vector<int> free;
  bool all_vertices = false;
  bool smooth = false;
  std::vector<int> selection;  // vertices to pose when not all
  std::vector<int> slot;       // vertex -> position in the posed list
  int pelvis = -1;
  int neck = -1;
  std::vector<std::pair<int, int>> pairs;

  template <class T>
  T eval(std::span<const T> y) const {
    const std::size_t nf = free.size();
    T total(0.0);
    std::vector<std::vector<Vec2T<T>>> projected;
    std::vector<T> x(static_cast<std::size_t>(layout.size()));
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const FrameData& fd = frames[f];
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = T(fd.current[i]);
      for (std::size_t k = 0; k < nf; ++k) x[free[k]] = y[f * nf + k];
      const std::span<const T> xs(x);
      const PosedBody<T> posed =
          all_vertices ? pose_flat<T>(body, layout, xs) : pose_flat<T>(body, layout, xs, std::span<const int>(selection));
      if (w.reproj > 0.0 && !fd.reproj.empty()) total += w.reproj * reprojection_term<T>(posed, slot, cam, fd.reproj, sigma);
      if (w.head > 0.0 && !fd.head.empty()) total += w.head * reprojection_term<T>(posed, slot, cam, fd.head, sigma);
      if (w.hand > 0.0 && !fd.hand.empty()) total += w.hand * reprojection_term<T>(posed, slot, cam, fd.hand, sigma);
      if (w.mask > 0.0 && fd.mask) total += w.mask * mask_term<T>(posed, cam, *fd.mask);
      if (w.up > 0.0) total += w.up * upright_term<T>(posed, pelvis, neck, vertical);
      if (w.reg > 0.0) total += w.reg * pose_reg_term<T>(xs, fd.init, layout.pose_end());
      if (w.side > 0.0 && !pairs.empty()) total += w.side * side_term<T>(posed, pairs, cam.viewing_direction());
      if (smooth) {
        std::vector<Vec2T<T>> px;
        px.reserve(posed.vertices.size());
        for (const auto& v : posed.vertices) px.push_back(project_pixel<T>(cam, v));
        projected.push_back(std::move(px));
      }
    }
    if (smooth) total += w.smo * smoothness_term<T>(projected);
    return total;
  }
};

bool keep_for_stage(KeypointCategory c, Stage stage) {
  switch (stage) {
    case Stage::kBody: return true;
    case Stage::kHead: return c == KeypointCategory::kBody;
    case Stage::kHand: return c != KeypointCategory::kHead;
  }
  return false;
}

Problem build_problem(const SkinnedBody& body, const PinholeCamera& cam, std::span<const FrameInput> frames,
                      std::span<const BodyParams> current, Stage stage, const TrackerOptions& options,
                      std::size_t& active_keypoints) {
  if (frames.empty()) throw Error("tracker: no frames");
  if (current.size() != frames.size()) throw Error("tracker: one current parameter set per frame required");
  cam.validate();
  Problem p{body, make_layout(body), cam, effective_weights(stage, options), options.sigma, options.vertical,
             {}, {}, false, false, {}, {}, -1, -1, {}};
  if (!(p.sigma > 0.0)) throw Error("tracker: gmof sigma must be positive");
  if (!(p.vertical.norm() > 0.0)) throw Error("tracker: vertical axis must be non-zero");
  p.vertical.normalize();
  p.free = free_indices(body, p.layout, stage, options.view);
  if (p.w.up > 0.0) {
    p.pelvis = required_joint(body, "pelvis");
    p.neck = required_joint(body, "neck");
  }
  if (p.w.side > 0.0) p.pairs = side_pairs(body);
  const Categorizer cat(body);
  const bool drop_wrists = options.upper_body && stage == Stage::kBody;
  std::set<int> needed;
  active_keypoints = 0;
  bool any_mask = false;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    FrameData fd;
    fd.init = frames[f].init.flatten(p.layout);
    fd.current = current[f].flatten(p.layout);
    fd.mask = frames[f].mask;
    if (fd.mask && fd.mask->empty_mask) {
      warn("tracker: foreground mask is empty; silhouette term disabled");
      fd.mask = nullptr;
    }
    any_mask = any_mask || (fd.mask && p.w.mask > 0.0);
    auto take = [&](const std::vector<Keypoint>& src, std::vector<ResolvedKeypoint>& dst, bool reproj) {
      for (const Keypoint& k : src) {
        ResolvedKeypoint r = cat.resolve(body, k);
        if (!(r.conf > options.conf_thresh)) continue;
        if (reproj && (!keep_for_stage(r.category, stage) || (drop_wrists && is_wrist(body, r)))) continue;
        if (r.is_vertex) needed.insert(r.index);
        dst.push_back(std::move(r));
      }
    };
    take(frames[f].obs.keypoints, fd.reproj, true);
    if (p.w.head > 0.0) take(frames[f].obs.head_vertices, fd.head, false);
    if (p.w.hand > 0.0) take(frames[f].obs.hand_vertices, fd.hand, false);
    if (p.w.reproj > 0.0) active_keypoints += fd.reproj.size();
    p.frames.push_back(std::move(fd));
  }
  p.smooth = p.w.smo > 0.0 && frames.size() >= 3;
  p.all_vertices = any_mask || p.smooth;
  const std::size_t nv = body.rest_mesh().vertex_count();
  if (p.all_vertices) {
    p.slot = identity_slots(nv);
  } else {
    p.slot.assign(nv, -1);
    p.selection.assign(needed.begin(), needed.end());
    for (std::size_t k = 0; k < p.selection.size(); ++k) p.slot[p.selection[k]] = static_cast<int>(k);
  }
  return p;
}

}  // namespace

StageObjective make_stage_objective(const SkinnedBody& body, const PinholeCamera& cam,
                                    std::span<const FrameInput> frames, std::span<const BodyParams> current,
                                    Stage stage, const TrackerOptions& options) {
  std::size_t active = 0;
  auto problem = std::make_shared<Problem>(build_problem(body, cam, frames, current, stage, options, active));
  StageObjective obj;
  for (const FrameData& fd : problem->frames)
    for (int i : problem->free) obj.x0.push_back(fd.current[i]);
  obj.fn = [problem](std::span<const double> y, std::span<double> grad) {
    if (grad.empty()) return problem->eval<double>(y);
    return value_and_gradient([&](std::span<const GradDual> yd) { return problem->eval<GradDual>(yd); }, y, grad);
  };
  return obj;
}

StageResult run_stage(const SkinnedBody& body, const PinholeCamera& cam, std::span<const FrameInput> frames,
                      std::span<const BodyParams> current, Stage stage, const TrackerOptions& options) {
  std::size_t active = 0;
  const Problem problem = build_problem(body, cam, frames, current, stage, options, active);
  StageResult result;
  result.active_keypoints = active;
  result.smoothness_active = problem.smooth;
  if (problem.w.smo > 0.0 && frames.size() > 1 && frames.size() < 3) {
    warn("tracker: smoothness needs at least three frames; term skipped");
  }
  if (problem.w.reproj > 0.0 && active == 0) warn("tracker: no keypoint passes the confidence threshold");

  std::vector<double> y0;
  for (const FrameData& fd : problem.frames)
    for (int i : problem.free) y0.push_back(fd.current[i]);
  AdamConfig cfg = options.adam;
  cfg.steps = options.steps > 0 ? options.steps : default_steps(stage);
  const LossFn fn = [&](std::span<const double> y, std::span<double> grad) {
    return value_and_gradient([&](std::span<const GradDual> yd) { return problem.eval<GradDual>(yd); }, y, grad);
  };
  AdamResult ar;
  try {
    ar = adam_minimize(fn, y0, cfg);
  } catch (const NumericError& e) {
    throw NumericError(std::string("stage ") + to_string(stage) + ": " + e.what());
  }
  result.trace = std::move(ar.trace);
  const std::size_t nf = problem.free.size();
  for (std::size_t f = 0; f < problem.frames.size(); ++f) {
    std::vector<double> x = problem.frames[f].current;
    for (std::size_t k = 0; k < nf; ++k) x[problem.free[k]] = ar.x[f * nf + k];
    result.params.push_back(BodyParams::unflatten(problem.layout, x));
  }
  return result;
}

PipelineResult run_all_stages(const SkinnedBody& body, const PinholeCamera& cam, std::span<const FrameInput> frames,
                              const TrackerOptions& options) {
  PipelineResult out;
  for (const FrameInput& f : frames) out.params.push_back(f.init);
  for (Stage stage : {Stage::kBody, Stage::kHead, Stage::kHand}) {
    if (stage == Stage::kHead && is_side(options.view)) continue;
    StageResult r = run_stage(body, cam, frames, out.params, stage, options);
    out.params = std::move(r.params);
    out.traces.emplace_back(stage, std::move(r.trace));
  }
  return out;
}

std::string traces_to_csv(const std::vector<std::pair<Stage, std::vector<double>>>& traces) {
  std::string out = "stage,step,loss\n";
  char buf[64];
  for (const auto& [stage, trace] : traces) {
    for (std::size_t i = 0; i < trace.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", trace[i]);
      out += std::string(to_string(stage)) + "," + std::to_string(i) + "," + buf + "\n";
    }
  }
  return out;
}

}  // namespace dualuv
