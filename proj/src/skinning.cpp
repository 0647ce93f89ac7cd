#include "dualuv/skinning.hpp"

#include "dualuv/bytes.hpp"

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dualuv {

using json = nlohmann::json;

const char* to_string(JointGroup group) {
  switch (group) {
    case JointGroup::kBody: return "body";
    case JointGroup::kLeftHand: return "lhand";
    case JointGroup::kRightHand: return "rhand";
    case JointGroup::kJaw: return "jaw";
  }
  return "body";
}

JointGroup joint_group_from_string(const std::string& name) {
  if (name == "body") return JointGroup::kBody;
  if (name == "lhand") return JointGroup::kLeftHand;
  if (name == "rhand") return JointGroup::kRightHand;
  if (name == "jaw") return JointGroup::kJaw;
  throw Error("unknown joint group '" + name + "'");
}

SkinnedBody::SkinnedBody(TriMesh rest_mesh, std::vector<Joint> joints,
                         std::vector<std::vector<SkinWeight>> weights,
                         Eigen::MatrixXd shape_basis, Eigen::MatrixXd expr_basis)
    : rest_mesh_(std::move(rest_mesh)),
      joints_(std::move(joints)),
      weights_(std::move(weights)),
      shape_basis_(std::move(shape_basis)),
      expr_basis_(std::move(expr_basis)) {
  const int nj = joint_count();
  if (nj == 0) throw Error("skinned body needs at least one joint");
  for (int j = 0; j < nj; ++j) {
    const int p = joints_[j].parent;
    if (j == 0 && p != -1) throw Error("joint 0 must be the root");
    if (j > 0 && (p < 0 || p >= j)) {
      throw Error("joint '" + joints_[j].name + "' parent index must precede it");
    }
  }
  const std::size_t nv = rest_mesh_.vertex_count();
  if (weights_.size() != nv) throw Error("skin weights must cover every vertex");
  for (std::size_t v = 0; v < nv; ++v) {
    double sum = 0.0;
    for (const auto& w : weights_[v]) {
      if (w.joint < 0 || w.joint >= nj) throw Error("skin weight references missing joint");
      if (w.weight < 0.0) throw Error("negative skin weight at vertex " + std::to_string(v));
      sum += w.weight;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw Error("skin weights at vertex " + std::to_string(v) + " sum to " + std::to_string(sum));
    }
  }
  for (const auto* basis : {&shape_basis_, &expr_basis_}) {
    if (basis->size() > 0 && basis->rows() != static_cast<Eigen::Index>(3 * nv)) {
      throw Error("basis rows must equal 3 * vertex count");
    }
  }
  if (shape_basis_.size() == 0) shape_basis_.resize(static_cast<Eigen::Index>(3 * nv), 0);
  if (expr_basis_.size() == 0) expr_basis_.resize(static_cast<Eigen::Index>(3 * nv), 0);
}

std::optional<int> SkinnedBody::find_joint(const std::string& name) const {
  for (int j = 0; j < joint_count(); ++j)
    if (joints_[j].name == name) return j;
  return std::nullopt;
}

int SkinnedBody::joint_index(const std::string& name) const {
  auto j = find_joint(name);
  if (!j) throw Error("body has no joint named '" + name + "'");
  return *j;
}

std::vector<int> SkinnedBody::region_vertices(int joint) const {
  std::vector<char> in_subtree(joint_count(), 0);
  in_subtree[joint] = 1;
  for (int j = joint + 1; j < joint_count(); ++j) {
    const int p = joints_[j].parent;
    if (p >= 0 && in_subtree[p]) in_subtree[j] = 1;
  }
  std::vector<int> out;
  for (std::size_t v = 0; v < weights_.size(); ++v) {
    int best = -1;
    double best_w = -1.0;
    for (const auto& w : weights_[v]) {
      if (w.weight > best_w) {
        best_w = w.weight;
        best = w.joint;
      }
    }
    if (best >= 0 && in_subtree[best]) out.push_back(static_cast<int>(v));
  }
  return out;
}

SkinnedBody SkinnedBody::with_rest_vertices(std::vector<Eigen::Vector3d> vertices) const {
  return SkinnedBody(rest_mesh_.with_vertices(std::move(vertices)), joints_, weights_,
                     shape_basis_, expr_basis_);
}

PosedMesh lbs_pose(const SkinnedBody& body, std::span<const Eigen::Vector3d> joint_rotations,
                   const Eigen::Vector3d& global_rotation, const Eigen::Vector3d& translation,
                   std::span<const double> shape, std::span<const double> expr) {
  std::vector<double> shape_full(body.shape_count(), 0.0);
  std::vector<double> expr_full(body.expr_count(), 0.0);
  if (!shape.empty()) {
    if (static_cast<int>(shape.size()) != body.shape_count()) {
      throw Error("lbs_pose: shape coefficient count mismatch");
    }
    shape_full.assign(shape.begin(), shape.end());
  }
  if (!expr.empty()) {
    if (static_cast<int>(expr.size()) != body.expr_count()) {
      throw Error("lbs_pose: expression coefficient count mismatch");
    }
    expr_full.assign(expr.begin(), expr.end());
  }
  auto posed = lbs_pose<double>(body, joint_rotations, global_rotation, translation,
                                std::span<const double>(shape_full),
                                std::span<const double>(expr_full));
  return PosedMesh{body.rest_mesh().with_vertices(std::move(posed.vertices)), std::move(posed.joints)};
}

PosedMesh canonical_pose(const SkinnedBody& body) {
  std::vector<Eigen::Vector3d> zero(body.joint_count(), Eigen::Vector3d::Zero());
  return lbs_pose(body, zero, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero());
}

// ---------------------------------------------------------------------------

SimilarityTransform estimate_similarity(std::span<const Eigen::Vector3d> src,
                                        std::span<const Eigen::Vector3d> dst) {
  if (src.size() != dst.size()) throw Error("estimate_similarity: point lists differ in length");
  if (src.size() < 3) throw Error("estimate_similarity: need at least 3 correspondences");
  const double n = static_cast<double>(src.size());
  Eigen::Vector3d mu_s = Eigen::Vector3d::Zero();
  Eigen::Vector3d mu_d = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= n;
  mu_d /= n;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d src_scatter = Eigen::Matrix3d::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Eigen::Vector3d a = src[i] - mu_s;
    const Eigen::Vector3d b = dst[i] - mu_d;
    cov += b * a.transpose();
    src_scatter += a * a.transpose();
    var_s += a.squaredNorm();
  }
  cov /= n;
  var_s /= n;

  const Eigen::JacobiSVD<Eigen::Matrix3d> scatter_svd(src_scatter);
  const Eigen::Vector3d sv = scatter_svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
    throw Error("estimate_similarity: source points are collinear or coincident");
  }

  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s(2, 2) = -1.0;
  SimilarityTransform out;
  out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  out.scale = (svd.singularValues().asDiagonal() * s).trace() / var_s;
  if (!(out.scale > 0.0)) throw Error("estimate_similarity: degenerate target configuration");
  out.translation = mu_d - out.scale * out.rotation * mu_s;
  return out;
}

SkinnedBody apply_head_replacement(const SkinnedBody& body, const HeadReplacement& head) {
  if (head.body_vertices.size() != head.template_vertices.size()) {
    throw Error("head replacement: vertex table sizes differ");
  }
  const SimilarityTransform xf = estimate_similarity(head.anchor_template, head.anchor_body);
  std::vector<Eigen::Vector3d> verts = body.rest_mesh().vertices();
  for (std::size_t i = 0; i < head.body_vertices.size(); ++i) {
    const int v = head.body_vertices[i];
    if (v < 0 || v >= static_cast<int>(verts.size())) throw Error("head replacement: vertex out of range");
    verts[v] = xf.apply(head.template_vertices[i]);
  }
  return body.with_rest_vertices(std::move(verts));
}

namespace {

Eigen::Vector3d vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw IoError("expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::vector<Eigen::Vector3d> points_from_json(const json& j) {
  std::vector<Eigen::Vector3d> out;
  for (const auto& p : j) out.push_back(vec3_from_json(p));
  return out;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace

HeadReplacement read_head_replacement(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    HeadReplacement h;
    h.body_vertices = j.at("body_vertices").get<std::vector<int>>();
    h.template_vertices = points_from_json(j.at("template_vertices"));
    h.anchor_template = points_from_json(j.at("anchor_template"));
    h.anchor_body = points_from_json(j.at("anchor_body"));
    return h;
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Tube body

namespace {

struct Segment {
  Eigen::Vector3d from;
  Eigen::Vector3d to;
  int driver;  // joint whose rotation moves the segment
  double radius;
};

}  // namespace

SkinnedBody make_tube_body(const TubeBodyOptions& opt) {
  if (opt.sides < 3 || opt.rings < 2) throw Error("tube body needs sides >= 3 and rings >= 2");
  std::vector<Joint> joints = {
      {"pelvis", -1, {0.0, 0.0, 0.0}, JointGroup::kBody},
      {"spine", 0, {0.0, 0.25, 0.0}, JointGroup::kBody},
      {"neck", 1, {0.0, 0.5, 0.0}, JointGroup::kBody},
      {"head", 2, {0.0, 0.62, 0.0}, JointGroup::kBody},
      {"left_ear", 3, {0.08, 0.7, 0.0}, JointGroup::kBody},
      {"right_ear", 3, {-0.08, 0.7, 0.0}, JointGroup::kBody},
      {"left_shoulder", 1, {0.18, 0.46, 0.0}, JointGroup::kBody},
      {"right_shoulder", 1, {-0.18, 0.46, 0.0}, JointGroup::kBody},
      {"left_elbow", 6, {0.42, 0.34, 0.02}, JointGroup::kBody},
      {"right_elbow", 7, {-0.42, 0.34, 0.02}, JointGroup::kBody},
      {"left_wrist", 8, {0.62, 0.22, 0.06}, JointGroup::kBody},
      {"right_wrist", 9, {-0.62, 0.22, 0.06}, JointGroup::kBody},
      {"left_hip", 0, {0.1, -0.06, 0.0}, JointGroup::kBody},
      {"right_hip", 0, {-0.1, -0.06, 0.0}, JointGroup::kBody},
      {"left_knee", 12, {0.12, -0.46, 0.02}, JointGroup::kBody},
      {"right_knee", 13, {-0.12, -0.46, 0.02}, JointGroup::kBody},
  };
  const int nj = static_cast<int>(joints.size());
  std::vector<int> children(nj, 0);
  for (int j = 1; j < nj; ++j) ++children[joints[j].parent];

  std::vector<Segment> segments;
  auto is_torso = [](int driver) { return driver == 0 || driver == 1; };
  for (int j = 1; j < nj; ++j) {
    const int p = joints[j].parent;
    const bool lateral = joints[j].name.find("shoulder") != std::string::npos ||
                         joints[j].name.find("hip") != std::string::npos ||
                         joints[j].name.find("ear") != std::string::npos;
    double r = opt.limb_radius;
    if (is_torso(p) && !lateral) r = opt.torso_radius;
    if (joints[j].name == "head") r = 0.06;
    if (joints[j].name.find("ear") != std::string::npos) r = 0.02;
    segments.push_back({joints[p].rest_position, joints[j].rest_position, p, r});
  }
  for (int j = 1; j < nj; ++j) {
    if (children[j] > 0 && joints[j].name != "head") continue;
    const int p = joints[j].parent;
    Eigen::Vector3d dir = (joints[j].rest_position - joints[p].rest_position).normalized();
    double len = 0.15;
    double r = opt.limb_radius * 0.8;
    if (joints[j].name == "head") {
      dir = Eigen::Vector3d::UnitY();
      len = 0.2;
      r = 0.09;
    } else if (joints[j].name.find("ear") != std::string::npos) {
      len = 0.04;
      r = 0.018;
    } else if (joints[j].name.find("knee") != std::string::npos) {
      len = 0.4;
      r = opt.limb_radius;
    }
    segments.push_back({joints[j].rest_position, joints[j].rest_position + len * dir, j, r});
  }

  std::vector<Eigen::Vector3d> verts;
  std::vector<Face> faces;
  std::vector<std::vector<SkinWeight>> weights;
  std::vector<Eigen::Vector3d> radial_dirs;
  std::vector<double> radii;
  std::vector<int> vert_driver;
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(segments.size()))));
  const double cell = 1.0 / grid;
  const double pad = 0.04 * cell;

  for (std::size_t si = 0; si < segments.size(); ++si) {
    const Segment& seg = segments[si];
    const Eigen::Vector3d axis = (seg.to - seg.from).normalized();
    Eigen::Vector3d ref = std::abs(axis.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
    const Eigen::Vector3d e1 = axis.cross(ref).normalized();
    const Eigen::Vector3d e2 = axis.cross(e1);
    const int base = static_cast<int>(verts.size());
    const int parent = joints[seg.driver].parent;
    for (int r = 0; r < opt.rings; ++r) {
      const double t = static_cast<double>(r) / (opt.rings - 1);
      for (int s = 0; s < opt.sides; ++s) {
        const double a = 2.0 * std::numbers::pi * s / opt.sides;
        const Eigen::Vector3d radial = std::cos(a) * e1 + std::sin(a) * e2;
        verts.push_back(seg.from + t * (seg.to - seg.from) + seg.radius * radial);
        radial_dirs.push_back(radial);
        radii.push_back(seg.radius);
        vert_driver.push_back(seg.driver);
        if (r == 0 && parent >= 0) {
          weights.push_back({{seg.driver, 0.5}, {parent, 0.5}});
        } else {
          weights.push_back({{seg.driver, 1.0}});
        }
      }
    }
    const double cu = (si % grid) * cell + pad;
    const double cv = (si / grid) * cell + pad;
    const double span = cell - 2.0 * pad;
    auto uv_of = [&](int r, int s) {
      return Eigen::Vector2d(cu + span * s / opt.sides, cv + span * r / (opt.rings - 1));
    };
    for (int r = 0; r + 1 < opt.rings; ++r) {
      for (int s = 0; s < opt.sides; ++s) {
        const int s1 = (s + 1) % opt.sides;
        const int a = base + r * opt.sides + s;
        const int b = base + r * opt.sides + s1;
        const int c = base + (r + 1) * opt.sides + s1;
        const int d = base + (r + 1) * opt.sides + s;
        // Outward winding: radial x axis is the outward normal.
        faces.push_back(Face{{Corner{a, uv_of(r, s)}, Corner{b, uv_of(r, s + 1)},
                              Corner{c, uv_of(r + 1, s + 1)}}});
        faces.push_back(Face{{Corner{a, uv_of(r, s)}, Corner{c, uv_of(r + 1, s + 1)},
                              Corner{d, uv_of(r + 1, s)}}});
      }
    }
  }

  const auto nv = static_cast<Eigen::Index>(verts.size());
  Eigen::MatrixXd shape(3 * nv, opt.shape_components);
  shape.setZero();
  for (Eigen::Index v = 0; v < nv; ++v) {
    if (opt.shape_components > 0) shape.block<3, 1>(3 * v, 0) = 0.2 * radii[v] * radial_dirs[v];
    if (opt.shape_components > 1) shape(3 * v + 1, 1) = 0.05 * verts[v].y();
  }
  Eigen::MatrixXd expr(3 * nv, opt.expr_components);
  expr.setZero();
  for (Eigen::Index v = 0; v < nv; ++v) {
    const int drv = vert_driver[v];
    const bool head_region = drv == 3 || drv == 4 || drv == 5;
    if (!head_region) continue;
    if (opt.expr_components > 0) expr.block<3, 1>(3 * v, 0) = 0.01 * radial_dirs[v];
    if (opt.expr_components > 1) expr(3 * v + 2, 1) = 0.01 * (verts[v].y() - 0.62);
  }

  TriMesh mesh(std::move(verts), std::move(faces));
  // Tube winding: check one face against its radial direction and flip all if needed.
  const Eigen::Vector3d n0 = mesh.face_normal(0);
  if (n0.dot(radial_dirs[mesh.faces()[0].v(0)]) < 0.0) {
    std::vector<Face> flipped = mesh.faces();
    for (auto& f : flipped) std::swap(f.corners[1], f.corners[2]);
    mesh = TriMesh(mesh.vertices(), std::move(flipped));
  }
  return SkinnedBody(std::move(mesh), std::move(joints), std::move(weights), std::move(shape),
                     std::move(expr));
}

// ---------------------------------------------------------------------------
// Rig files

SkinnedBody read_rig(const std::filesystem::path& header_path) {
  const json header = read_json_file(header_path);
  try {
    if (header.value("format", "") != "dualuv-rig") throw IoError("not a dualuv rig header");
    if (header.value("version", 0) != 1) throw IoError("unsupported rig version");
    const auto dir = header_path.parent_path();
    TriMesh mesh = read_obj(dir / header.at("mesh").get<std::string>());
    std::ifstream pin(dir / header.at("payload").get<std::string>(), std::ios::binary);
    if (!pin) throw IoError("cannot open rig payload");
    std::stringstream ss;
    ss << pin.rdbuf();
    const std::string payload = ss.str();

    std::vector<Joint> joints;
    for (const auto& jj : header.at("joints")) {
      joints.push_back(Joint{jj.at("name").get<std::string>(), jj.at("parent").get<int>(),
                             vec3_from_json(jj.at("position")),
                             joint_group_from_string(jj.value("group", "body"))});
    }
    const std::size_t nv = mesh.vertex_count();
    if (header.at("vertex_count").get<std::size_t>() != nv) throw IoError("rig vertex count mismatch");

    auto need = [&](std::size_t offset, std::size_t len) {
      if (offset + len > payload.size()) throw IoError("rig payload truncated");
    };
    std::vector<std::vector<SkinWeight>> weights(nv);
    const auto& wj = header.at("weights");
    const std::size_t woff = wj.at("offset").get<std::size_t>();
    const std::size_t wcount = wj.at("count").get<std::size_t>();
    need(woff, wcount * 16);
    for (std::size_t k = 0; k < wcount; ++k) {
      const char* p = payload.data() + woff + 16 * k;
      const auto v = bytes::get<std::uint32_t>(p);
      const auto j = bytes::get<std::uint32_t>(p + 4);
      const auto w = bytes::get<double>(p + 8);
      if (v >= nv) throw IoError("rig weight references missing vertex");
      weights[v].push_back(SkinWeight{static_cast<int>(j), w});
    }
    auto read_basis = [&](const char* key) {
      Eigen::MatrixXd m;
      if (!header.contains(key)) return m;
      const auto& bj = header.at(key);
      const std::size_t off = bj.at("offset").get<std::size_t>();
      const auto cols = bj.at("columns").get<Eigen::Index>();
      const auto rows = static_cast<Eigen::Index>(3 * nv);
      need(off, static_cast<std::size_t>(rows * cols) * 8);
      m.resize(rows, cols);
      for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r)
          m(r, c) = bytes::get<double>(payload.data() + off + 8 * static_cast<std::size_t>(c * rows + r));
      return m;
    };
    Eigen::MatrixXd shape = read_basis("shape_basis");
    Eigen::MatrixXd expr = read_basis("expr_basis");
    try {
      return SkinnedBody(std::move(mesh), std::move(joints), std::move(weights), std::move(shape),
                         std::move(expr));
    } catch (const IoError&) {
      throw;
    } catch (const Error& e) {
      throw IoError(std::string("rig: ") + e.what());
    }
  } catch (const json::exception& e) {
    throw IoError(header_path.string() + ": " + e.what());
  }
}

void write_rig(const std::filesystem::path& header_path, const SkinnedBody& body) {
  const auto dir = header_path.parent_path();
  const std::string stem = header_path.stem().string();
  const std::string mesh_name = stem + ".obj";
  const std::string payload_name = stem + ".bin";
  write_obj(dir / mesh_name, body.rest_mesh());

  std::string payload;
  std::size_t wcount = 0;
  for (std::size_t v = 0; v < body.weights().size(); ++v) {
    for (const auto& w : body.weights()[v]) {
      bytes::put<std::uint32_t>(payload, static_cast<std::uint32_t>(v));
      bytes::put<std::uint32_t>(payload, static_cast<std::uint32_t>(w.joint));
      bytes::put<double>(payload, w.weight);
      ++wcount;
    }
  }
  json header;
  header["format"] = "dualuv-rig";
  header["version"] = 1;
  header["mesh"] = mesh_name;
  header["payload"] = payload_name;
  header["vertex_count"] = body.rest_mesh().vertex_count();
  header["weights"] = {{"offset", 0}, {"count", wcount}};
  auto put_basis = [&](const char* key, const Eigen::MatrixXd& m) {
    header[key] = {{"offset", payload.size()}, {"columns", m.cols()}};
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) bytes::put<double>(payload, m(r, c));
  };
  put_basis("shape_basis", body.shape_basis());
  put_basis("expr_basis", body.expr_basis());
  json joints = json::array();
  for (const auto& j : body.joints()) {
    joints.push_back({{"name", j.name},
                      {"parent", j.parent},
                      {"position", {j.rest_position.x(), j.rest_position.y(), j.rest_position.z()}},
                      {"group", to_string(j.group)}});
  }
  header["joints"] = joints;

  std::ofstream pout(dir / payload_name, std::ios::binary);
  if (!pout) throw IoError("cannot write rig payload");
  pout.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  std::ofstream hout(header_path);
  if (!hout) throw IoError("cannot write " + header_path.string());
  hout << header.dump(2) << '\n';
}

SkinnedBody load_body(const std::string& spec) {
  if (spec.empty() || spec == "builtin:tube") return make_tube_body();
  return read_rig(spec);
}

}  // namespace dualuv
