#pragma once

// Generic articulated body with linear blend skinning, plus the similarity
// alignment used for head-region replacement.

#include "dualuv/error.hpp"
#include "dualuv/mesh.hpp"
#include "dualuv/rotation.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dualuv {

enum class JointGroup { kBody, kLeftHand, kRightHand, kJaw };

const char* to_string(JointGroup group);
JointGroup joint_group_from_string(const std::string& name);

struct Joint {
  std::string name;
  int parent = -1;  // -1 for the root
  Eigen::Vector3d rest_position = Eigen::Vector3d::Zero();
  JointGroup group = JointGroup::kBody;
};

struct SkinWeight {
  int joint = 0;
  double weight = 0.0;
};

class SkinnedBody {
 public:
  SkinnedBody() = default;

  /// Validates the joint tree (root first, parents precede children) and the
  /// weight partition (non-negative, summing to 1 within 1e-6). Bases are
  /// 3V x N column matrices laid out (x0, y0, z0, x1, ...); empty means none.
  SkinnedBody(TriMesh rest_mesh, std::vector<Joint> joints,
              std::vector<std::vector<SkinWeight>> weights,
              Eigen::MatrixXd shape_basis = {}, Eigen::MatrixXd expr_basis = {});

  const TriMesh& rest_mesh() const { return rest_mesh_; }
  const std::vector<Joint>& joints() const { return joints_; }
  const std::vector<std::vector<SkinWeight>>& weights() const { return weights_; }
  const Eigen::MatrixXd& shape_basis() const { return shape_basis_; }
  const Eigen::MatrixXd& expr_basis() const { return expr_basis_; }

  int joint_count() const { return static_cast<int>(joints_.size()); }
  int shape_count() const { return static_cast<int>(shape_basis_.cols()); }
  int expr_count() const { return static_cast<int>(expr_basis_.cols()); }

  /// Index of the joint with this name, or nullopt.
  std::optional<int> find_joint(const std::string& name) const;
  int joint_index(const std::string& name) const;  // throws Error when missing

  /// Vertices whose dominant joint belongs to the subtree rooted at `joint`.
  std::vector<int> region_vertices(int joint) const;

  /// Replaces rest vertices (e.g. after head replacement). Same count.
  SkinnedBody with_rest_vertices(std::vector<Eigen::Vector3d> vertices) const;

 private:
  TriMesh rest_mesh_;
  std::vector<Joint> joints_;
  std::vector<std::vector<SkinWeight>> weights_;
  Eigen::MatrixXd shape_basis_;
  Eigen::MatrixXd expr_basis_;
};

template <class T>
struct PosedBody {
  std::vector<Vec3T<T>> vertices;
  std::vector<Vec3T<T>> joints;
};

/// Which vertices to evaluate; empty optional means all of them.
using VertexSelection = std::optional<std::span<const int>>;

/// Linear blend skinning.
///
/// Rest vertices are displaced by the shape and expression bases, skinned by
/// the weight-blended world transforms of the per-joint local rotations (the
/// root's entry included), and finally mapped by the global rotation about
/// the world origin plus the translation. When `selection` is set, only
/// those vertices are produced (in selection order).
template <class T>
PosedBody<T> lbs_pose(const SkinnedBody& body, std::span<const Vec3T<T>> joint_rotations,
                      const Vec3T<T>& global_rotation, const Vec3T<T>& translation,
                      std::span<const T> shape, std::span<const T> expr,
                      VertexSelection selection = std::nullopt) {
  const int nj = body.joint_count();
  if (static_cast<int>(joint_rotations.size()) != nj) {
    throw Error("lbs_pose: expected " + std::to_string(nj) + " joint rotations, got " +
                std::to_string(joint_rotations.size()));
  }
  if (static_cast<int>(shape.size()) != body.shape_count()) {
    throw Error("lbs_pose: expected " + std::to_string(body.shape_count()) +
                " shape coefficients, got " + std::to_string(shape.size()));
  }
  if (static_cast<int>(expr.size()) != body.expr_count()) {
    throw Error("lbs_pose: expected " + std::to_string(body.expr_count()) +
                " expression coefficients, got " + std::to_string(expr.size()));
  }

  // World rotation and translation of every joint.
  std::vector<Mat3T<T>> rot(nj);
  std::vector<Vec3T<T>> pos(nj);
  const auto& joints = body.joints();
  for (int j = 0; j < nj; ++j) {
    const Mat3T<T> local = axis_angle_to_matrix<T>(joint_rotations[j]);
    const Vec3T<T> rest = joints[j].rest_position.template cast<T>();
    const int p = joints[j].parent;
    if (p < 0) {
      rot[j] = local;
      pos[j] = rest;
    } else {
      const Vec3T<T> bone = (joints[j].rest_position - joints[p].rest_position).template cast<T>();
      rot[j] = rot[p] * local;
      pos[j] = pos[p] + rot[p] * bone;
    }
  }
  // Skinning transform A_j(x) = rot_j * (x - rest_j) + pos_j.
  std::vector<Vec3T<T>> offset(nj);
  for (int j = 0; j < nj; ++j) {
    offset[j] = pos[j] - rot[j] * joints[j].rest_position.template cast<T>();
  }
  const Mat3T<T> glob = axis_angle_to_matrix<T>(global_rotation);

  PosedBody<T> out;
  out.joints.resize(nj);
  for (int j = 0; j < nj; ++j) out.joints[j] = glob * pos[j] + translation;

  const auto& rest = body.rest_mesh().vertices();
  const auto& sb = body.shape_basis();
  const auto& eb = body.expr_basis();
  const std::size_t count = selection ? selection->size() : rest.size();
  out.vertices.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    const int vi = selection ? (*selection)[k] : static_cast<int>(k);
    Vec3T<T> v = rest[vi].template cast<T>();
    for (int c = 0; c < body.shape_count(); ++c) {
      for (int a = 0; a < 3; ++a) v(a) += shape[c] * sb(3 * vi + a, c);
    }
    for (int c = 0; c < body.expr_count(); ++c) {
      for (int a = 0; a < 3; ++a) v(a) += expr[c] * eb(3 * vi + a, c);
    }
    Mat3T<T> blend_r = Mat3T<T>::Zero();
    Vec3T<T> blend_t = Vec3T<T>::Zero();
    for (const SkinWeight& w : body.weights()[vi]) {
      blend_r += rot[w.joint] * w.weight;
      blend_t += offset[w.joint] * w.weight;
    }
    out.vertices[k] = glob * (blend_r * v + blend_t) + translation;
  }
  return out;
}

/// Plain-double convenience: returns the posed mesh and joint positions.
struct PosedMesh {
  TriMesh mesh;
  std::vector<Eigen::Vector3d> joints;
};

PosedMesh lbs_pose(const SkinnedBody& body, std::span<const Eigen::Vector3d> joint_rotations,
                   const Eigen::Vector3d& global_rotation, const Eigen::Vector3d& translation,
                   std::span<const double> shape = {}, std::span<const double> expr = {});

/// Rest pose with zero coefficients (the canonical mesh).
PosedMesh canonical_pose(const SkinnedBody& body);

// ---------------------------------------------------------------------------

struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return scale * (rotation * p) + translation; }
};

/// Least-squares similarity mapping src onto dst (closed form via the SVD of
/// the cross-covariance). Throws Error for mismatched sizes, fewer than three
/// points, or collinear configurations.
SimilarityTransform estimate_similarity(std::span<const Eigen::Vector3d> src,
                                        std::span<const Eigen::Vector3d> dst);

/// Replacement of a vertex region by an externally tracked head.
///
/// `anchor_template` / `anchor_body` are corresponding points used to align
/// the template into the body frame; `body_vertices[i]` is overwritten with
/// the aligned `template_vertices[i]`.
struct HeadReplacement {
  std::vector<int> body_vertices;
  std::vector<Eigen::Vector3d> template_vertices;
  std::vector<Eigen::Vector3d> anchor_template;
  std::vector<Eigen::Vector3d> anchor_body;
};

SkinnedBody apply_head_replacement(const SkinnedBody& body, const HeadReplacement& head);
HeadReplacement read_head_replacement(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct TubeBodyOptions {
  int sides = 10;           // vertices around each tube
  int rings = 4;            // rings along each bone
  double limb_radius = 0.045;
  double torso_radius = 0.12;
  int shape_components = 2;  // radial girth, vertical stretch
  int expr_components = 2;   // head-region bulges
};

/// 16-joint articulated body built from tubes: pelvis, spine, neck, head,
/// ears, shoulders, elbows, wrists, hips and knees. Leaf joints get an end
/// segment so their rotation moves skinned vertices.
SkinnedBody make_tube_body(const TubeBodyOptions& options = {});

/// Rig file: JSON header (joints, mesh path, payload layout) next to a
/// little-endian binary payload holding weights and bases.
SkinnedBody read_rig(const std::filesystem::path& header);
void write_rig(const std::filesystem::path& header, const SkinnedBody& body);

/// "builtin:tube" or a rig header path.
SkinnedBody load_body(const std::string& spec);

}  // namespace dualuv
