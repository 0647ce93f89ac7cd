#pragma once

// Proxy-mesh refinement: robust keypoint reprojection, silhouette, priors and
// temporal smoothness minimized with Adam in body, head and hand stages.
// Gradients come from forward-mode duals over the free parameters.

#include "dualuv/camera.hpp"
#include "dualuv/dual.hpp"
#include "dualuv/raster.hpp"
#include "dualuv/skinning.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dualuv {

/// Flat parameter layout: glob(3), body joints(3 each), left hand joints,
/// right hand joints, jaw(3), beta, psi, t(3). Body joints are the non-root
/// joints of the body group, in rig order.
struct ParamLayout {
  std::vector<int> body_joints;
  std::vector<int> lhand_joints;
  std::vector<int> rhand_joints;
  int jaw_joint = -1;  // first jaw-group joint; -1 leaves the jaw block unused
  int shape = 0;
  int expr = 0;

  int glob() const { return 0; }
  int body() const { return 3; }
  int lhand() const { return body() + 3 * static_cast<int>(body_joints.size()); }
  int rhand() const { return lhand() + 3 * static_cast<int>(lhand_joints.size()); }
  int jaw() const { return rhand() + 3 * static_cast<int>(rhand_joints.size()); }
  int beta() const { return jaw() + 3; }
  int psi() const { return beta() + shape; }
  int trans() const { return psi() + expr; }
  int size() const { return trans() + 3; }
  /// Entries covered by pose_reg: glob through jaw.
  int pose_end() const { return beta(); }
};

ParamLayout make_layout(const SkinnedBody& body);

struct BodyParams {
  Eigen::Vector3d glob = Eigen::Vector3d::Zero();
  std::vector<Eigen::Vector3d> body;
  std::vector<Eigen::Vector3d> lhand;
  std::vector<Eigen::Vector3d> rhand;
  Eigen::Vector3d jaw = Eigen::Vector3d::Zero();
  std::vector<double> beta;
  std::vector<double> psi;
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  static BodyParams zeros(const ParamLayout& layout);
  static BodyParams unflatten(const ParamLayout& layout, std::span<const double> x);
  std::vector<double> flatten(const ParamLayout& layout) const;  // throws Error on a size mismatch
};

/// JSON with one array per block plus the joint names of each pose block.
std::string params_to_json(const SkinnedBody& body, const std::vector<BodyParams>& frames);
std::vector<BodyParams> parse_params(const SkinnedBody& body, const std::string& text);
std::vector<BodyParams> read_params(const SkinnedBody& body, const std::filesystem::path& path);
void write_params(const std::filesystem::path& path, const SkinnedBody& body,
                  const std::vector<BodyParams>& frames);

/// Posed joints and vertices for a flat parameter vector.
template <class T>
PosedBody<T> pose_flat(const SkinnedBody& body, const ParamLayout& layout, std::span<const T> x,
                       VertexSelection selection = std::nullopt) {
  if (static_cast<int>(x.size()) != layout.size()) throw Error("pose_flat: parameter vector has the wrong size");
  auto v3 = [&](int off) { return Vec3T<T>(x[off], x[off + 1], x[off + 2]); };
  std::vector<Vec3T<T>> rot(body.joint_count(), Vec3T<T>(T(0.0), T(0.0), T(0.0)));
  for (std::size_t k = 0; k < layout.body_joints.size(); ++k) rot[layout.body_joints[k]] = v3(layout.body() + 3 * k);
  for (std::size_t k = 0; k < layout.lhand_joints.size(); ++k)
    rot[layout.lhand_joints[k]] = v3(layout.lhand() + 3 * k);
  for (std::size_t k = 0; k < layout.rhand_joints.size(); ++k)
    rot[layout.rhand_joints[k]] = v3(layout.rhand() + 3 * k);
  if (layout.jaw_joint >= 0) rot[layout.jaw_joint] = v3(layout.jaw());
  return lbs_pose<T>(body, std::span<const Vec3T<T>>(rot), v3(layout.glob()), v3(layout.trans()),
                     x.subspan(layout.beta(), layout.shape), x.subspan(layout.psi(), layout.expr), selection);
}

// ---------------------------------------------------------------------------
// Robust loss

inline constexpr double kGmofSigma = 100.0;

/// rho(r) = sigma^2 r^2 / (r^2 + sigma^2).
double gmof(double r, double sigma = kGmofSigma);
double gmof_derivative(double r, double sigma = kGmofSigma);

/// Same function written on the squared residual, smooth at r = 0.
template <class T>
T gmof_sq(const T& r2, double sigma) {
  const double s2 = sigma * sigma;
  return s2 * r2 / (r2 + s2);
}

// ---------------------------------------------------------------------------
// Observations

struct Keypoint {
  std::string label;  // joint name or "v:<vertex index>"
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double conf = 1.0;
};

enum class KeypointCategory { kBody, kHead, kHand };

struct ResolvedKeypoint {
  bool is_vertex = false;
  int index = 0;  // joint or vertex index
  KeypointCategory category = KeypointCategory::kBody;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double conf = 1.0;
  std::string label;
};

/// Throws Error naming the label when it matches no joint or vertex.
ResolvedKeypoint resolve_keypoint(const SkinnedBody& body, const Keypoint& kp);

struct Observations {
  std::vector<Keypoint> keypoints;
  std::vector<Keypoint> head_vertices;  // dense head targets, "v:<i>" labels
  std::vector<Keypoint> hand_vertices;  // dense hand targets
};

/// {"keypoints":[{label,x,y,conf}], "head_vertices":[...], "hand_vertices":[...]}
/// or a bare keypoint array.
Observations parse_observations(const std::string& text);
Observations read_observations(const std::filesystem::path& path);
std::string observations_to_json(const Observations& obs);

/// Projects the posed rig for each label through the same dual-number path
/// the objective uses, so residuals at the generating pose are exactly zero.
std::vector<Keypoint> synthesize_keypoints(const SkinnedBody& body, const BodyParams& params,
                                           const PinholeCamera& cam, std::span<const std::string> labels);

// ---------------------------------------------------------------------------
// Loss terms on a posed body. `slot[v]` maps a vertex index to its position
// in posed.vertices (identity when every vertex was posed).

template <class T>
T reprojection_term(const PosedBody<T>& posed, std::span<const int> slot, const PinholeCamera& cam,
                    std::span<const ResolvedKeypoint> kps, double sigma) {
  T total(0.0);
  for (const ResolvedKeypoint& k : kps) {
    const Vec3T<T>& p = k.is_vertex ? posed.vertices[slot[k.index]] : posed.joints[k.index];
    const Vec2T<T> px = project_pixel<T>(cam, p);
    const T dx = px(0) - k.pixel.x();
    const T dy = px(1) - k.pixel.y();
    total += gmof_sq<T>(dx * dx + dy * dy, sigma);
  }
  return total;
}

template <class T>
T mask_term(const PosedBody<T>& posed, const PinholeCamera& cam, const DistanceField& df) {
  if (posed.vertices.empty()) return T(0.0);
  T total(0.0);
  for (const auto& v : posed.vertices) {
    const Vec2T<T> px = project_pixel<T>(cam, v);
    total += df.sample<T>(px(0), px(1));
  }
  return total / static_cast<double>(posed.vertices.size());
}

template <class T>
T upright_term(const PosedBody<T>& posed, int pelvis, int neck, const Eigen::Vector3d& vertical) {
  using std::sqrt;
  const Vec3T<T> d = posed.joints[neck] - posed.joints[pelvis];
  const T n = sqrt(d.squaredNorm());
  return T(1.0) - (d(0) * vertical.x() + d(1) * vertical.y() + d(2) * vertical.z()) / n;
}

template <class T>
T pose_reg_term(std::span<const T> x, std::span<const double> init, int pose_end) {
  T total(0.0);
  for (int i = 0; i < pose_end; ++i) {
    const T d = x[i] - init[i];
    total += d * d;
  }
  return total;
}

/// Sum over joint pairs of 1 - |cos| between the pair direction and the view
/// direction (world frame).
template <class T>
T side_term(const PosedBody<T>& posed, std::span<const std::pair<int, int>> pairs, const Eigen::Vector3d& view) {
  using std::abs;
  using std::sqrt;
  T total(0.0);
  for (const auto& [a, b] : pairs) {
    const Vec3T<T> d = posed.joints[a] - posed.joints[b];
    const T c = (d(0) * view.x() + d(1) * view.y() + d(2) * view.z()) / sqrt(d.squaredNorm());
    total += T(1.0) - abs(c);
  }
  return total;
}

/// Mean over vertices and interior frames of ||p(t+1) - 2 p(t) + p(t-1)||^2
/// in pixels. Zero for fewer than three frames.
template <class T>
T smoothness_term(std::span<const std::vector<Vec2T<T>>> projected) {
  if (projected.size() < 3) return T(0.0);
  T total(0.0);
  std::size_t count = 0;
  for (std::size_t f = 1; f + 1 < projected.size(); ++f) {
    for (std::size_t v = 0; v < projected[f].size(); ++v) {
      const Vec2T<T> a = projected[f + 1][v] - 2.0 * projected[f][v] + projected[f - 1][v];
      total += a.squaredNorm();
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : T(0.0);
}

// Plain-double entry points for the individual terms.

struct TermValue {
  double value = 0.0;
  bool active = true;  // false when the term had nothing to evaluate
};

TermValue reprojection_loss(const SkinnedBody& body, const BodyParams& params, const PinholeCamera& cam,
                            std::span<const Keypoint> kps, double conf_thresh = 0.6,
                            bool exclude_wrists = false, double sigma = kGmofSigma);
double mask_inside_loss(const SkinnedBody& body, const BodyParams& params, const PinholeCamera& cam,
                        const DistanceField& df);
double upright_loss(const SkinnedBody& body, const BodyParams& params,
                    const Eigen::Vector3d& vertical = Eigen::Vector3d::UnitY());
TermValue smoothness_loss(const SkinnedBody& body, std::span<const BodyParams> frames, const PinholeCamera& cam);
double pose_reg_loss(const SkinnedBody& body, const BodyParams& params, const BodyParams& init);
double side_alignment_loss(const SkinnedBody& body, const BodyParams& params, const PinholeCamera& cam);

/// Ear, shoulder and hip pairs present in the rig.
std::vector<std::pair<int, int>> side_pairs(const SkinnedBody& body);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  int steps = 300;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamResult {
  std::vector<double> x;
  std::vector<double> trace;  // steps + 1 losses, trace[0] at the initial point
};

/// fn(x, grad) returns the loss and fills grad. Throws NumericError on a
/// non-finite loss or gradient, or when the loss stays above 10x its initial
/// value for 50 consecutive steps.
using LossFn = std::function<double(std::span<const double>, std::span<double>)>;
AdamResult adam_minimize(const LossFn& fn, std::vector<double> init, const AdamConfig& config);

inline constexpr int kDivergenceWindow = 50;
inline constexpr double kDivergenceFactor = 10.0;

// ---------------------------------------------------------------------------
// Stages

enum class Stage { kBody, kHead, kHand };
enum class ViewKind { kFront, kLeft, kRight, kBack };

const char* to_string(Stage stage);
const char* to_string(ViewKind view);
Stage stage_from_string(const std::string& name);
ViewKind view_from_string(const std::string& name);

struct StageWeights {
  double reproj = 0.0;
  double reg = 0.0;
  double mask = 0.0;
  double up = 0.0;
  double smo = 0.0;
  double head = 0.0;
  double hand = 0.0;
  double side = 0.0;
};

inline constexpr double kSideWeight = 1e4;

StageWeights default_weights(Stage stage);
int default_steps(Stage stage);

struct TrackerOptions {
  int steps = -1;  // <= 0 uses default_steps(stage)
  AdamConfig adam;
  double sigma = kGmofSigma;
  double conf_thresh = 0.6;
  bool upper_body = false;  // drops wrist keypoints in the body stage, enables the upright prior
  bool upright = false;     // upright prior without the upper-body wrist rule
  ViewKind view = ViewKind::kFront;
  Eigen::Vector3d vertical = Eigen::Vector3d::UnitY();
  std::optional<StageWeights> weights;  // overrides default_weights(stage)
};

/// One frame to refine: its initial parameters and observations. `mask`
/// (distance field of the foreground) may be null.
struct FrameInput {
  BodyParams init;
  Observations obs;
  const DistanceField* mask = nullptr;
};

struct StageResult {
  std::vector<BodyParams> params;
  std::vector<double> trace;
  bool smoothness_active = false;
  std::size_t active_keypoints = 0;
};

/// Parameter indices a stage may change (per frame, before view mutations).
std::vector<int> free_indices(const SkinnedBody& body, const ParamLayout& layout, Stage stage, ViewKind view);

/// Effective weights after the view-kind and upright switches.
StageWeights effective_weights(Stage stage, const TrackerOptions& options);

/// Runs one stage over all frames jointly, starting from `current` (one entry
/// per frame). pose_reg anchors to each frame's `init`.
StageResult run_stage(const SkinnedBody& body, const PinholeCamera& cam, std::span<const FrameInput> frames,
                      std::span<const BodyParams> current, Stage stage, const TrackerOptions& options);

/// Objective value and gradient over the free parameters of a stage, for
/// inspection and gradient checks. `x` concatenates the free entries of all
/// frames in frame order.
struct StageObjective {
  std::function<double(std::span<const double>, std::span<double>)> fn;
  std::vector<double> x0;
};
StageObjective make_stage_objective(const SkinnedBody& body, const PinholeCamera& cam,
                                    std::span<const FrameInput> frames, std::span<const BodyParams> current,
                                    Stage stage, const TrackerOptions& options);

struct PipelineResult {
  std::vector<BodyParams> params;
  std::vector<std::pair<Stage, std::vector<double>>> traces;
};

/// body, then head (skipped for side views), then hand.
PipelineResult run_all_stages(const SkinnedBody& body, const PinholeCamera& cam, std::span<const FrameInput> frames,
                              const TrackerOptions& options);

/// "stage,step,loss" rows.
std::string traces_to_csv(const std::vector<std::pair<Stage, std::vector<double>>>& traces);

}  // namespace dualuv
