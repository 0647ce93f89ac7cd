#pragma once

// Fixtures and brute-force oracles shared by the unit tests and the
// acceptance binary.

#include "dualuv/camera.hpp"
#include "dualuv/gaussians.hpp"
#include "dualuv/mesh.hpp"
#include "dualuv/random.hpp"
#include "dualuv/raster.hpp"
#include "dualuv/rotation.hpp"
#include "dualuv/skinning.hpp"
#include "dualuv/tracker.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

namespace dualuv::testing {

/// Camera on the -z axis looking at the origin, image y along world +y.
inline PinholeCamera front_camera(int size, double distance, double fov_deg = 30.0) {
  const double f = focal_for_fov(size, fov_deg);
  return look_at(Eigen::Vector3d(0.0, 0.0, -distance), Eigen::Vector3d::Zero(), Eigen::Vector3d(0.0, -1.0, 0.0), f,
                 f, 0.5 * size, 0.5 * size, size, size);
}

inline TriMesh merge_meshes(const TriMesh& a, const TriMesh& b) {
  std::vector<Eigen::Vector3d> v = a.vertices();
  v.insert(v.end(), b.vertices().begin(), b.vertices().end());
  std::vector<Face> f = a.faces();
  const int off = static_cast<int>(a.vertex_count());
  for (Face face : b.faces()) {
    for (auto& c : face.corners) c.vertex += off;
    f.push_back(face);
  }
  return TriMesh(std::move(v), std::move(f));
}

/// Moller-Trumbore; returns the ray parameter or +inf.
inline double ray_triangle(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& a,
                           const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  const Eigen::Vector3d e1 = b - a;
  const Eigen::Vector3d e2 = c - a;
  const Eigen::Vector3d p = d.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-14) return std::numeric_limits<double>::infinity();
  const double inv = 1.0 / det;
  const Eigen::Vector3d s = o - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::numeric_limits<double>::infinity();
  const Eigen::Vector3d q = s.cross(e1);
  const double v = d.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::numeric_limits<double>::infinity();
  const double t = e2.dot(q) * inv;
  return t > 0.0 ? t : std::numeric_limits<double>::infinity();
}

/// Distance from the camera center to the first triangle hit on the ray
/// through p, or +inf.
inline double first_hit_distance(const TriMesh& mesh, const PinholeCamera& cam, const Eigen::Vector3d& p) {
  const Eigen::Vector3d o = cam.center();
  const Eigen::Vector3d d = (p - o).normalized();
  double best = std::numeric_limits<double>::infinity();
  for (const Face& face : mesh.faces()) {
    best = std::min(best, ray_triangle(o, d, mesh.vertices()[face.v(0)], mesh.vertices()[face.v(1)],
                                       mesh.vertices()[face.v(2)]));
  }
  return best;
}

/// A point is visible when it projects into the image in front of the camera
/// and no triangle crosses the segment from the camera center to it.
inline bool brute_force_visible(const TriMesh& mesh, const PinholeCamera& cam, const Eigen::Vector3d& p,
                                double rel_eps = 1e-6) {
  const Projection pr = project(cam, p);
  if (pr.behind) return false;
  if (pr.pixel.x() < 0.0 || pr.pixel.y() < 0.0 || pr.pixel.x() >= cam.width || pr.pixel.y() >= cam.height) {
    return false;
  }
  const Eigen::Vector3d o = cam.center();
  const double dist = (p - o).norm();
  const Eigen::Vector3d d = (p - o) / dist;
  for (std::size_t f = 0; f < mesh.face_count(); ++f) {
    const Face& face = mesh.faces()[f];
    const double t = ray_triangle(o, d, mesh.vertices()[face.v(0)], mesh.vertices()[face.v(1)],
                                  mesh.vertices()[face.v(2)]);
    if (t < dist * (1.0 - rel_eps)) return false;
  }
  return true;
}

/// Straight per-pixel evaluation of every gaussian: own projection, own
/// sort, no tiling or bounding boxes.
inline FeatureMap brute_force_composite(const GaussianSet& g, const PinholeCamera& cam,
                                        const Eigen::Vector3d& background, double near_plane = 1e-6) {
  struct P {
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
    double depth;
    std::size_t index;
    bool ok;
  };
  std::vector<P> ps;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Eigen::Vector3d c = cam.rotation * g.positions[i] + cam.translation;
    P p{Eigen::Vector2d::Zero(), Eigen::Matrix2d::Zero(), c.z(), i, c.z() > near_plane};
    if (p.ok) {
      const Eigen::Matrix3d r = g.rotations[i].normalized().toRotationMatrix();
      const Eigen::Matrix3d sigma = r * g.scales[i].cwiseAbs2().asDiagonal() * r.transpose();
      Eigen::Matrix<double, 2, 3> j;
      j << cam.fx / c.z(), 0.0, -cam.fx * c.x() / (c.z() * c.z()), 0.0, cam.fy / c.z(),
          -cam.fy * c.y() / (c.z() * c.z());
      const Eigen::Matrix<double, 2, 3> m = j * cam.rotation;
      p.cov = m * sigma * m.transpose() + 0.3 * Eigen::Matrix2d::Identity();
      p.mean = Eigen::Vector2d(cam.fx * c.x() / c.z() + cam.cx, cam.fy * c.y() / c.z() + cam.cy);
    }
    ps.push_back(p);
  }
  std::sort(ps.begin(), ps.end(), [](const P& a, const P& b) {
    return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
  });
  FeatureMap out(cam.height, cam.width, 4);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      double t = 1.0;
      Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
      for (const P& p : ps) {
        if (!p.ok || g.opacities[p.index] <= 0.0) continue;
        const Eigen::Vector2d d(x + 0.5 - p.mean.x(), y + 0.5 - p.mean.y());
        const double m2 = d.dot(p.cov.inverse() * d);
        if (m2 > 9.0) continue;
        const double a = g.opacities[p.index] * std::exp(-0.5 * m2);
        rgb += g.colors[p.index] * a * t;
        t *= 1.0 - a;
      }
      rgb += t * background;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = rgb[c];
      out.at(y, x, 3) = 1.0 - t;
    }
  }
  return out;
}

/// Random gaussians in front of a camera on the -z axis at distance 4.
inline GaussianSet random_gaussians(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  GaussianSet g;
  for (std::size_t i = 0; i < n; ++i) {
    g.positions.emplace_back(rng.uniform() - 0.5, rng.uniform() - 0.5, rng.uniform() - 0.5);
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    g.rotations.push_back(q.normalized());
    g.scales.emplace_back(0.02 + 0.1 * rng.uniform(), 0.02 + 0.1 * rng.uniform(), 0.02 + 0.1 * rng.uniform());
    g.colors.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
    g.opacities.push_back(0.2 + 0.79 * rng.uniform());
    g.anchors.emplace_back();
  }
  return g;
}

// ---------------------------------------------------------------------------
// Synthetic pose recovery on the tube body.

struct RecoveryFixture {
  SkinnedBody body;
  ParamLayout layout;
  PinholeCamera cam;
  BodyParams truth;
  std::vector<std::string> labels;
  std::shared_ptr<DistanceField> mask;
  FrameInput frame;
};

/// Known pose, keypoints on every joint plus every 7th vertex, a silhouette
/// mask dilated by 2 px, and a 5 degree random-axis perturbation of the root
/// and every body joint.
inline RecoveryFixture make_recovery_fixture(std::uint64_t seed, double limb_radius = 0.1,
                                             double perturb_deg = 5.0) {
  RecoveryFixture fx;
  TubeBodyOptions to;
  to.limb_radius = limb_radius;
  fx.body = make_tube_body(to);
  fx.layout = make_layout(fx.body);
  const double f = focal_for_fov(512, 30.0);
  fx.cam = PinholeCamera{f, f, 256.0, 256.0, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero(), 512, 512};
  fx.cam.rotation(1, 1) = -1.0;
  fx.cam.rotation(2, 2) = -1.0;

  Rng rng(seed);
  fx.truth = BodyParams::zeros(fx.layout);
  fx.truth.glob = Eigen::Vector3d(0.0, 0.2, 0.0);
  for (std::size_t k = 0; k < fx.layout.body_joints.size(); ++k) {
    if (fx.body.joints()[fx.layout.body_joints[k]].name == "spine") {
      fx.truth.body[k] = Eigen::Vector3d(0.0, 0.1, 0.0);
      continue;
    }
    fx.truth.body[k] = Eigen::Vector3d(rng.uniform() - 0.5, rng.uniform() - 0.5, rng.uniform() - 0.5) * 0.4;
  }
  fx.truth.t = Eigen::Vector3d(0.0, -0.1, -3.0);

  for (const auto& j : fx.body.joints()) fx.labels.push_back(j.name);
  for (std::size_t v = 0; v < fx.body.rest_mesh().vertex_count(); v += 7) fx.labels.push_back("v:" + std::to_string(v));
  fx.frame.obs.keypoints = synthesize_keypoints(fx.body, fx.truth, fx.cam, fx.labels);

  const auto x = fx.truth.flatten(fx.layout);
  const auto posed = pose_flat<double>(fx.body, fx.layout, std::span<const double>(x));
  const GrayImage sil = silhouette(fx.body.rest_mesh().with_vertices(posed.vertices), fx.cam);
  fx.mask = std::make_shared<DistanceField>(distance_transform(dilate(sil, 2.0)));
  fx.frame.mask = fx.mask.get();

  fx.frame.init = fx.truth;
  Rng prng(seed + 100);
  const auto perturb = [&](Eigen::Vector3d& w) {
    Eigen::Vector3d a(prng.normal(), prng.normal(), prng.normal());
    w += a.normalized() * (perturb_deg * std::numbers::pi / 180.0);
  };
  perturb(fx.frame.init.glob);
  for (auto& w : fx.frame.init.body) perturb(w);
  return fx;
}

/// Mean pixel distance of the projected joints from their true positions.
inline double joint_reprojection_error(const RecoveryFixture& fx, const BodyParams& p) {
  const int nj = fx.body.joint_count();
  const std::vector<std::string> joints(fx.labels.begin(), fx.labels.begin() + nj);
  const auto a = synthesize_keypoints(fx.body, p, fx.cam, joints);
  const auto b = synthesize_keypoints(fx.body, fx.truth, fx.cam, joints);
  double e = 0.0;
  for (int i = 0; i < nj; ++i) e += (a[i].pixel - b[i].pixel).norm();
  return e / nj;
}

/// Mean geodesic angle (degrees) between estimated and true local rotations
/// over the root and every body joint.
inline double joint_angle_error_deg(const BodyParams& p, const BodyParams& truth) {
  double sum = geodesic_angle(axis_angle_to_matrix<double>(p.glob), axis_angle_to_matrix<double>(truth.glob));
  for (std::size_t k = 0; k < p.body.size(); ++k) {
    sum += geodesic_angle(axis_angle_to_matrix<double>(p.body[k]), axis_angle_to_matrix<double>(truth.body[k]));
  }
  return sum / static_cast<double>(p.body.size() + 1) * 180.0 / std::numbers::pi;
}

}  // namespace dualuv::testing
