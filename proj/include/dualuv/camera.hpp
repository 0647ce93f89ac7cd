#pragma once

#include "dualuv/rotation.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <string>

namespace dualuv {

/// Pinhole camera, OpenCV convention: x right, y down, z forward.
/// Pixel (i, j) covers [i, i+1) x [j, j+1); its center is (i + 0.5, j + 0.5).
struct PinholeCamera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> camera
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int width = 1;
  int height = 1;

  /// Throws Error unless fx, fy > 0 and the image is at least 1x1.
  void validate() const;

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation * world + translation; }
  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  Eigen::Vector3d viewing_direction() const { return rotation.row(2).transpose(); }
};

inline constexpr double kBehindCameraDepth = 1e-8;

struct Projection {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double depth = 0.0;
  bool behind = false;  // depth <= 1e-8; pixel is meaningless then
};

Projection project(const PinholeCamera& cam, const Eigen::Vector3d& world);
Projection project_camera_space(const PinholeCamera& cam, const Eigen::Vector3d& cam_point);

/// Pixel of a world point for any scalar type (used on the dual path).
template <class T>
Vec2T<T> project_pixel(const PinholeCamera& cam, const Vec3T<T>& world) {
  const Vec3T<T> c = cam.rotation.template cast<T>() * world + cam.translation.template cast<T>();
  return Vec2T<T>(cam.fx * c(0) / c(2) + cam.cx, cam.fy * c(1) / c(2) + cam.cy);
}

/// World point at `depth` along the ray through `pixel`.
Eigen::Vector3d unproject(const PinholeCamera& cam, const Eigen::Vector2d& pixel, double depth);

/// Camera at `eye` looking at `target`; `up` is the world up direction
/// (image y points along -up).
PinholeCamera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up, double fx, double fy, double cx, double cy,
                      int width, int height);

/// Focal length giving the horizontal field of view `fov_deg` over `width`.
double focal_for_fov(int width, double fov_deg);

struct FovCorrection {
  PinholeCamera camera;
  double translation_z = 0.0;
  double scale = 1.0;  // s_x
};

inline constexpr double kCanonicalFovDeg = 30.0;

/// Rescales both focal lengths and the root depth by s_x = f_x' / f_x where
/// f_x' realizes `target_fov_deg` horizontally. Principal point unchanged.
/// Throws Error for t_z <= 0 or a fov outside (0, 180).
FovCorrection fov_correct(const PinholeCamera& cam, double translation_z,
                          double target_fov_deg = kCanonicalFovDeg);

/// Largest pixel displacement caused by fov_correct for points at depths
/// within +-`band` (relative) of t_z, sampled over the image. Diagnostic only.
double fov_reprojection_drift(const PinholeCamera& before, double translation_z,
                              const FovCorrection& after, double band = 0.1);

inline constexpr double kLookAtLambda = 0.75;

struct LookAtOptions {
  double lambda = kLookAtLambda;
  Eigen::Vector3d vertical = Eigen::Vector3d::UnitY();
};

/// Framing target: midpoint of pelvis and head in the horizontal plane,
/// v_min + lambda * (v_max - v_min) along the vertical axis.
Eigen::Vector3d compute_lookat(std::span<const Eigen::Vector3d> vertices,
                               const Eigen::Vector3d& pelvis, const Eigen::Vector3d& head,
                               const LookAtOptions& options = {});

PinholeCamera read_camera(const std::filesystem::path& path);
PinholeCamera parse_camera(const std::string& text);
void write_camera(const std::filesystem::path& path, const PinholeCamera& cam);
std::string camera_to_json(const PinholeCamera& cam);

}  // namespace dualuv
