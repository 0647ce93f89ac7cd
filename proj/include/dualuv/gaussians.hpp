#pragma once

// UV-space Gaussian attributes, their anchoring on surface samples, rigid
// transport to a posed mesh and a CPU splat renderer.

#include "dualuv/camera.hpp"
#include "dualuv/image.hpp"
#include "dualuv/mesh.hpp"
#include "dualuv/tensor_io.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dualuv {

/// Per-texel attribute maps sharing one H x W grid. `coverage` may be empty,
/// meaning every texel is valid.
struct GaussianAttributeMaps {
  FeatureMap color;     // 3, [0, 1]
  FeatureMap opacity;   // 1, [0, 1]
  FeatureMap offset;    // 3, meters in the canonical frame
  FeatureMap rotation;  // 4, quaternion (w, x, y, z)
  FeatureMap scale;     // 3, meters, positive
  std::vector<std::uint8_t> coverage;

  int height() const { return color.height(); }
  int width() const { return color.width(); }
  void validate() const;
  bool covered(int row, int col) const;
};

/// Constant maps of the given size: unit quaternion, zero offset.
GaussianAttributeMaps constant_maps(int height, int width, const Eigen::Vector3d& color, double opacity,
                                    double scale);

inline constexpr double kScaleMin = 1e-6;
inline constexpr double kScaleMax = 0.1;
inline constexpr double kOffsetRange = 0.05;

/// Raw decoder-style maps to attributes: sigmoid for color and opacity,
/// clamped exp for scale, normalization for rotation, tanh * 0.05 for offset.
GaussianAttributeMaps activate_maps(const GaussianAttributeMaps& raw);

struct GaussianSet {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Quaterniond> rotations;
  std::vector<Eigen::Vector3d> scales;
  std::vector<Eigen::Vector3d> colors;
  std::vector<double> opacities;
  std::vector<SurfaceSample> anchors;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
  void validate() const;

  /// R diag(s^2) R^T.
  Eigen::Matrix3d covariance(std::size_t i) const;
};

/// One gaussian per sample whose texel (or a covered 8-neighbour) is covered;
/// attributes come from a bilinear lookup at the sample uv.
GaussianSet maps_to_gaussians(const GaussianAttributeMaps& maps, const TriMesh& mesh,
                              std::span<const SurfaceSample> samples);

/// Orthonormal frame of a face: columns e1 (first edge), e2, n. Returns
/// false for a degenerate face.
bool face_frame(const TriMesh& mesh, int face, Eigen::Matrix3d& frame);

/// Carries each gaussian with the rigid part of its anchor face's motion.
GaussianSet rig_to_pose(const GaussianSet& canonical, const TriMesh& canonical_mesh,
                        const TriMesh& posed_mesh);

inline constexpr double kCovarianceFloor = 0.3;  // px^2 added to the 2D diagonal
inline constexpr double kFootprintSigmas = 3.0;

struct SplatOptions {
  Eigen::Vector3d background = Eigen::Vector3d::Zero();
  double near_plane = 1e-6;
};

struct Splat2D {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;  // floored
  double depth = 0.0;
  bool valid = false;
};

Splat2D project_gaussian(const GaussianSet& gset, std::size_t i, const PinholeCamera& cam,
                         double near_plane = 1e-6);

/// Front-to-back compositing after a global stable depth sort. Output is
/// H x W x 4 (rgb, alpha = 1 - transmittance).
FeatureMap splat_render(const GaussianSet& gset, const PinholeCamera& cam, const SplatOptions& options = {});

GrayImage alpha_to_pgm(const FeatureMap& rgba);

// Tensor order: positions N x 3, rotations N x 4 (w, x, y, z), scales N x 3,
// colors N x 3, opacities N x 1, anchors N x 6 (face, b0, b1, b2, u, v).
std::vector<Tensor> gaussians_to_tensors(const GaussianSet& gset);
GaussianSet gaussians_from_tensors(const std::vector<Tensor>& tensors);
void write_gaussians(const std::filesystem::path& path, const GaussianSet& gset);
GaussianSet read_gaussians(const std::filesystem::path& path);

}  // namespace dualuv
