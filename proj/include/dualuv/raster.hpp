#pragma once

// Software z-buffer rasterizer, visibility queries, shell-only masks and
// the Euclidean distance transform used by the silhouette term.

#include "dualuv/camera.hpp"
#include "dualuv/dual.hpp"
#include "dualuv/image.hpp"
#include "dualuv/mesh.hpp"
#include "dualuv/rotation.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace dualuv {

/// Per-pixel nearest camera-space depth. Also keeps, for every covered
/// pixel, the winning face and its perspective-correct barycentrics so
/// attributes (uv, positions) can be interpolated.
struct DepthBuffer {
  int width = 0;
  int height = 0;
  std::vector<double> depth;            // +inf where empty
  std::vector<std::uint8_t> coverage;   // 1 where covered
  std::vector<int> face;                // -1 where empty
  std::vector<Eigen::Vector3d> bary;
  // Every rasterized screen-space triangle, binned by bounding box into
  // kBin x kBin pixel cells. Lets queries evaluate depth off-center.
  struct ScreenTriangle {
    std::array<Eigen::Vector2d, 3> p;
    Eigen::Vector3d inv_z;
  };
  static constexpr int kBin = 8;
  std::vector<ScreenTriangle> triangles;
  std::vector<std::vector<int>> bins;

  DepthBuffer() = default;
  DepthBuffer(int w, int h);

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  bool covered(int x, int y) const { return coverage[index(x, y)] != 0; }
  int bins_x() const { return (width + kBin - 1) / kBin; }
  /// Nearest depth of any rasterized triangle containing the exact sub-pixel
  /// location (px, py); +inf when none does.
  double depth_at(double px, double py) const;
  std::size_t covered_count() const;
};

struct RasterOptions {
  bool cull_backfaces = true;
  double near_plane = 1e-6;
};

/// Scan-converts the mesh with pixel-center sampling and a top-left tie rule.
/// Faces whose camera-space normal does not face the camera are culled;
/// geometry in front of the near plane is clipped away.
DepthBuffer rasterize(const TriMesh& mesh, const PinholeCamera& cam, const RasterOptions& options = {});

inline constexpr double kVisibilityEpsRel = 1e-3;

/// m_i = 1 iff the point projects inside the image, is in front of the
/// camera, and its depth <= buffer depth * (1 + eps_rel). The buffer depth is
/// evaluated at the projected location (see DepthBuffer::depth_at).
std::vector<std::uint8_t> point_visibility(std::span<const Eigen::Vector3d> points,
                                           const DepthBuffer& db, const PinholeCamera& cam,
                                           double eps_rel = kVisibilityEpsRel);

struct ShellMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // coverage(M+) and not coverage(M)
  std::vector<std::uint8_t> samples; // per shell sample gate
  DepthBuffer core;
  DepthBuffer shell;
};

/// Shell-only pixels plus the gate for each shell sample: visible against the
/// shell depth buffer and landing on a shell-only pixel.
ShellMask shell_mask(const TriMesh& mesh, const ShellMesh& shell, const PinholeCamera& cam,
                     std::span<const SurfaceSample> shell_samples = {},
                     double eps_rel = kVisibilityEpsRel);

/// Coverage of every triangle, either winding, as a 0/1 image.
GrayImage silhouette(const TriMesh& mesh, const PinholeCamera& cam);

struct DistanceField {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // +inf everywhere when the mask is empty
  bool empty_mask = false;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

  /// Bilinear lookup at a continuous pixel position (pixel-center convention,
  /// border clamped). Works for plain and dual scalars.
  template <class T>
  T sample(const T& px, const T& py) const {
    const T fx = px - 0.5;
    const T fy = py - 0.5;
    const double bx = std::floor(value_of(fx));
    const double by = std::floor(value_of(fy));
    T ax = fx - bx;
    T ay = fy - by;
    int x0 = static_cast<int>(bx);
    int y0 = static_cast<int>(by);
    // Constant extension past the border along the clamped axis.
    if (x0 < 0) {
      x0 = 0;
      ax = T(0.0);
    } else if (x0 >= width - 1) {
      x0 = width - 1;
      ax = T(0.0);
    }
    if (y0 < 0) {
      y0 = 0;
      ay = T(0.0);
    } else if (y0 >= height - 1) {
      y0 = height - 1;
      ay = T(0.0);
    }
    const int x1 = std::min(x0 + 1, width - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    const T top = (1.0 - ax) * at(x0, y0) + ax * at(x1, y0);
    const T bottom = (1.0 - ax) * at(x0, y1) + ax * at(x1, y1);
    return (1.0 - ay) * top + ay * bottom;
  }
};

/// Exact Euclidean distance (pixels) to the nearest nonzero mask pixel,
/// computed with the separable lower-envelope algorithm. Throws Error for an
/// empty image; an all-zero mask yields +inf with `empty_mask` set.
DistanceField distance_transform(const GrayImage& mask);

/// Pixels within `radius` (Euclidean) of the mask.
GrayImage dilate(const GrayImage& mask, double radius);

}  // namespace dualuv
