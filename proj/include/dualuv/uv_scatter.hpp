#pragma once

// Geometry-aligned feature scattering: image features gathered at visible
// surface samples are written to the UV texels those samples own, so grid
// addresses depend only on the surface parameterization.

#include "dualuv/camera.hpp"
#include "dualuv/image.hpp"
#include "dualuv/mesh.hpp"
#include "dualuv/raster.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dualuv {

/// N x C feature rows, one per sample.
using FeatureRows = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Accumulated features on a regular UV grid. `features` already holds the
/// normalized value sum(w f) / (sum(w) + eps); `weight` keeps sum(w).
struct UVFeatureGrid {
  FeatureMap features;
  std::vector<double> weight;

  int height() const { return features.height(); }
  int width() const { return features.width(); }
  int channels() const { return features.channels(); }
  bool covered(int row, int col) const { return weight[static_cast<std::size_t>(row) * width() + col] > 0.0; }
  std::size_t covered_count() const;
  std::vector<std::uint8_t> coverage() const;
};

enum class ScatterKernel {
  kNearest,  // each sample owns the texel containing its uv
  kTent,     // radius-1 (texel units) bilinear splat, for ablations
};

inline constexpr double kScatterEps = 1e-8;

struct GridSize {
  int height = 512;
  int width = 512;
};

inline constexpr GridSize kDefaultCoreGrid{512, 512};
inline constexpr GridSize kDefaultShellGrid{128, 128};

/// Texel containing uv: column floor(u W), row floor(v H), clamped.
std::pair<int, int> uv_to_texel(const Eigen::Vector2d& uv, int height, int width);
Eigen::Vector2d texel_center_uv(int row, int col, int height, int width);

/// Standard 4-tap bilinear lookup at a continuous pixel position, pixel
/// centers at (i + 0.5, j + 0.5), taps clamped to the border.
std::vector<double> bilinear_sample(const FeatureMap& map, const Eigen::Vector2d& pixel);

/// Weighted scatter. Contributions are accumulated in ascending sample order.
UVFeatureGrid scatter_to_uv(std::span<const Eigen::Vector2d> uvs, const FeatureRows& features,
                            std::span<const std::uint8_t> mask, GridSize grid,
                            ScatterKernel kernel = ScatterKernel::kNearest, double eps = kScatterEps);

struct EncodeOptions {
  GridSize grid = kDefaultCoreGrid;
  ScatterKernel kernel = ScatterKernel::kNearest;
  double eps = kScatterEps;
  double visibility_eps_rel = kVisibilityEpsRel;
  const GrayImage* image_mask = nullptr;  // optional foreground filter
};

struct EncodeResult {
  UVFeatureGrid grid;
  std::vector<std::uint8_t> mask;         // final per-sample gate
  std::vector<Eigen::Vector2d> pixels;    // projected sample positions
};

/// Rasterize, test point visibility, project, sample features bilinearly and
/// scatter into the core grid. A feature map of a different resolution than
/// the camera is addressed by rescaling pixel coordinates.
EncodeResult core_uv_encode(const TriMesh& mesh, const PinholeCamera& cam, const FeatureMap& features,
                            std::span<const SurfaceSample> samples, const EncodeOptions& options = {});

/// Same pipeline for shell samples gated by the shell-only mask; the shell
/// samples reuse the base (face, barycentric) records and their base uv.
EncodeResult shell_uv_encode(const TriMesh& mesh, const ShellMesh& shell, const PinholeCamera& cam,
                             const FeatureMap& features, std::span<const SurfaceSample> samples,
                             const EncodeOptions& options = {.grid = kDefaultShellGrid});

/// Canonical positions rasterized into the uv plane.
struct UVPositionMap {
  FeatureMap positions;               // H x W x 3
  std::vector<std::uint8_t> coverage;
  std::size_t overlaps = 0;           // texels written by more than one face
};

UVPositionMap uv_position_map(const TriMesh& mesh, GridSize grid);

/// For each input value c and frequency l in [0, L): sin(2^l pi c), cos(2^l pi c).
std::vector<double> sinusoidal_encode(std::span<const double> values, int frequencies);
FeatureMap sinusoidal_encode(const FeatureMap& map, int frequencies);

inline constexpr int kPositionalFrequencies = 8;

struct UVMaskResult {
  UVFeatureGrid grid;
  std::vector<std::uint8_t> masked;  // texels zeroed by this call
  std::size_t masked_count = 0;
};

/// Zeroes exactly floor(ratio * covered) covered texels chosen by `seed`.
/// Throws Error when ratio is outside [0, 0.5].
UVMaskResult random_uv_mask(const UVFeatureGrid& grid, double ratio, std::uint64_t seed);

/// Forces m_i = 0 for samples off the image or whose bilinear lookup would
/// read a background pixel.
std::vector<std::uint8_t> filter_outside_mask(std::span<const Eigen::Vector2d> pixels,
                                              const GrayImage& image_mask,
                                              std::span<const std::uint8_t> mask);

}  // namespace dualuv
