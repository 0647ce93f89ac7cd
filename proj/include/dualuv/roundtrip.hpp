#pragma once

// Texture round trip: render a textured mesh, encode the render back into UV
// space and compare covered texels with the source texture.

#include "dualuv/camera.hpp"
#include "dualuv/image.hpp"
#include "dualuv/mesh.hpp"
#include "dualuv/uv_scatter.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>

namespace dualuv {

/// cells x cells checkerboard, texel (0, 0) takes color `a`.
FeatureMap checkerboard(int height, int width, int cells, const Eigen::Vector3d& a = Eigen::Vector3d(0.9, 0.9, 0.9),
                        const Eigen::Vector3d& b = Eigen::Vector3d(0.1, 0.2, 0.6));

/// Bilinear lookup with u along columns and v along rows.
std::vector<double> sample_texture(const FeatureMap& texture, const Eigen::Vector2d& uv);

enum class TextureFilter { kNearest, kBilinear };

/// Rasterizes the mesh and looks up the texture at the interpolated uv of
/// every covered pixel. Empty pixels get `background`.
FeatureMap render_textured(const TriMesh& mesh, const PinholeCamera& cam, const FeatureMap& texture,
                           TextureFilter filter = TextureFilter::kNearest,
                           const Eigen::Vector3d& background = Eigen::Vector3d::Zero());

struct RoundtripOptions {
  GridSize grid{256, 256};
  int samples = 400000;
  std::uint64_t seed = 0;
  double tolerance = 0.05;  // per-texel mean absolute error
  ScatterKernel kernel = ScatterKernel::kNearest;
};

struct RoundtripReport {
  std::size_t covered = 0;
  std::size_t within = 0;
  double fraction = 0.0;  // within / covered, 0 when nothing is covered
  double mean_error = 0.0;
  double max_error = 0.0;
  double tolerance = 0.0;

  std::string to_json() const;
};

/// Ground truth for a texel is the texture texel containing its center. The
/// render's silhouette is the foreground mask for outside-mask filtering.
RoundtripReport texture_roundtrip(const TriMesh& mesh, const PinholeCamera& cam, const FeatureMap& texture,
                                  const RoundtripOptions& options = {});

}  // namespace dualuv
