#include "dualuv/roundtrip.hpp"

#include "dualuv/error.hpp"
#include "dualuv/raster.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace dualuv {

FeatureMap checkerboard(int height, int width, int cells, const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  if (height <= 0 || width <= 0 || cells <= 0) throw Error("checkerboard: sizes must be positive");
  FeatureMap out(height, width, 3);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const int cr = r * cells / height;
      const int cc = c * cells / width;
      const Eigen::Vector3d& col = ((cr + cc) % 2 == 0) ? a : b;
      for (int k = 0; k < 3; ++k) out.at(r, c, k) = col[k];
    }
  }
  return out;
}

std::vector<double> sample_texture(const FeatureMap& texture, const Eigen::Vector2d& uv) {
  return bilinear_sample(texture, Eigen::Vector2d(uv.x() * texture.width(), uv.y() * texture.height()));
}

FeatureMap render_textured(const TriMesh& mesh, const PinholeCamera& cam, const FeatureMap& texture,
                           TextureFilter filter, const Eigen::Vector3d& background) {
  cam.validate();
  const DepthBuffer db = rasterize(mesh, cam);
  const int ch = texture.channels();
  FeatureMap out(cam.height, cam.width, ch);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const std::size_t i = db.index(x, y);
      if (!db.coverage[i]) {
        for (int k = 0; k < ch; ++k) out.at(y, x, k) = k < 3 ? background[k] : 0.0;
        continue;
      }
      const Eigen::Vector2d uv = uv_unparameterize(mesh, db.face[i], db.bary[i]);
      if (filter == TextureFilter::kNearest) {
        const auto [r, c] = uv_to_texel(uv, texture.height(), texture.width());
        for (int k = 0; k < ch; ++k) out.at(y, x, k) = texture.at(r, c, k);
      } else {
        const auto f = sample_texture(texture, uv);
        for (int k = 0; k < ch; ++k) out.at(y, x, k) = f[k];
      }
    }
  }
  return out;
}

std::string RoundtripReport::to_json() const {
  nlohmann::ordered_json j;
  j["covered_texels"] = covered;
  j["within_tolerance"] = within;
  j["fraction"] = fraction;
  j["mean_error"] = mean_error;
  j["max_error"] = max_error;
  j["tolerance"] = tolerance;
  return j.dump(2) + "\n";
}

RoundtripReport texture_roundtrip(const TriMesh& mesh, const PinholeCamera& cam, const FeatureMap& texture,
                                  const RoundtripOptions& options) {
  const FeatureMap render = render_textured(mesh, cam, texture);
  const GrayImage fg = silhouette(mesh, cam);
  const auto samples = sample_surface_uniform(mesh, options.samples, options.seed);
  EncodeOptions eo;
  eo.grid = options.grid;
  eo.kernel = options.kernel;
  eo.image_mask = &fg;
  const EncodeResult enc = core_uv_encode(mesh, cam, render, samples, eo);

  RoundtripReport rep;
  rep.tolerance = options.tolerance;
  double sum = 0.0;
  const UVFeatureGrid& g = enc.grid;
  const int ch = std::min(g.channels(), texture.channels());
  for (int r = 0; r < g.height(); ++r) {
    for (int c = 0; c < g.width(); ++c) {
      if (!g.covered(r, c)) continue;
      const auto [tr, tc] = uv_to_texel(texel_center_uv(r, c, g.height(), g.width()), texture.height(),
                                        texture.width());
      double err = 0.0;
      for (int k = 0; k < ch; ++k) err += std::abs(g.features.at(r, c, k) - texture.at(tr, tc, k));
      err /= ch;
      ++rep.covered;
      if (err <= options.tolerance) ++rep.within;
      sum += err;
      rep.max_error = std::max(rep.max_error, err);
    }
  }
  if (rep.covered) {
    rep.fraction = static_cast<double>(rep.within) / static_cast<double>(rep.covered);
    rep.mean_error = sum / static_cast<double>(rep.covered);
  }
  return rep;
}

}  // namespace dualuv
