#include "dualuv/uv_scatter.hpp"

#include "dualuv/error.hpp"
#include "dualuv/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dualuv {

std::size_t UVFeatureGrid::covered_count() const {
  return static_cast<std::size_t>(std::count_if(weight.begin(), weight.end(), [](double w) { return w > 0.0; }));
}

std::vector<std::uint8_t> UVFeatureGrid::coverage() const {
  std::vector<std::uint8_t> out(weight.size());
  for (std::size_t i = 0; i < weight.size(); ++i) out[i] = weight[i] > 0.0 ? 1 : 0;
  return out;
}

std::pair<int, int> uv_to_texel(const Eigen::Vector2d& uv, int height, int width) {
  const int col = std::clamp(static_cast<int>(std::floor(uv.x() * width)), 0, width - 1);
  const int row = std::clamp(static_cast<int>(std::floor(uv.y() * height)), 0, height - 1);
  return {row, col};
}

Eigen::Vector2d texel_center_uv(int row, int col, int height, int width) {
  return {(col + 0.5) / width, (row + 0.5) / height};
}

std::vector<double> bilinear_sample(const FeatureMap& map, const Eigen::Vector2d& pixel) {
  const int w = map.width();
  const int h = map.height();
  std::vector<double> out(map.channels(), 0.0);
  if (w == 0 || h == 0) return out;
  const double fx = pixel.x() - 0.5;
  const double fy = pixel.y() - 0.5;
  const double bx = std::floor(fx);
  const double by = std::floor(fy);
  const double ax = fx - bx;
  const double ay = fy - by;
  const auto clampi = [](double v, int hi) {
    return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(hi)));
  };
  const int x0 = clampi(bx, w - 1);
  const int x1 = clampi(bx + 1.0, w - 1);
  const int y0 = clampi(by, h - 1);
  const int y1 = clampi(by + 1.0, h - 1);
  const double w00 = (1.0 - ax) * (1.0 - ay);
  const double w10 = ax * (1.0 - ay);
  const double w01 = (1.0 - ax) * ay;
  const double w11 = ax * ay;
  for (int c = 0; c < map.channels(); ++c) {
    out[c] = w00 * map.at(y0, x0, c) + w10 * map.at(y0, x1, c) + w01 * map.at(y1, x0, c) +
             w11 * map.at(y1, x1, c);
  }
  return out;
}

UVFeatureGrid scatter_to_uv(std::span<const Eigen::Vector2d> uvs, const FeatureRows& features,
                            std::span<const std::uint8_t> mask, GridSize grid, ScatterKernel kernel,
                            double eps) {
  if (!(eps > 0.0)) throw Error("scatter_to_uv: eps must be positive");
  if (grid.height <= 0 || grid.width <= 0) throw Error("scatter_to_uv: grid must be non-empty");
  if (static_cast<std::size_t>(features.rows()) != uvs.size() || mask.size() != uvs.size()) {
    throw Error("scatter_to_uv: samples, features and mask must align");
  }
  const int channels = static_cast<int>(features.cols());
  UVFeatureGrid out;
  out.features = FeatureMap(grid.height, grid.width, channels);
  out.weight.assign(static_cast<std::size_t>(grid.height) * grid.width, 0.0);

  auto add = [&](int row, int col, double k, Eigen::Index i) {
    out.weight[static_cast<std::size_t>(row) * grid.width + col] += k;
    for (int c = 0; c < channels; ++c) out.features.at(row, col, c) += k * features(i, c);
  };
  for (std::size_t i = 0; i < uvs.size(); ++i) {
    if (!mask[i]) continue;
    const auto ii = static_cast<Eigen::Index>(i);
    if (kernel == ScatterKernel::kNearest) {
      const auto [row, col] = uv_to_texel(uvs[i], grid.height, grid.width);
      add(row, col, 1.0, ii);
    } else {
      const double tx = uvs[i].x() * grid.width - 0.5;
      const double ty = uvs[i].y() * grid.height - 0.5;
      const int x0 = static_cast<int>(std::floor(tx));
      const int y0 = static_cast<int>(std::floor(ty));
      for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
          const int x = x0 + dx;
          const int y = y0 + dy;
          if (x < 0 || y < 0 || x >= grid.width || y >= grid.height) continue;
          const double k = std::max(0.0, 1.0 - std::abs(tx - x)) * std::max(0.0, 1.0 - std::abs(ty - y));
          if (k > 0.0) add(y, x, k, ii);
        }
      }
    }
  }
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      const double w = out.weight[static_cast<std::size_t>(r) * grid.width + c];
      if (w <= 0.0) continue;
      const double inv = 1.0 / (w + eps);
      for (double& v : out.features.pixel(r, c)) v *= inv;
    }
  }
  return out;
}

namespace {

EncodeResult gather_and_scatter(const PinholeCamera& cam, const FeatureMap& features,
                                std::span<const SurfaceSample> samples,
                                std::span<const Eigen::Vector3d> positions, std::vector<std::uint8_t> mask,
                                const EncodeOptions& options) {
  EncodeResult out;
  out.pixels.resize(samples.size(), Eigen::Vector2d::Zero());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Projection p = project(cam, positions[i]);
    if (p.behind) {
      mask[i] = 0;
      continue;
    }
    out.pixels[i] = p.pixel;
  }
  if (options.image_mask) mask = filter_outside_mask(out.pixels, *options.image_mask, mask);

  const double sx = static_cast<double>(features.width()) / cam.width;
  const double sy = static_cast<double>(features.height()) / cam.height;
  FeatureRows rows(static_cast<Eigen::Index>(samples.size()), features.channels());
  rows.setZero();
  std::vector<Eigen::Vector2d> uvs(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    uvs[i] = samples[i].uv;
    if (!mask[i]) continue;
    const auto f = bilinear_sample(features, Eigen::Vector2d(out.pixels[i].x() * sx, out.pixels[i].y() * sy));
    for (int c = 0; c < features.channels(); ++c) rows(static_cast<Eigen::Index>(i), c) = f[c];
  }
  out.grid = scatter_to_uv(uvs, rows, mask, options.grid, options.kernel, options.eps);
  out.mask = std::move(mask);
  return out;
}

}  // namespace

EncodeResult core_uv_encode(const TriMesh& mesh, const PinholeCamera& cam, const FeatureMap& features,
                            std::span<const SurfaceSample> samples, const EncodeOptions& options) {
  const DepthBuffer db = rasterize(mesh, cam);
  const auto positions = sample_positions(mesh, samples);
  auto vis = point_visibility(positions, db, cam, options.visibility_eps_rel);
  return gather_and_scatter(cam, features, samples, positions, std::move(vis), options);
}

EncodeResult shell_uv_encode(const TriMesh& mesh, const ShellMesh& shell, const PinholeCamera& cam,
                             const FeatureMap& features, std::span<const SurfaceSample> samples,
                             const EncodeOptions& options) {
  if (shell.mesh.face_count() != mesh.face_count()) throw Error("shell_uv_encode: shell topology differs from mesh");
  ShellMask sm = shell_mask(mesh, shell, cam, samples, options.visibility_eps_rel);
  const auto positions = sample_positions(shell.mesh, samples);
  if (sm.samples.size() != samples.size()) sm.samples.assign(samples.size(), 0);
  return gather_and_scatter(cam, features, samples, positions, std::move(sm.samples), options);
}

// ---------------------------------------------------------------------------

namespace {

struct UvVertex {
  double x;
  double y;
};

inline double uv_edge(const UvVertex& a, const UvVertex& b, double px, double py) {
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

inline bool uv_owns(const UvVertex& a, const UvVertex& b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  return dy > 0.0 || (dy == 0.0 && dx < 0.0);
}

}  // namespace

UVPositionMap uv_position_map(const TriMesh& mesh, GridSize grid) {
  UVPositionMap out;
  out.positions = FeatureMap(grid.height, grid.width, 3);
  out.coverage.assign(static_cast<std::size_t>(grid.height) * grid.width, 0);
  const auto& verts = mesh.vertices();
  for (const Face& f : mesh.faces()) {
    std::array<UvVertex, 3> t;
    std::array<int, 3> vid = {f.v(0), f.v(1), f.v(2)};
    for (int i = 0; i < 3; ++i) t[i] = UvVertex{f.uv(i).x() * grid.width, f.uv(i).y() * grid.height};
    double area = uv_edge(t[0], t[1], t[2].x, t[2].y);
    if (area == 0.0) continue;
    if (area < 0.0) {
      std::swap(t[1], t[2]);
      std::swap(vid[1], vid[2]);
      area = -area;
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({t[0].x, t[1].x, t[2].x}) - 0.5)));
    const int x1 = std::min(grid.width - 1, static_cast<int>(std::ceil(std::max({t[0].x, t[1].x, t[2].x}) - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({t[0].y, t[1].y, t[2].y}) - 0.5)));
    const int y1 = std::min(grid.height - 1, static_cast<int>(std::ceil(std::max({t[0].y, t[1].y, t[2].y}) - 0.5)));
    const bool own0 = uv_owns(t[1], t[2]);
    const bool own1 = uv_owns(t[2], t[0]);
    const bool own2 = uv_owns(t[0], t[1]);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5;
        const double py = y + 0.5;
        const double w0 = uv_edge(t[1], t[2], px, py);
        const double w1 = uv_edge(t[2], t[0], px, py);
        const double w2 = uv_edge(t[0], t[1], px, py);
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        if ((w0 == 0.0 && !own0) || (w1 == 0.0 && !own1) || (w2 == 0.0 && !own2)) continue;
        const std::size_t idx = static_cast<std::size_t>(y) * grid.width + x;
        if (out.coverage[idx]) ++out.overlaps;
        out.coverage[idx] = 1;
        const Eigen::Vector3d p = (w0 * verts[vid[0]] + w1 * verts[vid[1]] + w2 * verts[vid[2]]) / area;
        for (int c = 0; c < 3; ++c) out.positions.at(y, x, c) = p(c);
      }
    }
  }
  if (out.overlaps > 0) warn(std::to_string(out.overlaps) + " uv texels covered by overlapping charts");
  return out;
}

std::vector<double> sinusoidal_encode(std::span<const double> values, int frequencies) {
  if (frequencies < 1) throw Error("sinusoidal_encode: need at least one frequency");
  std::vector<double> out;
  out.reserve(values.size() * 2 * frequencies);
  for (double c : values) {
    double scale = std::numbers::pi;
    for (int l = 0; l < frequencies; ++l) {
      out.push_back(std::sin(scale * c));
      out.push_back(std::cos(scale * c));
      scale *= 2.0;
    }
  }
  return out;
}

FeatureMap sinusoidal_encode(const FeatureMap& map, int frequencies) {
  FeatureMap out(map.height(), map.width(), map.channels() * 2 * frequencies);
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      const auto enc = sinusoidal_encode(map.pixel(r, c), frequencies);
      std::copy(enc.begin(), enc.end(), out.pixel(r, c).begin());
    }
  }
  return out;
}

UVMaskResult random_uv_mask(const UVFeatureGrid& grid, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 0.5)) throw Error("random_uv_mask: ratio must lie in [0, 0.5]");
  UVMaskResult out{grid, std::vector<std::uint8_t>(grid.weight.size(), 0), 0};
  std::vector<std::size_t> covered;
  for (std::size_t i = 0; i < grid.weight.size(); ++i)
    if (grid.weight[i] > 0.0) covered.push_back(i);
  const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(covered.size())));
  Rng rng(seed);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng.below(covered.size() - k));
    std::swap(covered[k], covered[j]);
    const std::size_t idx = covered[k];
    out.masked[idx] = 1;
    out.grid.weight[idx] = 0.0;
    const int row = static_cast<int>(idx / grid.width());
    const int col = static_cast<int>(idx % grid.width());
    for (double& v : out.grid.features.pixel(row, col)) v = 0.0;
  }
  out.masked_count = count;
  return out;
}

std::vector<std::uint8_t> filter_outside_mask(std::span<const Eigen::Vector2d> pixels,
                                              const GrayImage& image_mask,
                                              std::span<const std::uint8_t> mask) {
  if (pixels.size() != mask.size()) throw Error("filter_outside_mask: pixels and mask must align");
  std::vector<std::uint8_t> out(mask.begin(), mask.end());
  const auto inside = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < image_mask.width && y < image_mask.height && image_mask.at(x, y) != 0;
  };
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (!out[i]) continue;
    const double px = pixels[i].x();
    const double py = pixels[i].y();
    if (!(px >= 0.0 && py >= 0.0 && px < image_mask.width && py < image_mask.height)) {
      out[i] = 0;
      continue;
    }
    // Every tap the bilinear lookup gives nonzero weight must be foreground.
    const double fx = px - 0.5;
    const double fy = py - 0.5;
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    const bool ax = fx > x0;
    const bool ay = fy > y0;
    const int cx0 = std::clamp(x0, 0, image_mask.width - 1);
    const int cy0 = std::clamp(y0, 0, image_mask.height - 1);
    const int cx1 = std::clamp(x0 + 1, 0, image_mask.width - 1);
    const int cy1 = std::clamp(y0 + 1, 0, image_mask.height - 1);
    bool ok = inside(cx0, cy0);
    if (ax) ok = ok && inside(cx1, cy0);
    if (ay) ok = ok && inside(cx0, cy1);
    if (ax && ay) ok = ok && inside(cx1, cy1);
    if (!ok) out[i] = 0;
  }
  return out;
}

}  // namespace dualuv
