#include "dualuv/raster.hpp"

#include "dualuv/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace dualuv {

DepthBuffer::DepthBuffer(int w, int h)
    : width(w),
      height(h),
      depth(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity()),
      coverage(static_cast<std::size_t>(w) * h, 0),
      face(static_cast<std::size_t>(w) * h, -1),
      bary(static_cast<std::size_t>(w) * h, Eigen::Vector3d::Zero()),
      bins(static_cast<std::size_t>((w + kBin - 1) / kBin) * ((h + kBin - 1) / kBin)) {}

double DepthBuffer::depth_at(double px, double py) const {
  if (!(px >= 0.0 && py >= 0.0 && px < width && py < height) || bins.empty()) {
    return std::numeric_limits<double>::infinity();
  }
  const int bx = static_cast<int>(px) / kBin;
  const int by = static_cast<int>(py) / kBin;
  double best_inv_z = 0.0;
  for (int t : bins[static_cast<std::size_t>(by) * bins_x() + bx]) {
    const ScreenTriangle& tri = triangles[t];
    const Eigen::Vector2d e1 = tri.p[1] - tri.p[0];
    const Eigen::Vector2d e2 = tri.p[2] - tri.p[0];
    const Eigen::Vector2d q = Eigen::Vector2d(px, py) - tri.p[0];
    const double det = e1.x() * e2.y() - e1.y() * e2.x();
    if (det == 0.0) continue;
    const double b1 = (q.x() * e2.y() - q.y() * e2.x()) / det;
    const double b2 = (e1.x() * q.y() - e1.y() * q.x()) / det;
    const double b0 = 1.0 - b1 - b2;
    constexpr double kTol = -1e-9;
    if (b0 < kTol || b1 < kTol || b2 < kTol) continue;
    best_inv_z = std::max(best_inv_z, b0 * tri.inv_z[0] + b1 * tri.inv_z[1] + b2 * tri.inv_z[2]);
  }
  return best_inv_z > 0.0 ? 1.0 / best_inv_z : std::numeric_limits<double>::infinity();
}

std::size_t DepthBuffer::covered_count() const {
  return static_cast<std::size_t>(std::count(coverage.begin(), coverage.end(), std::uint8_t{1}));
}

namespace {

struct ClipVertex {
  Eigen::Vector3d cam;   // camera-space position
  Eigen::Vector3d bary;  // weights w.r.t. the original triangle corners
};

// Sutherland-Hodgman against z >= near.
std::vector<ClipVertex> clip_near(const std::array<ClipVertex, 3>& tri, double near) {
  std::vector<ClipVertex> out;
  out.reserve(4);
  for (int i = 0; i < 3; ++i) {
    const ClipVertex& a = tri[i];
    const ClipVertex& b = tri[(i + 1) % 3];
    const bool ina = a.cam.z() >= near;
    const bool inb = b.cam.z() >= near;
    if (ina) out.push_back(a);
    if (ina != inb) {
      const double t = (near - a.cam.z()) / (b.cam.z() - a.cam.z());
      out.push_back(ClipVertex{a.cam + t * (b.cam - a.cam), a.bary + t * (b.bary - a.bary)});
    }
  }
  return out;
}

struct ScreenVertex {
  double x;
  double y;
  double inv_z;
  Eigen::Vector3d bary_over_z;
};

inline double edge(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

// Tie rule for samples exactly on an edge. A shared edge is traversed in
// opposite directions by its two triangles, so exactly one of them owns it.
inline bool owns_edge(const ScreenVertex& a, const ScreenVertex& b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  return dy > 0.0 || (dy == 0.0 && dx < 0.0);
}

void raster_triangle(ScreenVertex v0, ScreenVertex v1, ScreenVertex v2, int face, DepthBuffer& db) {
  double area = edge(v0, v1, v2.x, v2.y);
  if (area == 0.0 || !std::isfinite(area)) return;
  if (area < 0.0) {
    std::swap(v1, v2);
    area = -area;
  }
  const double xmin = std::min({v0.x, v1.x, v2.x});
  const double xmax = std::max({v0.x, v1.x, v2.x});
  const double ymin = std::min({v0.y, v1.y, v2.y});
  const double ymax = std::max({v0.y, v1.y, v2.y});
  const int x0 = std::max(0, static_cast<int>(std::floor(xmin - 0.5)));
  const int x1 = std::min(db.width - 1, static_cast<int>(std::ceil(xmax - 0.5)));
  const int y0 = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
  const int y1 = std::min(db.height - 1, static_cast<int>(std::ceil(ymax - 0.5)));
  if (x0 > x1 || y0 > y1) return;
  const bool own0 = owns_edge(v1, v2);
  const bool own1 = owns_edge(v2, v0);
  const bool own2 = owns_edge(v0, v1);
  const double inv_area = 1.0 / area;
  {
    const int t = static_cast<int>(db.triangles.size());
    db.triangles.push_back(DepthBuffer::ScreenTriangle{
        {Eigen::Vector2d(v0.x, v0.y), Eigen::Vector2d(v1.x, v1.y), Eigen::Vector2d(v2.x, v2.y)},
        Eigen::Vector3d(v0.inv_z, v1.inv_z, v2.inv_z)});
    const auto bin = [](double v, int size) {
      return static_cast<int>(std::clamp(v, 0.0, size - 1.0)) / DepthBuffer::kBin;
    };
    const int bx0 = bin(xmin, db.width);
    const int bx1 = bin(xmax, db.width);
    const int by0 = bin(ymin, db.height);
    const int by1 = bin(ymax, db.height);
    for (int by = by0; by <= by1; ++by) {
      for (int bx = bx0; bx <= bx1; ++bx) db.bins[static_cast<std::size_t>(by) * db.bins_x() + bx].push_back(t);
    }
  }
  for (int y = y0; y <= y1; ++y) {
    const double py = y + 0.5;
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5;
      const double w0 = edge(v1, v2, px, py);
      const double w1 = edge(v2, v0, px, py);
      const double w2 = edge(v0, v1, px, py);
      if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
      if ((w0 == 0.0 && !own0) || (w1 == 0.0 && !own1) || (w2 == 0.0 && !own2)) continue;
      const double l0 = w0 * inv_area;
      const double l1 = w1 * inv_area;
      const double l2 = w2 * inv_area;
      const double inv_z = l0 * v0.inv_z + l1 * v1.inv_z + l2 * v2.inv_z;
      if (!(inv_z > 0.0)) continue;
      const double z = 1.0 / inv_z;
      const std::size_t idx = db.index(x, y);
      if (z < db.depth[idx]) {
        db.depth[idx] = z;
        db.coverage[idx] = 1;
        db.face[idx] = face;
        db.bary[idx] = (l0 * v0.bary_over_z + l1 * v1.bary_over_z + l2 * v2.bary_over_z) * z;
      }
    }
  }
}

}  // namespace

DepthBuffer rasterize(const TriMesh& mesh, const PinholeCamera& cam, const RasterOptions& options) {
  cam.validate();
  DepthBuffer db(cam.width, cam.height);
  std::vector<Eigen::Vector3d> cv(mesh.vertex_count());
  for (std::size_t i = 0; i < cv.size(); ++i) cv[i] = cam.to_camera(mesh.vertices()[i]);

  const auto& faces = mesh.faces();
  for (int fi = 0; fi < static_cast<int>(faces.size()); ++fi) {
    const Face& f = faces[fi];
    const Eigen::Vector3d& a = cv[f.v(0)];
    const Eigen::Vector3d& b = cv[f.v(1)];
    const Eigen::Vector3d& c = cv[f.v(2)];
    if (options.cull_backfaces) {
      // Same sign as the projected signed area for points in front of the
      // camera; also well defined for triangles that need clipping.
      const double facing = (b - a).cross(c - a).dot(a);
      if (!(facing < 0.0)) continue;
    }
    const std::array<ClipVertex, 3> tri = {ClipVertex{a, Eigen::Vector3d(1, 0, 0)},
                                           ClipVertex{b, Eigen::Vector3d(0, 1, 0)},
                                           ClipVertex{c, Eigen::Vector3d(0, 0, 1)}};
    std::vector<ClipVertex> poly;
    if (a.z() >= options.near_plane && b.z() >= options.near_plane && c.z() >= options.near_plane) {
      poly.assign(tri.begin(), tri.end());
    } else {
      poly = clip_near(tri, options.near_plane);
    }
    if (poly.size() < 3) continue;
    std::vector<ScreenVertex> sv;
    sv.reserve(poly.size());
    for (const auto& p : poly) {
      const double iz = 1.0 / p.cam.z();
      sv.push_back(ScreenVertex{cam.fx * p.cam.x() * iz + cam.cx, cam.fy * p.cam.y() * iz + cam.cy, iz,
                                p.bary * iz});
    }
    for (std::size_t k = 1; k + 1 < sv.size(); ++k) raster_triangle(sv[0], sv[k], sv[k + 1], fi, db);
  }
  return db;
}

std::vector<std::uint8_t> point_visibility(std::span<const Eigen::Vector3d> points,
                                           const DepthBuffer& db, const PinholeCamera& cam,
                                           double eps_rel) {
  std::vector<std::uint8_t> vis(points.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Projection p = project(cam, points[i]);
    if (p.behind) continue;
    const double fx = std::floor(p.pixel.x());
    const double fy = std::floor(p.pixel.y());
    if (fx < 0.0 || fy < 0.0 || fx >= db.width || fy >= db.height) continue;
    const double buffer_depth = db.depth_at(p.pixel.x(), p.pixel.y());
    vis[i] = p.depth <= buffer_depth * (1.0 + eps_rel) ? 1 : 0;
  }
  return vis;
}

ShellMask shell_mask(const TriMesh& mesh, const ShellMesh& shell, const PinholeCamera& cam,
                     std::span<const SurfaceSample> shell_samples, double eps_rel) {
  ShellMask out;
  out.core = rasterize(mesh, cam);
  out.shell = rasterize(shell.mesh, cam);
  out.width = cam.width;
  out.height = cam.height;
  out.pixels.assign(out.core.coverage.size(), 0);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = (out.shell.coverage[i] && !out.core.coverage[i]) ? 1 : 0;
  }
  if (!shell_samples.empty()) {
    const auto pos = sample_positions(shell.mesh, shell_samples);
    out.samples = point_visibility(pos, out.shell, cam, eps_rel);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      if (!out.samples[i]) continue;
      const Projection p = project(cam, pos[i]);
      const int x = static_cast<int>(std::floor(p.pixel.x()));
      const int y = static_cast<int>(std::floor(p.pixel.y()));
      out.samples[i] = out.pixels[out.core.index(x, y)];
    }
  }
  return out;
}

GrayImage silhouette(const TriMesh& mesh, const PinholeCamera& cam) {
  // No culling: open meshes show their inner faces through the ends.
  RasterOptions options;
  options.cull_backfaces = false;
  const DepthBuffer db = rasterize(mesh, cam, options);
  GrayImage img(cam.width, cam.height);
  img.pixels = db.coverage;
  return img;
}

namespace {

// Squared-distance lower envelope of parabolas rooted at f (1D, exact for
// integer inputs).
void envelope_1d(std::span<const double> f, std::span<double> d, std::vector<int>& v,
                 std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s = 0.0;
    // z[0] = -inf stops the pop loop at k = 0.
    while (true) {
      const int p = v[k];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

DistanceField distance_transform(const GrayImage& mask) {
  if (mask.width <= 0 || mask.height <= 0) throw Error("distance_transform: empty image");
  DistanceField out;
  out.width = mask.width;
  out.height = mask.height;
  const std::size_t n = static_cast<std::size_t>(mask.width) * mask.height;
  const bool any = std::any_of(mask.pixels.begin(), mask.pixels.end(), [](std::uint8_t p) { return p != 0; });
  if (!any) {
    out.values.assign(n, std::numeric_limits<double>::infinity());
    out.empty_mask = true;
    return out;
  }
  // Finite stand-in for infinity keeps the envelope arithmetic exact.
  const double big = 1e20;
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = mask.pixels[i] ? 0.0 : big;

  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> col(mask.height);
  std::vector<double> col_out(mask.height);
  for (int x = 0; x < mask.width; ++x) {
    for (int y = 0; y < mask.height; ++y) col[y] = grid[static_cast<std::size_t>(y) * mask.width + x];
    envelope_1d(col, col_out, v, z);
    for (int y = 0; y < mask.height; ++y) grid[static_cast<std::size_t>(y) * mask.width + x] = col_out[y];
  }
  std::vector<double> row(mask.width);
  std::vector<double> row_out(mask.width);
  for (int y = 0; y < mask.height; ++y) {
    std::copy_n(grid.begin() + static_cast<std::ptrdiff_t>(y) * mask.width, mask.width, row.begin());
    envelope_1d(row, row_out, v, z);
    std::copy(row_out.begin(), row_out.end(), grid.begin() + static_cast<std::ptrdiff_t>(y) * mask.width);
  }
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = std::sqrt(grid[i]);
  return out;
}

GrayImage dilate(const GrayImage& mask, double radius) {
  const DistanceField df = distance_transform(mask);
  GrayImage out(mask.width, mask.height);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = df.values[i] <= radius ? 1 : 0;
  return out;
}

}  // namespace dualuv
