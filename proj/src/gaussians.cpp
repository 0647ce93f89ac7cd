#include "dualuv/gaussians.hpp"

#include "dualuv/error.hpp"
#include "dualuv/uv_scatter.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dualuv {

namespace {

void check_map(const FeatureMap& m, int h, int w, int c, const char* name) {
  if (m.height() != h || m.width() != w || m.channels() != c) {
    throw Error(std::string("attribute map '") + name + "' has the wrong shape");
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void GaussianAttributeMaps::validate() const {
  const int h = height();
  const int w = width();
  check_map(color, h, w, 3, "color");
  check_map(opacity, h, w, 1, "opacity");
  check_map(offset, h, w, 3, "offset");
  check_map(rotation, h, w, 4, "rotation");
  check_map(scale, h, w, 3, "scale");
  if (!coverage.empty() && coverage.size() != static_cast<std::size_t>(h) * w) {
    throw Error("attribute map coverage has the wrong size");
  }
}

bool GaussianAttributeMaps::covered(int row, int col) const {
  return coverage.empty() || coverage[static_cast<std::size_t>(row) * width() + col] != 0;
}

GaussianAttributeMaps constant_maps(int height, int width, const Eigen::Vector3d& color, double opacity,
                                    double scale) {
  GaussianAttributeMaps m;
  m.color = FeatureMap(height, width, 3);
  m.opacity = FeatureMap(height, width, 1, opacity);
  m.offset = FeatureMap(height, width, 3);
  m.rotation = FeatureMap(height, width, 4);
  m.scale = FeatureMap(height, width, 3, scale);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      for (int k = 0; k < 3; ++k) m.color.at(r, c, k) = color(k);
      m.rotation.at(r, c, 0) = 1.0;
    }
  }
  return m;
}

GaussianAttributeMaps activate_maps(const GaussianAttributeMaps& raw) {
  raw.validate();
  GaussianAttributeMaps out = raw;
  for (double& v : out.color.data()) v = sigmoid(v);
  for (double& v : out.opacity.data()) v = sigmoid(v);
  for (double& v : out.scale.data()) v = std::clamp(std::exp(v), kScaleMin, kScaleMax);
  for (double& v : out.offset.data()) v = std::tanh(v) * kOffsetRange;
  for (int r = 0; r < out.height(); ++r) {
    for (int c = 0; c < out.width(); ++c) {
      auto q = out.rotation.pixel(r, c);
      const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
      if (n > 0.0) {
        for (double& v : q) v /= n;
      } else {
        q[0] = 1.0;
        q[1] = q[2] = q[3] = 0.0;
      }
    }
  }
  return out;
}

void GaussianSet::validate() const {
  const std::size_t n = positions.size();
  if (rotations.size() != n || scales.size() != n || colors.size() != n || opacities.size() != n ||
      anchors.size() != n) {
    throw Error("gaussian attribute arrays differ in length");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!positions[i].allFinite()) throw NumericError("non-finite gaussian position");
    if ((scales[i].array() <= 0.0).any()) throw Error("gaussian scales must be positive");
    if (!(opacities[i] >= 0.0 && opacities[i] <= 1.0)) throw Error("gaussian opacity outside [0, 1]");
  }
}

Eigen::Matrix3d GaussianSet::covariance(std::size_t i) const {
  const Eigen::Matrix3d r = rotations[i].toRotationMatrix();
  return r * scales[i].array().square().matrix().asDiagonal() * r.transpose();
}

namespace {

// Bilinear lookup over covered taps only, renormalized. Returns false when no
// tap is covered.
bool covered_bilinear(const GaussianAttributeMaps& maps, const FeatureMap& map, const Eigen::Vector2d& pixel,
                      std::span<double> out) {
  const int w = map.width();
  const int h = map.height();
  const double fx = pixel.x() - 0.5;
  const double fy = pixel.y() - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0;
  const double ay = fy - y0;
  std::fill(out.begin(), out.end(), 0.0);
  double total = 0.0;
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      const int x = std::clamp(x0 + dx, 0, w - 1);
      const int y = std::clamp(y0 + dy, 0, h - 1);
      const double k = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
      if (k <= 0.0 || !maps.covered(y, x)) continue;
      total += k;
      for (int c = 0; c < map.channels(); ++c) out[c] += k * map.at(y, x, c);
    }
  }
  if (total <= 0.0) return false;
  for (double& v : out) v /= total;
  return true;
}

void lookup(const GaussianAttributeMaps& maps, const FeatureMap& map, const Eigen::Vector2d& pixel, int row,
            int col, std::span<double> out) {
  if (covered_bilinear(maps, map, pixel, out)) return;
  for (int c = 0; c < map.channels(); ++c) out[c] = map.at(row, col, c);
}

}  // namespace

GaussianSet maps_to_gaussians(const GaussianAttributeMaps& maps, const TriMesh& mesh,
                              std::span<const SurfaceSample> samples) {
  maps.validate();
  GaussianSet out;
  const int h = maps.height();
  const int w = maps.width();
  const bool no_coverage =
      !maps.coverage.empty() && std::none_of(maps.coverage.begin(), maps.coverage.end(), [](auto c) { return c != 0; });
  if (h == 0 || w == 0 || no_coverage) {
    warn("attribute maps have no coverage; no gaussians created");
    return out;
  }
  std::size_t dropped = 0;
  for (const SurfaceSample& s : samples) {
    auto [row, col] = uv_to_texel(s.uv, h, w);
    if (!maps.covered(row, col)) {
      // Nearest covered 8-neighbour by distance from uv to the texel center.
      double best = std::numeric_limits<double>::infinity();
      int br = -1;
      int bc = -1;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int r = row + dr;
          const int c = col + dc;
          if (r < 0 || c < 0 || r >= h || c >= w || !maps.covered(r, c)) continue;
          const double du = s.uv.x() * w - (c + 0.5);
          const double dv = s.uv.y() * h - (r + 0.5);
          const double d2 = du * du + dv * dv;
          if (d2 < best) {
            best = d2;
            br = r;
            bc = c;
          }
        }
      }
      if (br < 0) {
        ++dropped;
        continue;
      }
      row = br;
      col = bc;
    }
    const Eigen::Vector2d pixel(s.uv.x() * w, s.uv.y() * h);
    double color[3], opacity[1], offset[3], rot[4], scale[3];
    lookup(maps, maps.color, pixel, row, col, color);
    lookup(maps, maps.opacity, pixel, row, col, opacity);
    lookup(maps, maps.offset, pixel, row, col, offset);
    lookup(maps, maps.rotation, pixel, row, col, rot);
    lookup(maps, maps.scale, pixel, row, col, scale);

    Eigen::Quaterniond q(rot[0], rot[1], rot[2], rot[3]);
    if (q.norm() <= 0.0) q = Eigen::Quaterniond::Identity();
    q.normalize();
    const Eigen::Vector3d anchor = surface_position(mesh, s.face, s.bary);
    SurfaceSample a = s;
    a.pos = anchor;
    out.positions.push_back(anchor + Eigen::Vector3d(offset[0], offset[1], offset[2]));
    out.rotations.push_back(q);
    out.scales.push_back(Eigen::Vector3d(scale[0], scale[1], scale[2]).cwiseMax(kScaleMin));
    out.colors.push_back(Eigen::Vector3d(color[0], color[1], color[2]).cwiseMax(0.0).cwiseMin(1.0));
    out.opacities.push_back(std::clamp(opacity[0], 0.0, 1.0));
    out.anchors.push_back(a);
  }
  if (dropped > 0) warn(std::to_string(dropped) + " samples fell on uncovered texels and were dropped");
  return out;
}

bool face_frame(const TriMesh& mesh, int face, Eigen::Matrix3d& frame) {
  const Face& f = mesh.faces().at(static_cast<std::size_t>(face));
  const auto& v = mesh.vertices();
  const Eigen::Vector3d a = v[f.v(1)] - v[f.v(0)];
  const Eigen::Vector3d b = v[f.v(2)] - v[f.v(0)];
  const double la = a.norm();
  if (!(la > 1e-12)) return false;
  const Eigen::Vector3d e1 = a / la;
  Eigen::Vector3d n = e1.cross(b);
  const double ln = n.norm();
  if (!(ln > 1e-12 * std::max(1.0, b.norm()))) return false;
  n /= ln;
  frame.col(0) = e1;
  frame.col(1) = n.cross(e1);
  frame.col(2) = n;
  return true;
}

GaussianSet rig_to_pose(const GaussianSet& canonical, const TriMesh& canonical_mesh, const TriMesh& posed_mesh) {
  canonical.validate();
  if (canonical_mesh.face_count() != posed_mesh.face_count() ||
      canonical_mesh.vertex_count() != posed_mesh.vertex_count()) {
    throw Error("rig_to_pose: meshes do not share topology");
  }
  GaussianSet out = canonical;
  std::size_t fallbacks = 0;
  const auto& cv = canonical_mesh.vertices();
  const auto& pv = posed_mesh.vertices();
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    const SurfaceSample& s = canonical.anchors[i];
    const Face& f = posed_mesh.faces().at(static_cast<std::size_t>(s.face));
    const bool unchanged = cv[f.v(0)] == pv[f.v(0)] && cv[f.v(1)] == pv[f.v(1)] && cv[f.v(2)] == pv[f.v(2)];
    if (unchanged) continue;
    const Eigen::Vector3d ac = surface_position(canonical_mesh, s.face, s.bary);
    const Eigen::Vector3d ap = surface_position(posed_mesh, s.face, s.bary);
    Eigen::Matrix3d fc, fp;
    Eigen::Matrix3d rel = Eigen::Matrix3d::Identity();
    if (face_frame(canonical_mesh, s.face, fc) && face_frame(posed_mesh, s.face, fp)) {
      rel = fp * fc.transpose();
    } else {
      ++fallbacks;
    }
    out.positions[i] = ap + rel * (canonical.positions[i] - ac);
    out.rotations[i] = (Eigen::Quaterniond(rel) * canonical.rotations[i]).normalized();
    out.anchors[i].pos = ap;
  }
  if (fallbacks > 0) warn(std::to_string(fallbacks) + " gaussians on degenerate faces moved by translation only");
  return out;
}

Splat2D project_gaussian(const GaussianSet& gset, std::size_t i, const PinholeCamera& cam, double near_plane) {
  Splat2D s;
  const Eigen::Vector3d c = cam.to_camera(gset.positions[i]);
  s.depth = c.z();
  if (!(c.z() > near_plane)) return s;
  const double iz = 1.0 / c.z();
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx * iz, 0.0, -cam.fx * c.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * c.y() * iz * iz;
  const Eigen::Matrix<double, 2, 3> jw = j * cam.rotation;
  s.cov = jw * gset.covariance(i) * jw.transpose();
  s.cov(0, 0) += kCovarianceFloor;
  s.cov(1, 1) += kCovarianceFloor;
  s.mean = Eigen::Vector2d(cam.fx * c.x() * iz + cam.cx, cam.fy * c.y() * iz + cam.cy);
  s.valid = s.cov.determinant() > 0.0;
  return s;
}

FeatureMap splat_render(const GaussianSet& gset, const PinholeCamera& cam, const SplatOptions& options) {
  cam.validate();
  gset.validate();
  const int w = cam.width;
  const int h = cam.height;
  std::vector<Splat2D> splats(gset.size());
  for (std::size_t i = 0; i < gset.size(); ++i) splats[i] = project_gaussian(gset, i, cam, options.near_plane);
  std::vector<std::size_t> order(gset.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return splats[a].depth < splats[b].depth; });

  std::vector<double> transmittance(static_cast<std::size_t>(w) * h, 1.0);
  FeatureMap out(h, w, 4);
  const double limit = kFootprintSigmas * kFootprintSigmas;
  for (std::size_t i : order) {
    const Splat2D& s = splats[i];
    if (!s.valid || gset.opacities[i] <= 0.0) continue;
    const Eigen::Matrix2d inv = s.cov.inverse();
    const double tr = s.cov.trace();
    const double lmax = 0.5 * tr + std::sqrt(std::max(0.25 * tr * tr - s.cov.determinant(), 0.0));
    const double radius = kFootprintSigmas * std::sqrt(lmax);
    const double xlo = std::ceil(s.mean.x() - radius - 0.5);
    const double xhi = std::floor(s.mean.x() + radius - 0.5);
    const double ylo = std::ceil(s.mean.y() - radius - 0.5);
    const double yhi = std::floor(s.mean.y() + radius - 0.5);
    if (xhi < 0.0 || yhi < 0.0 || xlo > w - 1 || ylo > h - 1) continue;
    const int x0 = static_cast<int>(std::max(xlo, 0.0));
    const int x1 = static_cast<int>(std::min(xhi, w - 1.0));
    const int y0 = static_cast<int>(std::max(ylo, 0.0));
    const int y1 = static_cast<int>(std::min(yhi, h - 1.0));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector2d d(x + 0.5 - s.mean.x(), y + 0.5 - s.mean.y());
        const double m2 = d.dot(inv * d);
        if (m2 > limit) continue;
        const double a = gset.opacities[i] * std::exp(-0.5 * m2);
        double& t = transmittance[static_cast<std::size_t>(y) * w + x];
        for (int c = 0; c < 3; ++c) out.at(y, x, c) += gset.colors[i](c) * a * t;
        t *= 1.0 - a;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double t = transmittance[static_cast<std::size_t>(y) * w + x];
      for (int c = 0; c < 3; ++c) out.at(y, x, c) += t * options.background(c);
      out.at(y, x, 3) = 1.0 - t;
    }
  }
  return out;
}

GrayImage alpha_to_pgm(const FeatureMap& rgba) {
  if (rgba.channels() < 4) throw Error("alpha_to_pgm needs an alpha channel");
  GrayImage img(rgba.width(), rgba.height());
  for (int y = 0; y < rgba.height(); ++y)
    for (int x = 0; x < rgba.width(); ++x) img.at(x, y) = to_byte(rgba.at(y, x, 3));
  return img;
}

std::vector<Tensor> gaussians_to_tensors(const GaussianSet& gset) {
  gset.validate();
  const std::uint64_t n = gset.size();
  std::vector<double> pos, rot, scl, col, opa, anc;
  for (std::size_t i = 0; i < gset.size(); ++i) {
    pos.insert(pos.end(), gset.positions[i].data(), gset.positions[i].data() + 3);
    const auto& q = gset.rotations[i];
    rot.insert(rot.end(), {q.w(), q.x(), q.y(), q.z()});
    scl.insert(scl.end(), gset.scales[i].data(), gset.scales[i].data() + 3);
    col.insert(col.end(), gset.colors[i].data(), gset.colors[i].data() + 3);
    opa.push_back(gset.opacities[i]);
    const SurfaceSample& a = gset.anchors[i];
    anc.insert(anc.end(), {static_cast<double>(a.face), a.bary(0), a.bary(1), a.bary(2), a.uv(0), a.uv(1)});
  }
  return {Tensor(DType::kF64, {n, 3}, pos), Tensor(DType::kF64, {n, 4}, rot), Tensor(DType::kF64, {n, 3}, scl),
          Tensor(DType::kF64, {n, 3}, col), Tensor(DType::kF64, {n, 1}, opa), Tensor(DType::kF64, {n, 6}, anc)};
}

GaussianSet gaussians_from_tensors(const std::vector<Tensor>& t) {
  if (t.size() != 6) throw IoError("gaussian file must hold 6 tensors, found " + std::to_string(t.size()));
  const std::uint64_t widths[6] = {3, 4, 3, 3, 1, 6};
  const std::uint64_t n = t[0].dims.empty() ? 0 : t[0].dims[0];
  for (int k = 0; k < 6; ++k) {
    if (t[k].dims.size() != 2 || t[k].dims[0] != n || t[k].dims[1] != widths[k]) {
      throw IoError("gaussian tensor " + std::to_string(k) + " has an unexpected shape");
    }
  }
  GaussianSet g;
  for (std::uint64_t i = 0; i < n; ++i) {
    const double* p = t[0].values.data() + 3 * i;
    const double* r = t[1].values.data() + 4 * i;
    const double* s = t[2].values.data() + 3 * i;
    const double* c = t[3].values.data() + 3 * i;
    const double* a = t[5].values.data() + 6 * i;
    g.positions.emplace_back(p[0], p[1], p[2]);
    g.rotations.push_back(Eigen::Quaterniond(r[0], r[1], r[2], r[3]));
    g.scales.emplace_back(s[0], s[1], s[2]);
    g.colors.emplace_back(c[0], c[1], c[2]);
    g.opacities.push_back(t[4].values[i]);
    SurfaceSample anchor;
    anchor.face = static_cast<int>(a[0]);
    anchor.bary = Eigen::Vector3d(a[1], a[2], a[3]);
    anchor.uv = Eigen::Vector2d(a[4], a[5]);
    g.anchors.push_back(anchor);
  }
  g.validate();
  return g;
}

void write_gaussians(const std::filesystem::path& path, const GaussianSet& gset) {
  write_tensors(path, gaussians_to_tensors(gset));
}

GaussianSet read_gaussians(const std::filesystem::path& path) {
  try {
    return gaussians_from_tensors(read_tensors(path));
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace dualuv
