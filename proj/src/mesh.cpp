#include "dualuv/mesh.hpp"

#include "dualuv/error.hpp"
#include "dualuv/random.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

namespace dualuv {

bool VertexNormals::any_fallback() const {
  return std::any_of(fallback.begin(), fallback.end(), [](std::uint8_t f) { return f != 0; });
}

VertexNormals compute_vertex_normals(std::span<const Eigen::Vector3d> vertices,
                                     std::span<const Face> faces) {
  std::vector<Eigen::Vector3d> acc(vertices.size(), Eigen::Vector3d::Zero());
  for (const Face& f : faces) {
    const Eigen::Vector3d& a = vertices[f.v(0)];
    const Eigen::Vector3d& b = vertices[f.v(1)];
    const Eigen::Vector3d& c = vertices[f.v(2)];
    // Unnormalized cross product has length 2 * area: area weighting for free.
    const Eigen::Vector3d n = (b - a).cross(c - a);
    for (int i = 0; i < 3; ++i) acc[f.v(i)] += n;
  }
  VertexNormals out;
  out.normals.resize(vertices.size());
  out.fallback.assign(vertices.size(), 0);
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const double len = acc[i].norm();
    if (len > 0.0 && std::isfinite(len)) {
      out.normals[i] = acc[i] / len;
    } else {
      out.normals[i] = Eigen::Vector3d::UnitZ();
      out.fallback[i] = 1;
    }
  }
  return out;
}

TriMesh::TriMesh(std::vector<Eigen::Vector3d> vertices, std::vector<Face> faces)
    : vertices_(std::move(vertices)), faces_(std::move(faces)) {
  const int n = static_cast<int>(vertices_.size());
  for (std::size_t fi = 0; fi < faces_.size(); ++fi) {
    const Face& f = faces_[fi];
    for (int i = 0; i < 3; ++i) {
      if (f.v(i) < 0 || f.v(i) >= n) {
        throw Error("face " + std::to_string(fi) + " references vertex " +
                    std::to_string(f.v(i)) + " out of range [0," + std::to_string(n) + ")");
      }
      if (!f.uv(i).allFinite()) throw Error("face " + std::to_string(fi) + " has non-finite uv");
    }
    if (f.v(0) == f.v(1) || f.v(1) == f.v(2) || f.v(0) == f.v(2)) {
      throw Error("face " + std::to_string(fi) + " repeats a vertex index");
    }
  }
  normals_ = compute_vertex_normals(vertices_, faces_);
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    // Isolated vertices are not interesting; only report ones touched by faces.
    flagged += normals_.fallback[i];
  }
  if (flagged > 0 && !faces_.empty()) {
    std::size_t touched = 0;
    std::vector<std::uint8_t> used(vertices_.size(), 0);
    for (const Face& f : faces_)
      for (int i = 0; i < 3; ++i) used[f.v(i)] = 1;
    for (std::size_t i = 0; i < vertices_.size(); ++i) touched += used[i] && normals_.fallback[i];
    if (touched > 0) {
      warn(std::to_string(touched) + " vertices touch only zero-area faces; normal set to +z");
    }
  }
}

TriMesh TriMesh::with_vertices(std::vector<Eigen::Vector3d> vertices) const {
  if (vertices.size() != vertices_.size()) {
    throw Error("with_vertices: expected " + std::to_string(vertices_.size()) + " vertices, got " +
                std::to_string(vertices.size()));
  }
  TriMesh out;
  out.vertices_ = std::move(vertices);
  out.faces_ = faces_;
  out.normals_ = compute_vertex_normals(out.vertices_, out.faces_);
  return out;
}

TriMesh TriMesh::translated(const Eigen::Vector3d& offset) const {
  std::vector<Eigen::Vector3d> moved = vertices_;
  for (auto& v : moved) v += offset;
  return with_vertices(std::move(moved));
}

double TriMesh::face_area(int face) const {
  const Face& f = faces_.at(face);
  return 0.5 * (vertices_[f.v(1)] - vertices_[f.v(0)]).cross(vertices_[f.v(2)] - vertices_[f.v(0)]).norm();
}

Eigen::Vector3d TriMesh::face_normal(int face) const {
  const Face& f = faces_.at(face);
  const Eigen::Vector3d n =
      (vertices_[f.v(1)] - vertices_[f.v(0)]).cross(vertices_[f.v(2)] - vertices_[f.v(0)]);
  const double len = n.norm();
  return len > 0.0 ? Eigen::Vector3d(n / len) : Eigen::Vector3d::Zero();
}

double TriMesh::total_area() const {
  double a = 0.0;
  for (int i = 0; i < static_cast<int>(faces_.size()); ++i) a += face_area(i);
  return a;
}

Eigen::Vector3d TriMesh::bbox_min() const {
  Eigen::Vector3d m = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  for (const auto& v : vertices_) m = m.cwiseMin(v);
  return m;
}

Eigen::Vector3d TriMesh::bbox_max() const {
  Eigen::Vector3d m = Eigen::Vector3d::Constant(-std::numeric_limits<double>::infinity());
  for (const auto& v : vertices_) m = m.cwiseMax(v);
  return m;
}

double TriMesh::bbox_diagonal() const {
  if (vertices_.empty()) return 0.0;
  return (bbox_max() - bbox_min()).norm();
}

Eigen::Vector3d TriMesh::centroid() const {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& v : vertices_) c += v;
  return vertices_.empty() ? c : Eigen::Vector3d(c / static_cast<double>(vertices_.size()));
}

Eigen::Vector2d uv_unparameterize(const TriMesh& mesh, int face, const Eigen::Vector3d& bary) {
  if (face < 0 || face >= static_cast<int>(mesh.face_count())) {
    throw Error("uv_unparameterize: face " + std::to_string(face) + " out of range");
  }
  const Face& f = mesh.faces()[face];
  return bary(0) * f.uv(0) + bary(1) * f.uv(1) + bary(2) * f.uv(2);
}

Eigen::Vector3d surface_position(const TriMesh& mesh, int face, const Eigen::Vector3d& bary) {
  const Face& f = mesh.faces().at(face);
  const auto& v = mesh.vertices();
  return bary(0) * v[f.v(0)] + bary(1) * v[f.v(1)] + bary(2) * v[f.v(2)];
}

std::vector<Eigen::Vector3d> sample_positions(const TriMesh& mesh,
                                              std::span<const SurfaceSample> samples) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(surface_position(mesh, s.face, s.bary));
  return out;
}

std::vector<SurfaceSample> sample_surface_uniform(const TriMesh& mesh, int count,
                                                  std::uint64_t seed) {
  if (count <= 0) throw Error("sample_surface_uniform: count must be positive");
  std::vector<double> cumulative(mesh.face_count());
  double total = 0.0;
  std::size_t degenerate = 0;
  for (int i = 0; i < static_cast<int>(mesh.face_count()); ++i) {
    const double a = mesh.face_area(i);
    if (!(a > 0.0)) ++degenerate;
    total += std::max(a, 0.0);
    cumulative[i] = total;
  }
  if (!(total > 0.0)) throw Error("sample_surface_uniform: mesh has zero total area");
  if (degenerate > 0) warn(std::to_string(degenerate) + " zero-area faces excluded from sampling");

  Rng rng(seed);
  std::vector<SurfaceSample> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    const double target = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
    int face = static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative.begin(),
                                                         static_cast<std::ptrdiff_t>(cumulative.size()) - 1));
    // Only reachable when rounding puts target at `total`: the clamped last
    // face may have zero area, so walk back to one that does not.
    while (face > 0 && cumulative[face] == cumulative[face - 1]) --face;
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    SurfaceSample s;
    s.face = face;
    s.bary = Eigen::Vector3d(1.0 - r1, r1 * (1.0 - r2), r1 * r2);
    s.uv = uv_unparameterize(mesh, face, s.bary);
    s.pos = surface_position(mesh, face, s.bary);
    out.push_back(s);
  }
  return out;
}

ShellMesh build_shell(const TriMesh& mesh, double delta) {
  if (!(delta >= 0.0)) throw Error("build_shell: delta must be non-negative");
  std::vector<Eigen::Vector3d> moved = mesh.vertices();
  const auto& n = mesh.normals();
  for (std::size_t i = 0; i < moved.size(); ++i) moved[i] += delta * n[i];
  return ShellMesh{mesh.with_vertices(std::move(moved)), delta};
}

double default_shell_delta(const TriMesh& mesh) { return 0.02 * mesh.bbox_diagonal(); }

// ---------------------------------------------------------------------------
// Procedural meshes

namespace {

Eigen::Vector2d sphere_uv(const Eigen::Vector3d& p) {
  const double u = 0.5 + std::atan2(p.x(), -p.z()) / (2.0 * std::numbers::pi);
  const double v = std::acos(std::clamp(p.y(), -1.0, 1.0)) / std::numbers::pi;
  return {u, v};
}

}  // namespace

TriMesh make_icosphere(int subdivisions, double radius, const Eigen::Vector3d& center) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v.normalize();
  std::vector<std::array<int, 3>> tris = {
      {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
      {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back((verts[a] + verts[b]).normalized());
      const int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(tris.size() * 4);
    for (const auto& tri : tris) {
      const int a = mid(tri[0], tri[1]);
      const int b = mid(tri[1], tri[2]);
      const int c = mid(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    tris = std::move(next);
  }

  std::vector<Face> faces;
  faces.reserve(tris.size());
  for (const auto& tri : tris) {
    Face f;
    std::array<Eigen::Vector2d, 3> uv;
    std::array<bool, 3> pole{};
    for (int i = 0; i < 3; ++i) {
      uv[i] = sphere_uv(verts[tri[i]]);
      pole[i] = std::abs(verts[tri[i]].y()) > 1.0 - 1e-12;
    }
    // Unwrap corners that straddle the seam, then clamp back into the atlas.
    double umin = 2.0;
    double umax = -1.0;
    for (int i = 0; i < 3; ++i) {
      if (pole[i]) continue;
      umin = std::min(umin, uv[i].x());
      umax = std::max(umax, uv[i].x());
    }
    if (umax - umin > 0.5) {
      for (int i = 0; i < 3; ++i)
        if (!pole[i] && uv[i].x() < 0.5) uv[i].x() += 1.0;
    }
    double usum = 0.0;
    int ucount = 0;
    for (int i = 0; i < 3; ++i)
      if (!pole[i]) {
        usum += uv[i].x();
        ++ucount;
      }
    for (int i = 0; i < 3; ++i) {
      if (pole[i] && ucount > 0) uv[i].x() = usum / ucount;
      uv[i].x() = std::clamp(uv[i].x(), 0.0, 1.0);
      f.corners[i] = Corner{tri[i], uv[i]};
    }
    faces.push_back(f);
  }
  for (auto& v : verts) v = center + radius * v;
  return TriMesh(std::move(verts), std::move(faces));
}

TriMesh make_unit_cube() {
  std::vector<Eigen::Vector3d> verts;
  for (int i = 0; i < 8; ++i) verts.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
  auto idx = [](int x, int y, int z) { return x | (y << 1) | (z << 2); };
  // Each quad is listed counter-clockwise seen from outside, starting at an
  // even-parity corner so the split diagonal joins the two even corners. The
  // even corners form a regular tetrahedron, which keeps area-weighted normals
  // symmetric.
  const std::array<std::array<int, 4>, 6> quads = {{
      {idx(0, 0, 0), idx(0, 1, 0), idx(1, 1, 0), idx(1, 0, 0)},  // z = 0
      {idx(0, 1, 1), idx(0, 0, 1), idx(1, 0, 1), idx(1, 1, 1)},  // z = 1
      {idx(0, 0, 0), idx(1, 0, 0), idx(1, 0, 1), idx(0, 0, 1)},  // y = 0
      {idx(0, 1, 1), idx(1, 1, 1), idx(1, 1, 0), idx(0, 1, 0)},  // y = 1
      {idx(0, 0, 0), idx(0, 0, 1), idx(0, 1, 1), idx(0, 1, 0)},  // x = 0
      {idx(1, 0, 1), idx(1, 0, 0), idx(1, 1, 0), idx(1, 1, 1)},  // x = 1
  }};
  std::vector<Face> faces;
  for (int q = 0; q < 6; ++q) {
    const double u0 = (q % 3) / 3.0;
    const double v0 = (q / 3) / 2.0;
    const std::array<Eigen::Vector2d, 4> uv = {
        Eigen::Vector2d(u0, v0), Eigen::Vector2d(u0 + 1.0 / 3.0, v0),
        Eigen::Vector2d(u0 + 1.0 / 3.0, v0 + 0.5), Eigen::Vector2d(u0, v0 + 0.5)};
    const auto& c = quads[q];
    faces.push_back(Face{{Corner{c[0], uv[0]}, Corner{c[1], uv[1]}, Corner{c[2], uv[2]}}});
    faces.push_back(Face{{Corner{c[0], uv[0]}, Corner{c[2], uv[2]}, Corner{c[3], uv[3]}}});
  }
  return TriMesh(std::move(verts), std::move(faces));
}

TriMesh make_quad(double half, double z0, bool facing_negative_z) {
  std::vector<Eigen::Vector3d> verts = {
      {-half, -half, z0}, {half, -half, z0}, {half, half, z0}, {-half, half, z0}};
  const std::array<Eigen::Vector2d, 4> uv = {Eigen::Vector2d(0, 1), Eigen::Vector2d(1, 1),
                                             Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 0)};
  auto face = [&](int a, int b, int c) {
    return Face{{Corner{a, uv[a]}, Corner{b, uv[b]}, Corner{c, uv[c]}}};
  };
  std::vector<Face> faces;
  if (facing_negative_z) {
    faces = {face(0, 2, 1), face(0, 3, 2)};
  } else {
    faces = {face(0, 1, 2), face(0, 2, 3)};
  }
  return TriMesh(std::move(verts), std::move(faces));
}

// ---------------------------------------------------------------------------
// OBJ

namespace {

int resolve_index(long raw, std::size_t count, int line) {
  long idx = raw > 0 ? raw - 1 : static_cast<long>(count) + raw;
  if (raw == 0 || idx < 0 || idx >= static_cast<long>(count)) {
    throw IoError("obj line " + std::to_string(line) + ": index " + std::to_string(raw) +
                  " out of range");
  }
  return static_cast<int>(idx);
}

}  // namespace

TriMesh parse_obj(const std::string& text) {
  std::vector<Eigen::Vector3d> verts;
  std::vector<Eigen::Vector2d> uvs;
  std::vector<Face> faces;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Eigen::Vector3d p;
      if (!(ls >> p.x() >> p.y() >> p.z())) throw IoError("obj line " + std::to_string(lineno) + ": bad vertex");
      verts.push_back(p);
    } else if (tag == "vt") {
      Eigen::Vector2d t;
      if (!(ls >> t.x() >> t.y())) throw IoError("obj line " + std::to_string(lineno) + ": bad texcoord");
      uvs.push_back(t);
    } else if (tag == "f") {
      std::vector<Corner> poly;
      std::string tok;
      while (ls >> tok) {
        Corner c;
        const auto slash = tok.find('/');
        try {
          c.vertex = resolve_index(std::stol(tok.substr(0, slash)), verts.size(), lineno);
          if (slash != std::string::npos) {
            const auto rest = tok.substr(slash + 1);
            const auto slash2 = rest.find('/');
            const auto vt = rest.substr(0, slash2);
            if (!vt.empty()) c.uv = uvs[resolve_index(std::stol(vt), uvs.size(), lineno)];
          }
        } catch (const std::invalid_argument&) {
          throw IoError("obj line " + std::to_string(lineno) + ": bad face token '" + tok + "'");
        }
        poly.push_back(c);
      }
      if (poly.size() < 3) throw IoError("obj line " + std::to_string(lineno) + ": face with < 3 corners");
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
        faces.push_back(Face{{poly[0], poly[k], poly[k + 1]}});
      }
    }
  }
  try {
    return TriMesh(std::move(verts), std::move(faces));
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw IoError(std::string("obj: ") + e.what());
  }
}

TriMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_obj(ss.str());
}

void write_obj(const std::filesystem::path& path, const TriMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& v : mesh.vertices()) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.faces())
    for (int i = 0; i < 3; ++i) out << "vt " << f.uv(i).x() << ' ' << f.uv(i).y() << '\n';
  int corner = 1;
  for (const auto& f : mesh.faces()) {
    out << 'f';
    for (int i = 0; i < 3; ++i) out << ' ' << f.v(i) + 1 << '/' << corner++;
    out << '\n';
  }
}

}  // namespace dualuv
