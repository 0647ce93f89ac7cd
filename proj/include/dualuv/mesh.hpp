#pragma once

// Triangle meshes with per-corner UV atlases, surface sampling and the
// normal-offset shell.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dualuv {

struct Corner {
  int vertex = 0;
  Eigen::Vector2d uv = Eigen::Vector2d::Zero();
};

struct Face {
  std::array<Corner, 3> corners;

  int v(int i) const { return corners[i].vertex; }
  const Eigen::Vector2d& uv(int i) const { return corners[i].uv; }
};

/// Area-weighted vertex normals plus a flag for vertices that only touch
/// zero-area faces (those get the fixed fallback (0,0,1)).
struct VertexNormals {
  std::vector<Eigen::Vector3d> normals;
  std::vector<std::uint8_t> fallback;

  bool any_fallback() const;
};

class TriMesh {
 public:
  TriMesh() = default;

  /// Validates indices and uv finiteness, then computes vertex normals.
  /// Throws Error on out-of-range or repeated vertex indices.
  TriMesh(std::vector<Eigen::Vector3d> vertices, std::vector<Face> faces);

  const std::vector<Eigen::Vector3d>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<Eigen::Vector3d>& normals() const { return normals_.normals; }
  const VertexNormals& vertex_normals() const { return normals_; }

  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t face_count() const { return faces_.size(); }
  bool empty() const { return faces_.empty(); }

  /// Same topology and atlas, new positions.
  TriMesh with_vertices(std::vector<Eigen::Vector3d> vertices) const;
  TriMesh translated(const Eigen::Vector3d& offset) const;

  double face_area(int face) const;
  Eigen::Vector3d face_normal(int face) const;  // unit, zero for degenerate faces
  double total_area() const;
  Eigen::Vector3d bbox_min() const;
  Eigen::Vector3d bbox_max() const;
  double bbox_diagonal() const;
  Eigen::Vector3d centroid() const;  // vertex mean

 private:
  std::vector<Eigen::Vector3d> vertices_;
  std::vector<Face> faces_;
  VertexNormals normals_;
};

VertexNormals compute_vertex_normals(std::span<const Eigen::Vector3d> vertices,
                                     std::span<const Face> faces);
inline VertexNormals compute_vertex_normals(const TriMesh& mesh) {
  return compute_vertex_normals(mesh.vertices(), mesh.faces());
}

struct SurfaceSample {
  int face = 0;
  Eigen::Vector3d bary = Eigen::Vector3d(1.0, 0.0, 0.0);
  Eigen::Vector2d uv = Eigen::Vector2d::Zero();
  Eigen::Vector3d pos = Eigen::Vector3d::Zero();
};

/// Barycentric blend of the face corner uvs. Throws Error for a bad face.
Eigen::Vector2d uv_unparameterize(const TriMesh& mesh, int face, const Eigen::Vector3d& bary);

/// Barycentric blend of the current face vertex positions.
Eigen::Vector3d surface_position(const TriMesh& mesh, int face, const Eigen::Vector3d& bary);

/// Recomputes `pos` of every sample against (possibly deformed) vertices.
std::vector<Eigen::Vector3d> sample_positions(const TriMesh& mesh,
                                              std::span<const SurfaceSample> samples);

/// Area-proportional samples. Zero-area faces never receive samples.
/// Throws Error when count <= 0 or the mesh has no area.
std::vector<SurfaceSample> sample_surface_uniform(const TriMesh& mesh, int count,
                                                  std::uint64_t seed);

struct ShellMesh {
  TriMesh mesh;  // offset vertices, base topology and atlas
  double delta = 0.0;
};

/// Offsets every vertex by delta along its vertex normal. Throws for delta < 0.
ShellMesh build_shell(const TriMesh& mesh, double delta);

/// Two percent of the bounding-box diagonal.
double default_shell_delta(const TriMesh& mesh);

// Procedural fixtures.

/// Subdivided icosahedron projected to a sphere of the given radius, with an
/// equirectangular atlas whose seam faces +z.
TriMesh make_icosphere(int subdivisions, double radius = 1.0,
                       const Eigen::Vector3d& center = Eigen::Vector3d::Zero());

/// Axis-aligned unit cube [0,1]^3, outward winding, one uv chart per face.
TriMesh make_unit_cube();

/// Square [-half, half]^2 in the z = z0 plane, split into 2 triangles.
/// `facing_negative_z` selects the winding so the normal points to -z.
TriMesh make_quad(double half, double z0, bool facing_negative_z = true);

// OBJ: v, vt and f v/vt (1-based, negative indices allowed, polygons fanned).
TriMesh read_obj(const std::filesystem::path& path);
TriMesh parse_obj(const std::string& text);
void write_obj(const std::filesystem::path& path, const TriMesh& mesh);

}  // namespace dualuv
