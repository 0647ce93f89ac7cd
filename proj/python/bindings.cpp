#include "dualuv/camera.hpp"
#include "dualuv/config.hpp"
#include "dualuv/error.hpp"
#include "dualuv/image.hpp"
#include "dualuv/mesh.hpp"
#include "dualuv/raster.hpp"
#include "dualuv/sampler.hpp"
#include "dualuv/tensor_io.hpp"
#include "dualuv/uv_scatter.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace dualuv;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

template <class T>
py::array_t<T> make_array(std::vector<py::ssize_t> shape, const T* data) {
  py::array_t<T> out(shape);
  std::copy(data, data + out.size(), out.mutable_data());
  return out;
}

py::array_t<double> rows3(const std::vector<Eigen::Vector3d>& v) {
  py::array_t<double> out({static_cast<py::ssize_t>(v.size()), py::ssize_t{3}});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int k = 0; k < 3; ++k) m(i, k) = v[i](k);
  return out;
}

py::array_t<double> map_to_array(const FeatureMap& f) {
  return make_array<double>({f.height(), f.width(), f.channels()}, f.data().data());
}

FeatureMap array_to_map(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw Error("feature array must be H x W or H x W x C");
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  FeatureMap f(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), c);
  std::copy(a.data(), a.data() + a.size(), f.data().begin());
  return f;
}

GrayImage array_to_gray(const ByteArray& a) {
  if (a.ndim() != 2) throw Error("mask must be H x W");
  GrayImage g(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), g.pixels.begin());
  return g;
}

py::array_t<std::uint8_t> gray_to_array(const GrayImage& g) {
  return make_array<std::uint8_t>({g.height, g.width}, g.pixels.data());
}

TriMesh mesh_from_arrays(const Array& vertices, const py::array_t<int, py::array::c_style | py::array::forcecast>& faces) {
  if (vertices.ndim() != 2 || vertices.shape(1) != 3) throw Error("vertices must be N x 3");
  if (faces.ndim() != 2 || faces.shape(1) != 3) throw Error("faces must be F x 3");
  std::vector<Eigen::Vector3d> v(vertices.shape(0));
  auto vr = vertices.unchecked<2>();
  for (py::ssize_t i = 0; i < vertices.shape(0); ++i) v[i] = {vr(i, 0), vr(i, 1), vr(i, 2)};
  std::vector<Face> f(faces.shape(0));
  auto fr = faces.unchecked<2>();
  for (py::ssize_t i = 0; i < faces.shape(0); ++i)
    for (int k = 0; k < 3; ++k) f[i].corners[k].vertex = fr(i, k);
  return TriMesh(std::move(v), std::move(f));
}

py::dict samples_to_dict(const std::vector<SurfaceSample>& s) {
  std::vector<int> face(s.size());
  std::vector<Eigen::Vector3d> bary(s.size()), pos(s.size());
  py::array_t<double> uv({static_cast<py::ssize_t>(s.size()), py::ssize_t{2}});
  auto u = uv.mutable_unchecked<2>();
  for (std::size_t i = 0; i < s.size(); ++i) {
    face[i] = s[i].face;
    bary[i] = s[i].bary;
    pos[i] = s[i].pos;
    u(i, 0) = s[i].uv.x();
    u(i, 1) = s[i].uv.y();
  }
  py::dict d;
  d["face"] = make_array<int>({static_cast<py::ssize_t>(s.size())}, face.data());
  d["bary"] = rows3(bary);
  d["uv"] = uv;
  d["pos"] = rows3(pos);
  return d;
}

py::array_t<double> tensor_to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.dims.begin(), t.dims.end());
  return make_array<double>(shape, t.values.data());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dual UV encoding, rasterization and prompt sampling";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());

  py::class_<PinholeCamera>(m, "Camera")
      .def(py::init<>())
      .def_readwrite("fx", &PinholeCamera::fx)
      .def_readwrite("fy", &PinholeCamera::fy)
      .def_readwrite("cx", &PinholeCamera::cx)
      .def_readwrite("cy", &PinholeCamera::cy)
      .def_readwrite("width", &PinholeCamera::width)
      .def_readwrite("height", &PinholeCamera::height)
      .def_readwrite("rotation", &PinholeCamera::rotation)
      .def_readwrite("translation", &PinholeCamera::translation)
      .def_static("from_json", &parse_camera)
      .def_static("load", [](const std::filesystem::path& p) { return read_camera(p); })
      .def_static("look_at", &look_at, py::arg("eye"), py::arg("target"), py::arg("up"), py::arg("fx"),
                  py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"), py::arg("height"))
      .def("to_json", &camera_to_json)
      .def("validate", &PinholeCamera::validate)
      .def("project", [](const PinholeCamera& c, const Eigen::Vector3d& p) {
        const Projection pr = project(c, p);
        return py::make_tuple(pr.pixel, pr.depth, pr.behind);
      });

  py::class_<TriMesh>(m, "Mesh")
      .def(py::init(&mesh_from_arrays), py::arg("vertices"), py::arg("faces"))
      .def_static("icosphere", &make_icosphere, py::arg("subdivisions"), py::arg("radius") = 1.0,
                  py::arg("center") = Eigen::Vector3d::Zero())
      .def_static("cube", &make_unit_cube)
      .def_static("quad", &make_quad, py::arg("half"), py::arg("z0"), py::arg("facing_negative_z") = true)
      .def_static("load", [](const std::filesystem::path& p) { return read_obj(p); })
      .def_static("from_obj", &parse_obj)
      .def("save", [](const TriMesh& mesh, const std::filesystem::path& p) { write_obj(p, mesh); })
      .def_property_readonly("vertices", [](const TriMesh& mesh) { return rows3(mesh.vertices()); })
      .def_property_readonly("faces",
                             [](const TriMesh& mesh) {
                               py::array_t<int> out({static_cast<py::ssize_t>(mesh.face_count()), py::ssize_t{3}});
                               auto f = out.mutable_unchecked<2>();
                               for (std::size_t i = 0; i < mesh.face_count(); ++i)
                                 for (int k = 0; k < 3; ++k) f(i, k) = mesh.faces()[i].v(k);
                               return out;
                             })
      .def_property_readonly("normals", [](const TriMesh& mesh) { return rows3(mesh.normals()); })
      .def_property_readonly("area", &TriMesh::total_area)
      .def_property_readonly("bbox_diagonal", &TriMesh::bbox_diagonal)
      .def("__len__", &TriMesh::face_count);

  m.def("sample_surface",
        [](const TriMesh& mesh, int count, std::uint64_t seed) {
          return samples_to_dict(sample_surface_uniform(mesh, count, seed));
        },
        py::arg("mesh"), py::arg("count"), py::arg("seed") = 0);

  m.def("shell", [](const TriMesh& mesh, std::optional<double> delta) {
        return build_shell(mesh, delta.value_or(default_shell_delta(mesh))).mesh;
      },
      py::arg("mesh"), py::arg("delta") = py::none());

  m.def("rasterize",
        [](const TriMesh& mesh, const PinholeCamera& cam, bool cull) {
          RasterOptions opt;
          opt.cull_backfaces = cull;
          const DepthBuffer db = rasterize(mesh, cam, opt);
          return py::make_tuple(make_array<double>({db.height, db.width}, db.depth.data()),
                                make_array<int>({db.height, db.width}, db.face.data()));
        },
        py::arg("mesh"), py::arg("camera"), py::arg("cull") = true,
        "Depth (+inf where empty) and face id (-1 where empty), both H x W.");

  m.def("visibility",
        [](const Array& points, const TriMesh& mesh, const PinholeCamera& cam, double eps) {
          if (points.ndim() != 2 || points.shape(1) != 3) throw Error("points must be N x 3");
          std::vector<Eigen::Vector3d> p(points.shape(0));
          auto r = points.unchecked<2>();
          for (py::ssize_t i = 0; i < points.shape(0); ++i) p[i] = {r(i, 0), r(i, 1), r(i, 2)};
          const auto vis = point_visibility(p, rasterize(mesh, cam), cam, eps);
          return make_array<std::uint8_t>({static_cast<py::ssize_t>(vis.size())}, vis.data());
        },
        py::arg("points"), py::arg("mesh"), py::arg("camera"), py::arg("eps") = kVisibilityEpsRel);

  m.def("silhouette", [](const TriMesh& mesh, const PinholeCamera& cam) { return gray_to_array(silhouette(mesh, cam)); });

  m.def("distance_transform", [](const ByteArray& mask) {
    const DistanceField df = distance_transform(array_to_gray(mask));
    return make_array<double>({df.height, df.width}, df.values.data());
  });

  m.def("encode_uv",
        [](const TriMesh& mesh, const PinholeCamera& cam, const Array& features, int samples, std::uint64_t seed,
           std::pair<int, int> grid, bool shell, std::optional<double> delta) {
          const FeatureMap f = array_to_map(features);
          EncodeOptions opt;
          opt.grid = {grid.first, grid.second};
          EncodeResult r;
          if (shell) {
            const ShellMesh sm = build_shell(mesh, delta.value_or(default_shell_delta(mesh)));
            r = shell_uv_encode(mesh, sm, cam, f, sample_surface_uniform(mesh, samples, seed), opt);
          } else {
            r = core_uv_encode(mesh, cam, f, sample_surface_uniform(mesh, samples, seed), opt);
          }
          const auto cov = r.grid.coverage();
          return py::make_tuple(map_to_array(r.grid.features),
                                make_array<std::uint8_t>({r.grid.height(), r.grid.width()}, cov.data()),
                                make_array<std::uint8_t>({static_cast<py::ssize_t>(r.mask.size())}, r.mask.data()));
        },
        py::arg("mesh"), py::arg("camera"), py::arg("features"), py::arg("samples") = 200000,
        py::arg("seed") = 0, py::arg("grid") = std::pair<int, int>{512, 512}, py::arg("shell") = false,
        py::arg("delta") = py::none(),
        "Returns (H x W x C features, H x W coverage, per-sample gate).");

  m.def("compose_prompt",
        [](const std::string& vocab_json, const std::string& regime, std::uint64_t seed, int negatives) {
          return sample_scene(parse_vocab(vocab_json), regime_from_string(regime), seed, negatives).to_json_line();
        },
        py::arg("vocab_json"), py::arg("regime"), py::arg("seed"), py::arg("negatives") = 0);

  m.def("normalize_config", [](const std::string& text) { return config_to_json(parse_config(text)); },
        "Parse, validate and re-serialize a pipeline config with defaults filled in.");

  m.def("read_tensors", [](const std::filesystem::path& p) {
    py::list out;
    for (const Tensor& t : read_tensors(p)) out.append(tensor_to_array(t));
    return out;
  });
  m.def("write_tensors",
        [](const std::filesystem::path& p, const std::vector<Array>& arrays, const std::string& dtype) {
          DType d = DType::kF64;
          if (dtype == "f32") d = DType::kF32;
          else if (dtype == "u8") d = DType::kU8;
          else if (dtype != "f64") throw Error("dtype must be f32, f64 or u8");
          std::vector<Tensor> ts;
          for (const Array& a : arrays) {
            std::vector<std::uint64_t> dims(a.shape(), a.shape() + a.ndim());
            ts.emplace_back(d, std::move(dims), std::vector<double>(a.data(), a.data() + a.size()));
          }
          write_tensors(p, ts);
        },
        py::arg("path"), py::arg("arrays"), py::arg("dtype") = "f64");
}
