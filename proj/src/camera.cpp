#include "dualuv/camera.hpp"

#include "dualuv/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dualuv {

using json = nlohmann::json;

void PinholeCamera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error("camera focal lengths must be positive");
  if (width < 1 || height < 1) throw Error("camera image size must be at least 1x1");
  if (!rotation.allFinite() || !translation.allFinite()) throw Error("camera pose must be finite");
}

Projection project_camera_space(const PinholeCamera& cam, const Eigen::Vector3d& c) {
  Projection p;
  p.depth = c.z();
  if (!(c.z() > kBehindCameraDepth)) {
    p.behind = true;
    return p;
  }
  p.pixel = Eigen::Vector2d(cam.fx * c.x() / c.z() + cam.cx, cam.fy * c.y() / c.z() + cam.cy);
  return p;
}

Projection project(const PinholeCamera& cam, const Eigen::Vector3d& world) {
  return project_camera_space(cam, cam.to_camera(world));
}

Eigen::Vector3d unproject(const PinholeCamera& cam, const Eigen::Vector2d& pixel, double depth) {
  const Eigen::Vector3d c((pixel.x() - cam.cx) / cam.fx * depth, (pixel.y() - cam.cy) / cam.fy * depth,
                          depth);
  return cam.rotation.transpose() * (c - cam.translation);
}

PinholeCamera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                      const Eigen::Vector3d& up, double fx, double fy, double cx, double cy,
                      int width, int height) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = (-up).cross(z);
  if (x.norm() < 1e-12) throw Error("look_at: up is parallel to the viewing direction");
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  PinholeCamera cam;
  cam.rotation.row(0) = x.transpose();
  cam.rotation.row(1) = y.transpose();
  cam.rotation.row(2) = z.transpose();
  cam.translation = -cam.rotation * eye;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.width = width;
  cam.height = height;
  return cam;
}

double focal_for_fov(int width, double fov_deg) {
  return (0.5 * width) / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
}

FovCorrection fov_correct(const PinholeCamera& cam, double translation_z, double target_fov_deg) {
  if (!(translation_z > 0.0)) throw Error("fov_correct: translation_z must be positive");
  if (!(target_fov_deg > 0.0 && target_fov_deg < 180.0)) {
    throw Error("fov_correct: target fov must lie in (0, 180) degrees");
  }
  cam.validate();
  FovCorrection out;
  out.camera = cam;
  const double fx_new = focal_for_fov(cam.width, target_fov_deg);
  out.scale = fx_new / cam.fx;
  out.camera.fx = fx_new;
  out.camera.fy = out.scale * cam.fy;
  out.translation_z = out.scale * translation_z;
  return out;
}

double fov_reprojection_drift(const PinholeCamera& before, double translation_z,
                              const FovCorrection& after, double band) {
  // Points are placed in root-relative camera space: X, Y chosen so that they
  // land on a grid of pixels at depth t_z, then pushed to t_z * (1 +- band).
  double worst = 0.0;
  for (int gy = 0; gy <= 4; ++gy) {
    for (int gx = 0; gx <= 4; ++gx) {
      const double px = before.width * gx / 4.0;
      const double py = before.height * gy / 4.0;
      const double x = (px - before.cx) / before.fx * translation_z;
      const double y = (py - before.cy) / before.fy * translation_z;
      for (double rel : {-band, band}) {
        const double dz = rel * translation_z;
        const double z0 = translation_z + dz;
        const double z1 = after.translation_z + dz;
        const Eigen::Vector2d p0(before.fx * x / z0 + before.cx, before.fy * y / z0 + before.cy);
        const Eigen::Vector2d p1(after.camera.fx * x / z1 + after.camera.cx,
                                 after.camera.fy * y / z1 + after.camera.cy);
        worst = std::max(worst, (p1 - p0).norm());
      }
    }
  }
  return worst;
}

Eigen::Vector3d compute_lookat(std::span<const Eigen::Vector3d> vertices,
                               const Eigen::Vector3d& pelvis, const Eigen::Vector3d& head,
                               const LookAtOptions& options) {
  const Eigen::Vector3d up = options.vertical.normalized();
  double vmin = std::numeric_limits<double>::infinity();
  double vmax = -std::numeric_limits<double>::infinity();
  for (const auto& v : vertices) {
    const double h = v.dot(up);
    vmin = std::min(vmin, h);
    vmax = std::max(vmax, h);
  }
  const Eigen::Vector3d mid = 0.5 * (pelvis + head);
  const Eigen::Vector3d horizontal = mid - mid.dot(up) * up;
  if (vertices.empty()) return horizontal;
  return horizontal + (vmin + options.lambda * (vmax - vmin)) * up;
}

namespace {

PinholeCamera camera_from_json(const json& j) {
  PinholeCamera cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  if (j.contains("R")) {
    const auto r = j.at("R").get<std::vector<double>>();
    if (r.size() != 9) throw IoError("camera R must have 9 entries");
    for (int i = 0; i < 9; ++i) cam.rotation(i / 3, i % 3) = r[i];
  }
  if (j.contains("t")) {
    const auto t = j.at("t").get<std::vector<double>>();
    if (t.size() != 3) throw IoError("camera t must have 3 entries");
    cam.translation = Eigen::Vector3d(t[0], t[1], t[2]);
  }
  try {
    cam.validate();
  } catch (const Error& e) {
    throw IoError(e.what());
  }
  return cam;
}

}  // namespace

PinholeCamera parse_camera(const std::string& text) {
  try {
    return camera_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw IoError(std::string("camera json: ") + e.what());
  }
}

PinholeCamera read_camera(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_camera(ss.str());
}

std::string camera_to_json(const PinholeCamera& cam) {
  json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  std::vector<double> r(9);
  for (int i = 0; i < 9; ++i) r[i] = cam.rotation(i / 3, i % 3);
  j["R"] = r;
  j["t"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
  return j.dump(2);
}

void write_camera(const std::filesystem::path& path, const PinholeCamera& cam) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << camera_to_json(cam) << '\n';
}

}  // namespace dualuv
