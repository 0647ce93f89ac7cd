#include "dualuv/raster.hpp"

#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

using namespace dualuv;
using namespace dualuv::testing;

namespace {

PinholeCamera identity_camera(int size, double f) {
  PinholeCamera c;
  c.fx = c.fy = f;
  c.cx = c.cy = 0.5 * size;
  c.width = c.height = size;
  return c;
}

TriMesh triangle(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  std::vector<Face> f(1);
  for (int i = 0; i < 3; ++i) f[0].corners[i].vertex = i;
  return TriMesh({a, b, c}, f);
}

}  // namespace

TEST(Rasterize, DepthMatchesRayPlane) {
  const PinholeCamera cam = identity_camera(32, 40.0);
  // Tilted plane through three points in front of the camera, wound so the
  // normal faces the camera at the origin.
  const Eigen::Vector3d a(-1, -1, 2), b(-1, 1, 3), c(1, -1, 2.5);
  TriMesh m = triangle(a, b, c);
  DepthBuffer db = rasterize(m, cam);
  if (db.covered_count() == 0) {
    m = triangle(a, c, b);
    db = rasterize(m, cam);
  }
  ASSERT_GT(db.covered_count(), 0u);
  const Eigen::Vector3d n = (b - a).cross(c - a);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      if (!db.covered(x, y)) continue;
      const Eigen::Vector3d d((x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0);
      const double t = n.dot(a) / n.dot(d);
      EXPECT_NEAR(db.depth[db.index(x, y)], t, 1e-6);
      EXPECT_NEAR(db.bary[db.index(x, y)].sum(), 1.0, 1e-9);
    }
  }
}

TEST(Rasterize, ReversedWindingIsCulled) {
  const PinholeCamera cam = identity_camera(16, 20.0);
  const TriMesh front = make_quad(0.5, 2.0, true);
  EXPECT_GT(rasterize(front, cam).covered_count(), 0u);
  const TriMesh back = make_quad(0.5, 2.0, false);
  EXPECT_EQ(rasterize(back, cam).covered_count(), 0u);
  RasterOptions no_cull;
  no_cull.cull_backfaces = false;
  EXPECT_GT(rasterize(back, cam, no_cull).covered_count(), 0u);
}

TEST(Rasterize, NearerQuadWins) {
  const PinholeCamera cam = identity_camera(16, 20.0);
  const TriMesh scene = merge_meshes(make_quad(1.0, 3.0, true), make_quad(0.3, 2.0, true));
  const DepthBuffer db = rasterize(scene, cam);
  const int far_faces = 2;
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      if (!db.covered(x, y)) continue;
      const double d = db.depth[db.index(x, y)];
      EXPECT_TRUE(std::abs(d - 2.0) < 1e-9 || std::abs(d - 3.0) < 1e-9);
      if (std::abs(d - 2.0) < 1e-9) EXPECT_GE(db.face[db.index(x, y)], far_faces);
    }
  }
  // The center pixel sees the nearer quad.
  EXPECT_NEAR(db.depth[db.index(8, 8)], 2.0, 1e-9);
}

TEST(Rasterize, SharedEdgeCoveredOnce) {
  // Quad whose diagonal passes exactly through pixel centers: every pixel in
  // its footprint is covered by exactly one of its two triangles.
  const PinholeCamera cam = identity_camera(8, 8.0);
  const TriMesh q = make_quad(0.5, 1.0, true);
  DepthBuffer both = rasterize(q, cam);
  int covered = 0;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) covered += both.covered(x, y);
  }
  std::vector<Face> f0 = {q.faces()[0]};
  std::vector<Face> f1 = {q.faces()[1]};
  const std::size_t a = rasterize(TriMesh(q.vertices(), f0), cam).covered_count();
  const std::size_t b = rasterize(TriMesh(q.vertices(), f1), cam).covered_count();
  EXPECT_EQ(a + b, static_cast<std::size_t>(covered));
}

TEST(Rasterize, IdempotentAndFinite) {
  const TriMesh s = make_icosphere(3);
  const PinholeCamera cam = front_camera(64, 4.0);
  const DepthBuffer a = rasterize(s, cam);
  const DepthBuffer b = rasterize(s, cam);
  EXPECT_EQ(a.depth, b.depth);
  EXPECT_EQ(a.face, b.face);
  for (std::size_t i = 0; i < a.depth.size(); ++i) {
    if (a.coverage[i]) {
      EXPECT_TRUE(std::isfinite(a.depth[i]));
      EXPECT_GT(a.depth[i], 0.0);
    } else {
      EXPECT_EQ(a.depth[i], std::numeric_limits<double>::infinity());
    }
  }
}

TEST(Rasterize, ResolutionConsistency) {
  const TriMesh s = make_icosphere(4);
  const double a = static_cast<double>(rasterize(s, front_camera(128, 4.0)).covered_count()) / (128 * 128);
  const double b = static_cast<double>(rasterize(s, front_camera(256, 4.0)).covered_count()) / (256 * 256);
  EXPECT_LT(std::abs(a - b) / b, 0.01);
}

TEST(Rasterize, ClipsGeometryBehindCamera) {
  // Large quad straddling the camera plane: the visible part still renders.
  const PinholeCamera cam = identity_camera(16, 10.0);
  std::vector<Face> f(1);
  for (int i = 0; i < 3; ++i) f[0].corners[i].vertex = i;
  TriMesh m({{-5, -5, -1}, {5, -5, 3}, {-5, 5, 3}}, f);
  RasterOptions o;
  o.cull_backfaces = false;
  const DepthBuffer db = rasterize(m, cam, o);
  EXPECT_GT(db.covered_count(), 0u);
  for (std::size_t i = 0; i < db.depth.size(); ++i) {
    if (db.coverage[i]) EXPECT_GT(db.depth[i], 0.0);
  }
}

TEST(Visibility, PolesOfSphere) {
  const TriMesh s = make_icosphere(3);
  const PinholeCamera cam = front_camera(128, 4.0);
  const DepthBuffer db = rasterize(s, cam);
  const std::vector<Eigen::Vector3d> pts = {{0, 0, -1}, {0, 0, 1}};
  const auto v = point_visibility(pts, db, cam);
  EXPECT_EQ(v[0], 1);
  EXPECT_EQ(v[1], 0);
}

TEST(Visibility, MatchesRayCastAwayFromSilhouette) {
  const TriMesh big = make_icosphere(3, 1.0);
  const TriMesh scene = merge_meshes(big, make_icosphere(2, 0.3, Eigen::Vector3d(-0.4, 0.2, -1.6)));
  const PinholeCamera cam = front_camera(256, 4.0);
  const DepthBuffer db = rasterize(scene, cam);
  const auto samples = sample_surface_uniform(big, 400, 12);
  const auto pos = sample_positions(big, samples);
  const auto vis = point_visibility(pos, db, cam);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    if ((vis[i] != 0) == brute_force_visible(scene, cam, pos[i])) continue;
    const double dist = (pos[i] - cam.center()).norm();
    const double hit = first_hit_distance(scene, cam, pos[i]);
    EXPECT_LE(std::abs(dist - hit), kVisibilityEpsRel * hit) << "sample " << i;
  }
}

TEST(Visibility, OffImageAndBehindAreHidden) {
  const TriMesh s = make_icosphere(2);
  const PinholeCamera cam = front_camera(64, 4.0);
  const DepthBuffer db = rasterize(s, cam);
  const std::vector<Eigen::Vector3d> pts = {{0, 0, -10}, {50, 0, 0}};
  const auto v = point_visibility(pts, db, cam);
  EXPECT_EQ(v[0], 0);
  EXPECT_EQ(v[1], 0);
}

TEST(ShellMask, AnnulusAndDisjointness) {
  const TriMesh s = make_icosphere(4);
  const PinholeCamera cam = front_camera(128, 4.0);
  const ShellMesh shell = build_shell(s, 0.15);
  const ShellMask m = shell_mask(s, shell, cam);
  std::size_t shell_only = 0;
  for (std::size_t i = 0; i < m.pixels.size(); ++i) {
    EXPECT_FALSE(m.pixels[i] && m.core.coverage[i]);
    // coverage(M) and shell-only partition a subset of coverage(M+).
    if (m.pixels[i] || m.core.coverage[i]) EXPECT_TRUE(m.shell.coverage[i]);
    shell_only += m.pixels[i];
  }
  EXPECT_GT(shell_only, 0u);
  EXPECT_EQ(m.pixels[static_cast<std::size_t>(64) * 128 + 64], 0);

  const ShellMask zero = shell_mask(s, build_shell(s, 0.0), cam);
  for (auto p : zero.pixels) EXPECT_EQ(p, 0);
}

TEST(ShellMask, SampleGateLandsOnShellOnlyPixels) {
  const TriMesh s = make_icosphere(3);
  const PinholeCamera cam = front_camera(96, 4.0);
  const ShellMesh shell = build_shell(s, 0.1);
  const auto samples = sample_surface_uniform(shell.mesh, 3000, 5);
  const ShellMask m = shell_mask(s, shell, cam, samples);
  ASSERT_EQ(m.samples.size(), samples.size());
  std::size_t on = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!m.samples[i]) continue;
    ++on;
    const Projection p = project(cam, samples[i].pos);
    const int x = static_cast<int>(std::floor(p.pixel.x()));
    const int y = static_cast<int>(std::floor(p.pixel.y()));
    EXPECT_EQ(m.pixels[m.core.index(x, y)], 1);
  }
  EXPECT_GT(on, 0u);
}

TEST(Silhouette, DiskRadiusAndCoverage) {
  const TriMesh s = make_icosphere(4);
  const PinholeCamera cam = front_camera(128, 4.0);
  const GrayImage sil = silhouette(s, cam);
  // Closed mesh: culling does not change the outline.
  const DepthBuffer db = rasterize(s, cam);
  EXPECT_EQ(sil.pixels, db.coverage);
  const double r = cam.fx / std::sqrt(15.0);
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 128; ++x) {
      const double d = std::hypot(x + 0.5 - 64, y + 0.5 - 64);
      if (d < r - 1.0) EXPECT_EQ(sil.at(x, y), 1);
      if (d > r + 1.0) EXPECT_EQ(sil.at(x, y), 0);
    }
  }
  const GrayImage empty = silhouette(TriMesh(), cam);
  for (auto p : empty.pixels) EXPECT_EQ(p, 0);
}

TEST(Silhouette, OpenMeshHasNoHoles) {
  // Camera looking straight into an open-ended tube.
  const PinholeCamera cam = identity_camera(32, 20.0);
  std::vector<Eigen::Vector3d> v;
  const int sides = 12;
  for (int ring = 0; ring < 2; ++ring) {
    for (int k = 0; k < sides; ++k) {
      const double a = 2.0 * std::numbers::pi * k / sides;
      v.emplace_back(0.3 * std::cos(a), 0.3 * std::sin(a), 2.0 + ring);
    }
  }
  std::vector<Face> f;
  for (int k = 0; k < sides; ++k) {
    const int a = k, b = (k + 1) % sides, c = sides + k, d = sides + (k + 1) % sides;
    for (const auto& tri : {std::array<int, 3>{a, b, d}, std::array<int, 3>{a, d, c}}) {
      Face face;
      for (int i = 0; i < 3; ++i) face.corners[i].vertex = tri[i];
      f.push_back(face);
    }
  }
  const TriMesh tube(v, f);
  const GrayImage sil = silhouette(tube, cam);
  RasterOptions o;
  o.cull_backfaces = false;
  EXPECT_EQ(sil.pixels, rasterize(tube, cam, o).coverage);
  EXPECT_EQ(sil.at(16, 16), 0);  // looking down the bore
  EXPECT_EQ(sil.at(18, 16), 1);  // inside the wall annulus
}

TEST(DistanceTransform, SmallCases) {
  GrayImage full(8, 8, 1);
  for (double v : distance_transform(full).values) EXPECT_EQ(v, 0.0);

  GrayImage one(8, 8, 0);
  one.at(0, 0) = 1;
  const DistanceField df = distance_transform(one);
  EXPECT_DOUBLE_EQ(df.at(3, 4), 5.0);
  EXPECT_DOUBLE_EQ(df.at(0, 0), 0.0);

  const DistanceField e = distance_transform(GrayImage(4, 4, 0));
  EXPECT_TRUE(e.empty_mask);
}

TEST(DistanceTransform, MatchesBruteForce) {
  Rng r(31);
  for (int trial = 0; trial < 5; ++trial) {
    GrayImage m(64, 64, 0);
    const int n = 1 + static_cast<int>(r.below(40));
    for (int k = 0; k < n; ++k) m.at(static_cast<int>(r.below(64)), static_cast<int>(r.below(64))) = 1;
    const DistanceField df = distance_transform(m);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        double best = std::numeric_limits<double>::infinity();
        for (int yy = 0; yy < 64; ++yy) {
          for (int xx = 0; xx < 64; ++xx) {
            if (m.at(xx, yy)) best = std::min(best, std::hypot(double(x - xx), double(y - yy)));
          }
        }
        ASSERT_NEAR(df.at(x, y), best, 1e-9) << x << "," << y;
        // 1-Lipschitz in the chessboard metric.
        if (x > 0) ASSERT_LE(std::abs(df.at(x, y) - df.at(x - 1, y)), 1.0 + 1e-12);
        if (y > 0) ASSERT_LE(std::abs(df.at(x, y) - df.at(x, y - 1)), 1.0 + 1e-12);
      }
    }
  }
}

TEST(DistanceTransform, BilinearSampleAndDilate) {
  GrayImage m(16, 16, 0);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 8; ++x) m.at(x, y) = 1;
  }
  const DistanceField df = distance_transform(m);
  // Pixel centers at x + 0.5; column 10 is 3 px from the last foreground column.
  EXPECT_DOUBLE_EQ(df.sample<double>(10.5, 4.5), 3.0);
  EXPECT_DOUBLE_EQ(df.sample<double>(11.0, 4.5), 3.5);
  const GrayImage d = dilate(m, 2.0);
  EXPECT_EQ(d.at(9, 3), 1);
  EXPECT_EQ(d.at(10, 3), 0);
}
