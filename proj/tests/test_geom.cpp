#include "dualuv/dual.hpp"
#include "dualuv/error.hpp"
#include "dualuv/mesh.hpp"
#include "dualuv/random.hpp"
#include "dualuv/rotation.hpp"
#include "dualuv/skinning.hpp"

#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

using namespace dualuv;

namespace {

TriMesh two_triangles_9_to_1() {
  // Face 0 has nine times the area of face 1.
  std::vector<Eigen::Vector3d> v = {{0, 0, 0}, {3, 0, 0}, {0, 3, 0}, {10, 0, 0}, {11, 0, 0}, {10, 1, 0}};
  std::vector<Face> f(2);
  for (int i = 0; i < 3; ++i) {
    f[0].corners[i].vertex = i;
    f[1].corners[i].vertex = 3 + i;
  }
  return TriMesh(v, f);
}

}  // namespace

TEST(Mesh, CubeNormalsAreDiagonal) {
  const TriMesh cube = make_unit_cube();
  for (std::size_t i = 0; i < cube.vertex_count(); ++i) {
    const Eigen::Vector3d expect = ((cube.vertices()[i] - Eigen::Vector3d::Constant(0.5)) * 2.0).normalized();
    EXPECT_LT((cube.normals()[i] - expect).norm(), 1e-9) << "vertex " << i;
  }
}

TEST(Mesh, IcosphereNormalsFollowPositions) {
  // Area weighting is biased on irregular valences; the bias shrinks with
  // subdivision.
  double prev = 1.0;
  for (int level = 2; level <= 4; ++level) {
    const TriMesh s = make_icosphere(level);
    double worst = 0.0;
    for (std::size_t i = 0; i < s.vertex_count(); ++i) {
      worst = std::max(worst, (s.normals()[i] - s.vertices()[i].normalized()).norm());
      EXPECT_NEAR(s.normals()[i].norm(), 1.0, 1e-12);
    }
    EXPECT_LT(worst, prev) << "level " << level;
    prev = worst;
  }
  EXPECT_LT(prev, 1e-2);
}

TEST(Mesh, DegenerateFaceFallsBackToZ) {
  std::vector<Face> f(1);
  for (int i = 0; i < 3; ++i) f[0].corners[i].vertex = i;
  const TriMesh m({{0, 0, 0}, {1, 1, 1}, {2, 2, 2}}, f);
  EXPECT_TRUE(m.vertex_normals().any_fallback());
  for (const auto& n : m.normals()) EXPECT_EQ(n, Eigen::Vector3d(0, 0, 1));
}

TEST(Mesh, RejectsBadIndices) {
  std::vector<Face> f(1);
  f[0].corners[0].vertex = 0;
  f[0].corners[1].vertex = 1;
  f[0].corners[2].vertex = 5;
  EXPECT_THROW(TriMesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, f), Error);
  f[0].corners[2].vertex = 1;
  EXPECT_THROW(TriMesh({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, f), Error);
}

TEST(Sampling, AreaProportional) {
  const TriMesh m = two_triangles_9_to_1();
  for (std::uint64_t seed : {0u, 1u, 99u}) {
    const auto s = sample_surface_uniform(m, 10000, seed);
    const double frac = std::count_if(s.begin(), s.end(), [](const SurfaceSample& x) { return x.face == 0; }) / 1e4;
    EXPECT_GE(frac, 0.88);
    EXPECT_LE(frac, 0.92);
  }
}

TEST(Sampling, SingleSampleAndClosure) {
  const TriMesh m = make_icosphere(2);
  const auto one = sample_surface_uniform(m, 1, 3);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_NEAR(one[0].bary.sum(), 1.0, 1e-12);

  const auto s = sample_surface_uniform(m, 500, 4);
  const auto pos = sample_positions(m, s);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_NEAR(s[i].bary.sum(), 1.0, 1e-9);
    EXPECT_TRUE((s[i].bary.array() >= 0.0).all());
    EXPECT_LT((pos[i] - surface_position(m, s[i].face, s[i].bary)).norm(), 1e-9);
    EXPECT_LT((s[i].pos - pos[i]).norm(), 1e-9);
    EXPECT_LT((s[i].uv - uv_unparameterize(m, s[i].face, s[i].bary)).norm(), 1e-9);
  }
}

TEST(Sampling, SameSeedSameSamples) {
  const TriMesh m = make_icosphere(2);
  const auto a = sample_surface_uniform(m, 300, 17);
  const auto b = sample_surface_uniform(m, 300, 17);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].face, b[i].face);
    EXPECT_EQ(a[i].bary, b[i].bary);
  }
  EXPECT_THROW(sample_surface_uniform(m, 0, 1), Error);
}

TEST(Uv, CornerAndCentroid) {
  std::vector<Face> f(1);
  f[0].corners = {Corner{0, {0, 0}}, Corner{1, {1, 0}}, Corner{2, {0, 1}}};
  const TriMesh m({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, f);
  EXPECT_EQ(uv_unparameterize(m, 0, Eigen::Vector3d(1, 0, 0)), Eigen::Vector2d(0, 0));
  EXPECT_LT((uv_unparameterize(m, 0, Eigen::Vector3d::Constant(1.0 / 3.0)) - Eigen::Vector2d(1.0 / 3, 1.0 / 3)).norm(),
            1e-15);
  EXPECT_THROW(uv_unparameterize(m, 3, Eigen::Vector3d(1, 0, 0)), Error);
}

TEST(Uv, RandomBlendMatchesCorners) {
  const TriMesh m = make_icosphere(2);
  Rng rng(8);
  for (int k = 0; k < 200; ++k) {
    const int face = static_cast<int>(rng.below(m.face_count()));
    Eigen::Vector3d b(rng.uniform(), rng.uniform(), rng.uniform());
    b /= b.sum();
    const Face& fc = m.faces()[face];
    const Eigen::Vector2d expect = b[0] * fc.uv(0) + b[1] * fc.uv(1) + b[2] * fc.uv(2);
    EXPECT_LT((uv_unparameterize(m, face, b) - expect).norm(), 1e-12);
  }
}

TEST(Shell, OffsetsAlongNormals) {
  const TriMesh s = make_icosphere(3);
  const ShellMesh zero = build_shell(s, 0.0);
  EXPECT_EQ(zero.mesh.vertices(), s.vertices());

  const ShellMesh sh = build_shell(s, 0.1);
  ASSERT_EQ(sh.mesh.vertex_count(), s.vertex_count());
  ASSERT_EQ(sh.mesh.face_count(), s.face_count());
  const Eigen::Vector3d c = s.centroid();
  for (std::size_t i = 0; i < s.vertex_count(); ++i) {
    const double n = sh.mesh.vertices()[i].norm();
    EXPECT_GE(n, 1.099);
    EXPECT_LE(n, 1.101);
    EXPECT_GT((sh.mesh.vertices()[i] - c).norm(), (s.vertices()[i] - c).norm());
  }

  const ShellMesh flat = build_shell(make_quad(1.0, 0.0, false), 0.05);
  for (const auto& v : flat.mesh.vertices()) EXPECT_NEAR(v.z(), 0.05, 1e-9);
  EXPECT_THROW(build_shell(s, -0.1), Error);
}

TEST(Shell, DefaultDeltaIsTwoPercentOfDiagonal) {
  const TriMesh cube = make_unit_cube();
  EXPECT_NEAR(default_shell_delta(cube), 0.02 * std::sqrt(3.0), 1e-12);
}

TEST(Obj, RoundTripKeepsGeometryAndUv) {
  const TriMesh m = make_icosphere(1);
  const auto path = std::filesystem::temp_directory_path() / "dualuv_geom_roundtrip.obj";
  write_obj(path, m);
  const TriMesh r = read_obj(path);
  std::filesystem::remove(path);
  ASSERT_EQ(r.face_count(), m.face_count());
  for (std::size_t f = 0; f < m.face_count(); ++f) {
    for (int k = 0; k < 3; ++k) {
      EXPECT_LT((r.vertices()[r.faces()[f].v(k)] - m.vertices()[m.faces()[f].v(k)]).norm(), 1e-9);
      EXPECT_LT((r.faces()[f].uv(k) - m.faces()[f].uv(k)).norm(), 1e-9);
    }
  }
}

TEST(Obj, FansPolygonsAndNegativeIndices) {
  const TriMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf -4/-1 -3/-1 -2/-1 -1/-1\n");
  EXPECT_EQ(m.face_count(), 2u);
  EXPECT_THROW(parse_obj("v 0 0 0\nf 1 2 3\n"), Error);
}

TEST(Rng, KnownStreamsAreStable) {
  Rng a(5);
  Rng b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  EXPECT_NE(stream_seed(1, "x"), stream_seed(1, "y"));
  EXPECT_NE(stream_seed(1, "x"), stream_seed(2, "x"));
  // FNV-1a reference values.
  EXPECT_EQ(hash_name(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(hash_name("a"), 0xaf63dc4c8601ec8cull);
}

TEST(Rng, BelowAndUniformRanges) {
  Rng r(11);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ++counts[r.below(7)];
  }
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(Rotation, RodriguesMatchesEigen) {
  Rng r(2);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector3d w(r.normal(), r.normal(), r.normal());
    const Eigen::Matrix3d a = axis_angle_to_matrix<double>(w);
    const Eigen::Matrix3d b = Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix();
    EXPECT_LT((a - b).norm(), 1e-12);
    EXPECT_NEAR(a.determinant(), 1.0, 1e-9);
  }
  EXPECT_EQ(axis_angle_to_matrix<double>(Eigen::Vector3d::Zero()), Eigen::Matrix3d::Identity());
}

TEST(Dual, GradientOfClosedForms) {
  const std::vector<double> x = {0.3, -1.2, 2.0};
  std::vector<double> g(3);
  const double v = value_and_gradient(
      [](std::span<const GradDual> p) { return sin(p[0]) * exp(p[1]) + p[2] * p[2] / (1.0 + p[0] * p[0]); }, x, g);
  EXPECT_NEAR(v, std::sin(0.3) * std::exp(-1.2) + 4.0 / 1.09, 1e-14);
  EXPECT_NEAR(g[0], std::cos(0.3) * std::exp(-1.2) - 4.0 * 2 * 0.3 / (1.09 * 1.09), 1e-12);
  EXPECT_NEAR(g[1], std::sin(0.3) * std::exp(-1.2), 1e-14);
  EXPECT_NEAR(g[2], 4.0 / 1.09, 1e-14);
}

TEST(Dual, RodriguesDerivativeAtZero) {
  // d R(w) / d w_z at zero is the generator of rotations about z.
  using D = Dual<3>;
  const Vec3T<D> w(D(0.0, 0), D(0.0, 1), D(0.0, 2));
  const Mat3T<D> r = axis_angle_to_matrix<D>(w);
  EXPECT_DOUBLE_EQ(r(1, 0).d[2], 1.0);
  EXPECT_DOUBLE_EQ(r(0, 1).d[2], -1.0);
  EXPECT_DOUBLE_EQ(r(0, 0).d[2], 0.0);
}

TEST(Dual, ChunkedGradientCoversManyParameters) {
  std::vector<double> x(21);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.1 * static_cast<double>(i);
  std::vector<double> g(x.size());
  value_and_gradient(
      [](std::span<const GradDual> p) {
        GradDual s(0.0);
        for (std::size_t i = 0; i < p.size(); ++i) s += static_cast<double>(i + 1) * p[i] * p[i];
        return s;
      },
      x, g);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g[i], 2.0 * (i + 1) * x[i], 1e-12);
}

TEST(Skinning, RestPoseIsIdentity) {
  const SkinnedBody body = make_tube_body();
  const std::vector<Eigen::Vector3d> zeros(body.joint_count(), Eigen::Vector3d::Zero());
  const std::vector<double> beta(body.shape_count(), 0.0);
  const std::vector<double> psi(body.expr_count(), 0.0);
  const PosedMesh p = lbs_pose(body, zeros, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), beta, psi);
  for (std::size_t i = 0; i < p.mesh.vertex_count(); ++i) {
    EXPECT_LT((p.mesh.vertices()[i] - body.rest_mesh().vertices()[i]).norm(), 1e-9);
  }
  const Eigen::Vector3d t(0.3, -1.0, 2.5);
  const PosedMesh q = lbs_pose(body, zeros, Eigen::Vector3d::Zero(), t, beta, psi);
  for (std::size_t i = 0; i < q.mesh.vertex_count(); ++i) {
    EXPECT_LT((q.mesh.vertices()[i] - body.rest_mesh().vertices()[i] - t).norm(), 1e-12);
  }
}

TEST(Skinning, WeightsPartitionUnity) {
  const SkinnedBody body = make_tube_body();
  for (const auto& ws : body.weights()) {
    double s = 0.0;
    for (const auto& w : ws) {
      EXPECT_GE(w.weight, 0.0);
      s += w.weight;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  for (int j = 1; j < body.joint_count(); ++j) EXPECT_LT(body.joints()[j].parent, j);
}

TEST(Skinning, SingleJointChainRigidRotation) {
  // Two joints along +y; every vertex rigidly bound to the child.
  std::vector<Face> f(1);
  for (int i = 0; i < 3; ++i) f[0].corners[i].vertex = i;
  const std::vector<Eigen::Vector3d> v = {{0, 2, 0}, {1, 2, 0}, {0, 2, 1}};
  std::vector<Joint> joints = {{"root", -1, {0, 0, 0}}, {"child", 0, {0, 1, 0}}};
  std::vector<std::vector<SkinWeight>> w(3, {SkinWeight{1, 1.0}});
  const SkinnedBody body(TriMesh(v, f), joints, w);
  const double a = std::numbers::pi / 2.0;
  const std::vector<Eigen::Vector3d> rot = {Eigen::Vector3d::Zero(), Eigen::Vector3d(a, 0, 0)};
  const PosedMesh p = lbs_pose(body, rot, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero());
  const Eigen::Matrix3d r = Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix();
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d expect = r * (v[i] - Eigen::Vector3d(0, 1, 0)) + Eigen::Vector3d(0, 1, 0);
    EXPECT_LT((p.mesh.vertices()[i] - expect).norm(), 1e-9);
  }
}

TEST(Skinning, RejectsBadWeights) {
  std::vector<Face> f(1);
  for (int i = 0; i < 3; ++i) f[0].corners[i].vertex = i;
  const TriMesh m({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, f);
  std::vector<Joint> joints = {{"root", -1, {0, 0, 0}}};
  EXPECT_THROW(SkinnedBody(m, joints, std::vector<std::vector<SkinWeight>>(3, {SkinWeight{0, 0.5}})), Error);
}

TEST(Similarity, IdentityAndScaledShift) {
  const std::vector<Eigen::Vector3d> src = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const SimilarityTransform id = estimate_similarity(src, src);
  EXPECT_NEAR(id.scale, 1.0, 1e-9);
  EXPECT_LT((id.rotation - Eigen::Matrix3d::Identity()).norm(), 1e-9);
  EXPECT_LT(id.translation.norm(), 1e-9);

  std::vector<Eigen::Vector3d> dst;
  for (const auto& p : src) dst.push_back(2.0 * p + Eigen::Vector3d(1, 0, 0));
  const SimilarityTransform t = estimate_similarity(src, dst);
  EXPECT_NEAR(t.scale, 2.0, 1e-9);
  EXPECT_LT((t.rotation - Eigen::Matrix3d::Identity()).norm(), 1e-9);
  EXPECT_LT((t.translation - Eigen::Vector3d(1, 0, 0)).norm(), 1e-9);

  EXPECT_THROW(estimate_similarity(std::vector<Eigen::Vector3d>{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}},
                                   std::vector<Eigen::Vector3d>{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}}),
               Error);
}

TEST(Similarity, RecoversNoisyRotation) {
  Rng r(21);
  const Eigen::Matrix3d rot = axis_angle_to_matrix<double>(Eigen::Vector3d(0.4, -0.9, 0.3));
  std::vector<Eigen::Vector3d> src, dst;
  for (int i = 0; i < 50; ++i) {
    src.emplace_back(r.normal(), r.normal(), r.normal());
    dst.push_back(rot * src.back() + 1e-3 * Eigen::Vector3d(r.normal(), r.normal(), r.normal()));
  }
  const SimilarityTransform t = estimate_similarity(src, dst);
  EXPECT_LT(geodesic_angle(t.rotation, rot), 0.01);
}
