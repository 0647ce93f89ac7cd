#include "dualuv/losses.hpp"
#include "dualuv/error.hpp"
#include "dualuv/random.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace dualuv;

namespace {

std::vector<Eigen::Vector3d> random_scales(Rng& r, int n) {
  std::vector<Eigen::Vector3d> s(n);
  for (auto& v : s) v = Eigen::Vector3d(5.0 + 5.0 * r.uniform(), 0.5 + r.uniform(), 0.3 + 0.3 * r.uniform());
  return s;
}

template <class F>
void check_vec3_gradient(const F& f, std::vector<Eigen::Vector3d> x, const std::vector<Eigen::Vector3d>& g) {
  const double h = 1e-4;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      const double keep = x[i](k);
      x[i](k) = keep + h;
      const double fp = f(x);
      x[i](k) = keep - h;
      const double fm = f(x);
      x[i](k) = keep;
      const double fd = (fp - fm) / (2 * h);
      EXPECT_LE(std::abs(fd - g[i](k)), 1e-5 * std::max(1.0, std::abs(fd))) << i << "," << k;
    }
  }
}

}  // namespace

TEST(L1, BasicsAndOracle) {
  FeatureMap a(4, 5, 3, 0.2);
  EXPECT_EQ(l1_image_loss(a, a), 0.0);
  FeatureMap b(4, 5, 3, 0.3);
  EXPECT_NEAR(l1_image_loss(b, a), 0.1, 1e-15);
  EXPECT_THROW(l1_image_loss(a, FeatureMap(4, 5, 1)), Error);

  Rng r(1);
  for (double& v : a.data()) v = r.uniform();
  for (double& v : b.data()) v = r.uniform();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) sum += std::abs(a.data()[i] - b.data()[i]);
  EXPECT_NEAR(l1_image_loss(a, b), sum / a.data().size(), 1e-12);

  std::vector<std::uint8_t> mask(20, 0);
  mask[7] = 1;
  double one = 0.0;
  for (int c = 0; c < 3; ++c) one += std::abs(a.at(1, 2, c) - b.at(1, 2, c));
  EXPECT_NEAR(l1_image_loss(a, b, mask), one / 3.0, 1e-12);
}

TEST(Offset, ValuesAndGradient) {
  const std::vector<Eigen::Vector3d> zero(4, Eigen::Vector3d::Zero());
  EXPECT_EQ(offset_reg(zero), 0.0);
  const std::vector<Eigen::Vector3d> one = {{3, 4, 0}};
  EXPECT_DOUBLE_EQ(offset_reg(one), 5.0);

  Rng r(2);
  std::vector<Eigen::Vector3d> d(30);
  double mean = 0.0;
  for (auto& v : d) {
    v = Eigen::Vector3d(r.normal(), r.normal(), r.normal());
    mean += v.norm();
  }
  std::vector<Eigen::Vector3d> g(d.size());
  EXPECT_NEAR(offset_reg(d, g), mean / d.size(), 1e-12);
  check_vec3_gradient([](const std::vector<Eigen::Vector3d>& x) { return offset_reg(x); }, d, g);
}

TEST(Scale, ValuesBoundaryAndErrors) {
  const std::vector<Eigen::Vector3d> ones = {{1, 1, 1}};
  EXPECT_DOUBLE_EQ(scale_reg(ones), 3.0);
  EXPECT_EQ(ratio_reg(ones), 0.0);
  const std::vector<Eigen::Vector3d> nine = {{9, 1, 1}};
  EXPECT_EQ(ratio_reg(nine), 0.0);
  const std::vector<Eigen::Vector3d> eighteen = {{18, 2, 1}};
  EXPECT_DOUBLE_EQ(ratio_reg(eighteen), 9.0);
  const std::vector<Eigen::Vector3d> bad = {{1, 0, 1}};
  EXPECT_THROW(scale_reg(bad), Error);
  EXPECT_THROW(ratio_reg(bad), Error);

  // Continuity across the boundary.
  const std::vector<Eigen::Vector3d> above = {{9 + 1e-9, 1, 1}};
  EXPECT_NEAR(ratio_reg(above), 0.0, 1e-8);
}

TEST(Scale, GradientsMatchFiniteDifferences) {
  Rng r(3);
  const auto s = random_scales(r, 25);
  std::vector<Eigen::Vector3d> g(s.size());
  scale_reg(s, g);
  check_vec3_gradient([](const std::vector<Eigen::Vector3d>& x) { return scale_reg(x); }, s, g);

  // Keep every ratio clear of the kink.
  std::vector<Eigen::Vector3d> t;
  for (const auto& v : s) {
    const double ratio = v.maxCoeff() / v.minCoeff();
    if (std::abs(ratio - kRatioLimit) > 0.5) t.push_back(v);
  }
  ASSERT_GT(t.size(), 5u);
  std::vector<Eigen::Vector3d> gr(t.size());
  ratio_reg(t, kRatioLimit, gr);
  check_vec3_gradient([](const std::vector<Eigen::Vector3d>& x) { return ratio_reg(x); }, t, gr);
}

TEST(Hand, ClosedFormAndBruteForce) {
  const std::vector<Patch> face = {Patch(192, 0.4), Patch(192, 0.9)};
  const std::vector<Patch> hand = {Patch(192, 0.5)};
  EXPECT_NEAR(hand_consistency(hand, face), std::sqrt(192.0) * 0.1, 1e-12);
  EXPECT_EQ(hand_consistency(face, face), 0.0);
  EXPECT_THROW(hand_consistency(hand, std::vector<Patch>{}), Error);
  EXPECT_THROW(hand_consistency(hand, std::vector<Patch>{Patch(3, 0.0)}), Error);

  Rng r(4);
  std::vector<Patch> h(7, Patch(12)), f(5, Patch(12));
  for (auto& p : h) for (double& v : p) v = r.uniform();
  for (auto& p : f) for (double& v : p) v = r.uniform();
  double expect = 0.0;
  for (const auto& a : h) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : f) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
      best = std::min(best, std::sqrt(d2));
    }
    expect += best;
  }
  std::vector<Patch> grad(h.size());
  EXPECT_NEAR(hand_consistency(h, f, grad), expect, 1e-9);
  // Gradient on the hand side is the unit vector away from the nearest face patch.
  for (std::size_t i = 0; i < h.size(); ++i) {
    double n2 = 0.0;
    for (double v : grad[i]) n2 += v * v;
    EXPECT_NEAR(n2, 1.0, 1e-9);
  }
}

TEST(Hand, ExtractPatches) {
  FeatureMap m(16, 20, 3);
  for (std::size_t i = 0; i < m.data().size(); ++i) m.data()[i] = static_cast<double>(i);
  std::vector<std::uint8_t> region(16 * 20, 1);
  const auto all = extract_patches(m, region, 8);
  EXPECT_EQ(all.size(), 4u);  // 2 x 2 whole tiles
  ASSERT_EQ(all[0].size(), 192u);
  EXPECT_EQ(all[0][0], m.at(0, 0, 0));
  EXPECT_EQ(all[0][3], m.at(0, 1, 0));
  region[0] = 0;
  EXPECT_EQ(extract_patches(m, region, 8).size(), 3u);
}

TEST(Opacity, ClosedFormsAndGradient) {
  FeatureMap m(16, 16, 1, 0.8);
  EXPECT_NEAR(opacity_patch_loss(m, 8), -(0.8 * std::log(0.8) + 0.2 * std::log(0.2)), 1e-12);
  EXPECT_NEAR(opacity_patch_loss(m, 8), 0.500402, 1e-6);

  FeatureMap full(16, 16, 1, 1.0);
  EXPECT_NEAR(opacity_patch_loss(full, 8), -0.8 * std::log(1 - 1e-6) - 0.2 * std::log(1e-6), 1e-10);
  EXPECT_NEAR(opacity_patch_loss(full, 8), 2.7631, 1e-4);

  // The per-patch term is minimized at mu = alpha_ref.
  for (double mu : {0.7, 0.79, 0.81, 0.9}) {
    FeatureMap o(8, 8, 1, mu);
    EXPECT_GT(opacity_patch_loss(o, 8), opacity_patch_loss(m, 8));
  }

  // Remainder patches: a 10 x 10 map in 8 x 8 tiles has four patches.
  FeatureMap odd(10, 10, 1, 0.5);
  odd.at(9, 9, 0) = 1.0;  // alone in the corner patch of 4 pixels
  const double corner = (3 * 0.5 + 1.0) / 4.0;
  const auto bce = [](double mu) { return -(0.8 * std::log(mu) + 0.2 * std::log(1 - mu)); };
  EXPECT_NEAR(opacity_patch_loss(odd, 8), (3 * bce(0.5) + bce(corner)) / 4.0, 1e-12);

  Rng r(5);
  FeatureMap x(12, 12, 1);
  for (double& v : x.data()) v = 0.1 + 0.8 * r.uniform();
  FeatureMap g;
  opacity_patch_loss(x, 4, kAlphaRef, &g);
  ASSERT_EQ(g.data().size(), x.data().size());
  const double h = 1e-4;
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double fp = opacity_patch_loss(x, 4);
    x.data()[i] = keep - h;
    const double fm = opacity_patch_loss(x, 4);
    x.data()[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    EXPECT_LE(std::abs(fd - g.data()[i]), 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Total, WeightsAndDotProduct) {
  EXPECT_EQ(total_regularization(LossTerms{}).total, 0.0);
  EXPECT_NEAR(total_regularization(LossTerms{1, 1, 1, 1, 1}).total, 2.3, 1e-12);
  const LossWeights w;
  EXPECT_EQ(w.offset, 1.0);
  EXPECT_EQ(w.scale, 0.1);
  EXPECT_EQ(w.ratio, 1.0);
  EXPECT_EQ(w.hand, 0.1);
  EXPECT_EQ(w.opacity, 0.1);

  Rng r(6);
  const LossTerms t{r.uniform(), r.uniform(), r.uniform(), r.uniform(), r.uniform()};
  const LossWeights cw{r.uniform(), r.uniform(), r.uniform(), r.uniform(), r.uniform()};
  const LossReport rep = total_regularization(t, cw);
  const double dot = t.offset * cw.offset + t.scale * cw.scale + t.ratio * cw.ratio + t.hand * cw.hand +
                     t.opacity * cw.opacity;
  EXPECT_NEAR(rep.total, dot, 1e-12);
  EXPECT_NE(rep.to_json().find("\"total\""), std::string::npos);
}

TEST(Total, ParseWeights) {
  const LossWeights w = parse_loss_weights(R"({"scale": 0.5, "hand": 0})");
  EXPECT_EQ(w.scale, 0.5);
  EXPECT_EQ(w.hand, 0.0);
  EXPECT_EQ(w.offset, 1.0);
  EXPECT_THROW(parse_loss_weights(R"({"ratio": -1})"), Error);
  EXPECT_THROW(parse_loss_weights("not json"), Error);
}
