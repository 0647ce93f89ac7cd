#include "dualuv/losses.hpp"

#include "dualuv/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dualuv {

double l1_image_loss(const FeatureMap& pred, const FeatureMap& ref, std::span<const std::uint8_t> mask) {
  if (pred.height() != ref.height() || pred.width() != ref.width() || pred.channels() != ref.channels()) {
    throw Error("l1_image_loss: image shapes differ");
  }
  const std::size_t pixels = static_cast<std::size_t>(pred.height()) * pred.width();
  if (!mask.empty() && mask.size() != pixels) throw Error("l1_image_loss: mask size differs from image");
  const int ch = pred.channels();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < pixels; ++p) {
    if (!mask.empty() && !mask[p]) continue;
    for (int c = 0; c < ch; ++c) sum += std::abs(pred.data()[p * ch + c] - ref.data()[p * ch + c]);
    count += static_cast<std::size_t>(ch);
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

double offset_reg(std::span<const Eigen::Vector3d> offsets, std::span<Eigen::Vector3d> grad) {
  if (!grad.empty() && grad.size() != offsets.size()) throw Error("offset_reg: gradient size mismatch");
  if (offsets.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(offsets.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    const double n = offsets[i].norm();
    sum += n;
    if (!grad.empty()) grad[i] = n > 0.0 ? Eigen::Vector3d(offsets[i] * (inv_n / n)) : Eigen::Vector3d::Zero();
  }
  return sum * inv_n;
}

namespace {

void check_scales(std::span<const Eigen::Vector3d> scales, const char* who) {
  for (const auto& s : scales) {
    if (!(s.minCoeff() > 0.0)) throw Error(std::string(who) + ": scales must be positive");
  }
}

}  // namespace

double scale_reg(std::span<const Eigen::Vector3d> scales, std::span<Eigen::Vector3d> grad) {
  if (!grad.empty() && grad.size() != scales.size()) throw Error("scale_reg: gradient size mismatch");
  check_scales(scales, "scale_reg");
  if (scales.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(scales.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    sum += scales[i].sum();
    if (!grad.empty()) grad[i] = Eigen::Vector3d::Constant(inv_n);
  }
  return sum * inv_n;
}

double ratio_reg(std::span<const Eigen::Vector3d> scales, double r, std::span<Eigen::Vector3d> grad) {
  if (!grad.empty() && grad.size() != scales.size()) throw Error("ratio_reg: gradient size mismatch");
  check_scales(scales, "ratio_reg");
  if (scales.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(scales.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    Eigen::Index imax = 0;
    Eigen::Index imin = 0;
    const double hi = scales[i].maxCoeff(&imax);
    const double lo = scales[i].minCoeff(&imin);
    const double excess = hi / lo - r;
    if (!grad.empty()) grad[i].setZero();
    if (excess <= 0.0) continue;
    sum += excess;
    if (!grad.empty()) {
      grad[i](imax) += inv_n / lo;
      grad[i](imin) -= inv_n * hi / (lo * lo);
    }
  }
  return sum * inv_n;
}

double hand_consistency(std::span<const Patch> hand, std::span<const Patch> face, std::span<Patch> grad) {
  if (face.empty()) throw Error("hand_consistency: face patch set is empty");
  if (!grad.empty() && grad.size() != hand.size()) throw Error("hand_consistency: gradient size mismatch");
  const std::size_t dim = face.front().size();
  for (const Patch& p : face)
    if (p.size() != dim) throw Error("hand_consistency: patches differ in size");
  for (const Patch& p : hand)
    if (p.size() != dim) throw Error("hand_consistency: patches differ in size");
  double total = 0.0;
  for (std::size_t i = 0; i < hand.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < face.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double d = hand[i][k] - face[j][k];
        d2 += d * d;
      }
      if (d2 < best) {
        best = d2;
        arg = j;
      }
    }
    const double dist = std::sqrt(best);
    total += dist;
    if (!grad.empty()) {
      grad[i].assign(dim, 0.0);
      if (dist > 0.0)
        for (std::size_t k = 0; k < dim; ++k) grad[i][k] = (hand[i][k] - face[arg][k]) / dist;
    }
  }
  return total;
}

std::vector<Patch> extract_patches(const FeatureMap& map, std::span<const std::uint8_t> region, int patch_size) {
  if (patch_size < 1) throw Error("extract_patches: patch size must be positive");
  if (region.size() != static_cast<std::size_t>(map.height()) * map.width()) {
    throw Error("extract_patches: region size differs from map");
  }
  std::vector<Patch> out;
  for (int r0 = 0; r0 + patch_size <= map.height(); r0 += patch_size) {
    for (int c0 = 0; c0 + patch_size <= map.width(); c0 += patch_size) {
      bool inside = true;
      for (int r = r0; r < r0 + patch_size && inside; ++r)
        for (int c = c0; c < c0 + patch_size && inside; ++c)
          inside = region[static_cast<std::size_t>(r) * map.width() + c] != 0;
      if (!inside) continue;
      Patch p;
      p.reserve(static_cast<std::size_t>(patch_size) * patch_size * map.channels());
      for (int r = r0; r < r0 + patch_size; ++r)
        for (int c = c0; c < c0 + patch_size; ++c)
          for (double v : map.pixel(r, c)) p.push_back(v);
      out.push_back(std::move(p));
    }
  }
  return out;
}

double opacity_patch_loss(const FeatureMap& opacity, int patch_size, double alpha_ref, FeatureMap* grad) {
  if (opacity.channels() != 1) throw Error("opacity_patch_loss: expected a single-channel map");
  if (patch_size < 1) throw Error("opacity_patch_loss: patch size must be positive");
  const int h = opacity.height();
  const int w = opacity.width();
  if (grad) *grad = FeatureMap(h, w, 1);
  if (h == 0 || w == 0) return 0.0;
  const int rows = (h + patch_size - 1) / patch_size;
  const int cols = (w + patch_size - 1) / patch_size;
  const double n = static_cast<double>(rows) * cols;
  double total = 0.0;
  for (int pr = 0; pr < rows; ++pr) {
    for (int pc = 0; pc < cols; ++pc) {
      const int r1 = std::min(h, (pr + 1) * patch_size);
      const int c1 = std::min(w, (pc + 1) * patch_size);
      double sum = 0.0;
      for (int r = pr * patch_size; r < r1; ++r)
        for (int c = pc * patch_size; c < c1; ++c) sum += opacity.at(r, c, 0);
      const double count = static_cast<double>(r1 - pr * patch_size) * (c1 - pc * patch_size);
      const double raw = sum / count;
      const double mu = std::clamp(raw, kPatchMeanClamp, 1.0 - kPatchMeanClamp);
      total -= alpha_ref * std::log(mu) + (1.0 - alpha_ref) * std::log(1.0 - mu);
      if (grad && mu == raw) {
        const double dmu = -(alpha_ref / mu - (1.0 - alpha_ref) / (1.0 - mu)) / n;
        for (int r = pr * patch_size; r < r1; ++r)
          for (int c = pc * patch_size; c < c1; ++c) grad->at(r, c, 0) = dmu / count;
      }
    }
  }
  return total / n;
}

LossReport total_regularization(const LossTerms& terms, const LossWeights& weights) {
  LossReport report{terms, weights, 0.0};
  report.total = weights.offset * terms.offset + weights.scale * terms.scale + weights.ratio * terms.ratio +
                 weights.hand * terms.hand + weights.opacity * terms.opacity;
  return report;
}

std::string LossReport::to_json() const {
  nlohmann::ordered_json j;
  j["terms"] = {{"offset", terms.offset},
                {"scale", terms.scale},
                {"ratio", terms.ratio},
                {"hand", terms.hand},
                {"opacity", terms.opacity}};
  j["weights"] = {{"offset", weights.offset},
                  {"scale", weights.scale},
                  {"ratio", weights.ratio},
                  {"hand", weights.hand},
                  {"opacity", weights.opacity}};
  j["total"] = total;
  return j.dump(2);
}

LossWeights parse_loss_weights(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("loss weights: ") + e.what());
  }
  if (!j.is_object()) throw IoError("loss weights: expected an object");
  LossWeights w;
  auto read = [&](const char* key, double& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw IoError(std::string("loss weights: '") + key + "' must be a number");
    dst = j[key].get<double>();
    if (!(dst >= 0.0) || !std::isfinite(dst)) throw Error(std::string("loss weight '") + key + "' must be >= 0");
  };
  read("offset", w.offset);
  read("scale", w.scale);
  read("ratio", w.ratio);
  read("hand", w.hand);
  read("opacity", w.opacity);
  return w;
}

}  // namespace dualuv
