#pragma once

// Reconstruction and regularization terms on gaussian attributes. Terms that
// the optimizers need also return analytic gradients through optional
// output spans sized like their inputs.

#include "dualuv/image.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dualuv {

/// Mean absolute difference over all channels, or over the pixels where
/// `mask` is nonzero when a mask is given. Throws Error on shape mismatch.
double l1_image_loss(const FeatureMap& pred, const FeatureMap& ref,
                     std::span<const std::uint8_t> mask = {});

/// Mean over gaussians of ||d||.
double offset_reg(std::span<const Eigen::Vector3d> offsets, std::span<Eigen::Vector3d> grad = {});

/// Mean over gaussians of s_x + s_y + s_z. Throws Error for a non-positive scale.
double scale_reg(std::span<const Eigen::Vector3d> scales, std::span<Eigen::Vector3d> grad = {});

inline constexpr double kRatioLimit = 9.0;

/// Mean over gaussians of max(max(s) / min(s) - r, 0).
double ratio_reg(std::span<const Eigen::Vector3d> scales, double r = kRatioLimit,
                 std::span<Eigen::Vector3d> grad = {});

using Patch = std::vector<double>;

/// Sum over hand patches of the distance to the nearest face patch. Face
/// patches are constants; `grad` (one entry per hand patch) is w.r.t. the
/// hand side only. Throws Error for an empty face set or unequal sizes.
double hand_consistency(std::span<const Patch> hand, std::span<const Patch> face,
                        std::span<Patch> grad = {});

/// Non-overlapping patch_size x patch_size tiles lying entirely inside
/// `region`, flattened row-major with channels fastest.
std::vector<Patch> extract_patches(const FeatureMap& map, std::span<const std::uint8_t> region,
                                   int patch_size = 8);

inline constexpr double kAlphaRef = 0.8;
inline constexpr double kPatchMeanClamp = 1e-6;

/// Binary cross-entropy of patch-mean opacities against alpha_ref. The map
/// (single channel) is tiled from the top-left; edge patches keep whatever
/// pixels remain. Patch means are clamped to [1e-6, 1 - 1e-6].
double opacity_patch_loss(const FeatureMap& opacity, int patch_size, double alpha_ref = kAlphaRef,
                          FeatureMap* grad = nullptr);

struct LossWeights {
  double offset = 1.0;
  double scale = 0.1;
  double ratio = 1.0;
  double hand = 0.1;
  double opacity = 0.1;
};

struct LossTerms {
  double offset = 0.0;
  double scale = 0.0;
  double ratio = 0.0;
  double hand = 0.0;
  double opacity = 0.0;
};

struct LossReport {
  LossTerms terms;
  LossWeights weights;
  double total = 0.0;

  std::string to_json() const;
};

LossReport total_regularization(const LossTerms& terms, const LossWeights& weights = {});

/// Reads {"offset":..,"scale":..,"ratio":..,"hand":..,"opacity":..}; missing
/// keys keep their defaults. Negative weights are rejected.
LossWeights parse_loss_weights(const std::string& json_text);

}  // namespace dualuv
