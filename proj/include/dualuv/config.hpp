#pragma once

// Pipeline configuration shared by the command-line tools. Every field has a
// documented range that is checked at load.

#include "dualuv/losses.hpp"
#include "dualuv/tracker.hpp"
#include "dualuv/uv_scatter.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace dualuv {

struct PipelineConfig {
  GridSize core_grid = kDefaultCoreGrid;    // [1, 8192] per side
  GridSize shell_grid = kDefaultShellGrid;  // [1, 8192] per side
  std::optional<double> shell_delta;        // [0, 1]; unset = 2% of bbox diagonal
  double scatter_eps = kScatterEps;         // (0, 1e-2]
  double visibility_eps = kVisibilityEpsRel;  // [0, 0.1]
  ScatterKernel kernel = ScatterKernel::kNearest;
  int surface_samples = 200000;             // [1, 1e8]

  LossWeights loss;                         // each >= 0
  StageWeights body = default_weights(Stage::kBody);
  StageWeights head = default_weights(Stage::kHead);
  StageWeights hand = default_weights(Stage::kHand);

  AdamConfig adam;                          // lr (0, 1], betas [0, 1), eps > 0
  int body_steps = default_steps(Stage::kBody);  // [0, 1e6]
  int head_steps = default_steps(Stage::kHead);
  int hand_steps = default_steps(Stage::kHand);
  double gmof_sigma = kGmofSigma;           // > 0
  double conf_thresh = 0.6;                 // [0, 1]

  std::uint64_t seed = 0;

  const StageWeights& weights(Stage stage) const;
  int steps(Stage stage) const;

  /// Throws Error naming the first out-of-range field.
  void validate() const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& config);

ScatterKernel kernel_from_string(const std::string& s);
std::string to_string(ScatterKernel k);

}  // namespace dualuv
