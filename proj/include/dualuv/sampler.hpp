#pragma once

// Factorized scene-description sampler. Every factor draws from its own
// stream keyed by factor name, so editing one vocabulary never changes the
// draws of another.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dualuv {

struct Factor {
  std::vector<std::string> items;
  bool sentinel = false;  // "None" is one more equally likely outcome

  std::size_t outcomes() const { return items.size() + (sentinel ? 1 : 0); }
};

struct FactorVocabulary {
  std::map<std::string, Factor> factors;
  std::vector<std::string> negatives;

  /// FNV-1a of the canonical JSON form.
  std::uint64_t hash() const;
};

/// Accepts `{"name": [items]}` or `{"name": {"items": [...], "sentinel": true}}`
/// per factor plus an optional "negative" list. Throws Error on duplicates or
/// an empty factor without sentinel.
FactorVocabulary parse_vocab(const std::string& json_text);
FactorVocabulary load_vocab(const std::filesystem::path& path);
std::string vocab_to_json(const FactorVocabulary& vocab);
void save_vocab(const FactorVocabulary& vocab, const std::filesystem::path& path);

enum class Regime { kOutfit, kRole };
Regime regime_from_string(const std::string& s);
std::string to_string(Regime r);

/// Factors a regime reads, in template order.
std::vector<std::string> regime_factors(Regime regime);

struct ComposedScene {
  Regime regime = Regime::kOutfit;
  std::uint64_t seed = 0;
  std::uint64_t vocab_hash = 0;
  // Template order. nullopt marks a sentinel draw; factors inside an omitted
  // clause are left out entirely.
  std::vector<std::pair<std::string, std::optional<std::string>>> assignment;
  std::string prompt;
  std::string negative;

  /// Single-line JSON.
  std::string to_json_line() const;
};

/// Index drawn for one factor; equals items.size() for the sentinel.
std::size_t draw_factor(const Factor& factor, const std::string& name, std::uint64_t seed);

/// Throws Error naming the first factor the regime needs and the vocab lacks.
ComposedScene sample_scene(const FactorVocabulary& vocab, Regime regime, std::uint64_t seed,
                           int negative_terms = 0);

/// k distinct negative terms joined by ", ". Throws Error when k exceeds the list.
std::string compose_negative(const FactorVocabulary& vocab, std::uint64_t seed, int k);

struct RefineResult {
  std::string original;
  std::string text;
  bool refined = false;
  std::string note;  // why the original was passed through
};

/// Pipes `prompt` to `/bin/sh -c command` and takes its stdout (one trailing
/// newline stripped). An empty command, a spawn failure or a non-zero exit
/// returns the prompt unchanged with refined = false.
RefineResult refine_external(const std::string& prompt, const std::string& command);

}  // namespace dualuv
