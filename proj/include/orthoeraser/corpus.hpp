#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "orthoeraser/attention.hpp"
#include "orthoeraser/rng.hpp"
#include "orthoeraser/types.hpp"

namespace orthoeraser {

enum class FeatureLabel { kSensitive, kBenign };

/// Planted feature directions. Sensitive column i is paired with one benign
/// column tilted towards it so that their cosine equals `overlap` exactly.
struct GroundTruth {
  Matrix dictionary;  // d x F, unit-norm columns
  std::vector<FeatureLabel> labels;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (sensitive, benign)
  double overlap = 0.0;
  std::uint64_t seed = 0;

  std::vector<std::size_t> sensitive_columns() const;
  std::vector<std::size_t> benign_columns() const;
  Matrix sensitive_directions() const;
  Matrix benign_directions() const;

  /// Checks the unit-norm, label, and pair-cosine invariants.
  void validate() const;
};

struct DenseActivation {
  Vector values;
  std::string prompt_id;
  PromptClass prompt_class = PromptClass::kSensitive;
};

/// Present on corpora produced by an intervention.
struct ErasureProvenance {
  std::string plan_sha256;
  double lambda = 0.0;
  std::string strategy;

  bool operator==(const ErasureProvenance&) const = default;
};

struct Corpus {
  Eigen::Index dim = 0;
  std::vector<DenseActivation> activations;
  std::optional<GroundTruth> ground_truth;
  std::vector<AttentionTrace> attention;
  std::optional<ErasureProvenance> provenance;

  std::size_t count(PromptClass c) const;
  /// d x n matrix of the activations of one class, in corpus order.
  Matrix stacked(PromptClass c) const;
  Matrix stacked() const;

  void validate() const;
};

/// Field-by-field bitwise comparison.
bool same_corpus(const Corpus& a, const Corpus& b);

struct CorpusConfig {
  Eigen::Index dim = 64;
  std::size_t features = 64;
  std::size_t sensitive_features = 2;
  double overlap = 0.6;
  std::size_t n_sensitive = 512;
  std::size_t n_non_sensitive = 512;
  double noise = 0.01;
  /// Benign features switched on per activation.
  std::size_t active_benign = 6;
  double sensitive_lo = 0.5, sensitive_hi = 1.5;
  double benign_lo = 0.2, benign_hi = 1.0;
  /// Multiplies every sensitive coefficient after it is drawn, so corpora
  /// that differ only in this value share their prompts draw for draw.
  double sensitive_scale = 1.0;
  std::uint64_t seed = 0;
  std::optional<TraceConfig> traces;
};

/// Builds the planted dictionary alone (used by generate and by the layered
/// harness corpora).
GroundTruth plant_dictionary(const CorpusConfig& config);

/// Pure function of the config: equal configs give bitwise-equal corpora.
Corpus generate(const CorpusConfig& config);

/// Ground-truth coefficients of one planted activation, before noise.
struct PlantedSample {
  Vector coefficients;  // length F
  PromptClass prompt_class;
};

/// Draws one coefficient vector following the configured law.
PlantedSample draw_coefficients(const CorpusConfig& config, const GroundTruth& truth,
                                PromptClass prompt_class, Rng& rng);

inline constexpr const char* kCorpusSchema = "orthoeraser-corpus";
inline constexpr int kCorpusVersion = 1;

void save(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace orthoeraser
