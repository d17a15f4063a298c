#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "orthoeraser/corpus.hpp"
#include "orthoeraser/sae.hpp"

namespace orthoeraser {

/// Per-neuron weighted frequency statistics, one entry per SAE feature.
struct ClassStats {
  Vector frequency;       // share of class activations with z_m > 0
  Vector mean_magnitude;  // mean of z_m over the activations where it fires, 0 if never
  Vector weighted_score;  // frequency * mean_magnitude

  static ClassStats from_codes(const Matrix& codes);  // codes: D_sae x n
};

struct NeuronStats {
  ClassStats sensitive;
  ClassStats non_sensitive;
  Vector delta_wfs;  // sensitive.weighted_score - non_sensitive.weighted_score
};

/// Features ordered by descending score, then ascending index.
struct SensitiveSet {
  std::vector<Eigen::Index> indices;

  std::size_t size() const { return indices.size(); }
  bool contains(Eigen::Index i) const;
};

struct CoupledSet {
  std::vector<Eigen::Index> indices;
  std::vector<double> strengths;  // delta_j of each selected index
  /// All candidate strengths were zero, so the selection is index order only.
  bool degenerate = false;

  std::size_t size() const { return indices.size(); }
};

/// Codes of every activation in one class, as a D_sae x n matrix.
Matrix encode_class(const SaeModel& model, const Corpus& corpus, PromptClass c);

NeuronStats neuron_stats(const SaeModel& model, const Corpus& corpus);
NeuronStats neuron_stats_from_codes(const Matrix& sensitive_codes, const Matrix& non_sensitive_codes);

SensitiveSet select_sensitive(const NeuronStats& stats, std::size_t count);

struct ZeroAblation {
  Vector ablated;      // h' = h - sum_{i in N_sens} z_i w_i
  SparseCode code;     // z = encode(h)
  SparseCode shifted;  // z' = encode(h')
};

ZeroAblation zero_ablate(const SaeModel& model, const Vector& h, const SensitiveSet& sensitive);

/// delta_j = mean over sensitive-class activations of |z_j - z'_j|.
/// Entries belonging to the sensitive set are left at zero.
Vector coupling_strengths(const SaeModel& model, const Corpus& corpus, const SensitiveSet& sensitive);
Vector coupling_strengths(const SaeModel& model, const Matrix& sensitive_activations,
                          const SensitiveSet& sensitive);

CoupledSet select_coupled(const Vector& strengths, const SensitiveSet& sensitive, std::size_t count);

/// Everything the erase step needs from detection.
struct DetectionPlan {
  SensitiveSet sensitive;
  CoupledSet coupled;
  Vector coupling;  // delta for every feature
  NeuronStats stats;
  Eigen::Index input_dim = 0;
  Eigen::Index features = 0;
};

DetectionPlan detect(const SaeModel& model, const Corpus& corpus, std::size_t sensitive_count,
                     std::size_t coupled_count);

inline constexpr const char* kPlanSchema = "orthoeraser-plan";
inline constexpr int kPlanVersion = 1;

nlohmann::json to_json(const DetectionPlan& plan);
void save(const DetectionPlan& plan, const std::filesystem::path& path);
DetectionPlan load_plan(const std::filesystem::path& path);

}  // namespace orthoeraser
