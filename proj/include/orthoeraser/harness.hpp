#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "orthoeraser/corpus.hpp"
#include "orthoeraser/detector.hpp"
#include "orthoeraser/localizer.hpp"
#include "orthoeraser/projector.hpp"
#include "orthoeraser/sae.hpp"

namespace orthoeraser {

/// Energies are means of <h, u>^2 over the sensitive-class activations and
/// over the planted unit directions of one label.
struct ErasureMetrics {
  double sensitive_energy_before = 0.0;
  double sensitive_energy_after = 0.0;
  double benign_energy_before = 0.0;
  double benign_energy_after = 0.0;
  double protected_drift = 0.0;       // max |W_C^T (h~ - h)| over the corpus
  double reconstruction_drift = 0.0;  // mean ||h~ - h|| / ||h|| over non-sensitive activations
  double max_activation_norm = 0.0;   // max ||h|| over the corpus before intervention

  double sensitive_ratio() const;
  /// |after / before - 1| for the benign energy.
  double benign_change() const;
};

nlohmann::json to_json(const ErasureMetrics& m);
ErasureMetrics metrics_from_json(const nlohmann::json& node);

/// `protected_columns` is W_C; pass an empty matrix to skip protected drift.
ErasureMetrics evaluate(const Corpus& before, const Corpus& after, const GroundTruth& truth,
                        const Matrix& protected_columns);
ErasureMetrics evaluate(const Corpus& before, const Corpus& after, const ProjectionPlan& plan);

enum class Strategy { kOrtho, kOnlySensitive, kOnlyCoupled, kCoupledAligned, kRandomNeurons, kAmplify };

inline constexpr Strategy kAllStrategies[] = {Strategy::kOrtho,           Strategy::kOnlySensitive,
                                              Strategy::kOnlyCoupled,     Strategy::kCoupledAligned,
                                              Strategy::kRandomNeurons,   Strategy::kAmplify};

std::string_view to_string(Strategy s);
/// Throws kInvalidArgument on an unknown tag.
Strategy strategy_from_string(std::string_view tag);

/// The strategy's update for one activation with code `z`:
///   ortho            h - lambda (I - QQ^T) d_raw
///   only_sensitive   h - lambda d_raw
///   only_coupled     h - lambda sum_{j in C} z_j w_j
///   coupled_aligned  h - lambda QQ^T d_raw
///   random_neurons   ortho with a random feature set in place of N_sens
///   amplify          h + lambda d_raw
class Intervention {
 public:
  Intervention(const ProjectionPlan& plan, const CoupledSet& coupled, Strategy strategy, double lambda,
               std::uint64_t seed);

  Strategy strategy() const { return strategy_; }
  double lambda() const { return lambda_; }
  /// Feature set whose decoder columns form d_raw.
  const SensitiveSet& features() const { return features_; }

  /// Delta h with h~ = h + Delta h; the code is read from `h`.
  Vector shift(const Vector& h) const;
  Vector apply(const Vector& h) const;
  Corpus apply(const Corpus& corpus) const;

 private:
  const ProjectionPlan* plan_;
  std::vector<Eigen::Index> coupled_;
  Strategy strategy_;
  double lambda_;
  SensitiveSet features_;
};

struct AblationResult {
  Strategy strategy = Strategy::kOrtho;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::vector<Eigen::Index> features;  // set used for d_raw
  ErasureMetrics metrics;
};

nlohmann::json to_json(const AblationResult& r);
AblationResult ablation_from_json(const nlohmann::json& node);

AblationResult run_ablation(Strategy strategy, const Corpus& corpus, const ProjectionPlan& plan,
                            const CoupledSet& coupled, double lambda, std::uint64_t seed);

struct SweepPoint {
  double lambda = 0.0;
  ErasureMetrics metrics;
};

/// Orthogonal erasure at each lambda.
std::vector<SweepPoint> lambda_sweep(const Corpus& corpus, const ProjectionPlan& plan,
                                     const std::vector<double>& lambdas);

/// Corpus -> SAE -> detection -> projection plan.
struct PipelineConfig {
  TrainConfig train;
  /// 0 selects the number of planted sensitive directions.
  std::size_t sensitive_count = 0;
  std::size_t coupled_count = 10;
  double lambda = 3.0;
};

struct PipelineRun {
  std::shared_ptr<const SaeModel> model;
  DetectionPlan detection;
  std::optional<ProjectionPlan> plan;
  double reconstruction_error = 0.0;
  std::vector<double> loss_history;
};

PipelineRun run_pipeline(const Corpus& corpus, const PipelineConfig& config);

/// A stack of per-layer corpora over the same prompts. The planted sensitive
/// coefficients are scaled by a Gaussian profile in the layer index that
/// reaches 1 at the peak; the peak layer's corpus doubles as the downstream
/// representation that erasure at any layer is measured against.
struct LayeredConfig {
  CorpusConfig corpus;
  std::size_t layers = 12;
  std::size_t peak_layer = 10;  // 1-based
  double width = 1.5;
  TraceConfig traces;
};

struct LayeredCorpus {
  std::vector<Corpus> layers;  // index 0 is layer 1
  std::vector<double> strength;
  std::vector<AttentionTrace> traces;
  std::size_t peak_layer = 0;  // 1-based

  const Corpus& downstream() const { return layers.at(peak_layer - 1); }
};

LayeredCorpus generate_layered(const LayeredConfig& config);

struct LayerRow {
  std::size_t layer = 0;  // 1-based; 0 means no erasure
  double sensitive_score = 0.0;
  double strength = 0.0;
  /// Residual sensitive energy downstream divided by the unerased baseline.
  double residual_ratio = 1.0;
  bool selected = false;
};

struct LayerTable {
  LayerScoreReport scores;
  std::vector<LayerRow> rows;
  std::size_t selected_layer() const { return scores.selected_layer(); }
};

/// Localizes with the traces, then for each requested layer (1-based) trains
/// a pipeline on that layer's corpus and erases the downstream activations
/// with directions read at that layer. Layer 0 in `layers` is the
/// no-erasure row.
LayerTable layer_ablation(const LayeredCorpus& layered, const std::vector<std::size_t>& layers,
                          const PipelineConfig& config, Strategy strategy = Strategy::kOrtho);

nlohmann::json to_json(const LayerTable& table);

}  // namespace orthoeraser
