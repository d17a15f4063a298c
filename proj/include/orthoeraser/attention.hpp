#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "orthoeraser/types.hpp"

namespace orthoeraser {

/// Token index sets of one prompt (0-based). The sets are pairwise disjoint
/// and need not cover every token.
struct TokenPartition {
  std::vector<std::size_t> sensitive;   // modifier tokens
  std::vector<std::size_t> target;      // entity noun tokens
  std::vector<std::size_t> non_target;  // background tokens

  bool operator==(const TokenPartition&) const = default;
};

/// Head-averaged attention of one prompt across all layers.
struct AttentionTrace {
  std::vector<Eigen::MatrixXd> layers;  // each T x T, non-negative
  TokenPartition partition;
  PromptClass prompt_class = PromptClass::kSensitive;
  std::string pair_id;

  std::size_t layer_count() const { return layers.size(); }
  Eigen::Index tokens() const { return layers.empty() ? 0 : layers.front().rows(); }

  /// Throws kInvalidArgument / kDimensionInconsistency on a broken trace.
  void validate() const;
};

bool same_trace(const AttentionTrace& a, const AttentionTrace& b);

/// Synthetic traces with a planted sensitive-attention peak.
struct TraceConfig {
  std::size_t layers = 12;
  std::size_t peak_layer = 10;  // 1-based, matches LayerScoreReport::selected_layer
  std::size_t pairs = 16;
  std::size_t tokens = 8;
  double peak_boost = 0.6;      // extra modifier->noun attention mass at the peak
  double boost_width = 1.5;     // Gaussian width of the boost profile, in layers
  double context_jitter = 0.05; // background perturbation between paired prompts
  std::uint64_t seed = 0;
};

/// Pairs are emitted as (sensitive, non-sensitive) neighbours sharing pair_id.
std::vector<AttentionTrace> generate_traces(const TraceConfig& config);

}  // namespace orthoeraser
