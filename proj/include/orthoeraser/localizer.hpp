#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "orthoeraser/attention.hpp"

namespace orthoeraser {

/// Mean raw attention from modifier tokens to target tokens at one layer
/// (0-based layer index).
double sensitive_attention(const AttentionTrace& trace, std::size_t layer);

/// Mean L1 distance between row-normalized background rows of a sensitive
/// trace and its counterpart. All-zero rows normalize to uniform.
double contextual_disturbance(const AttentionTrace& sensitive, const AttentionTrace& counterpart,
                              std::size_t layer);

struct TracePair {
  const AttentionTrace* sensitive = nullptr;
  const AttentionTrace* counterpart = nullptr;
};

/// Matches traces by pair_id; only ids with exactly one trace of each class
/// form a pair. Pairs follow first-appearance order of their ids.
std::vector<TracePair> pair_traces(std::span<const AttentionTrace> traces);

/// Mean over pairs of SA - CD at one layer.
double sensitive_score(std::span<const TracePair> pairs, std::size_t layer);

struct LayerScoreReport {
  std::vector<double> sensitive_attention;  // per layer, mean over pairs
  std::vector<double> contextual_disturbance;
  std::vector<double> sensitive_score;
  std::size_t selected_index = 0;  // 0-based

  /// 1-based layer number, the convention used in reports.
  std::size_t selected_layer() const { return selected_index + 1; }
};

/// Lowest index wins ties.
std::size_t argmax_layer(std::span<const double> scores);

LayerScoreReport select_layer(std::span<const AttentionTrace> traces);

nlohmann::json to_json(const LayerScoreReport& report);
void save(const LayerScoreReport& report, const std::filesystem::path& path);

}  // namespace orthoeraser
