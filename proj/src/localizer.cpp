#include "orthoeraser/localizer.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "orthoeraser/codec.hpp"
#include "orthoeraser/error.hpp"

namespace orthoeraser {

namespace {

void check_layer(const AttentionTrace& trace, std::size_t layer) {
  require(layer < trace.layer_count(), ErrorCode::kOutOfRange,
          "layer " + std::to_string(layer) + " outside trace '" + trace.pair_id + "' with " +
              std::to_string(trace.layer_count()) + " layers");
}

// Row t of the attention matrix scaled to sum to 1.
Vector normalized_row(const Matrix& m, std::size_t t) {
  Vector row = m.row(static_cast<Eigen::Index>(t)).transpose();
  const double sum = row.sum();
  if (sum > 0.0) return row / sum;
  return Vector::Constant(row.size(), 1.0 / static_cast<double>(row.size()));
}

}  // namespace

double sensitive_attention(const AttentionTrace& trace, std::size_t layer) {
  check_layer(trace, layer);
  const auto& modifiers = trace.partition.sensitive;
  const auto& targets = trace.partition.target;
  require(!modifiers.empty() && !targets.empty(), ErrorCode::kEmptyInput,
          "sensitive attention needs modifier and target tokens");
  const Matrix& a = trace.layers[layer];
  double total = 0.0;
  for (std::size_t i : modifiers)
    for (std::size_t j : targets) total += a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return total / static_cast<double>(modifiers.size() * targets.size());
}

double contextual_disturbance(const AttentionTrace& sensitive, const AttentionTrace& counterpart,
                              std::size_t layer) {
  check_layer(sensitive, layer);
  check_layer(counterpart, layer);
  require(sensitive.tokens() == counterpart.tokens(), ErrorCode::kDimensionMismatch,
          "paired traces have different token counts");
  require(sensitive.partition.non_target == counterpart.partition.non_target,
          ErrorCode::kDimensionMismatch, "paired traces disagree on background tokens");
  const auto& background = sensitive.partition.non_target;
  require(!background.empty(), ErrorCode::kEmptyInput, "no background tokens to compare");
  double total = 0.0;
  for (std::size_t t : background) {
    total += (normalized_row(sensitive.layers[layer], t) - normalized_row(counterpart.layers[layer], t))
                 .lpNorm<1>();
  }
  return total / static_cast<double>(background.size());
}

std::vector<TracePair> pair_traces(std::span<const AttentionTrace> traces) {
  struct Slot {
    std::size_t order;
    std::vector<const AttentionTrace*> sensitive, counterpart;
  };
  std::map<std::string, Slot> slots;
  for (const auto& t : traces) {
    auto [it, inserted] = slots.try_emplace(t.pair_id, Slot{slots.size(), {}, {}});
    (t.prompt_class == PromptClass::kSensitive ? it->second.sensitive : it->second.counterpart).push_back(&t);
  }
  std::vector<std::pair<std::size_t, TracePair>> ordered;
  for (const auto& [id, slot] : slots) {
    if (slot.sensitive.size() == 1 && slot.counterpart.size() == 1)
      ordered.push_back({slot.order, TracePair{slot.sensitive[0], slot.counterpart[0]}});
  }
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<TracePair> pairs;
  for (const auto& [order, pair] : ordered) pairs.push_back(pair);
  return pairs;
}

double sensitive_score(std::span<const TracePair> pairs, std::size_t layer) {
  require(!pairs.empty(), ErrorCode::kEmptyInput, "sensitive score needs at least one prompt pair");
  double total = 0.0;
  for (const auto& p : pairs)
    total += sensitive_attention(*p.sensitive, layer) - contextual_disturbance(*p.sensitive, *p.counterpart, layer);
  return total / static_cast<double>(pairs.size());
}

std::size_t argmax_layer(std::span<const double> scores) {
  require(!scores.empty(), ErrorCode::kEmptyInput, "no layer scores");
  std::size_t best = 0;
  for (std::size_t l = 1; l < scores.size(); ++l)
    if (scores[l] > scores[best]) best = l;
  return best;
}

LayerScoreReport select_layer(std::span<const AttentionTrace> traces) {
  const auto pairs = pair_traces(traces);
  require(!pairs.empty(), ErrorCode::kEmptyInput, "no complete sensitive/non-sensitive trace pairs");
  const std::size_t layers = pairs.front().sensitive->layer_count();
  for (const auto& p : pairs) {
    require(p.sensitive->layer_count() == layers && p.counterpart->layer_count() == layers,
            ErrorCode::kDimensionMismatch, "traces disagree on the number of layers");
  }
  LayerScoreReport report;
  const double n = static_cast<double>(pairs.size());
  for (std::size_t l = 0; l < layers; ++l) {
    double sa = 0.0, cd = 0.0;
    for (const auto& p : pairs) {
      sa += sensitive_attention(*p.sensitive, l);
      cd += contextual_disturbance(*p.sensitive, *p.counterpart, l);
    }
    report.sensitive_attention.push_back(sa / n);
    report.contextual_disturbance.push_back(cd / n);
    report.sensitive_score.push_back(sensitive_score(pairs, l));
  }
  report.selected_index = argmax_layer(report.sensitive_score);
  return report;
}

nlohmann::json to_json(const LayerScoreReport& report) {
  return nlohmann::json{{"sensitive_attention", report.sensitive_attention},
                        {"contextual_disturbance", report.contextual_disturbance},
                        {"sensitive_score", report.sensitive_score},
                        {"selected_layer", report.selected_layer()}};
}

void save(const LayerScoreReport& report, const std::filesystem::path& path) {
  codec::write_document(path, "orthoeraser-layers", 1, to_json(report));
}

}  // namespace orthoeraser
