#include "orthoeraser/attention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "orthoeraser/error.hpp"
#include "orthoeraser/rng.hpp"

namespace orthoeraser {

void AttentionTrace::validate() const {
  require(!layers.empty(), ErrorCode::kInvalidArgument, "trace '" + pair_id + "' has no layers");
  const Eigen::Index t = layers.front().rows();
  for (const Matrix& m : layers) {
    require(m.rows() == t && m.cols() == t, ErrorCode::kDimensionInconsistency,
            "trace '" + pair_id + "' mixes attention shapes");
    require(m.allFinite() && (m.array() >= 0.0).all(), ErrorCode::kInvalidArgument,
            "trace '" + pair_id + "' has negative or non-finite attention");
  }
  std::set<std::size_t> seen;
  for (const auto* set : {&partition.sensitive, &partition.target, &partition.non_target}) {
    for (std::size_t token : *set) {
      require(token < static_cast<std::size_t>(t), ErrorCode::kOutOfRange,
              "token index outside the trace in '" + pair_id + "'");
      require(seen.insert(token).second, ErrorCode::kInvalidArgument,
              "token sets overlap in '" + pair_id + "'");
    }
  }
  if (prompt_class == PromptClass::kSensitive) {
    require(!partition.sensitive.empty() && !partition.target.empty(), ErrorCode::kEmptyInput,
            "sensitive trace '" + pair_id + "' needs modifier and target tokens");
  }
}

bool same_trace(const AttentionTrace& a, const AttentionTrace& b) {
  if (a.pair_id != b.pair_id || a.prompt_class != b.prompt_class || !(a.partition == b.partition) ||
      a.layers.size() != b.layers.size())
    return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    if (!identical(a.layers[l], b.layers[l])) return false;
  return true;
}

namespace {

void normalize_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double sum = m.row(r).sum();
    if (sum > 0.0) m.row(r) /= sum;
  }
}

}  // namespace

std::vector<AttentionTrace> generate_traces(const TraceConfig& config) {
  require(config.layers >= 1 && config.peak_layer >= 1 && config.peak_layer <= config.layers,
          ErrorCode::kOutOfRange, "peak layer must be one of the configured layers");
  require(config.tokens >= 4, ErrorCode::kInvalidArgument, "traces need at least 4 tokens");
  require(config.pairs >= 1, ErrorCode::kInvalidArgument, "at least one trace pair is required");

  // Token layout: 0 = start token, 1 = modifier, 2 = target noun, rest = background.
  TokenPartition partition;
  partition.sensitive = {1};
  partition.target = {2};
  for (std::size_t t = 3; t < config.tokens; ++t) partition.non_target.push_back(t);

  const auto tokens = static_cast<Eigen::Index>(config.tokens);
  Rng rng(config.seed);
  std::vector<AttentionTrace> traces;
  traces.reserve(2 * config.pairs);
  for (std::size_t k = 0; k < config.pairs; ++k) {
    char id[32];
    std::snprintf(id, sizeof(id), "pair%04zu", k);
    AttentionTrace sensitive{{}, partition, PromptClass::kSensitive, id};
    AttentionTrace neutral{{}, partition, PromptClass::kNonSensitive, id};
    for (std::size_t l = 1; l <= config.layers; ++l) {
      Matrix base(tokens, tokens);
      for (Eigen::Index i = 0; i < tokens; ++i)
        for (Eigen::Index j = 0; j < tokens; ++j) base(i, j) = 0.1 + rng.uniform();
      Matrix sens = base;
      Matrix non = base;
      // Paired prompts differ slightly in background attention at every layer.
      for (std::size_t t : partition.non_target) {
        for (Eigen::Index j = 0; j < tokens; ++j) {
          sens(static_cast<Eigen::Index>(t), j) *= 1.0 + config.context_jitter * rng.uniform(-1.0, 1.0);
          non(static_cast<Eigen::Index>(t), j) *= 1.0 + config.context_jitter * rng.uniform(-1.0, 1.0);
        }
      }
      normalize_rows(sens);
      normalize_rows(non);
      const double offset = static_cast<double>(l) - static_cast<double>(config.peak_layer);
      const double boost =
          config.peak_boost * std::exp(-0.5 * offset * offset / (config.boost_width * config.boost_width));
      for (std::size_t i : partition.sensitive) {
        auto row = sens.row(static_cast<Eigen::Index>(i));
        for (std::size_t j : partition.target) row(static_cast<Eigen::Index>(j)) += boost;
        row /= row.sum();
      }
      sensitive.layers.push_back(std::move(sens));
      neutral.layers.push_back(std::move(non));
    }
    traces.push_back(std::move(sensitive));
    traces.push_back(std::move(neutral));
  }
  return traces;
}

}  // namespace orthoeraser
