#include "orthoeraser/detector.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "orthoeraser/codec.hpp"
#include "orthoeraser/error.hpp"

namespace orthoeraser {

using codec::Json;

namespace {

// Indices sorted by descending score, ascending index on ties.
std::vector<Eigen::Index> rank_by_score(const Vector& scores, const std::vector<Eigen::Index>& candidates,
                                        std::size_t count) {
  std::vector<Eigen::Index> ranked = candidates;
  auto before = [&](Eigen::Index a, Eigen::Index b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(count), ranked.end(), before);
  ranked.resize(count);
  return ranked;
}

Vector decode_sensitive_part(const SaeModel& model, const Vector& code, const SensitiveSet& sensitive) {
  Vector part = Vector::Zero(model.input_dim());
  for (Eigen::Index i : sensitive.indices)
    if (code[i] != 0.0) part.noalias() += code[i] * model.decoder_weight.col(i);
  return part;
}

void check_indices(const SensitiveSet& sensitive, Eigen::Index features) {
  for (Eigen::Index i : sensitive.indices)
    require(i >= 0 && i < features, ErrorCode::kOutOfRange, "sensitive index outside the SAE");
}

}  // namespace

bool SensitiveSet::contains(Eigen::Index i) const {
  return std::find(indices.begin(), indices.end(), i) != indices.end();
}

ClassStats ClassStats::from_codes(const Matrix& codes) {
  require(codes.cols() > 0, ErrorCode::kEmptyInput, "statistics over an empty prompt class");
  const Eigen::Index features = codes.rows();
  ClassStats stats;
  stats.frequency.resize(features);
  stats.mean_magnitude.resize(features);
  const double n = static_cast<double>(codes.cols());
  for (Eigen::Index m = 0; m < features; ++m) {
    double fired = 0.0, total = 0.0;
    for (Eigen::Index j = 0; j < codes.cols(); ++j) {
      if (codes(m, j) > 0.0) {
        fired += 1.0;
        total += codes(m, j);
      }
    }
    stats.frequency[m] = fired / n;
    stats.mean_magnitude[m] = fired > 0.0 ? total / fired : 0.0;
  }
  stats.weighted_score = stats.frequency.cwiseProduct(stats.mean_magnitude);
  return stats;
}

Matrix encode_class(const SaeModel& model, const Corpus& corpus, PromptClass c) {
  EncodeWorkspace workspace;
  workspace.reserve(model);
  Matrix codes(model.feature_count(), static_cast<Eigen::Index>(corpus.count(c)));
  Vector code;
  Eigen::Index j = 0;
  for (const auto& a : corpus.activations) {
    if (a.prompt_class != c) continue;
    encode_into(model, a.values, workspace, code);
    codes.col(j++) = code;
  }
  return codes;
}

NeuronStats neuron_stats_from_codes(const Matrix& sensitive_codes, const Matrix& non_sensitive_codes) {
  require(sensitive_codes.rows() == non_sensitive_codes.rows(), ErrorCode::kDimensionMismatch,
          "class codes have different widths");
  NeuronStats stats;
  stats.sensitive = ClassStats::from_codes(sensitive_codes);
  stats.non_sensitive = ClassStats::from_codes(non_sensitive_codes);
  stats.delta_wfs = stats.sensitive.weighted_score - stats.non_sensitive.weighted_score;
  return stats;
}

NeuronStats neuron_stats(const SaeModel& model, const Corpus& corpus) {
  require(corpus.count(PromptClass::kSensitive) > 0 && corpus.count(PromptClass::kNonSensitive) > 0,
          ErrorCode::kEmptyInput, "neuron statistics need activations of both prompt classes");
  return neuron_stats_from_codes(encode_class(model, corpus, PromptClass::kSensitive),
                                 encode_class(model, corpus, PromptClass::kNonSensitive));
}

SensitiveSet select_sensitive(const NeuronStats& stats, std::size_t count) {
  const auto features = static_cast<std::size_t>(stats.delta_wfs.size());
  require(count >= 1 && count <= features, ErrorCode::kOutOfRange,
          "K_s = " + std::to_string(count) + " outside [1, " + std::to_string(features) + "]");
  std::vector<Eigen::Index> all(features);
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  return SensitiveSet{rank_by_score(stats.delta_wfs, all, count)};
}

ZeroAblation zero_ablate(const SaeModel& model, const Vector& h, const SensitiveSet& sensitive) {
  check_indices(sensitive, model.feature_count());
  ZeroAblation out;
  out.code = encode(model, h);
  out.ablated = h - decode_sensitive_part(model, out.code.values, sensitive);
  out.shifted = encode(model, out.ablated);
  return out;
}

Vector coupling_strengths(const SaeModel& model, const Matrix& sensitive_activations,
                          const SensitiveSet& sensitive) {
  require(sensitive_activations.cols() > 0, ErrorCode::kEmptyInput,
          "coupling strengths need at least one sensitive-class activation");
  require(sensitive_activations.rows() == model.input_dim(), ErrorCode::kDimensionMismatch,
          "activations do not match the SAE input dimension");
  check_indices(sensitive, model.feature_count());
  EncodeWorkspace workspace;
  workspace.reserve(model);
  Vector code, shifted, ablated;
  Vector total = Vector::Zero(model.feature_count());
  for (Eigen::Index j = 0; j < sensitive_activations.cols(); ++j) {
    const Vector h = sensitive_activations.col(j);
    encode_into(model, h, workspace, code);
    ablated = h - decode_sensitive_part(model, code, sensitive);
    encode_into(model, ablated, workspace, shifted);
    total += (code - shifted).cwiseAbs();
  }
  Vector delta = total / static_cast<double>(sensitive_activations.cols());
  for (Eigen::Index i : sensitive.indices) delta[i] = 0.0;
  return delta;
}

Vector coupling_strengths(const SaeModel& model, const Corpus& corpus, const SensitiveSet& sensitive) {
  return coupling_strengths(model, corpus.stacked(PromptClass::kSensitive), sensitive);
}

CoupledSet select_coupled(const Vector& strengths, const SensitiveSet& sensitive, std::size_t count) {
  const auto features = static_cast<std::size_t>(strengths.size());
  require(sensitive.size() <= features, ErrorCode::kOutOfRange, "sensitive set larger than the SAE");
  const std::size_t available = features - sensitive.size();
  require(count >= 1 && count <= available, ErrorCode::kOutOfRange,
          "k_c = " + std::to_string(count) + " outside [1, " + std::to_string(available) + "]");
  std::vector<Eigen::Index> benign;
  for (Eigen::Index i = 0; i < strengths.size(); ++i)
    if (!sensitive.contains(i)) benign.push_back(i);
  CoupledSet coupled;
  coupled.indices = rank_by_score(strengths, benign, count);
  for (Eigen::Index i : coupled.indices) coupled.strengths.push_back(strengths[i]);
  coupled.degenerate = std::all_of(benign.begin(), benign.end(), [&](Eigen::Index i) { return strengths[i] == 0.0; });
  if (coupled.degenerate)
    std::clog << "warning: every coupling strength is zero; coupled set falls back to index order\n";
  return coupled;
}

DetectionPlan detect(const SaeModel& model, const Corpus& corpus, std::size_t sensitive_count,
                     std::size_t coupled_count) {
  model.validate();
  require(corpus.dim == model.input_dim(), ErrorCode::kDimensionMismatch,
          "corpus dimension differs from the SAE input dimension");
  DetectionPlan plan;
  plan.input_dim = model.input_dim();
  plan.features = model.feature_count();
  plan.stats = neuron_stats(model, corpus);
  plan.sensitive = select_sensitive(plan.stats, sensitive_count);
  plan.coupling = coupling_strengths(model, corpus, plan.sensitive);
  plan.coupled = select_coupled(plan.coupling, plan.sensitive, coupled_count);
  return plan;
}

namespace {

std::vector<double> as_list(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector from_list(const Json& node, Eigen::Index expected) {
  const auto values = node.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(values.size()) != expected)
    fail(ErrorCode::kDimensionInconsistency, "per-feature table has the wrong length");
  return Eigen::Map<const Vector>(values.data(), expected);
}

}  // namespace

Json to_json(const DetectionPlan& plan) {
  // Readable decimal tables alongside exact base-64 copies of the vectors
  // that affect the erase step.
  return Json{{"input_dim", plan.input_dim},
              {"features", plan.features},
              {"sensitive", plan.sensitive.indices},
              {"coupled", plan.coupled.indices},
              {"coupled_strengths", plan.coupled.strengths},
              {"coupled_degenerate", plan.coupled.degenerate},
              {"coupling", codec::encode_vector(plan.coupling)},
              {"wfs_table",
               {{"frequency_sensitive", as_list(plan.stats.sensitive.frequency)},
                {"mean_sensitive", as_list(plan.stats.sensitive.mean_magnitude)},
                {"wfs_sensitive", as_list(plan.stats.sensitive.weighted_score)},
                {"frequency_non_sensitive", as_list(plan.stats.non_sensitive.frequency)},
                {"mean_non_sensitive", as_list(plan.stats.non_sensitive.mean_magnitude)},
                {"wfs_non_sensitive", as_list(plan.stats.non_sensitive.weighted_score)},
                {"delta_wfs", as_list(plan.stats.delta_wfs)}}}};
}

void save(const DetectionPlan& plan, const std::filesystem::path& path) {
  codec::write_document(path, kPlanSchema, kPlanVersion, to_json(plan));
}

DetectionPlan load_plan(const std::filesystem::path& path) {
  const Json doc = codec::read_document(path, kPlanSchema, kPlanVersion);
  try {
    DetectionPlan plan;
    plan.input_dim = codec::field(doc, "input_dim").get<Eigen::Index>();
    plan.features = codec::field(doc, "features").get<Eigen::Index>();
    plan.sensitive.indices = codec::field(doc, "sensitive").get<std::vector<Eigen::Index>>();
    plan.coupled.indices = codec::field(doc, "coupled").get<std::vector<Eigen::Index>>();
    plan.coupled.strengths = codec::field(doc, "coupled_strengths").get<std::vector<double>>();
    plan.coupled.degenerate = codec::field(doc, "coupled_degenerate").get<bool>();
    plan.coupling = codec::decode_vector(codec::field(doc, "coupling"), plan.features);
    const Json& table = codec::field(doc, "wfs_table");
    auto column = [&](const char* key) { return from_list(codec::field(table, key), plan.features); };
    plan.stats.sensitive = {column("frequency_sensitive"), column("mean_sensitive"), column("wfs_sensitive")};
    plan.stats.non_sensitive = {column("frequency_non_sensitive"), column("mean_non_sensitive"),
                                column("wfs_non_sensitive")};
    plan.stats.delta_wfs = column("delta_wfs");
    for (auto* set : {&plan.sensitive.indices, &plan.coupled.indices})
      for (Eigen::Index i : *set)
        require(i >= 0 && i < plan.features, ErrorCode::kDimensionInconsistency, "plan index outside the SAE");
    require(plan.coupled.strengths.size() == plan.coupled.indices.size(), ErrorCode::kDimensionInconsistency,
            "one coupling strength per coupled index");
    for (Eigen::Index i : plan.coupled.indices)
      require(!plan.sensitive.contains(i), ErrorCode::kMalformedFile, "coupled and sensitive sets overlap");
    return plan;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kMalformedFile, std::string("plan field has the wrong type: ") + e.what());
  }
}

}  // namespace orthoeraser
