#include "orthoeraser/corpus.hpp"

#include <cmath>
#include <cstdio>

#include "orthoeraser/codec.hpp"
#include "orthoeraser/error.hpp"
#include "orthoeraser/rng.hpp"

namespace orthoeraser {

using codec::Json;

std::string_view to_string(PromptClass c) {
  return c == PromptClass::kSensitive ? "sensitive" : "non_sensitive";
}

PromptClass prompt_class_from_string(std::string_view text) {
  if (text == "sensitive") return PromptClass::kSensitive;
  if (text == "non_sensitive") return PromptClass::kNonSensitive;
  fail(ErrorCode::kMalformedFile, "unknown prompt class '" + std::string(text) + "'");
}

namespace {

constexpr std::uint64_t kDictionaryStream = 0;
constexpr std::uint64_t kActivationStream = 1;
constexpr std::uint64_t kTraceStream = 2;

std::string_view label_name(FeatureLabel label) {
  return label == FeatureLabel::kSensitive ? "sensitive" : "benign";
}

FeatureLabel label_from_string(std::string_view text) {
  if (text == "sensitive") return FeatureLabel::kSensitive;
  if (text == "benign") return FeatureLabel::kBenign;
  fail(ErrorCode::kMalformedFile, "unknown feature label '" + std::string(text) + "'");
}

// Modified Gram-Schmidt over Gaussian draws, with one re-orthogonalization
// pass per vector.
Matrix orthonormal_frame(Eigen::Index dim, Eigen::Index count, Rng& rng) {
  Matrix frame(dim, count);
  for (Eigen::Index j = 0; j < count; ++j) {
    Vector v(dim);
    double norm = 0.0;
    do {
      for (Eigen::Index i = 0; i < dim; ++i) v[i] = rng.normal();
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index k = 0; k < j; ++k) v -= frame.col(k).dot(v) * frame.col(k);
      }
      norm = v.norm();
    } while (norm < 1e-6);
    frame.col(j) = v / norm;
  }
  return frame;
}

std::string make_id(char prefix, std::size_t i) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%c%05zu", prefix, i);
  return buffer;
}

Json encode_truth(const GroundTruth& truth) {
  Json labels = Json::array();
  for (FeatureLabel l : truth.labels) labels.push_back(label_name(l));
  Json pairs = Json::array();
  for (auto [s, b] : truth.pairs) pairs.push_back({s, b});
  return Json{{"dictionary", codec::encode_matrix(truth.dictionary)},
              {"labels", labels},
              {"pairs", pairs},
              {"overlap", truth.overlap},
              {"seed", truth.seed}};
}

GroundTruth decode_truth(const Json& node, Eigen::Index dim) {
  GroundTruth truth;
  truth.dictionary = codec::decode_matrix(codec::field(node, "dictionary"), dim);
  for (const Json& l : codec::field(node, "labels")) {
    if (!l.is_string()) fail(ErrorCode::kMalformedFile, "feature label must be a string");
    truth.labels.push_back(label_from_string(l.get_ref<const std::string&>()));
  }
  for (const Json& p : codec::field(node, "pairs")) {
    if (!p.is_array() || p.size() != 2) fail(ErrorCode::kMalformedFile, "pair must have two entries");
    truth.pairs.emplace_back(p[0].get<std::size_t>(), p[1].get<std::size_t>());
  }
  truth.overlap = codec::field(node, "overlap").get<double>();
  truth.seed = codec::field(node, "seed").get<std::uint64_t>();
  if (truth.labels.size() != static_cast<std::size_t>(truth.dictionary.cols())) {
    fail(ErrorCode::kDimensionInconsistency, "label count differs from dictionary columns");
  }
  return truth;
}

Json encode_trace(const AttentionTrace& trace) {
  Json layers = Json::array();
  for (const Matrix& m : trace.layers) layers.push_back(codec::encode_matrix(m));
  return Json{{"pair_id", trace.pair_id},
              {"class", to_string(trace.prompt_class)},
              {"partition",
               {{"sensitive", trace.partition.sensitive},
                {"target", trace.partition.target},
                {"non_target", trace.partition.non_target}}},
              {"layers", layers}};
}

AttentionTrace decode_trace(const Json& node) {
  AttentionTrace trace;
  trace.pair_id = codec::field(node, "pair_id").get<std::string>();
  trace.prompt_class = prompt_class_from_string(codec::field(node, "class").get<std::string>());
  const Json& partition = codec::field(node, "partition");
  trace.partition.sensitive = codec::field(partition, "sensitive").get<std::vector<std::size_t>>();
  trace.partition.target = codec::field(partition, "target").get<std::vector<std::size_t>>();
  trace.partition.non_target = codec::field(partition, "non_target").get<std::vector<std::size_t>>();
  Eigen::Index tokens = -1;
  for (const Json& layer : codec::field(node, "layers")) {
    trace.layers.push_back(codec::decode_matrix(layer, tokens, tokens));
    tokens = trace.layers.back().rows();
  }
  trace.validate();
  return trace;
}

}  // namespace

std::vector<std::size_t> GroundTruth::sensitive_columns() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == FeatureLabel::kSensitive) out.push_back(i);
  return out;
}

std::vector<std::size_t> GroundTruth::benign_columns() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == FeatureLabel::kBenign) out.push_back(i);
  return out;
}

Matrix GroundTruth::sensitive_directions() const {
  const auto cols = sensitive_columns();
  Matrix out(dictionary.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = dictionary.col(cols[j]);
  return out;
}

Matrix GroundTruth::benign_directions() const {
  const auto cols = benign_columns();
  Matrix out(dictionary.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(j) = dictionary.col(cols[j]);
  return out;
}

void GroundTruth::validate() const {
  require(labels.size() == static_cast<std::size_t>(dictionary.cols()),
          ErrorCode::kDimensionInconsistency, "one label per dictionary column");
  require(!sensitive_columns().empty() && !benign_columns().empty(), ErrorCode::kInvalidArgument,
          "ground truth needs at least one sensitive and one benign column");
  for (Eigen::Index j = 0; j < dictionary.cols(); ++j) {
    require(std::abs(dictionary.col(j).norm() - 1.0) <= 1e-9, ErrorCode::kInvalidArgument,
            "dictionary column " + std::to_string(j) + " is not unit norm");
  }
  for (auto [s, b] : pairs) {
    require(s < labels.size() && b < labels.size() && labels[s] == FeatureLabel::kSensitive &&
                labels[b] == FeatureLabel::kBenign,
            ErrorCode::kInvalidArgument, "pair must join a sensitive and a benign column");
    const double cosine = dictionary.col(s).dot(dictionary.col(b));
    require(std::abs(std::abs(cosine) - overlap) <= 1e-6, ErrorCode::kInvalidArgument,
            "pair cosine deviates from the configured overlap");
  }
}

std::size_t Corpus::count(PromptClass c) const {
  std::size_t n = 0;
  for (const auto& a : activations) n += a.prompt_class == c;
  return n;
}

Matrix Corpus::stacked(PromptClass c) const {
  Matrix out(dim, static_cast<Eigen::Index>(count(c)));
  Eigen::Index j = 0;
  for (const auto& a : activations)
    if (a.prompt_class == c) out.col(j++) = a.values;
  return out;
}

Matrix Corpus::stacked() const {
  Matrix out(dim, static_cast<Eigen::Index>(activations.size()));
  for (std::size_t j = 0; j < activations.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = activations[j].values;
  return out;
}

void Corpus::validate() const {
  require(dim > 0, ErrorCode::kInvalidArgument, "corpus dimension must be positive");
  for (const auto& a : activations) {
    require(a.values.size() == dim, ErrorCode::kDimensionInconsistency,
            "activation '" + a.prompt_id + "' has length " + std::to_string(a.values.size()) +
                ", corpus dimension is " + std::to_string(dim));
    require(a.values.allFinite(), ErrorCode::kInvalidArgument,
            "activation '" + a.prompt_id + "' has non-finite entries");
  }
  if (ground_truth) {
    require(ground_truth->dictionary.rows() == dim, ErrorCode::kDimensionInconsistency,
            "ground-truth dictionary rows differ from corpus dimension");
    ground_truth->validate();
  }
  for (const auto& t : attention) t.validate();
}

bool same_corpus(const Corpus& a, const Corpus& b) {
  if (a.dim != b.dim || a.activations.size() != b.activations.size()) return false;
  for (std::size_t i = 0; i < a.activations.size(); ++i) {
    const auto& x = a.activations[i];
    const auto& y = b.activations[i];
    if (x.prompt_id != y.prompt_id || x.prompt_class != y.prompt_class || !identical(x.values, y.values))
      return false;
  }
  if (a.ground_truth.has_value() != b.ground_truth.has_value()) return false;
  if (a.ground_truth) {
    const auto& x = *a.ground_truth;
    const auto& y = *b.ground_truth;
    if (!identical(x.dictionary, y.dictionary) || x.labels != y.labels || x.pairs != y.pairs ||
        x.overlap != y.overlap || x.seed != y.seed)
      return false;
  }
  if (a.attention.size() != b.attention.size()) return false;
  for (std::size_t i = 0; i < a.attention.size(); ++i)
    if (!same_trace(a.attention[i], b.attention[i])) return false;
  return a.provenance == b.provenance;
}

GroundTruth plant_dictionary(const CorpusConfig& config) {
  require(config.dim >= 4, ErrorCode::kInvalidArgument, "dimension must be at least 4");
  require(config.features <= static_cast<std::size_t>(4 * config.dim), ErrorCode::kInvalidArgument,
          "at most 4*d features are supported");
  require(config.overlap >= 0.0 && config.overlap < 1.0, ErrorCode::kInvalidArgument,
          "overlap must lie in [0, 1)");
  require(config.sensitive_features >= 1, ErrorCode::kInvalidArgument,
          "at least one sensitive feature is required");
  const std::size_t s_count = config.sensitive_features;
  const auto dim = static_cast<std::size_t>(config.dim);
  // Each sensitive column needs a benign partner and both need their own
  // orthonormal frame vectors to realise the tilt exactly.
  if (config.features < 2 * s_count || 2 * s_count > dim) {
    fail(ErrorCode::kDimensionMismatch,
         std::to_string(config.features) + " features in d=" + std::to_string(dim) +
             " cannot host " + std::to_string(s_count) + " sensitive/benign pairs");
  }

  Rng rng(Rng::derive(config.seed, kDictionaryStream));
  const std::size_t unpaired = config.features - 2 * s_count;
  const std::size_t framed = std::min(dim, 2 * s_count + unpaired);
  const Matrix frame = orthonormal_frame(config.dim, static_cast<Eigen::Index>(framed), rng);

  GroundTruth truth;
  truth.overlap = config.overlap;
  truth.seed = config.seed;
  truth.dictionary.resize(config.dim, static_cast<Eigen::Index>(config.features));
  truth.labels.assign(config.features, FeatureLabel::kBenign);
  const double tilt = std::sqrt(1.0 - config.overlap * config.overlap);
  for (std::size_t i = 0; i < s_count; ++i) {
    const auto s = static_cast<Eigen::Index>(i);
    const auto b = static_cast<Eigen::Index>(s_count + i);
    truth.dictionary.col(s) = frame.col(2 * s);
    Vector partner = config.overlap * frame.col(2 * s) + tilt * frame.col(2 * s + 1);
    truth.dictionary.col(b) = partner / partner.norm();
    truth.labels[i] = FeatureLabel::kSensitive;
    truth.pairs.emplace_back(i, s_count + i);
  }
  for (std::size_t j = 0; j < unpaired; ++j) {
    const std::size_t column = 2 * s_count + j;
    const std::size_t frame_index = 2 * s_count + j;
    if (frame_index < framed) {
      truth.dictionary.col(static_cast<Eigen::Index>(column)) = frame.col(static_cast<Eigen::Index>(frame_index));
    } else {
      // Beyond d the dictionary is in superposition: random unit directions.
      Vector v(config.dim);
      for (Eigen::Index k = 0; k < config.dim; ++k) v[k] = rng.normal();
      truth.dictionary.col(static_cast<Eigen::Index>(column)) = v / v.norm();
    }
  }
  truth.validate();
  return truth;
}

PlantedSample draw_coefficients(const CorpusConfig& config, const GroundTruth& truth,
                                PromptClass prompt_class, Rng& rng) {
  PlantedSample sample{Vector::Zero(truth.dictionary.cols()), prompt_class};
  if (prompt_class == PromptClass::kSensitive) {
    const auto sensitive = truth.sensitive_columns();
    bool any = false;
    for (std::size_t s : sensitive) {
      if (rng.uniform() < 0.5) {
        sample.coefficients[static_cast<Eigen::Index>(s)] = rng.uniform(config.sensitive_lo, config.sensitive_hi);
        any = true;
      }
    }
    if (!any) {
      const std::size_t s = sensitive[rng.index(sensitive.size())];
      sample.coefficients[static_cast<Eigen::Index>(s)] = rng.uniform(config.sensitive_lo, config.sensitive_hi);
    }
  }
  const auto benign = truth.benign_columns();
  const std::size_t active = std::min(config.active_benign, benign.size());
  for (std::size_t pick : rng.sample_without_replacement(benign.size(), active)) {
    sample.coefficients[static_cast<Eigen::Index>(benign[pick])] = rng.uniform(config.benign_lo, config.benign_hi);
  }
  return sample;
}

Corpus generate(const CorpusConfig& config) {
  require(config.n_sensitive >= 1 && config.n_non_sensitive >= 1, ErrorCode::kInvalidArgument,
          "each prompt class needs at least one activation");
  require(config.noise >= 0.0, ErrorCode::kInvalidArgument, "noise level must be non-negative");
  require(config.sensitive_lo >= 0.0 && config.sensitive_lo <= config.sensitive_hi &&
              config.benign_lo >= 0.0 && config.benign_lo <= config.benign_hi,
          ErrorCode::kInvalidArgument, "coefficient ranges must be non-negative intervals");
  require(config.sensitive_scale >= 0.0, ErrorCode::kInvalidArgument, "sensitive scale must be non-negative");

  Corpus corpus;
  corpus.dim = config.dim;
  corpus.ground_truth = plant_dictionary(config);
  const GroundTruth& truth = *corpus.ground_truth;

  Rng rng(Rng::derive(config.seed, kActivationStream));
  auto emit = [&](PromptClass c, std::size_t n, char prefix) {
    for (std::size_t i = 0; i < n; ++i) {
      PlantedSample sample = draw_coefficients(config, truth, c, rng);
      if (config.sensitive_scale != 1.0)
        for (std::size_t s : truth.sensitive_columns())
          sample.coefficients[static_cast<Eigen::Index>(s)] *= config.sensitive_scale;
      DenseActivation a;
      a.values = truth.dictionary * sample.coefficients;
      if (config.noise > 0.0)
        for (Eigen::Index k = 0; k < config.dim; ++k) a.values[k] += config.noise * rng.normal();
      a.prompt_id = make_id(prefix, i);
      a.prompt_class = c;
      corpus.activations.push_back(std::move(a));
    }
  };
  emit(PromptClass::kSensitive, config.n_sensitive, 's');
  emit(PromptClass::kNonSensitive, config.n_non_sensitive, 'n');

  if (config.traces) {
    TraceConfig traces = *config.traces;
    traces.seed = Rng::derive(config.seed, kTraceStream);
    corpus.attention = generate_traces(traces);
  }
  return corpus;
}

void save(const Corpus& corpus, const std::filesystem::path& path) {
  corpus.validate();
  Json activations = Json::array();
  for (const auto& a : corpus.activations) {
    activations.push_back(Json{{"id", a.prompt_id},
                               {"class", to_string(a.prompt_class)},
                               {"values", codec::encode_vector(a.values)}});
  }
  Json body{{"dim", corpus.dim}, {"activations", activations}};
  if (corpus.ground_truth) body["ground_truth"] = encode_truth(*corpus.ground_truth);
  if (!corpus.attention.empty()) {
    Json traces = Json::array();
    for (const auto& t : corpus.attention) traces.push_back(encode_trace(t));
    body["attention"] = traces;
  }
  if (corpus.provenance) {
    body["provenance"] = Json{{"plan_sha256", corpus.provenance->plan_sha256},
                              {"lambda", corpus.provenance->lambda},
                              {"strategy", corpus.provenance->strategy}};
  }
  codec::write_document(path, kCorpusSchema, kCorpusVersion, std::move(body));
}

Corpus load_corpus(const std::filesystem::path& path) {
  const Json doc = codec::read_document(path, kCorpusSchema, kCorpusVersion);
  try {
    Corpus corpus;
    const Json& dim = codec::field(doc, "dim");
    if (!dim.is_number_integer() || dim.get<long long>() <= 0)
      fail(ErrorCode::kMalformedFile, "dim must be a positive integer");
    corpus.dim = static_cast<Eigen::Index>(dim.get<long long>());
    for (const Json& node : codec::field(doc, "activations")) {
      DenseActivation a;
      a.prompt_id = codec::field(node, "id").get<std::string>();
      a.prompt_class = prompt_class_from_string(codec::field(node, "class").get<std::string>());
      a.values = codec::decode_vector(codec::field(node, "values"), corpus.dim);
      corpus.activations.push_back(std::move(a));
    }
    if (doc.contains("ground_truth")) corpus.ground_truth = decode_truth(doc["ground_truth"], corpus.dim);
    if (doc.contains("attention"))
      for (const Json& node : doc["attention"]) corpus.attention.push_back(decode_trace(node));
    if (doc.contains("provenance")) {
      const Json& p = doc["provenance"];
      corpus.provenance = ErasureProvenance{codec::field(p, "plan_sha256").get<std::string>(),
                                            codec::field(p, "lambda").get<double>(),
                                            codec::field(p, "strategy").get<std::string>()};
    }
    corpus.validate();
    return corpus;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kMalformedFile, std::string("corpus field has the wrong type: ") + e.what());
  }
}

}  // namespace orthoeraser
