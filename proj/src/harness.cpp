#include "orthoeraser/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "orthoeraser/codec.hpp"
#include "orthoeraser/error.hpp"
#include "orthoeraser/rng.hpp"

namespace orthoeraser {

using codec::Json;

namespace {

constexpr std::uint64_t kRandomFeatureStream = 0x52414E44;
constexpr std::uint64_t kLayerTraceStream = 0x7ACE;

double mean_squared_projection(const Matrix& activations, const Matrix& directions) {
  if (activations.cols() == 0 || directions.cols() == 0) return 0.0;
  const Matrix inner = directions.transpose() * activations;
  return inner.squaredNorm() / static_cast<double>(inner.size());
}

void check_aligned(const Corpus& before, const Corpus& after) {
  require(before.dim == after.dim, ErrorCode::kDimensionMismatch, "corpora have different dimensions");
  require(before.activations.size() == after.activations.size(), ErrorCode::kInvalidArgument,
          "corpora are not aligned: different activation counts");
  for (std::size_t i = 0; i < before.activations.size(); ++i) {
    const auto& a = before.activations[i];
    const auto& b = after.activations[i];
    require(a.prompt_id == b.prompt_id && a.prompt_class == b.prompt_class, ErrorCode::kInvalidArgument,
            "corpora are not aligned by prompt_id at position " + std::to_string(i));
  }
}

}  // namespace

double ErasureMetrics::sensitive_ratio() const {
  if (sensitive_energy_before > 0.0) return sensitive_energy_after / sensitive_energy_before;
  return sensitive_energy_after > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
}

double ErasureMetrics::benign_change() const {
  if (benign_energy_before > 0.0) return std::abs(benign_energy_after / benign_energy_before - 1.0);
  return benign_energy_after > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

Json to_json(const ErasureMetrics& m) {
  return Json{{"sensitive_energy_before", m.sensitive_energy_before},
              {"sensitive_energy_after", m.sensitive_energy_after},
              {"benign_energy_before", m.benign_energy_before},
              {"benign_energy_after", m.benign_energy_after},
              {"protected_drift", m.protected_drift},
              {"reconstruction_drift", m.reconstruction_drift},
              {"max_activation_norm", m.max_activation_norm}};
}

ErasureMetrics metrics_from_json(const Json& node) {
  ErasureMetrics m;
  auto get = [&](const char* key) { return codec::field(node, key).get<double>(); };
  m.sensitive_energy_before = get("sensitive_energy_before");
  m.sensitive_energy_after = get("sensitive_energy_after");
  m.benign_energy_before = get("benign_energy_before");
  m.benign_energy_after = get("benign_energy_after");
  m.protected_drift = get("protected_drift");
  m.reconstruction_drift = get("reconstruction_drift");
  m.max_activation_norm = get("max_activation_norm");
  return m;
}

ErasureMetrics evaluate(const Corpus& before, const Corpus& after, const GroundTruth& truth,
                        const Matrix& protected_columns) {
  check_aligned(before, after);
  require(truth.dictionary.rows() == before.dim, ErrorCode::kDimensionMismatch,
          "ground truth dimension differs from the corpus");
  require(protected_columns.size() == 0 || protected_columns.rows() == before.dim, ErrorCode::kDimensionMismatch,
          "protected columns do not match the corpus dimension");

  ErasureMetrics m;
  const Matrix sens_before = before.stacked(PromptClass::kSensitive);
  const Matrix sens_after = after.stacked(PromptClass::kSensitive);
  const Matrix u = truth.sensitive_directions();
  const Matrix b = truth.benign_directions();
  m.sensitive_energy_before = mean_squared_projection(sens_before, u);
  m.sensitive_energy_after = mean_squared_projection(sens_after, u);
  m.benign_energy_before = mean_squared_projection(sens_before, b);
  m.benign_energy_after = mean_squared_projection(sens_after, b);

  double drift_sum = 0.0;
  std::size_t non_sensitive = 0;
  for (std::size_t i = 0; i < before.activations.size(); ++i) {
    const Vector& h = before.activations[i].values;
    const Vector change = after.activations[i].values - h;
    const double norm = h.norm();
    m.max_activation_norm = std::max(m.max_activation_norm, norm);
    if (protected_columns.size() > 0)
      m.protected_drift = std::max(m.protected_drift, (protected_columns.transpose() * change).cwiseAbs().maxCoeff());
    if (before.activations[i].prompt_class == PromptClass::kNonSensitive) {
      const double moved = change.norm();
      drift_sum += norm > 0.0 ? moved / norm : (moved > 0.0 ? 1.0 : 0.0);
      ++non_sensitive;
    }
  }
  m.reconstruction_drift = non_sensitive > 0 ? drift_sum / static_cast<double>(non_sensitive) : 0.0;
  return m;
}

ErasureMetrics evaluate(const Corpus& before, const Corpus& after, const ProjectionPlan& plan) {
  require(before.ground_truth.has_value(), ErrorCode::kInvalidArgument, "evaluation needs planted ground truth");
  return evaluate(before, after, *before.ground_truth, plan.basis().protected_columns);
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kOrtho: return "ortho";
    case Strategy::kOnlySensitive: return "only_sensitive";
    case Strategy::kOnlyCoupled: return "only_coupled";
    case Strategy::kCoupledAligned: return "coupled_aligned";
    case Strategy::kRandomNeurons: return "random_neurons";
    case Strategy::kAmplify: return "amplify";
  }
  return "unknown";
}

Strategy strategy_from_string(std::string_view tag) {
  for (Strategy s : kAllStrategies)
    if (to_string(s) == tag) return s;
  fail(ErrorCode::kInvalidArgument, "unknown strategy '" + std::string(tag) + "'");
}

Intervention::Intervention(const ProjectionPlan& plan, const CoupledSet& coupled, Strategy strategy, double lambda,
                           std::uint64_t seed)
    : plan_(&plan), coupled_(coupled.indices), strategy_(strategy), lambda_(lambda) {
  require(std::isfinite(lambda) && lambda >= 0.0, ErrorCode::kInvalidArgument, "lambda must be >= 0");
  const Eigen::Index features = plan.model().feature_count();
  for (Eigen::Index j : coupled_)
    require(j >= 0 && j < features, ErrorCode::kOutOfRange, "coupled index outside the SAE");
  switch (strategy) {
    case Strategy::kOnlyCoupled:
      features_.indices = coupled_;
      break;
    case Strategy::kRandomNeurons: {
      std::vector<Eigen::Index> pool;
      for (Eigen::Index i = 0; i < features; ++i)
        if (std::find(coupled_.begin(), coupled_.end(), i) == coupled_.end()) pool.push_back(i);
      const std::size_t count = std::min(plan.sensitive().size(), pool.size());
      Rng rng(Rng::derive(seed, kRandomFeatureStream));
      for (std::size_t pick : rng.sample_without_replacement(pool.size(), count)) features_.indices.push_back(pool[pick]);
      break;
    }
    default:
      features_ = plan.sensitive();
  }
}

Vector Intervention::shift(const Vector& h) const {
  const SaeModel& model = plan_->model();
  require(h.size() == model.input_dim(), ErrorCode::kDimensionMismatch, "activation length differs from the SAE");
  const SparseCode z = encode(model, h);
  const Vector raw = raw_direction(model, z, features_);
  const Matrix& q = plan_->basis().q;
  switch (strategy_) {
    case Strategy::kOrtho:
    case Strategy::kRandomNeurons:
      return -lambda_ * orthogonalize(raw, plan_->basis());
    case Strategy::kOnlySensitive:
    case Strategy::kOnlyCoupled:
      return -lambda_ * raw;
    case Strategy::kCoupledAligned: {
      const Vector coefficients = q.transpose() * raw;
      return -lambda_ * (q * coefficients);
    }
    case Strategy::kAmplify:
      return lambda_ * raw;
  }
  return Vector::Zero(h.size());
}

Vector Intervention::apply(const Vector& h) const { return h + shift(h); }

Corpus Intervention::apply(const Corpus& corpus) const {
  Corpus out = corpus;
  for (auto& a : out.activations) a.values += shift(a.values);
  out.provenance = ErasureProvenance{"", lambda_, std::string(to_string(strategy_))};
  return out;
}

Json to_json(const AblationResult& r) {
  return Json{{"strategy", to_string(r.strategy)},
              {"lambda", r.lambda},
              {"seed", r.seed},
              {"features", r.features},
              {"metrics", to_json(r.metrics)}};
}

AblationResult ablation_from_json(const Json& node) {
  AblationResult r;
  r.strategy = strategy_from_string(codec::field(node, "strategy").get<std::string>());
  r.lambda = codec::field(node, "lambda").get<double>();
  r.seed = codec::field(node, "seed").get<std::uint64_t>();
  r.features = codec::field(node, "features").get<std::vector<Eigen::Index>>();
  r.metrics = metrics_from_json(codec::field(node, "metrics"));
  return r;
}

AblationResult run_ablation(Strategy strategy, const Corpus& corpus, const ProjectionPlan& plan,
                            const CoupledSet& coupled, double lambda, std::uint64_t seed) {
  const Intervention intervention(plan, coupled, strategy, lambda, seed);
  AblationResult r;
  r.strategy = strategy;
  r.lambda = lambda;
  r.seed = seed;
  r.features = intervention.features().indices;
  r.metrics = evaluate(corpus, intervention.apply(corpus), plan);
  return r;
}

std::vector<SweepPoint> lambda_sweep(const Corpus& corpus, const ProjectionPlan& plan,
                                     const std::vector<double>& lambdas) {
  require(!lambdas.empty(), ErrorCode::kEmptyInput, "lambda list is empty");
  std::vector<SweepPoint> out;
  const CoupledSet none;
  for (double lambda : lambdas) {
    const Intervention intervention(plan, none, Strategy::kOrtho, lambda, 0);
    out.push_back({lambda, evaluate(corpus, intervention.apply(corpus), plan)});
  }
  return out;
}

PipelineRun run_pipeline(const Corpus& corpus, const PipelineConfig& config) {
  TrainResult trained = train(corpus, config.train);
  PipelineRun run;
  run.loss_history = std::move(trained.loss_history);
  run.model = std::make_shared<const SaeModel>(std::move(trained.model));
  run.reconstruction_error = reconstruction_error(*run.model, corpus);

  const auto features = static_cast<std::size_t>(run.model->feature_count());
  std::size_t sensitive_count = config.sensitive_count;
  if (sensitive_count == 0)
    sensitive_count = corpus.ground_truth ? corpus.ground_truth->sensitive_columns().size() : std::min<std::size_t>(50, features);
  run.detection = detect(*run.model, corpus, sensitive_count, config.coupled_count);
  run.plan.emplace(ProjectionPlan::from_detection(run.model, run.detection, config.lambda));
  return run;
}

LayeredCorpus generate_layered(const LayeredConfig& config) {
  require(config.layers >= 2, ErrorCode::kInvalidArgument, "layer ablation needs a multi-layer corpus");
  require(config.peak_layer >= 1 && config.peak_layer <= config.layers, ErrorCode::kOutOfRange,
          "peak layer outside [1, layers]");
  require(config.width > 0.0, ErrorCode::kInvalidArgument, "strength profile width must be positive");
  LayeredCorpus out;
  out.peak_layer = config.peak_layer;
  for (std::size_t l = 1; l <= config.layers; ++l) {
    const double offset = static_cast<double>(l) - static_cast<double>(config.peak_layer);
    const double strength = std::exp(-offset * offset / (2.0 * config.width * config.width));
    CorpusConfig layer = config.corpus;
    layer.sensitive_scale = strength;
    layer.traces.reset();
    out.layers.push_back(generate(layer));
    out.strength.push_back(strength);
  }
  TraceConfig traces = config.traces;
  traces.layers = config.layers;
  traces.peak_layer = config.peak_layer;
  traces.seed = Rng::derive(config.corpus.seed, kLayerTraceStream);
  out.traces = generate_traces(traces);
  return out;
}

LayerTable layer_ablation(const LayeredCorpus& layered, const std::vector<std::size_t>& layers,
                          const PipelineConfig& config, Strategy strategy) {
  require(layered.layers.size() >= 2, ErrorCode::kInvalidArgument, "layer ablation needs a multi-layer corpus");
  LayerTable table;
  table.scores = select_layer(layered.traces);
  const Corpus& downstream = layered.downstream();
  require(downstream.ground_truth.has_value(), ErrorCode::kInvalidArgument, "layered corpus lacks ground truth");

  for (std::size_t layer : layers) {
    require(layer <= layered.layers.size(), ErrorCode::kOutOfRange, "layer outside the layered corpus");
    LayerRow row;
    row.layer = layer;
    if (layer == 0) {
      table.rows.push_back(row);
      continue;
    }
    row.sensitive_score = table.scores.sensitive_score.at(layer - 1);
    row.strength = layered.strength[layer - 1];
    row.selected = layer == table.selected_layer();

    const Corpus& source = layered.layers[layer - 1];
    const PipelineRun run = run_pipeline(source, config);
    const Intervention intervention(*run.plan, run.detection.coupled, strategy, config.lambda, config.train.seed);
    Corpus after = downstream;
    for (std::size_t i = 0; i < after.activations.size(); ++i) {
      require(source.activations[i].prompt_id == after.activations[i].prompt_id, ErrorCode::kInvalidArgument,
              "layer corpora are not aligned by prompt_id");
      after.activations[i].values += intervention.shift(source.activations[i].values);
    }
    const ErasureMetrics m = evaluate(downstream, after, *downstream.ground_truth, Matrix());
    row.residual_ratio = m.sensitive_ratio();
    table.rows.push_back(row);
  }
  return table;
}

Json to_json(const LayerTable& table) {
  Json rows = Json::array();
  for (const auto& r : table.rows)
    rows.push_back(Json{{"layer", r.layer},
                        {"sensitive_score", r.sensitive_score},
                        {"strength", r.strength},
                        {"residual_ratio", r.residual_ratio},
                        {"selected", r.selected}});
  return Json{{"scores", to_json(table.scores)}, {"rows", rows}};
}

}  // namespace orthoeraser
