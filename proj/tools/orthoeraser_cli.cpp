#include <cstdint>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "orthoeraser/codec.hpp"
#include "orthoeraser/corpus.hpp"
#include "orthoeraser/detector.hpp"
#include "orthoeraser/error.hpp"
#include "orthoeraser/harness.hpp"
#include "orthoeraser/localizer.hpp"
#include "orthoeraser/projector.hpp"
#include "orthoeraser/report.hpp"
#include "orthoeraser/sae.hpp"

using namespace orthoeraser;

namespace {

std::vector<double> parse_lambdas(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == item.size() && !item.empty(), ErrorCode::kInvalidArgument, "bad lambda '" + item + "'");
    require(v >= 0.0, ErrorCode::kInvalidArgument, "lambda must be >= 0");
    out.push_back(v);
  }
  require(!out.empty(), ErrorCode::kEmptyInput, "lambda list is empty");
  return out;
}

std::size_t resolve_sensitive_count(std::size_t requested, const Corpus& corpus, Eigen::Index features) {
  if (requested > 0) return requested;
  if (corpus.ground_truth) return corpus.ground_truth->sensitive_columns().size();
  return std::min<std::size_t>(50, static_cast<std::size_t>(features));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept erasure by null-space projection on synthetic activations"};
  app.require_subcommand(1);

  // generate
  CorpusConfig gen;
  std::string gen_out;
  bool gen_traces = false;
  TraceConfig traces;
  auto* generate_cmd = app.add_subcommand("generate", "Generate a planted synthetic corpus");
  generate_cmd->add_option("--dim", gen.dim, "Activation dimension d")->capture_default_str();
  generate_cmd->add_option("--features", gen.features, "Planted dictionary size F")->capture_default_str();
  generate_cmd->add_option("--sensitive-features", gen.sensitive_features, "Planted sensitive directions")
      ->capture_default_str();
  generate_cmd->add_option("--overlap", gen.overlap, "Cosine between paired sensitive and benign directions")
      ->capture_default_str();
  generate_cmd->add_option("--n-sens", gen.n_sensitive, "Sensitive-class activations")->capture_default_str();
  generate_cmd->add_option("--n-non", gen.n_non_sensitive, "Non-sensitive-class activations")->capture_default_str();
  generate_cmd->add_option("--noise", gen.noise, "Isotropic noise sigma")->capture_default_str();
  generate_cmd->add_option("--active-benign", gen.active_benign, "Benign features active per activation")
      ->capture_default_str();
  generate_cmd->add_option("--seed", gen.seed, "Seed")->capture_default_str();
  generate_cmd->add_flag("--traces", gen_traces, "Also generate paired attention traces");
  generate_cmd->add_option("--layers", traces.layers, "Trace layers")->capture_default_str();
  generate_cmd->add_option("--peak-layer", traces.peak_layer, "Planted peak layer (1-based)")->capture_default_str();
  generate_cmd->add_option("--pairs", traces.pairs, "Trace pairs")->capture_default_str();
  generate_cmd->add_option("--out", gen_out, "Output corpus file")->required();

  // localize
  std::string loc_corpus, loc_out;
  auto* localize_cmd = app.add_subcommand("localize", "Score layers from attention traces and pick l*");
  localize_cmd->add_option("--corpus", loc_corpus)->required();
  localize_cmd->add_option("--out", loc_out)->required();

  // train-sae
  TrainConfig tc;
  std::string train_corpus, train_out;
  auto* train_cmd = app.add_subcommand("train-sae", "Train a Top-K sparse autoencoder");
  train_cmd->add_option("--corpus", train_corpus)->required();
  train_cmd->add_option("--expansion", tc.expansion_factor)->capture_default_str();
  train_cmd->add_option("--k", tc.k)->capture_default_str();
  train_cmd->add_option("--lr", tc.learning_rate)->capture_default_str();
  train_cmd->add_option("--batch", tc.batch_size)->capture_default_str();
  train_cmd->add_option("--epochs", tc.epochs)->capture_default_str();
  train_cmd->add_option("--seed", tc.seed)->capture_default_str();
  train_cmd->add_option("--out", train_out)->required();

  // detect
  std::string det_corpus, det_sae, det_out;
  std::size_t k_sens = 0, k_coupled = 10;
  auto* detect_cmd = app.add_subcommand("detect", "Select sensitive and coupled features");
  detect_cmd->add_option("--corpus", det_corpus)->required();
  detect_cmd->add_option("--sae", det_sae)->required();
  detect_cmd->add_option("--k-sens", k_sens, "0 uses the planted sensitive count (or 50)")->capture_default_str();
  detect_cmd->add_option("--k-coupled", k_coupled)->capture_default_str();
  detect_cmd->add_option("--out", det_out)->required();

  // erase
  std::string er_corpus, er_sae, er_plan, er_out, er_strategy = "ortho";
  double er_lambda = 3.0;
  std::uint64_t er_seed = 0;
  auto* erase_cmd = app.add_subcommand("erase", "Apply the intervention to every activation");
  erase_cmd->add_option("--corpus", er_corpus)->required();
  erase_cmd->add_option("--sae", er_sae)->required();
  erase_cmd->add_option("--plan", er_plan)->required();
  erase_cmd->add_option("--lambda", er_lambda)->capture_default_str();
  erase_cmd->add_option("--strategy", er_strategy, "ortho, only_sensitive, only_coupled, coupled_aligned, "
                                                   "random_neurons or amplify")
      ->capture_default_str();
  erase_cmd->add_option("--seed", er_seed, "Seed for random_neurons")->capture_default_str();
  erase_cmd->add_option("--out", er_out)->required();

  // ablate
  std::string ab_suite = "full", ab_corpus, ab_sae, ab_plan, ab_lambdas = "0,1,2,3,4", ab_out;
  double ab_lambda = 3.0;
  std::uint64_t ab_seed = 0;
  std::size_t ab_epochs = TrainConfig{}.epochs;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run the ablation suite and check its invariants");
  ablate_cmd->add_option("--suite", ab_suite, "full, strategies, sweep or layers")->capture_default_str();
  ablate_cmd->add_option("--corpus", ab_corpus);
  ablate_cmd->add_option("--sae", ab_sae);
  ablate_cmd->add_option("--plan", ab_plan);
  ablate_cmd->add_option("--lambdas", ab_lambdas)->capture_default_str();
  ablate_cmd->add_option("--lambda", ab_lambda, "Strength for the strategy comparison")->capture_default_str();
  ablate_cmd->add_option("--seed", ab_seed)->capture_default_str();
  ablate_cmd->add_option("--layer-epochs", ab_epochs, "SAE epochs per layer in the layer suite")
      ->capture_default_str();
  ablate_cmd->add_option("--out", ab_out)->required();

  // report
  std::string rep_in, rep_out, rep_format = "csv,svg,json";
  auto* report_cmd = app.add_subcommand("report", "Render report files from a saved ablation run");
  report_cmd->add_option("--in", rep_in)->required();
  report_cmd->add_option("--format", rep_format)->capture_default_str();
  report_cmd->add_option("--out", rep_out, "Defaults to --in");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate_cmd->parsed()) {
      if (gen_traces) gen.traces = traces;
      const Corpus corpus = generate(gen);
      save(corpus, gen_out);
      std::cout << "wrote " << corpus.activations.size() << " activations (d=" << corpus.dim << ") to " << gen_out
                << "\n";
    } else if (localize_cmd->parsed()) {
      const Corpus corpus = load_corpus(loc_corpus);
      require(!corpus.attention.empty(), ErrorCode::kEmptyInput, "corpus carries no attention traces");
      const LayerScoreReport report = select_layer(corpus.attention);
      save(report, loc_out);
      std::cout << "selected layer " << report.selected_layer() << "\n";
    } else if (train_cmd->parsed()) {
      const Corpus corpus = load_corpus(train_corpus);
      const TrainResult result = train(corpus, tc);
      save(result.model, train_out);
      std::cout << "steps " << result.steps << ", final loss "
                << (result.loss_history.empty() ? 0.0 : result.loss_history.back()) << ", reconstruction error "
                << reconstruction_error(result.model, corpus) << "\n";
    } else if (detect_cmd->parsed()) {
      const Corpus corpus = load_corpus(det_corpus);
      const SaeModel model = load_sae(det_sae);
      const DetectionPlan plan =
          detect(model, corpus, resolve_sensitive_count(k_sens, corpus, model.feature_count()), k_coupled);
      save(plan, det_out);
      std::cout << "sensitive " << plan.sensitive.size() << ", coupled " << plan.coupled.size()
                << (plan.coupled.degenerate ? " (degenerate: all coupling strengths are zero)" : "") << "\n";
    } else if (erase_cmd->parsed()) {
      const Corpus corpus = load_corpus(er_corpus);
      auto model = std::make_shared<const SaeModel>(load_sae(er_sae));
      const DetectionPlan detection = load_plan(er_plan);
      const ProjectionPlan plan = ProjectionPlan::from_detection(model, detection, er_lambda);
      const Intervention intervention(plan, detection.coupled, strategy_from_string(er_strategy), er_lambda,
                                      er_seed);
      Corpus erased = intervention.apply(corpus);
      erased.provenance->plan_sha256 = codec::sha256_hex(codec::read_file(er_plan));
      save(erased, er_out);
      std::cout << "erased " << erased.activations.size() << " activations (lambda " << er_lambda << ", "
                << er_strategy << ")\n";
    } else if (ablate_cmd->parsed()) {
      SuiteReport report;
      report.seed = ab_seed;
      const bool strategies = ab_suite == "full" || ab_suite == "strategies";
      const bool sweep = ab_suite == "full" || ab_suite == "sweep";
      const bool layers = ab_suite == "full" || ab_suite == "layers";
      require(strategies || sweep || layers, ErrorCode::kInvalidArgument, "unknown suite '" + ab_suite + "'");
      if (strategies || sweep) {
        require(!ab_corpus.empty() && !ab_sae.empty() && !ab_plan.empty(), ErrorCode::kInvalidArgument,
                "the " + ab_suite + " suite needs --corpus, --sae and --plan");
        const Corpus corpus = load_corpus(ab_corpus);
        auto model = std::make_shared<const SaeModel>(load_sae(ab_sae));
        const DetectionPlan detection = load_plan(ab_plan);
        const ProjectionPlan plan = ProjectionPlan::from_detection(model, detection, ab_lambda);
        report.delta_wfs.assign(detection.stats.delta_wfs.data(),
                                detection.stats.delta_wfs.data() + detection.stats.delta_wfs.size());
        report.coupling.assign(detection.coupling.data(), detection.coupling.data() + detection.coupling.size());
        report.sensitive = detection.sensitive.indices;
        report.coupled = detection.coupled.indices;
        if (strategies)
          for (Strategy s : kAllStrategies)
            report.strategies.push_back(run_ablation(s, corpus, plan, detection.coupled, ab_lambda, ab_seed));
        if (sweep) report.sweep = lambda_sweep(corpus, plan, parse_lambdas(ab_lambdas));
      }
      if (layers) {
        LayeredConfig layered_config;
        layered_config.corpus.seed = ab_seed;
        PipelineConfig pipeline;
        pipeline.train.epochs = ab_epochs;
        pipeline.train.seed = ab_seed;
        pipeline.lambda = ab_lambda;
        const LayeredCorpus layered = generate_layered(layered_config);
        std::vector<std::size_t> rows{0};
        for (std::size_t l = 1; l <= layered.layers.size(); ++l) rows.push_back(l);
        const LayerTable table = layer_ablation(layered, rows, pipeline);
        report.layers = table.rows;
        report.selected_layer = table.selected_layer();
      }
      report.invariants = check_invariants(report);
      write_report(report, ab_out);
      for (const auto& c : report.invariants)
        std::cout << (c.passed ? "ok   " : "FAIL ") << c.name << "  " << c.detail << "\n";
      return report.passed() ? 0 : 1;
    } else if (report_cmd->parsed()) {
      const SuiteReport report = read_report(rep_in);
      for (const auto& path : write_report(report, rep_out.empty() ? rep_in : rep_out, parse_formats(rep_format)))
        std::cout << path.string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
