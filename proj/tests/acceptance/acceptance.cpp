#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "alloc_audit.hpp"
#include "orthoeraser/harness.hpp"
#include "orthoeraser/projector.hpp"
#include "orthoeraser/rng.hpp"
#include "orthoeraser/sae.hpp"

using namespace orthoeraser;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

Vector gaussian(Eigen::Index n, Rng& rng) { return gaussian(n, 1, rng).col(0); }

/// Default corpus and pipeline for one seed, trained once per process.
struct SeedRun {
  Corpus corpus;
  PipelineRun run;
  double train_seconds = 0.0;
};

const SeedRun& seed_run(std::uint64_t seed) {
  static std::map<std::uint64_t, SeedRun> cache;
  auto it = cache.find(seed);
  if (it != cache.end()) return it->second;
  const auto t0 = Clock::now();
  CorpusConfig cc;
  cc.seed = seed;
  SeedRun r;
  r.corpus = generate(cc);
  PipelineConfig pc;
  pc.train.seed = seed;
  r.run = run_pipeline(r.corpus, pc);
  r.train_seconds = seconds_since(t0);
  return cache.emplace(seed, std::move(r)).first->second;
}

Outcome orthogonality() {
  const auto t0 = Clock::now();
  Rng rng(Rng::derive(0, 1));
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Eigen::Index c = 1 + static_cast<Eigen::Index>(rng.index(12));
    const Matrix w = gaussian(64, c, rng).colwise().normalized();
    const Vector raw = gaussian(64, rng);
    const Vector d = orthogonalize(raw, build_basis(w));
    worst = std::max(worst, (w.transpose() * d).norm() / (1.0 + raw.norm()));
  }
  const double elapsed = seconds_since(t0);
  return {worst < 1e-8 && elapsed < 5.0,
          format("max ||W_C^T d*||/(1+||d_raw||) = %.3g (< 1e-8), %.2f s (< 5 s)", worst, elapsed)};
}

Outcome protected_invariance() {
  const SeedRun& s = seed_run(0);
  const auto t0 = Clock::now();
  const ProjectionPlan plan = s.run.plan->with_lambda(3.0);
  const Matrix wc = gather_columns(plan.model(), s.run.detection.coupled.indices);
  const Matrix h = s.corpus.stacked();
  const Matrix erased = plan.apply_batch(h);
  double drift = 0.0;
  for (Eigen::Index j = 0; j < h.cols(); ++j) drift = std::max(drift, (wc.transpose() * (erased.col(j) - h.col(j))).norm());
  const double max_norm = h.colwise().norm().maxCoeff();
  const double elapsed = seconds_since(t0);
  return {drift < 1e-8 * max_norm && elapsed < 10.0,
          format("max ||W_C^T(h~ - h)|| = %.3g, bound 1e-8 * %.3f; check %.2f s (< 10 s), shared SAE training %.1f s",
                 drift, max_norm, elapsed, s.train_seconds)};
}

Outcome triple_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(Rng::derive(0, 3));
  double gap = 0.0, kkt = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Eigen::Index c = 1 + static_cast<Eigen::Index>(rng.index(12));
    const Matrix w = gaussian(64, c, rng);
    const Vector raw = gaussian(64, rng);
    const Vector d = orthogonalize(raw, build_basis(w));
    const Vector gram = raw - gram_projection(w) * raw;
    const LagrangeSolution oracle = constrained_lsq_oracle(raw, w);
    gap = std::max({gap, (d - gram).cwiseAbs().maxCoeff(), (d - oracle.direction).cwiseAbs().maxCoeff(),
                    (gram - oracle.direction).cwiseAbs().maxCoeff()});
    kkt = std::max({kkt, oracle.stationarity_residual, oracle.feasibility_residual});
  }
  const double elapsed = seconds_since(t0);
  return {gap < 1e-8 && kkt < 1e-8 && elapsed < 10.0,
          format("max elementwise gap %.3g, max KKT residual %.3g (both < 1e-8), %.2f s (< 10 s)", gap, kkt, elapsed)};
}

Outcome optimality() {
  const auto t0 = Clock::now();
  Rng rng(Rng::derive(0, 4));
  double margin = INFINITY;
  for (int t = 0; t < 200; ++t) {
    const Eigen::Index c = 1 + static_cast<Eigen::Index>(rng.index(12));
    const ProtectedBasis basis = build_basis(gaussian(64, c, rng));
    const Vector raw = gaussian(64, rng);
    const Vector d = orthogonalize(raw, basis);
    const double best = (d - raw).norm();
    for (int s = 0; s < 50; ++s) {
      const Vector e = orthogonalize(gaussian(64, rng), basis).normalized();
      margin = std::min(margin, (d + 1e-2 * e - raw).norm() - best);
    }
  }
  const double elapsed = seconds_since(t0);
  return {margin >= -1e-12 && elapsed < 10.0,
          format("min margin %.3g (>= -1e-12), %.2f s (< 10 s)", margin, elapsed)};
}

Outcome erasure_precision() {
  const SeedRun& s = seed_run(0);
  const auto t0 = Clock::now();
  const AblationResult r =
      run_ablation(Strategy::kOrtho, s.corpus, *s.run.plan, s.run.detection.coupled, 3.0, 0);
  const double elapsed = s.train_seconds + seconds_since(t0);
  const double ratio = r.metrics.sensitive_ratio();
  const double benign = r.metrics.benign_change();
  return {ratio <= 0.05 && benign <= 0.01 && elapsed <= 300.0,
          format("residual sensitive energy %.4f (<= 0.05), benign change %.4f (<= 0.01), K_s %zu k_c %zu, "
                 "SAE relative error %.4f, %.1f s (<= 300 s)",
                 ratio, benign, s.run.detection.sensitive.size(), s.run.detection.coupled.size(),
                 s.run.reconstruction_error, elapsed)};
}

Outcome ablation_orderings() {
  const auto t0 = Clock::now();
  int drift_ok = 0, coupled_ok = 0, random_ok = 0, amplify_ok = 0;
  std::string failures;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SeedRun& s = seed_run(seed);
    auto run = [&](Strategy st) {
      return run_ablation(st, s.corpus, *s.run.plan, s.run.detection.coupled, 3.0, seed).metrics;
    };
    const ErasureMetrics ortho = run(Strategy::kOrtho), only_sensitive = run(Strategy::kOnlySensitive),
                         only_coupled = run(Strategy::kOnlyCoupled), random = run(Strategy::kRandomNeurons),
                         amplify = run(Strategy::kAmplify);
    const bool a = ortho.protected_drift < only_sensitive.protected_drift;
    const bool b = only_coupled.sensitive_ratio() >= 0.9;
    const bool c = random.sensitive_ratio() > 0.8;
    const bool d = amplify.sensitive_ratio() > 1.0;
    drift_ok += a;
    coupled_ok += b;
    random_ok += c;
    amplify_ok += d;
    if (!(a && b && c && d))
      failures += format(" [seed %llu: drift %.2g/%.2g, only_coupled %.3f, random %.3f, amplify %.3f]",
                         static_cast<unsigned long long>(seed), ortho.protected_drift,
                         only_sensitive.protected_drift, only_coupled.sensitive_ratio(), random.sensitive_ratio(),
                         amplify.sensitive_ratio());
  }
  const double elapsed = seconds_since(t0);
  const bool all = drift_ok == 10 && coupled_ok == 10 && random_ok == 10 && amplify_ok == 10;
  return {all && elapsed <= 600.0,
          format("seeds holding: drift %d/10, only_coupled >= 0.9 %d/10, random > 0.8 %d/10, amplify > 1 %d/10; "
                 "%.1f s (<= 600 s)",
                 drift_ok, coupled_ok, random_ok, amplify_ok, elapsed) +
              failures};
}

Outcome lambda_monotonicity() {
  const SeedRun& s = seed_run(0);
  const auto t0 = Clock::now();
  const std::vector<SweepPoint> sweep = lambda_sweep(s.corpus, *s.run.plan, {0.0, 0.5, 1.0, 2.0, 3.0});
  bool monotone = true, bounded = true;
  std::string curve;
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    const ErasureMetrics& m = sweep[i].metrics;
    if (i > 0 && m.sensitive_energy_after > sweep[i - 1].metrics.sensitive_energy_after) monotone = false;
    if (!(m.protected_drift < 1e-8 * m.max_activation_norm)) bounded = false;
    curve += format(" %.1f:%.4f", sweep[i].lambda, m.sensitive_ratio());
  }
  const double elapsed = seconds_since(t0);
  return {monotone && bounded && elapsed < 60.0,
          format("non-increasing %s, drift bound %s, residual by lambda", monotone ? "yes" : "no",
                 bounded ? "yes" : "no") +
              curve + format("; sweep %.2f s (< 60 s), shared SAE training %.1f s", elapsed, s.train_seconds)};
}

Outcome layer_localization() {
  const auto t0 = Clock::now();
  LayeredConfig lc;
  lc.layers = 12;
  lc.peak_layer = 10;
  lc.traces.layers = 12;
  lc.traces.peak_layer = 10;
  const LayeredCorpus layered = generate_layered(lc);
  PipelineConfig pc;
  pc.train.epochs = 1000;
  const LayerTable table = layer_ablation(layered, {0, 3, 9, 10}, pc);
  const double elapsed = seconds_since(t0);
  std::map<std::size_t, double> residual;
  for (const LayerRow& r : table.rows) residual[r.layer] = r.residual_ratio;
  const bool ok = table.selected_layer() == 10 && residual.at(10) < residual.at(3) && residual.at(10) < residual.at(9);
  return {ok && elapsed < 60.0,
          format("selected layer %zu (want 10); residual at 3 %.4f, 9 %.4f, 10 %.4f, none %.4f; %.1f s (< 60 s)",
                 table.selected_layer(), residual.at(3), residual.at(9), residual.at(10), residual.at(0), elapsed)};
}

Outcome sae_contracts() {
  CorpusConfig cc;
  const Corpus corpus = generate(cc);
  TrainConfig tc;
  tc.epochs = 50;
  const TrainResult a = train(corpus, tc);
  const TrainResult b = train(corpus, tc);
  std::size_t most = 0;
  for (const auto& act : corpus.activations) most = std::max(most, encode(a.model, act.values).nonzeros());
  const bool bitwise = same_model(a.model, b.model);

  Rng rng(Rng::derive(0, 9));
  Vector u = gaussian(4, rng).normalized();
  Matrix data(4, 256);
  for (Eigen::Index j = 0; j < data.cols(); ++j) data.col(j) = rng.uniform(0.5, 1.5) * u;
  TrainConfig single;
  single.expansion_factor = 1;
  single.k = 1;
  single.batch_size = 32;
  single.epochs = 1500;
  const double error = reconstruction_error(train(data, single).model, data);

  return {most <= tc.k && a.max_decoder_norm_error < 1e-6 && bitwise && error < 1e-2,
          format("max nonzeros %zu (k = %zu), decoder norm error %.3g (< 1e-6), bitwise reproducible %s, "
                 "single-feature relative error %.3g (< 1e-2)",
                 most, tc.k, a.max_decoder_norm_error, bitwise ? "yes" : "no", error)};
}

Outcome complexity() {
  constexpr Eigen::Index d = 4096;
  constexpr Eigen::Index features = 64;
  Rng rng(Rng::derive(0, 10));
  SaeModel model;
  model.decoder_weight = gaussian(d, features, rng).colwise().normalized();
  model.encoder_weight = model.decoder_weight.transpose();
  model.encoder_bias = Vector::Zero(features);
  model.decoder_bias = Vector::Zero(d);
  model.k = 8;
  auto shared = std::make_shared<const SaeModel>(std::move(model));
  const SensitiveSet sensitive{{0, 1}};
  const Vector h = gaussian(d, rng);
  Vector code = Vector::Zero(features);
  code(0) = 1.5;
  code(1) = 0.5;

  const std::vector<Eigen::Index> sizes_c{4, 8, 16, 32};
  std::vector<ProjectionPlan> plans;
  for (Eigen::Index c : sizes_c) {
    std::vector<Eigen::Index> coupled(static_cast<std::size_t>(c));
    for (Eigen::Index j = 0; j < c; ++j) coupled[static_cast<std::size_t>(j)] = 2 + j;
    plans.emplace_back(shared, sensitive, build_basis(gather_columns(*shared, coupled)), 3.0);
  }
  std::vector<ApplyWorkspace> workspaces(plans.size());
  for (std::size_t p = 0; p < plans.size(); ++p) plans[p].reserve(workspaces[p]);
  Vector sink(d);
  // Rounds interleave the sizes so that slow drift in machine speed hits all
  // of them alike; the per-size minimum is kept.
  constexpr int kCalls = 200;
  std::vector<double> best(plans.size(), INFINITY);
  for (int round = 0; round < 60; ++round) {
    for (std::size_t p = 0; p < plans.size(); ++p) {
      const auto t0 = Clock::now();
      for (int i = 0; i < kCalls; ++i) plans[p].intervene_into(h, code, workspaces[p], sink);
      best[p] = std::min(best[p], seconds_since(t0) / kCalls);
    }
  }
  std::vector<double> sizes, times;
  for (std::size_t p = 0; p < plans.size(); ++p) {
    sizes.push_back(std::log(static_cast<double>(sizes_c[p])));
    times.push_back(std::log(best[p]));
  }
  const double mx = (sizes[0] + sizes[1] + sizes[2] + sizes[3]) / 4, my = (times[0] + times[1] + times[2] + times[3]) / 4;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    sxy += (sizes[i] - mx) * (times[i] - my);
    sxx += (sizes[i] - mx) * (sizes[i] - mx);
  }
  const double slope = sxy / sxx;

  // Allocation audit on the full apply path, encode included.
  const ProjectionPlan plan(shared, sensitive, build_basis(gather_columns(*shared, {2, 3, 4, 5, 6, 7, 8, 9})), 3.0);
  ApplyWorkspace ws;
  plan.reserve(ws);
  Vector out(d);
  plan.apply_into(h, ws, out);
  audit::start();
  for (int i = 0; i < 100; ++i) plan.apply_into(h, ws, out);
  const audit::Stats reserved = audit::stop();
  audit::start();
  const Vector fresh = plan.apply(h);
  const audit::Stats unreserved = audit::stop();
  const std::size_t dense = static_cast<std::size_t>(d) * static_cast<std::size_t>(d) * sizeof(double);
  const bool audit_ok = reserved.count == 0 && unreserved.largest < dense && fresh == out;

  return {std::abs(slope - 1.0) <= 0.3 && audit_ok,
          format("log-log slope %.3f over |C| in {4,8,16,32} at d = %ld (1.0 +/- 0.3); per-call us %.2f %.2f %.2f "
                 "%.2f; allocations in reserved apply_into %zu (want 0), largest allocation in apply %zu bytes "
                 "(d*d*8 = %zu)",
                 slope, static_cast<long>(d), 1e6 * std::exp(times[0]), 1e6 * std::exp(times[1]),
                 1e6 * std::exp(times[2]), 1e6 * std::exp(times[3]), reserved.count, unreserved.largest, dense)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria; one pass/fail line each"};
  std::vector<int> selected;
  app.add_option("--criterion,-c", selected, "criterion numbers to run (default: all)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "orthogonality guarantee", orthogonality},
      {2, "protected invariance", protected_invariance},
      {3, "closed-form triple equivalence", triple_equivalence},
      {4, "optimality", optimality},
      {5, "erasure precision on planted truth", erasure_precision},
      {6, "ablation orderings", ablation_orderings},
      {7, "lambda-sweep monotonicity", lambda_monotonicity},
      {8, "layer localization", layer_localization},
      {9, "SAE contracts", sae_contracts},
      {10, "complexity contract", complexity},
  };

  bool all = true;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.passed;
    std::printf("[%s] criterion %d, %s: %s\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
