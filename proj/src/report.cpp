#include "orthoeraser/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "orthoeraser/codec.hpp"
#include "orthoeraser/error.hpp"

namespace orthoeraser {

using codec::Json;

namespace {

// Shortest text that reads back to the same double.
std::string exact(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.17g", v);
  return buffer;
}

std::string coord(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.2f", v);
  return buffer;
}

std::string label(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.3g", v);
  return buffer;
}

const AblationResult* find(const SuiteReport& report, Strategy s) {
  for (const auto& r : report.strategies)
    if (r.strategy == s) return &r;
  return nullptr;
}

/// Minimal SVG canvas: a plot area with a frame, axis labels, and data.
class Plot {
 public:
  static constexpr double kWidth = 480, kHeight = 320, kLeft = 60, kRight = 20, kTop = 30, kBottom = 50;

  Plot(std::string title, std::string x_label, std::string y_label, double x_lo, double x_hi, double y_lo, double y_hi)
      : x_lo_(x_lo), x_hi_(x_hi > x_lo ? x_hi : x_lo + 1.0), y_lo_(y_lo), y_hi_(y_hi > y_lo ? y_hi : y_lo + 1.0) {
    body_ << "<text x=\"" << coord(kWidth / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << title
          << "</text>\n";
    body_ << "<rect x=\"" << coord(kLeft) << "\" y=\"" << coord(kTop) << "\" width=\"" << coord(plot_width())
          << "\" height=\"" << coord(plot_height()) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    body_ << "<text x=\"" << coord(kLeft + plot_width() / 2) << "\" y=\"" << coord(kHeight - 10)
          << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    body_ << "<text x=\"14\" y=\"" << coord(kTop + plot_height() / 2) << "\" text-anchor=\"middle\" font-size=\"12\""
          << " transform=\"rotate(-90 14 " << coord(kTop + plot_height() / 2) << ")\">" << y_label << "</text>\n";
    for (double v : {y_lo_, (y_lo_ + y_hi_) / 2, y_hi_})
      body_ << "<text x=\"" << coord(kLeft - 4) << "\" y=\"" << coord(y(v) + 4)
            << "\" text-anchor=\"end\" font-size=\"10\">" << label(v) << "</text>\n";
    for (double v : {x_lo_, (x_lo_ + x_hi_) / 2, x_hi_})
      body_ << "<text x=\"" << coord(x(v)) << "\" y=\"" << coord(kTop + plot_height() + 14)
            << "\" text-anchor=\"middle\" font-size=\"10\">" << label(v) << "</text>\n";
  }

  double x(double v) const { return kLeft + (v - x_lo_) / (x_hi_ - x_lo_) * plot_width(); }
  double y(double v) const { return kTop + (1.0 - (v - y_lo_) / (y_hi_ - y_lo_)) * plot_height(); }
  static double plot_width() { return kWidth - kLeft - kRight; }
  static double plot_height() { return kHeight - kTop - kBottom; }

  void polyline(const std::vector<std::pair<double, double>>& points, const char* color) {
    if (points.empty()) return;
    body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < points.size(); ++i)
      body_ << (i ? " " : "") << coord(x(points[i].first)) << "," << coord(y(points[i].second));
    body_ << "\"/>\n";
    for (const auto& [px, py] : points)
      body_ << "<circle cx=\"" << coord(x(px)) << "\" cy=\"" << coord(y(py)) << "\" r=\"3\" fill=\"" << color
            << "\"/>\n";
  }

  void bar(double x_left, double x_right, double value, const char* color) {
    const double top = y(std::max(value, y_lo_));
    const double base = y(std::max(y_lo_, std::min(0.0, y_hi_)));
    body_ << "<rect x=\"" << coord(x(x_left)) << "\" y=\"" << coord(std::min(top, base)) << "\" width=\""
          << coord(std::max(0.0, x(x_right) - x(x_left))) << "\" height=\"" << coord(std::abs(base - top))
          << "\" fill=\"" << color << "\"/>\n";
  }

  void legend(double row, const char* color, const std::string& text) {
    const double ly = kTop + 14 + 14 * row;
    body_ << "<rect x=\"" << coord(kWidth - kRight - 130) << "\" y=\"" << coord(ly - 8) << "\" width=\"10\" height=\"10\""
          << " fill=\"" << color << "\"/>\n<text x=\"" << coord(kWidth - kRight - 115) << "\" y=\"" << coord(ly)
          << "\" font-size=\"10\">" << text << "</text>\n";
  }

  std::string render(const std::string& data_comment) const {
    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << coord(kWidth) << "\" height=\"" << coord(kHeight)
        << "\" viewBox=\"0 0 " << coord(kWidth) << " " << coord(kHeight) << "\" font-family=\"sans-serif\">\n"
        << "<!-- data\n" << data_comment << "-->\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

 private:
  double x_lo_, x_hi_, y_lo_, y_hi_;
  std::ostringstream body_;
};

std::string sweep_svg(const SuiteReport& report) {
  std::vector<std::pair<double, double>> residual, benign;
  std::ostringstream data;
  data << "lambda,sensitive_ratio,benign_change\n";
  double x_hi = 0.0, y_hi = 1.0;
  for (const auto& p : report.sweep) {
    residual.emplace_back(p.lambda, p.metrics.sensitive_ratio());
    benign.emplace_back(p.lambda, p.metrics.benign_change());
    data << exact(p.lambda) << "," << exact(p.metrics.sensitive_ratio()) << "," << exact(p.metrics.benign_change())
         << "\n";
    x_hi = std::max(x_hi, p.lambda);
    y_hi = std::max({y_hi, p.metrics.sensitive_ratio(), p.metrics.benign_change()});
  }
  Plot plot("Residual sensitive energy vs lambda", "lambda", "ratio to baseline", 0.0, x_hi, 0.0, y_hi);
  plot.polyline(residual, "#c0392b");
  plot.polyline(benign, "#2c7fb8");
  plot.legend(0, "#c0392b", "sensitive residual");
  plot.legend(1, "#2c7fb8", "benign change");
  return plot.render(data.str());
}

std::string delta_wfs_svg(const SuiteReport& report) {
  std::vector<std::size_t> order(report.delta_wfs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return report.delta_wfs[a] > report.delta_wfs[b]; });
  order.resize(std::min<std::size_t>(order.size(), 50));
  std::ostringstream data;
  data << "rank,feature,delta_wfs\n";
  double lo = 0.0, hi = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const double v = report.delta_wfs[order[r]];
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    data << r << "," << order[r] << "," << exact(v) << "\n";
  }
  Plot plot("Top features by delta WFS", "rank", "delta WFS", 0.0, std::max<double>(1.0, order.size()), lo, hi);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto feature = static_cast<Eigen::Index>(order[r]);
    const bool sensitive =
        std::find(report.sensitive.begin(), report.sensitive.end(), feature) != report.sensitive.end();
    plot.bar(r + 0.1, r + 0.9, report.delta_wfs[order[r]], sensitive ? "#c0392b" : "#999999");
  }
  plot.legend(0, "#c0392b", "sensitive set");
  return plot.render(data.str());
}

std::string coupling_svg(const SuiteReport& report) {
  std::vector<double> values;
  for (std::size_t i = 0; i < report.coupling.size(); ++i) {
    const auto feature = static_cast<Eigen::Index>(i);
    if (std::find(report.sensitive.begin(), report.sensitive.end(), feature) == report.sensitive.end())
      values.push_back(report.coupling[i]);
  }
  constexpr std::size_t kBins = 20;
  const double hi = values.empty() ? 1.0 : std::max(*std::max_element(values.begin(), values.end()), 1e-12);
  std::vector<std::size_t> counts(kBins, 0);
  for (double v : values) counts[std::min(kBins - 1, static_cast<std::size_t>(v / hi * kBins))] += 1;
  std::ostringstream data;
  data << "bin_lo,bin_hi,count\n";
  std::size_t peak = 1;
  for (std::size_t b = 0; b < kBins; ++b) {
    data << exact(hi * b / kBins) << "," << exact(hi * (b + 1) / kBins) << "," << counts[b] << "\n";
    peak = std::max(peak, counts[b]);
  }
  Plot plot("Coupling strength of benign features", "delta", "features", 0.0, hi, 0.0, static_cast<double>(peak));
  if (!values.empty())
    for (std::size_t b = 0; b < kBins; ++b)
      plot.bar(hi * b / kBins, hi * (b + 1) / kBins, static_cast<double>(counts[b]), "#2c7fb8");
  return plot.render(data.str());
}

const char* kMetricHeader =
    "sensitive_energy_before,sensitive_energy_after,sensitive_ratio,benign_energy_before,benign_energy_after,"
    "benign_change,protected_drift,reconstruction_drift,max_activation_norm";

std::string metric_cells(const ErasureMetrics& m) {
  return exact(m.sensitive_energy_before) + "," + exact(m.sensitive_energy_after) + "," + exact(m.sensitive_ratio()) +
         "," + exact(m.benign_energy_before) + "," + exact(m.benign_energy_after) + "," + exact(m.benign_change()) +
         "," + exact(m.protected_drift) + "," + exact(m.reconstruction_drift) + "," + exact(m.max_activation_norm);
}

std::string strategies_csv(const SuiteReport& report) {
  std::string out = std::string("strategy,lambda,seed,") + kMetricHeader + "\n";
  for (const auto& r : report.strategies)
    out += std::string(to_string(r.strategy)) + "," + exact(r.lambda) + "," + std::to_string(r.seed) + "," +
           metric_cells(r.metrics) + "\n";
  return out;
}

std::string sweep_csv(const SuiteReport& report) {
  std::string out = std::string("lambda,") + kMetricHeader + "\n";
  for (const auto& p : report.sweep) out += exact(p.lambda) + "," + metric_cells(p.metrics) + "\n";
  return out;
}

std::string features_csv(const SuiteReport& report) {
  std::string out = "feature,delta_wfs,coupling,role\n";
  const std::size_t n = std::max(report.delta_wfs.size(), report.coupling.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto feature = static_cast<Eigen::Index>(i);
    const char* role = "other";
    if (std::find(report.sensitive.begin(), report.sensitive.end(), feature) != report.sensitive.end())
      role = "sensitive";
    else if (std::find(report.coupled.begin(), report.coupled.end(), feature) != report.coupled.end())
      role = "coupled";
    out += std::to_string(i) + "," + (i < report.delta_wfs.size() ? exact(report.delta_wfs[i]) : "") + "," +
           (i < report.coupling.size() ? exact(report.coupling[i]) : "") + "," + role + "\n";
  }
  return out;
}

std::string layers_csv(const SuiteReport& report) {
  std::string out = "layer,sensitive_score,strength,residual_ratio,selected\n";
  for (const auto& r : report.layers)
    out += std::to_string(r.layer) + "," + exact(r.sensitive_score) + "," + exact(r.strength) + "," +
           exact(r.residual_ratio) + "," + (r.selected ? "1" : "0") + "\n";
  return out;
}

std::string invariants_csv(const SuiteReport& report) {
  std::string out = "invariant,passed,detail\n";
  for (const auto& c : report.invariants) out += c.name + "," + (c.passed ? "1" : "0") + ",\"" + c.detail + "\"\n";
  return out;
}

}  // namespace

bool SuiteReport::passed() const {
  return std::all_of(invariants.begin(), invariants.end(), [](const InvariantCheck& c) { return c.passed; });
}

std::vector<InvariantCheck> check_invariants(const SuiteReport& report, double drift_tolerance) {
  std::vector<InvariantCheck> checks;
  auto add = [&](std::string name, bool passed, std::string detail) {
    checks.push_back({std::move(name), passed, std::move(detail)});
  };
  const AblationResult* ortho = find(report, Strategy::kOrtho);
  const AblationResult* only_sensitive = find(report, Strategy::kOnlySensitive);
  const AblationResult* amplify = find(report, Strategy::kAmplify);

  if (ortho && only_sensitive) {
    add("ortho_protected_drift_below_only_sensitive",
        ortho->metrics.protected_drift < only_sensitive->metrics.protected_drift,
        exact(ortho->metrics.protected_drift) + " vs " + exact(only_sensitive->metrics.protected_drift));
    add("ortho_residual_not_above_only_sensitive",
        ortho->metrics.sensitive_energy_after <= only_sensitive->metrics.sensitive_energy_after,
        exact(ortho->metrics.sensitive_energy_after) + " vs " + exact(only_sensitive->metrics.sensitive_energy_after));
  }
  if (amplify)
    add("amplify_increases_sensitive_energy",
        amplify->metrics.sensitive_energy_after > amplify->metrics.sensitive_energy_before,
        exact(amplify->metrics.sensitive_energy_before) + " -> " + exact(amplify->metrics.sensitive_energy_after));

  auto drift_ok = [&](const ErasureMetrics& m) {
    return m.protected_drift <= drift_tolerance * m.max_activation_norm;
  };
  if (ortho) add("ortho_protected_drift_bound", drift_ok(ortho->metrics), exact(ortho->metrics.protected_drift));
  if (!report.sweep.empty()) {
    bool bounded = true, monotone = true, identity = true;
    std::vector<SweepPoint> sorted = report.sweep;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const SweepPoint& a, const SweepPoint& b) { return a.lambda < b.lambda; });
    std::string trace;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const auto& m = sorted[i].metrics;
      bounded = bounded && drift_ok(m);
      if (i > 0) monotone = monotone && m.sensitive_energy_after <= sorted[i - 1].metrics.sensitive_energy_after;
      if (sorted[i].lambda == 0.0)
        identity = identity && m.sensitive_energy_after == m.sensitive_energy_before && m.protected_drift == 0.0 &&
                   m.reconstruction_drift == 0.0;
      trace += (i ? " " : "") + label(sorted[i].lambda) + ":" + label(m.sensitive_ratio());
    }
    add("sweep_protected_drift_bound", bounded, "all lambdas");
    add("sweep_residual_non_increasing", monotone, trace);
    add("sweep_lambda_zero_is_identity", identity, "lambda = 0 rows");
  }
  if (!report.layers.empty()) {
    const LayerRow* chosen = nullptr;
    for (const auto& r : report.layers)
      if (r.layer == report.selected_layer) chosen = &r;
    bool lowest = chosen != nullptr;
    std::string trace;
    for (const auto& r : report.layers) {
      trace += (trace.empty() ? "" : " ") + std::to_string(r.layer) + ":" + label(r.residual_ratio);
      if (chosen && r.layer != chosen->layer) lowest = lowest && chosen->residual_ratio < r.residual_ratio;
    }
    add("selected_layer_has_lowest_residual", lowest, trace);
  }
  return checks;
}

Json to_json(const SuiteReport& report) {
  Json strategies = Json::array();
  for (const auto& r : report.strategies) strategies.push_back(to_json(r));
  Json sweep = Json::array();
  for (const auto& p : report.sweep) sweep.push_back(Json{{"lambda", p.lambda}, {"metrics", to_json(p.metrics)}});
  Json layers = Json::array();
  for (const auto& r : report.layers)
    layers.push_back(Json{{"layer", r.layer},
                          {"sensitive_score", r.sensitive_score},
                          {"strength", r.strength},
                          {"residual_ratio", r.residual_ratio},
                          {"selected", r.selected}});
  Json invariants = Json::array();
  for (const auto& c : report.invariants)
    invariants.push_back(Json{{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return Json{{"seed", report.seed},
              {"strategies", strategies},
              {"lambda_sweep", sweep},
              {"delta_wfs", report.delta_wfs},
              {"coupling", report.coupling},
              {"sensitive", report.sensitive},
              {"coupled", report.coupled},
              {"layers", layers},
              {"selected_layer", report.selected_layer},
              {"invariants", invariants},
              {"passed", report.passed()}};
}

SuiteReport suite_from_json(const Json& body) {
  try {
    SuiteReport report;
    report.seed = codec::field(body, "seed").get<std::uint64_t>();
    for (const auto& r : codec::field(body, "strategies")) report.strategies.push_back(ablation_from_json(r));
    for (const auto& p : codec::field(body, "lambda_sweep"))
      report.sweep.push_back({codec::field(p, "lambda").get<double>(), metrics_from_json(codec::field(p, "metrics"))});
    report.delta_wfs = codec::field(body, "delta_wfs").get<std::vector<double>>();
    report.coupling = codec::field(body, "coupling").get<std::vector<double>>();
    report.sensitive = codec::field(body, "sensitive").get<std::vector<Eigen::Index>>();
    report.coupled = codec::field(body, "coupled").get<std::vector<Eigen::Index>>();
    for (const auto& r : codec::field(body, "layers")) {
      LayerRow row;
      row.layer = codec::field(r, "layer").get<std::size_t>();
      row.sensitive_score = codec::field(r, "sensitive_score").get<double>();
      row.strength = codec::field(r, "strength").get<double>();
      row.residual_ratio = codec::field(r, "residual_ratio").get<double>();
      row.selected = codec::field(r, "selected").get<bool>();
      report.layers.push_back(row);
    }
    report.selected_layer = codec::field(body, "selected_layer").get<std::size_t>();
    for (const auto& c : codec::field(body, "invariants"))
      report.invariants.push_back({codec::field(c, "name").get<std::string>(), codec::field(c, "passed").get<bool>(),
                                   codec::field(c, "detail").get<std::string>()});
    return report;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kMalformedFile, std::string("report field has the wrong type: ") + e.what());
  }
}

ReportFormats parse_formats(std::string_view list) {
  ReportFormats formats{false, false, false};
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t end = std::min(list.find(',', start), list.size());
    const std::string_view item = list.substr(start, end - start);
    if (item == "json") formats.json = true;
    else if (item == "csv") formats.csv = true;
    else if (item == "svg") formats.svg = true;
    else fail(ErrorCode::kInvalidArgument, "unknown report format '" + std::string(item) + "'");
    start = end + 1;
  }
  return formats;
}

std::vector<std::filesystem::path> write_report(const SuiteReport& report, const std::filesystem::path& dir,
                                                const ReportFormats& formats) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto emit = [&](const char* name, const std::string& contents) {
    codec::write_file(dir / name, contents);
    written.push_back(dir / name);
  };
  if (formats.json) {
    codec::write_document(dir / "report.json", kReportSchema, kReportVersion, to_json(report));
    written.push_back(dir / "report.json");
  }
  if (formats.csv) {
    emit("strategies.csv", strategies_csv(report));
    emit("lambda_sweep.csv", sweep_csv(report));
    emit("features.csv", features_csv(report));
    emit("layers.csv", layers_csv(report));
    emit("invariants.csv", invariants_csv(report));
  }
  if (formats.svg) {
    emit("lambda_sweep.svg", sweep_svg(report));
    emit("delta_wfs.svg", delta_wfs_svg(report));
    emit("coupling_histogram.svg", coupling_svg(report));
  }
  return written;
}

SuiteReport read_report(const std::filesystem::path& dir) {
  return suite_from_json(codec::read_document(dir / "report.json", kReportSchema, kReportVersion));
}

}  // namespace orthoeraser
