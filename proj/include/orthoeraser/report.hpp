#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "orthoeraser/harness.hpp"

namespace orthoeraser {

struct InvariantCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Everything one ablation run produced; the unit that report files are
/// rendered from.
struct SuiteReport {
  std::uint64_t seed = 0;
  std::vector<AblationResult> strategies;
  std::vector<SweepPoint> sweep;
  std::vector<double> delta_wfs;  // per feature
  std::vector<double> coupling;   // per feature
  std::vector<Eigen::Index> sensitive;
  std::vector<Eigen::Index> coupled;
  std::vector<LayerRow> layers;
  std::size_t selected_layer = 0;  // 0 when no layer ablation ran
  std::vector<InvariantCheck> invariants;

  bool passed() const;
};

/// Fills the checks that the recorded results allow: strategy orderings,
/// protected-drift bounds, and sweep monotonicity. `drift_tolerance` is
/// relative to the largest activation norm.
std::vector<InvariantCheck> check_invariants(const SuiteReport& report, double drift_tolerance = 1e-8);

inline constexpr const char* kReportSchema = "orthoeraser-report";
inline constexpr int kReportVersion = 1;

nlohmann::json to_json(const SuiteReport& report);
SuiteReport suite_from_json(const nlohmann::json& body);

struct ReportFormats {
  bool json = true;
  bool csv = true;
  bool svg = true;
};

/// Parses a comma-separated list drawn from {json, csv, svg}.
ReportFormats parse_formats(std::string_view list);

/// Writes report.json, the CSV tables, and the SVG plots into `dir`
/// (created if needed). Returns the written paths in a fixed order.
std::vector<std::filesystem::path> write_report(const SuiteReport& report, const std::filesystem::path& dir,
                                                const ReportFormats& formats = {});

/// Reads `dir`/report.json.
SuiteReport read_report(const std::filesystem::path& dir);

}  // namespace orthoeraser
