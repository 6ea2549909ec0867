#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bayescoh/metrics.hpp"

namespace bayescoh {

// RFC 4180 CSV cell: quoted only when the value contains a comma, quote, or
// line break, with embedded quotes doubled.
std::string csv_escape(std::string_view value);

// What emit_scatter computed while writing: the fitted line parameters are
// the same numbers update_gradient() reports for these records.
struct ScatterSummary {
  std::size_t points = 0;   // usable (finite) records written
  std::size_t excluded = 0; // non-finite records left out
  std::optional<double> r;
  std::optional<double> slope;
  std::optional<double> intercept;
  std::vector<std::string> notes;
};

// Writes the expected-vs-observed update cloud:
//   <csv_path>      delta_expected,delta_observed,category,class_1,class_2,
//                   evidence,history — one row per usable record
//   <sidecar_path>  JSON {points, excluded, r, slope, intercept, notes}
//   <svg_path>      optional self-contained plot: the point cloud, the
//                   fitted line (solid), and the identity line (dashed)
// All writes are atomic. Numbers use shortest round-trip formatting.
ScatterSummary emit_scatter(std::span<const TupleRecord> records,
                            const std::filesystem::path& csv_path,
                            const std::filesystem::path& sidecar_path,
                            const std::optional<std::filesystem::path>& svg_path = {});

// Binned bcc/gradient curves as CSV: bin,n,covariate_mean,bcc,update_gradient
// (missing metrics render as empty cells).
void emit_bins_csv(const BinnedReport& report, const std::filesystem::path& csv_path);

// One already-evaluated model for cross-model comparison.
struct ModelComparisonRow {
  std::string label;
  double params_billions = 0.0;
  double bcc = 0.0;
  double update_gradient = 0.0;
  double direction_agreement = 0.0;  // percent, as reported
  std::map<std::string, double> benchmark_scores;
};

// Throws RangeError (naming the row) for nonpositive parameter counts and
// SchemaError for an empty label.
void check_row(const ModelComparisonRow& row);

// Loads rows from a JSON array of objects:
//   {"label", "params_billions", "bcc", "update_gradient",
//    "direction_agreement", "benchmarks"?: {name: score}}
std::vector<ModelComparisonRow> load_model_rows(const std::filesystem::path& path);

// Fixed-width comparison table (coefficients to 3 decimals, agreement to 1).
std::string render_model_table(std::span<const ModelComparisonRow> rows);

// Writes into `out_dir`:
//   model_table.txt       the rendered table
//   model_table.csv       the same rows as CSV (benchmarks as extra columns)
//   scaling_points.csv    label,log10_params,bcc
//   benchmark_points.csv  benchmark,label,score,bcc (long format)
void emit_model_table(std::span<const ModelComparisonRow> rows,
                      const std::filesystem::path& out_dir);

}  // namespace bayescoh
