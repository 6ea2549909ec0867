#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bayescoh/assembly.hpp"
#include "bayescoh/stats.hpp"

namespace bayescoh {

// Records whose expected or observed delta is not finite cannot enter any
// statistic; every metric here silently works on the finite subset.
std::vector<const TupleRecord*> finite_records(std::span<const TupleRecord> records);

// Bayesian coherence coefficient: the Pearson correlation between the
// expected update (log likelihood ratio) and the observed update (log
// posterior ratio minus log prior ratio), with its two-sided p-value.
// Throws InsufficientData (fewer than 3 usable records) or
// DegenerateVariance (either delta constant).
Correlation bcc(std::span<const TupleRecord> records);

// Bayesian coherence error: mean squared difference between observed and
// expected updates. Zero for a perfectly coherent scorer — but also zero
// for one that never updates at all when the expected update is also zero,
// so it is reported alongside the correlation, never instead of it.
double bce(std::span<const TupleRecord> records);

struct UpdateFit {
  double gradient = 0.0;   // OLS slope of observed on expected update
  double intercept = 0.0;
  double stderr_gradient = 0.0;
  std::size_t n = 0;
};

// Least-squares fit delta_observed ~ gradient * delta_expected + intercept.
// A gradient of 1 is exact Bayesian updating; below 1 is under-updating.
UpdateFit update_gradient(std::span<const TupleRecord> records);

// Fraction of records whose updates agree in sign. Zero counts as its own
// direction: both zero agree, one zero disagrees.
double direction_agreement(std::span<const TupleRecord> records);

struct CategoryMetrics {
  std::size_t n = 0;
  std::optional<double> bcc;
  std::optional<double> update_gradient;
  std::optional<double> direction_agreement;
};

struct MetricsReport {
  std::size_t n = 0;         // usable records
  std::size_t excluded = 0;  // records dropped for non-finite deltas
  std::optional<double> bcc;
  std::optional<double> bcc_p_value;
  double bce = 0.0;
  std::optional<double> update_gradient;
  std::optional<double> update_intercept;
  double direction_agreement = 0.0;
  std::map<std::string, CategoryMetrics> per_category;
  std::vector<std::string> notes;  // why anything above is missing
};

// All of the above over one set of records, plus per-category breakdowns.
// Degenerate variance anywhere turns into a null metric plus a note; the
// report itself only fails (InsufficientData) when no usable records remain.
MetricsReport compute_report(std::span<const TupleRecord> records);

// --- binned diagnostics ------------------------------------------------------

enum class Covariate { AvgEvidenceLoglik, AvgClassLogprob };
std::string covariate_name(Covariate covariate);

struct CovariateBin {
  std::size_t index = 0;       // 0 = highest covariate values
  std::size_t n = 0;
  double covariate_mean = 0.0;
  std::optional<double> bcc;
  std::optional<double> update_gradient;
};

struct BinnedReport {
  Covariate covariate = Covariate::AvgEvidenceLoglik;
  std::vector<CovariateBin> bins;
};

// Sorts usable records by the covariate in descending order and cuts them
// into `bin_count` contiguous, near-equal bins (earlier bins take the
// remainder), then computes bcc and the update gradient inside each bin.
// Throws InsufficientData unless every bin gets at least 3 records.
BinnedReport binned_analysis(std::span<const TupleRecord> records, Covariate covariate,
                             std::size_t bin_count = 10);

// --- sweeps and meta-analysis ---------------------------------------------------

struct SweepPoint {
  double temperature = 1.0;
  MetricsReport report;
};

// Scores the dataset once per temperature and reports metrics for each.
// Temperatures other than 1 require a backend that can rescale
// (UnsupportedTemperature otherwise, before any scoring starts).
std::vector<SweepPoint> temperature_sweep(const Dataset& dataset, const ModelBackend& backend,
                                          std::span<const double> temperatures,
                                          const ScoreOptions& base_options = {});

struct MetaPoint {
  std::string label;
  double params_billions = 0.0;
  double bcc = 0.0;
};

// Correlation between log10(parameter count) and coherence across models.
// Throws RangeError for a nonpositive parameter count, InsufficientData for
// fewer than 3 points.
Correlation scaling_correlation(std::span<const MetaPoint> points);

// --- serialization -----------------------------------------------------------

// Stable-field-order JSON; missing metrics appear as null alongside notes.
nlohmann::ordered_json metrics_report_to_json(const MetricsReport& report);

// Fixed-width text table: overall row plus one row per category, with
// coefficients to 3 decimals and agreement as a percentage to 1 decimal.
std::string render_metrics_table(const MetricsReport& report);

nlohmann::ordered_json binned_report_to_json(const BinnedReport& report);

}  // namespace bayescoh
