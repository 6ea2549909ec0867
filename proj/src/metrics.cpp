#include "bayescoh/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "bayescoh/errors.hpp"
#include "bayescoh/util.hpp"

namespace bayescoh {

namespace {

using nlohmann::ordered_json;

bool usable(const TupleRecord& record) {
  return std::isfinite(record.delta_expected) && std::isfinite(record.delta_observed);
}

struct DeltaPairs {
  std::vector<double> expected;
  std::vector<double> observed;
};

DeltaPairs deltas_of(const std::vector<const TupleRecord*>& records) {
  DeltaPairs pairs;
  pairs.expected.reserve(records.size());
  pairs.observed.reserve(records.size());
  for (const TupleRecord* record : records) {
    pairs.expected.push_back(record->delta_expected);
    pairs.observed.push_back(record->delta_observed);
  }
  return pairs;
}

Correlation bcc_of(const std::vector<const TupleRecord*>& records) {
  if (records.size() < 3) {
    throw InsufficientData("coherence coefficient needs at least 3 usable records, got " +
                           std::to_string(records.size()));
  }
  DeltaPairs pairs = deltas_of(records);
  return pearson(pairs.expected, pairs.observed, "delta_expected", "delta_observed");
}

double bce_of(const std::vector<const TupleRecord*>& records) {
  if (records.empty()) {
    throw InsufficientData("coherence error needs at least 1 usable record");
  }
  double sum = 0.0;
  for (const TupleRecord* record : records) {
    double diff = record->delta_observed - record->delta_expected;
    sum += diff * diff;
  }
  return sum / static_cast<double>(records.size());
}

UpdateFit update_gradient_of(const std::vector<const TupleRecord*>& records) {
  if (records.size() < 3) {
    throw InsufficientData("update gradient needs at least 3 usable records, got " +
                           std::to_string(records.size()));
  }
  DeltaPairs pairs = deltas_of(records);
  LinearFit fit = ols_fit(pairs.expected, pairs.observed, "delta_expected");
  UpdateFit out;
  out.gradient = fit.slope;
  out.intercept = fit.intercept;
  out.stderr_gradient = fit.slope_stderr;
  out.n = fit.n;
  return out;
}

int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

double direction_agreement_of(const std::vector<const TupleRecord*>& records) {
  if (records.empty()) {
    throw InsufficientData("direction agreement needs at least 1 usable record");
  }
  std::size_t agree = 0;
  for (const TupleRecord* record : records) {
    // Zero counts as its own direction: two non-updates agree, a non-update
    // against a real update does not.
    if (sign_of(record->delta_expected) == sign_of(record->delta_observed)) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(records.size());
}

std::string fmt3(std::optional<double> value) {
  if (!value) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", *value);
  return buf;
}

std::string fmt_percent(std::optional<double> fraction) {
  if (!fraction) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", *fraction * 100.0);
  return buf;
}

void set_optional(ordered_json& doc, const char* key, const std::optional<double>& value) {
  if (value) {
    doc[key] = *value;
  } else {
    doc[key] = nullptr;
  }
}

}  // namespace

std::vector<const TupleRecord*> finite_records(std::span<const TupleRecord> records) {
  std::vector<const TupleRecord*> out;
  out.reserve(records.size());
  for (const TupleRecord& record : records) {
    if (usable(record)) out.push_back(&record);
  }
  return out;
}

Correlation bcc(std::span<const TupleRecord> records) { return bcc_of(finite_records(records)); }

double bce(std::span<const TupleRecord> records) { return bce_of(finite_records(records)); }

UpdateFit update_gradient(std::span<const TupleRecord> records) {
  return update_gradient_of(finite_records(records));
}

double direction_agreement(std::span<const TupleRecord> records) {
  return direction_agreement_of(finite_records(records));
}

MetricsReport compute_report(std::span<const TupleRecord> records) {
  std::vector<const TupleRecord*> finite = finite_records(records);
  MetricsReport report;
  report.n = finite.size();
  report.excluded = records.size() - finite.size();
  if (report.excluded > 0) {
    report.notes.push_back("excluded " + std::to_string(report.excluded) +
                           " records with non-finite updates");
  }
  if (finite.empty()) {
    throw InsufficientData("no usable records: all " + std::to_string(records.size()) +
                           " have non-finite updates");
  }

  try {
    Correlation corr = bcc_of(finite);
    report.bcc = corr.r;
    report.bcc_p_value = corr.p;
  } catch (const DegenerateVariance& e) {
    report.notes.push_back(std::string("bcc unavailable: ") + e.what());
  } catch (const InsufficientData& e) {
    report.notes.push_back(std::string("bcc unavailable: ") + e.what());
  }

  report.bce = bce_of(finite);

  try {
    UpdateFit fit = update_gradient_of(finite);
    report.update_gradient = fit.gradient;
    report.update_intercept = fit.intercept;
  } catch (const DegenerateVariance& e) {
    report.notes.push_back(std::string("update gradient unavailable: ") + e.what());
  } catch (const InsufficientData& e) {
    report.notes.push_back(std::string("update gradient unavailable: ") + e.what());
  }

  report.direction_agreement = direction_agreement_of(finite);

  std::map<std::string, std::vector<const TupleRecord*>> by_category;
  for (const TupleRecord* record : finite) by_category[record->category].push_back(record);
  for (const auto& [name, group] : by_category) {
    CategoryMetrics metrics;
    metrics.n = group.size();
    try {
      metrics.bcc = bcc_of(group).r;
    } catch (const Error& e) {
      report.notes.push_back("category \"" + name + "\": bcc unavailable: " + e.what());
    }
    try {
      metrics.update_gradient = update_gradient_of(group).gradient;
    } catch (const Error& e) {
      report.notes.push_back("category \"" + name + "\": update gradient unavailable: " +
                             e.what());
    }
    metrics.direction_agreement = direction_agreement_of(group);
    report.per_category[name] = std::move(metrics);
  }
  return report;
}

std::string covariate_name(Covariate covariate) {
  switch (covariate) {
    case Covariate::AvgEvidenceLoglik: return "avg_evidence_loglik";
    case Covariate::AvgClassLogprob: return "avg_class_logprob";
  }
  return "unknown";
}

BinnedReport binned_analysis(std::span<const TupleRecord> records, Covariate covariate,
                             std::size_t bin_count) {
  if (bin_count < 1) throw RangeError("bin count must be at least 1");
  std::vector<const TupleRecord*> finite = finite_records(records);
  if (finite.size() < 3 * bin_count) {
    throw InsufficientData("binned analysis over " + std::to_string(bin_count) +
                           " bins needs at least " + std::to_string(3 * bin_count) +
                           " usable records, got " + std::to_string(finite.size()));
  }
  auto value_of = [covariate](const TupleRecord* record) {
    return covariate == Covariate::AvgEvidenceLoglik ? record->avg_evidence_loglik
                                                     : record->avg_class_logprob;
  };
  // Descending covariate; stable sort keeps input order as the tiebreak so
  // the binning is fully deterministic.
  std::stable_sort(finite.begin(), finite.end(),
                   [&](const TupleRecord* a, const TupleRecord* b) {
                     return value_of(a) > value_of(b);
                   });

  BinnedReport report;
  report.covariate = covariate;
  std::size_t base = finite.size() / bin_count;
  std::size_t remainder = finite.size() % bin_count;
  std::size_t offset = 0;
  for (std::size_t b = 0; b < bin_count; ++b) {
    std::size_t size = base + (b < remainder ? 1 : 0);
    std::vector<const TupleRecord*> group(finite.begin() + offset,
                                          finite.begin() + offset + size);
    offset += size;

    CovariateBin bin;
    bin.index = b;
    bin.n = group.size();
    double sum = 0.0;
    for (const TupleRecord* record : group) sum += value_of(record);
    bin.covariate_mean = sum / static_cast<double>(group.size());
    try {
      bin.bcc = bcc_of(group).r;
    } catch (const DegenerateVariance&) {
      // leave missing
    }
    try {
      bin.update_gradient = update_gradient_of(group).gradient;
    } catch (const DegenerateVariance&) {
      // leave missing
    }
    report.bins.push_back(std::move(bin));
  }
  return report;
}

std::vector<SweepPoint> temperature_sweep(const Dataset& dataset, const ModelBackend& backend,
                                          std::span<const double> temperatures,
                                          const ScoreOptions& base_options) {
  for (double t : temperatures) {
    if (!(t > 0.0) || !std::isfinite(t)) {
      throw RangeError("sweep temperature must be a positive finite number, got " +
                       format_double(t));
    }
    if (t != 1.0 && !backend.supports_temperature_scaling()) {
      throw UnsupportedTemperature("backend \"" + backend.id() +
                                   "\" cannot rescale distributions to temperature " +
                                   format_double(t));
    }
  }
  std::vector<SweepPoint> points;
  points.reserve(temperatures.size());
  for (double t : temperatures) {
    ScoreOptions options = base_options;
    options.temperature = t;
    ScoreRun run = score_tuples(dataset, backend, options);
    SweepPoint point;
    point.temperature = t;
    point.report = compute_report(run.records);
    points.push_back(std::move(point));
  }
  return points;
}

Correlation scaling_correlation(std::span<const MetaPoint> points) {
  std::vector<double> log_params;
  std::vector<double> coherence;
  log_params.reserve(points.size());
  coherence.reserve(points.size());
  for (const MetaPoint& point : points) {
    if (!(point.params_billions > 0.0) || !std::isfinite(point.params_billions)) {
      throw RangeError("model \"" + point.label + "\" has nonpositive parameter count " +
                       format_double(point.params_billions));
    }
    log_params.push_back(std::log10(point.params_billions));
    coherence.push_back(point.bcc);
  }
  return pearson(log_params, coherence, "log10(params)", "bcc");
}

nlohmann::ordered_json metrics_report_to_json(const MetricsReport& report) {
  ordered_json doc;
  doc["n"] = report.n;
  doc["excluded"] = report.excluded;
  set_optional(doc, "bcc", report.bcc);
  set_optional(doc, "bcc_p_value", report.bcc_p_value);
  doc["bce"] = report.bce;
  set_optional(doc, "update_gradient", report.update_gradient);
  set_optional(doc, "update_intercept", report.update_intercept);
  doc["direction_agreement"] = report.direction_agreement;
  ordered_json categories = ordered_json::object();
  for (const auto& [name, metrics] : report.per_category) {
    ordered_json entry;
    entry["n"] = metrics.n;
    set_optional(entry, "bcc", metrics.bcc);
    set_optional(entry, "update_gradient", metrics.update_gradient);
    set_optional(entry, "direction_agreement", metrics.direction_agreement);
    categories[name] = std::move(entry);
  }
  doc["per_category"] = std::move(categories);
  doc["notes"] = report.notes;
  return doc;
}

std::string render_metrics_table(const MetricsReport& report) {
  std::size_t name_width = std::string("overall").size();
  for (const auto& [name, metrics] : report.per_category) {
    name_width = std::max(name_width, name.size());
  }
  name_width = std::max(name_width, std::string("group").size());

  std::ostringstream out;
  auto row = [&](const std::string& name, const std::string& n, const std::string& bcc_text,
                 const std::string& gradient, const std::string& agreement) {
    out << name;
    out << std::string(name_width - name.size(), ' ');
    auto pad = [&](const std::string& cell, std::size_t width) {
      if (cell.size() < width) out << std::string(width - cell.size(), ' ');
      out << cell;
    };
    pad(n, 8);
    pad(bcc_text, 9);
    pad(gradient, 11);
    pad(agreement, 13);
    out << "\n";
  };
  row("group", "n", "bcc", "gradient", "agreement%");
  row("overall", std::to_string(report.n), fmt3(report.bcc), fmt3(report.update_gradient),
      fmt_percent(report.direction_agreement));
  for (const auto& [name, metrics] : report.per_category) {
    row(name, std::to_string(metrics.n), fmt3(metrics.bcc), fmt3(metrics.update_gradient),
        fmt_percent(metrics.direction_agreement));
  }
  return out.str();
}

nlohmann::ordered_json binned_report_to_json(const BinnedReport& report) {
  ordered_json doc;
  doc["covariate"] = covariate_name(report.covariate);
  ordered_json bins = ordered_json::array();
  for (const auto& bin : report.bins) {
    ordered_json entry;
    entry["bin"] = bin.index;
    entry["n"] = bin.n;
    entry["covariate_mean"] = bin.covariate_mean;
    set_optional(entry, "bcc", bin.bcc);
    set_optional(entry, "update_gradient", bin.update_gradient);
    bins.push_back(std::move(entry));
  }
  doc["bins"] = std::move(bins);
  return doc;
}

}  // namespace bayescoh
