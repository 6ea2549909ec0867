#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "bayescoh/errors.hpp"
#include "bayescoh/metrics.hpp"
#include "bayescoh/stats.hpp"
#include "bayescoh/util.hpp"
#include "test_worlds.hpp"

using namespace bayescoh;
using namespace bayescoh::testing;

namespace {

TupleRecord record_with(double expected, double observed, std::string category = "cat") {
  TupleRecord r;
  r.category = std::move(category);
  r.delta_expected = expected;
  r.delta_observed = observed;
  r.avg_evidence_loglik = -1.0;
  r.avg_class_logprob = -2.0;
  return r;
}

std::vector<TupleRecord> paired(const std::vector<double>& expected,
                                const std::vector<double>& observed) {
  std::vector<TupleRecord> records;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    records.push_back(record_with(expected[i], observed[i]));
  }
  return records;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

TEST_CASE("headline metrics match the reference implementation") {
  // Frozen with an independent statistics package over these exact numbers.
  const auto records = paired({1.0, 2.0, -1.5, 0.5, -0.25, 3.0},
                              {0.8, 1.9, -1.2, 0.3, -0.5, -2.4});
  const Correlation c = bcc(records);
  CHECK(c.n == 6);
  CHECK(c.r == doctest::Approx(0.028393310792421522).epsilon(1e-12));
  CHECK(c.p == doctest::Approx(0.9574214788724029).epsilon(1e-12));

  CHECK(bce(records) == doctest::Approx(4.9004166666666675).epsilon(1e-14));

  const UpdateFit fit = update_gradient(records);
  CHECK(fit.n == 6);
  CHECK(fit.gradient == doctest::Approx(0.027013832384052024).epsilon(1e-12));
  CHECK(fit.intercept == doctest::Approx(-0.2047192839707078).epsilon(1e-12));
  CHECK(fit.stderr_gradient == doctest::Approx(0.47551589490460383).epsilon(1e-12));

  CHECK(direction_agreement(records) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("direction agreement treats zero as its own direction") {
  CHECK(direction_agreement(paired({0.0, 1.0, -2.0, 0.5}, {0.0, 0.5, -1.0, -0.1})) ==
        doctest::Approx(3.0 / 4.0).epsilon(1e-15));
  CHECK(direction_agreement(paired({0.0, 0.0}, {0.0, 0.0})) == 1.0);
  CHECK(direction_agreement(paired({0.0, 1.0}, {1.0, 1.0})) == 0.5);
  CHECK(direction_agreement(paired({-1.0, 1.0}, {1.0, -1.0})) == 0.0);
}

TEST_CASE("non-finite deltas are excluded from every metric") {
  auto records = paired({1.0, 2.0, -1.5, 0.5, -0.25, 3.0},
                        {0.8, 1.9, -1.2, 0.3, -0.5, -2.4});
  records.push_back(record_with(kNaN, 1.0));
  records.push_back(record_with(1.0, kNaN));
  records.push_back(record_with(std::numeric_limits<double>::infinity(), 1.0));

  CHECK(finite_records(records).size() == 6);
  CHECK(bcc(records).n == 6);
  CHECK(bce(records) == doctest::Approx(4.9004166666666675).epsilon(1e-14));
  CHECK(update_gradient(records).n == 6);
  CHECK(direction_agreement(records) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));

  const MetricsReport report = compute_report(records);
  CHECK(report.n == 6);
  CHECK(report.excluded == 3);
}

TEST_CASE("metrics refuse fewer than three usable records") {
  const auto records = paired({1.0, 2.0}, {1.0, 2.0});
  CHECK_THROWS_AS((void)bcc(records), InsufficientData);
  CHECK_THROWS_AS((void)update_gradient(records), InsufficientData);

  // The aggregate report degrades instead: computable pieces stay, the
  // missing ones turn into nulls with a note.
  const MetricsReport thin = compute_report(records);
  CHECK(thin.n == 2);
  CHECK(!thin.bcc.has_value());
  CHECK(!thin.update_gradient.has_value());
  CHECK(thin.bce == 0.0);
  CHECK(!thin.notes.empty());

  std::vector<TupleRecord> empty;
  CHECK_THROWS_AS((void)compute_report(empty), InsufficientData);

  const auto all_nan = paired({kNaN, kNaN, kNaN}, {1.0, 2.0, 3.0});
  CHECK_THROWS_AS((void)compute_report(all_nan), InsufficientData);
}

TEST_CASE("a never-updating scorer zeroes the error but not the coefficient") {
  // Both deltas identically zero: the trap the error metric falls into.
  std::vector<TupleRecord> flat;
  for (int i = 0; i < 10; ++i) flat.push_back(record_with(0.0, 0.0));

  CHECK(bce(flat) == 0.0);  // exactly, not approximately
  CHECK_THROWS_AS((void)bcc(flat), DegenerateVariance);

  const MetricsReport report = compute_report(flat);
  CHECK(report.n == 10);
  CHECK(report.bce == 0.0);
  CHECK(!report.bcc.has_value());
  CHECK(!report.bcc_p_value.has_value());
  CHECK(!report.update_gradient.has_value());
  CHECK(report.direction_agreement == 1.0);
  REQUIRE(!report.notes.empty());
  bool mentions_variance = false;
  for (const auto& note : report.notes) {
    if (note.find("variance") != std::string::npos) mentions_variance = true;
  }
  CHECK(mentions_variance);
}

TEST_CASE("constant expected updates degrade gradient and coefficient together") {
  std::vector<TupleRecord> records;
  for (int i = 0; i < 8; ++i) records.push_back(record_with(1.5, 0.1 * i));
  const MetricsReport report = compute_report(records);
  CHECK(!report.bcc.has_value());
  CHECK(!report.update_gradient.has_value());
  CHECK(report.bce > 0.0);
  CHECK(!report.notes.empty());
}

TEST_CASE("per-category breakdowns degrade independently") {
  std::vector<TupleRecord> records;
  // "healthy" has varying deltas; "stuck" is all zeros.
  for (int i = 0; i < 6; ++i) {
    records.push_back(record_with(0.5 * i - 1.0, 0.4 * i - 0.8, "healthy"));
    records.push_back(record_with(0.0, 0.0, "stuck"));
  }
  const MetricsReport report = compute_report(records);
  CHECK(report.bcc.has_value());  // pooled data still varies

  REQUIRE(report.per_category.count("healthy") == 1);
  REQUIRE(report.per_category.count("stuck") == 1);
  const CategoryMetrics& healthy = report.per_category.at("healthy");
  CHECK(healthy.n == 6);
  CHECK(healthy.bcc.has_value());
  CHECK(*healthy.bcc == doctest::Approx(1.0).epsilon(1e-12));
  const CategoryMetrics& stuck = report.per_category.at("stuck");
  CHECK(stuck.n == 6);
  CHECK(!stuck.bcc.has_value());
  CHECK(stuck.direction_agreement.has_value());
  CHECK(*stuck.direction_agreement == 1.0);

  bool note_names_category = false;
  for (const auto& note : report.notes) {
    if (note.find("stuck") != std::string::npos) note_names_category = true;
  }
  CHECK(note_names_category);
}

TEST_CASE("the report JSON uses nulls plus notes for missing metrics") {
  std::vector<TupleRecord> flat;
  for (int i = 0; i < 5; ++i) flat.push_back(record_with(0.0, 0.0));
  const auto doc = metrics_report_to_json(compute_report(flat));
  CHECK(doc.at("bcc").is_null());
  CHECK(doc.at("bce") == 0.0);
  CHECK(doc.at("n") == 5);
  CHECK(!doc.at("notes").empty());

  const auto healthy_doc = metrics_report_to_json(
      compute_report(paired({1, 2, 3, 4}, {0.9, 2.1, 2.8, 4.2})));
  CHECK(healthy_doc.at("bcc").is_number());
  CHECK(healthy_doc.at("update_gradient").is_number());

  // Field order is part of the format.
  const std::string dumped = healthy_doc.dump();
  CHECK(dumped.find("\"n\"") < dumped.find("\"bcc\""));
  CHECK(dumped.find("\"bcc\"") < dumped.find("\"bce\""));
  CHECK(dumped.find("\"bce\"") < dumped.find("\"update_gradient\""));
}

TEST_CASE("the text table shows overall and per-category rows") {
  std::vector<TupleRecord> records;
  for (int i = 0; i < 6; ++i) {
    records.push_back(record_with(0.5 * i - 1.0, 0.4 * i - 0.9, "alpha"));
    records.push_back(record_with(0.3 * i - 0.7, 0.2 * i - 0.5, "beta"));
  }
  const std::string table = render_metrics_table(compute_report(records));
  CHECK(table.find("overall") != std::string::npos);
  CHECK(table.find("alpha") != std::string::npos);
  CHECK(table.find("beta") != std::string::npos);
  CHECK(table.find("bcc") != std::string::npos);
  // The overall row precedes the category rows.
  CHECK(table.find("overall") < table.find("alpha"));
}

TEST_CASE("binned analysis partitions records by covariate, remainder first") {
  // 35 records with distinct covariates over 10 bins: sizes 4,4,4,4,4,3,...
  std::vector<TupleRecord> records;
  for (int i = 0; i < 35; ++i) {
    TupleRecord r = record_with(1.0 + 0.1 * i, 0.9 + 0.11 * i);
    r.avg_evidence_loglik = -0.1 * i;  // descending with i
    records.push_back(r);
  }
  const BinnedReport report = binned_analysis(records, Covariate::AvgEvidenceLoglik, 10);
  REQUIRE(report.bins.size() == 10);

  std::size_t total = 0;
  for (std::size_t b = 0; b < report.bins.size(); ++b) {
    CHECK(report.bins[b].index == b);
    CHECK(report.bins[b].n == (b < 5 ? 4 : 3));
    total += report.bins[b].n;
    if (b > 0) CHECK(report.bins[b].covariate_mean < report.bins[b - 1].covariate_mean);
  }
  CHECK(total == 35);

  // Bin 0 holds the highest covariate values: records 0..3.
  CHECK(report.bins[0].covariate_mean ==
        doctest::Approx((0.0 - 0.1 - 0.2 - 0.3) / 4.0).epsilon(1e-12));

  CHECK_THROWS_AS(
      (void)binned_analysis(records, Covariate::AvgEvidenceLoglik, 12),
      InsufficientData);

  const auto doc = binned_report_to_json(report);
  CHECK(doc.at("covariate") == "avg_evidence_loglik");
  CHECK(doc.at("bins").size() == 10);
}

TEST_CASE("binned analysis can slice on either covariate") {
  std::vector<TupleRecord> records;
  for (int i = 0; i < 30; ++i) {
    TupleRecord r = record_with(1.0 + 0.05 * i, 1.1 + 0.06 * i);
    r.avg_evidence_loglik = -1.0;          // constant: useless for slicing
    r.avg_class_logprob = -0.05 * i - 1.0; // varies
    records.push_back(r);
  }
  const BinnedReport by_class = binned_analysis(records, Covariate::AvgClassLogprob, 5);
  REQUIRE(by_class.bins.size() == 5);
  for (const auto& bin : by_class.bins) CHECK(bin.n == 6);
  CHECK(covariate_name(Covariate::AvgClassLogprob) == "avg_class_logprob");
}

TEST_CASE("per-bin metrics equal metrics over the same slice") {
  // Reconstructs each bin's member set by hand and compares the statistics.
  std::vector<TupleRecord> records;
  SplitMix64 rng(31337);
  for (int i = 0; i < 40; ++i) {
    const double e = 2.0 * rng.uniform() - 1.0;
    TupleRecord r = record_with(e, 0.6 * e + 0.05 * (rng.uniform() - 0.5));
    r.avg_evidence_loglik = -rng.uniform() * 5.0;
    records.push_back(r);
  }
  const BinnedReport report = binned_analysis(records, Covariate::AvgEvidenceLoglik, 4);

  // Reconstruct each bin's member set by sorting manually.
  std::vector<const TupleRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const TupleRecord* a, const TupleRecord* b) {
    return a->avg_evidence_loglik > b->avg_evidence_loglik;
  });
  std::size_t offset = 0;
  for (const auto& bin : report.bins) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < bin.n; ++i) {
      xs.push_back(sorted[offset + i]->delta_expected);
      ys.push_back(sorted[offset + i]->delta_observed);
    }
    offset += bin.n;
    const Correlation c = pearson(xs, ys);
    const LinearFit fit = ols_fit(xs, ys);
    REQUIRE(bin.bcc.has_value());
    REQUIRE(bin.update_gradient.has_value());
    CHECK(*bin.bcc == doctest::Approx(c.r).epsilon(1e-14));
    CHECK(*bin.update_gradient == doctest::Approx(fit.slope).epsilon(1e-14));
  }
  CHECK(offset == 40);
}

TEST_CASE("temperature sweeps scale the error by tau squared on permutation worlds") {
  const TabularWorld world = permutation_world(6);
  const Dataset dataset = dataset_for_world(world, 2);
  const NoisyUnderupdaterBackend backend(world, 0.5, 0.0, 3);

  const std::vector<double> temperatures{0.5, 1.0, 2.0};
  const auto points = temperature_sweep(dataset, backend, temperatures);
  REQUIRE(points.size() == 3);
  CHECK(points[0].temperature == 0.5);
  CHECK(points[1].temperature == 1.0);
  CHECK(points[2].temperature == 2.0);

  const double bce_half = points[0].report.bce;
  const double bce_one = points[1].report.bce;
  const double bce_two = points[2].report.bce;
  CHECK(bce_one > 0.0);
  CHECK(bce_half == doctest::Approx(4.0 * bce_one).epsilon(1e-9));
  CHECK(bce_two == doctest::Approx(bce_one / 4.0).epsilon(1e-9));

  for (const auto& point : points) {
    REQUIRE(point.report.bcc.has_value());
    CHECK(*point.report.bcc == doctest::Approx(1.0).epsilon(1e-9));
    REQUIRE(point.report.update_gradient.has_value());
    CHECK(*point.report.update_gradient == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(point.report.n == 12);
  }
}

TEST_CASE("temperature sweeps validate their inputs upfront") {
  const TabularWorld world = permutation_world(2);
  const Dataset dataset = dataset_for_world(world, 1);
  const TabularOracleBackend oracle(world);

  const std::vector<double> bad{1.0, 0.0};
  CHECK_THROWS_AS((void)temperature_sweep(dataset, oracle, bad), RangeError);

  // A backend without rescaling support fails before scoring anything.
  class FixedBackend : public ModelBackend {
   public:
    std::string id() const override { return "fixed:v1"; }
    bool supports_temperature_scaling() const override { return false; }
    ScoreResult score(const ScoreRequest& request) const override {
      calls.fetch_add(1);
      return make_score_result({request.continuation}, {-1.0});
    }
    mutable std::atomic<int> calls{0};
  };
  FixedBackend fixed;
  const std::vector<double> temps{0.5, 1.0};
  CHECK_THROWS_AS((void)temperature_sweep(dataset, fixed, temps), UnsupportedTemperature);
  CHECK(fixed.calls == 0);

  const std::vector<double> only_one{1.0};
  CHECK_NOTHROW((void)temperature_sweep(dataset, fixed, only_one));
}

TEST_CASE("scaling correlation matches the frozen reference") {
  // The ten evaluated models: parameter counts in billions against their
  // measured coherence coefficients.
  const std::vector<MetaPoint> points{
      {"falcon-small", 1.67, 0.594},  {"falcon-large", 10.31, 0.688},
      {"llama-small", 1.24, 0.658},   {"llama-large", 8.03, 0.739},
      {"qwen-small", 3.09, 0.667},    {"qwen-large", 14.77, 0.743},
      {"gpt2-small", 0.14, 0.477},    {"gpt2-large", 1.61, 0.595},
      {"pythia-small", 0.21, 0.505},  {"pythia-large", 12.00, 0.681},
  };
  const Correlation c = scaling_correlation(points);
  CHECK(c.n == 10);
  CHECK(c.r == doctest::Approx(0.94150331224941952).epsilon(1e-12));
  CHECK(c.p == doctest::Approx(4.7718447245173655e-05).epsilon(1e-9));

  std::vector<MetaPoint> bad = points;
  bad[3].params_billions = 0.0;
  CHECK_THROWS_AS((void)scaling_correlation(bad), RangeError);

  const std::vector<MetaPoint> two(points.begin(), points.begin() + 2);
  CHECK_THROWS_AS((void)scaling_correlation(two), InsufficientData);
}
