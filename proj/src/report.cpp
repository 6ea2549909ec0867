#include "bayescoh/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "bayescoh/errors.hpp"
#include "bayescoh/util.hpp"

namespace bayescoh {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string fmt3(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", value);
  return buf;
}

std::string fmt1(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", value);
  return buf;
}

// Short stable rendering for SVG coordinates; full precision is pointless
// at screen resolution.
std::string fmt_coord(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", value);
  return buf;
}

std::string xml_escape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct SvgAxis {
  double min = 0.0;
  double max = 1.0;
  double to_px(double value, double px_lo, double px_hi) const {
    double t = (value - min) / (max - min);
    return px_lo + t * (px_hi - px_lo);
  }
};

std::string render_scatter_svg(const std::vector<const TupleRecord*>& points,
                               const std::optional<double>& slope,
                               const std::optional<double>& intercept) {
  constexpr double kWidth = 640, kHeight = 480;
  constexpr double kLeft = 60, kRight = 610, kTop = 30, kBottom = 430;

  SvgAxis x_axis, y_axis;
  x_axis.min = y_axis.min = std::numeric_limits<double>::infinity();
  x_axis.max = y_axis.max = -std::numeric_limits<double>::infinity();
  for (const TupleRecord* record : points) {
    x_axis.min = std::min(x_axis.min, record->delta_expected);
    x_axis.max = std::max(x_axis.max, record->delta_expected);
    y_axis.min = std::min(y_axis.min, record->delta_observed);
    y_axis.max = std::max(y_axis.max, record->delta_observed);
  }
  auto widen = [](SvgAxis& axis) {
    if (!(axis.max > axis.min)) {
      axis.min -= 1.0;
      axis.max += 1.0;
      return;
    }
    double pad = 0.05 * (axis.max - axis.min);
    axis.min -= pad;
    axis.max += pad;
  };
  widen(x_axis);
  widen(y_axis);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  svg << "  <rect width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" fill=\"white\"/>\n";
  // axes
  svg << "  <line x1=\"" << kLeft << "\" y1=\"" << kBottom << "\" x2=\"" << kRight << "\" y2=\""
      << kBottom << "\" stroke=\"black\"/>\n";
  svg << "  <line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kBottom << "\" stroke=\"black\"/>\n";
  svg << "  <text x=\"" << (kLeft + kRight) / 2
      << "\" y=\"470\" text-anchor=\"middle\" font-size=\"14\">"
      << xml_escape("expected update (log likelihood ratio)") << "</text>\n";
  svg << "  <text x=\"16\" y=\"" << (kTop + kBottom) / 2
      << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 16 "
      << (kTop + kBottom) / 2 << ")\">" << xml_escape("observed update (log posterior shift)")
      << "</text>\n";

  auto px = [&](double vx, double vy) {
    return std::make_pair(x_axis.to_px(vx, kLeft, kRight), y_axis.to_px(vy, kBottom, kTop));
  };

  // identity reference: what a perfectly coherent scorer would trace
  {
    double lo = std::max(x_axis.min, y_axis.min);
    double hi = std::min(x_axis.max, y_axis.max);
    if (hi > lo) {
      auto [x1, y1] = px(lo, lo);
      auto [x2, y2] = px(hi, hi);
      svg << "  <line x1=\"" << fmt_coord(x1) << "\" y1=\"" << fmt_coord(y1) << "\" x2=\""
          << fmt_coord(x2) << "\" y2=\"" << fmt_coord(y2)
          << "\" stroke=\"black\" stroke-dasharray=\"6 4\" stroke-width=\"1\"/>\n";
    }
  }

  for (const TupleRecord* record : points) {
    auto [cx, cy] = px(record->delta_expected, record->delta_observed);
    svg << "  <circle cx=\"" << fmt_coord(cx) << "\" cy=\"" << fmt_coord(cy)
        << "\" r=\"2\" fill=\"steelblue\" fill-opacity=\"0.5\"/>\n";
  }

  if (slope && intercept) {
    auto [x1, y1] = px(x_axis.min, *intercept + *slope * x_axis.min);
    auto [x2, y2] = px(x_axis.max, *intercept + *slope * x_axis.max);
    svg << "  <line x1=\"" << fmt_coord(x1) << "\" y1=\"" << fmt_coord(y1) << "\" x2=\""
        << fmt_coord(x2) << "\" y2=\"" << fmt_coord(y2)
        << "\" stroke=\"crimson\" stroke-width=\"1.5\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace

std::string csv_escape(std::string_view value) {
  bool needs_quotes = value.find_first_of(",\"\r\n") != std::string_view::npos;
  if (!needs_quotes) return std::string(value);
  std::string out;
  out.reserve(value.size() + 2);
  out += '"';
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

ScatterSummary emit_scatter(std::span<const TupleRecord> records,
                            const std::filesystem::path& csv_path,
                            const std::filesystem::path& sidecar_path,
                            const std::optional<std::filesystem::path>& svg_path) {
  std::vector<const TupleRecord*> finite = finite_records(records);

  ScatterSummary summary;
  summary.points = finite.size();
  summary.excluded = records.size() - finite.size();
  if (summary.excluded > 0) {
    summary.notes.push_back("excluded " + std::to_string(summary.excluded) +
                            " records with non-finite updates");
  }

  try {
    Correlation corr = bcc(records);
    summary.r = corr.r;
  } catch (const Error& e) {
    summary.notes.push_back(std::string("correlation unavailable: ") + e.what());
  }
  try {
    UpdateFit fit = update_gradient(records);
    summary.slope = fit.gradient;
    summary.intercept = fit.intercept;
  } catch (const Error& e) {
    summary.notes.push_back(std::string("fit unavailable: ") + e.what());
  }

  std::string csv = "delta_expected,delta_observed,category,class_1,class_2,evidence,history\n";
  for (const TupleRecord* record : finite) {
    csv += format_double(record->delta_expected);
    csv += ',';
    csv += format_double(record->delta_observed);
    csv += ',';
    csv += csv_escape(record->category);
    csv += ',';
    csv += csv_escape(record->class_1);
    csv += ',';
    csv += csv_escape(record->class_2);
    csv += ',';
    csv += csv_escape(record->evidence);
    csv += ',';
    csv += std::to_string(record->history);
    csv += '\n';
  }
  atomic_write_file(csv_path, csv);

  ordered_json sidecar;
  sidecar["points"] = summary.points;
  sidecar["excluded"] = summary.excluded;
  if (summary.r) sidecar["r"] = *summary.r; else sidecar["r"] = nullptr;
  if (summary.slope) sidecar["slope"] = *summary.slope; else sidecar["slope"] = nullptr;
  if (summary.intercept) sidecar["intercept"] = *summary.intercept;
  else sidecar["intercept"] = nullptr;
  sidecar["notes"] = summary.notes;
  atomic_write_file(sidecar_path, sidecar.dump(2) + "\n");

  if (svg_path) {
    atomic_write_file(*svg_path, render_scatter_svg(finite, summary.slope, summary.intercept));
  }
  return summary;
}

void emit_bins_csv(const BinnedReport& report, const std::filesystem::path& csv_path) {
  std::string csv = "bin,n,covariate_mean,bcc,update_gradient\n";
  for (const CovariateBin& bin : report.bins) {
    csv += std::to_string(bin.index);
    csv += ',';
    csv += std::to_string(bin.n);
    csv += ',';
    csv += format_double(bin.covariate_mean);
    csv += ',';
    if (bin.bcc) csv += format_double(*bin.bcc);
    csv += ',';
    if (bin.update_gradient) csv += format_double(*bin.update_gradient);
    csv += '\n';
  }
  atomic_write_file(csv_path, csv);
}

void check_row(const ModelComparisonRow& row) {
  if (row.label.empty()) throw SchemaError("model row has an empty label");
  if (!(row.params_billions > 0.0) || !std::isfinite(row.params_billions)) {
    throw RangeError("model \"" + row.label + "\" has nonpositive parameter count " +
                     format_double(row.params_billions));
  }
}

std::vector<ModelComparisonRow> load_model_rows(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  const json* rows = &doc;
  if (doc.is_object()) {
    auto it = doc.find("models");
    if (it == doc.end() || !it->is_array()) {
      throw SchemaError(path.string() + ": expected an array of rows or {\"models\": [...]}");
    }
    rows = &*it;
  } else if (!doc.is_array()) {
    throw SchemaError(path.string() + ": expected an array of rows or {\"models\": [...]}");
  }

  std::vector<ModelComparisonRow> out;
  for (const auto& entry : *rows) {
    if (!entry.is_object()) throw SchemaError(path.string() + ": rows must be objects");
    ModelComparisonRow row;
    auto get_number = [&](const char* key) {
      auto it = entry.find(key);
      if (it == entry.end() || !it->is_number()) {
        throw SchemaError(path.string() + ": row is missing numeric field \"" +
                          std::string(key) + "\"");
      }
      return it->get<double>();
    };
    auto label_it = entry.find("label");
    if (label_it == entry.end() || !label_it->is_string()) {
      throw SchemaError(path.string() + ": row is missing string field \"label\"");
    }
    row.label = label_it->get<std::string>();
    row.params_billions = get_number("params_billions");
    row.bcc = get_number("bcc");
    row.update_gradient = get_number("update_gradient");
    row.direction_agreement = get_number("direction_agreement");
    if (auto it = entry.find("benchmarks"); it != entry.end()) {
      if (!it->is_object()) {
        throw SchemaError(path.string() + ": \"benchmarks\" must map names to scores");
      }
      for (const auto& [name, score] : it->items()) {
        if (!score.is_number()) {
          throw SchemaError(path.string() + ": benchmark \"" + name + "\" must be a number");
        }
        row.benchmark_scores[name] = score.get<double>();
      }
    }
    check_row(row);
    out.push_back(std::move(row));
  }
  return out;
}

std::string render_model_table(std::span<const ModelComparisonRow> rows) {
  std::size_t label_width = std::string("model").size();
  for (const auto& row : rows) label_width = std::max(label_width, row.label.size());

  std::ostringstream out;
  auto emit = [&](const std::string& label, const std::string& params, const std::string& bcc,
                  const std::string& gradient, const std::string& agreement) {
    out << label << std::string(label_width - label.size(), ' ');
    auto pad = [&](const std::string& cell, std::size_t width) {
      if (cell.size() < width) out << std::string(width - cell.size(), ' ');
      out << cell;
    };
    pad(params, 12);
    pad(bcc, 9);
    pad(gradient, 11);
    pad(agreement, 13);
    out << "\n";
  };
  emit("model", "params (B)", "bcc", "gradient", "agreement%");
  for (const auto& row : rows) {
    emit(row.label, fmt3(row.params_billions), fmt3(row.bcc), fmt3(row.update_gradient),
         fmt1(row.direction_agreement));
  }
  return out.str();
}

void emit_model_table(std::span<const ModelComparisonRow> rows,
                      const std::filesystem::path& out_dir) {
  for (const auto& row : rows) check_row(row);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw SinkError("cannot create output directory " + out_dir.string());

  atomic_write_file(out_dir / "model_table.txt", render_model_table(rows));

  std::set<std::string> benchmark_names;
  for (const auto& row : rows) {
    for (const auto& [name, _] : row.benchmark_scores) benchmark_names.insert(name);
  }

  std::string csv = "label,params_billions,bcc,update_gradient,direction_agreement";
  for (const auto& name : benchmark_names) {
    csv += ',';
    csv += csv_escape(name);
  }
  csv += '\n';
  for (const auto& row : rows) {
    csv += csv_escape(row.label);
    csv += ',';
    csv += format_double(row.params_billions);
    csv += ',';
    csv += format_double(row.bcc);
    csv += ',';
    csv += format_double(row.update_gradient);
    csv += ',';
    csv += format_double(row.direction_agreement);
    for (const auto& name : benchmark_names) {
      csv += ',';
      auto it = row.benchmark_scores.find(name);
      if (it != row.benchmark_scores.end()) csv += format_double(it->second);
    }
    csv += '\n';
  }
  atomic_write_file(out_dir / "model_table.csv", csv);

  std::string scaling = "label,log10_params,bcc\n";
  for (const auto& row : rows) {
    scaling += csv_escape(row.label);
    scaling += ',';
    scaling += format_double(std::log10(row.params_billions));
    scaling += ',';
    scaling += format_double(row.bcc);
    scaling += '\n';
  }
  atomic_write_file(out_dir / "scaling_points.csv", scaling);

  std::string benchmarks = "benchmark,label,score,bcc\n";
  for (const auto& name : benchmark_names) {
    for (const auto& row : rows) {
      auto it = row.benchmark_scores.find(name);
      if (it == row.benchmark_scores.end()) continue;
      benchmarks += csv_escape(name);
      benchmarks += ',';
      benchmarks += csv_escape(row.label);
      benchmarks += ',';
      benchmarks += format_double(it->second);
      benchmarks += ',';
      benchmarks += format_double(row.bcc);
      benchmarks += '\n';
    }
  }
  atomic_write_file(out_dir / "benchmark_points.csv", benchmarks);
}

}  // namespace bayescoh
