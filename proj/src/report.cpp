#include "bmeta/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "bmeta/csv.hpp"
#include "bmeta/errors.hpp"
#include "bmeta/rng.hpp"

namespace bmeta {

std::string to_string(Population p) {
  switch (p) {
    case Population::kPositive: return "positive";
    case Population::kNegative: return "negative";
    case Population::kMixed: return "mixed";
    case Population::kPooled: return "pooled";
  }
  return "?";
}

static Population parse_population(const std::string& text) {
  for (Population p : {Population::kPositive, Population::kNegative, Population::kMixed,
                       Population::kPooled})
    if (to_string(p) == text) return p;
  throw ValidationError("unknown population '" + text + "'");
}

void ForestRow::validate() const {
  if (!std::isfinite(estimate) || !std::isfinite(lower) || !std::isfinite(upper))
    throw ValidationError("forest row '" + label + "' has non-finite values");
  if (!(lower <= estimate && estimate <= upper))
    throw ValidationError("forest row '" + label + "' violates lower <= estimate <= upper");
}

namespace {

constexpr double kWidth = 820.0;
constexpr double kPlotLeft = 300.0;
constexpr double kPlotRight = 780.0;
constexpr double kTop = 56.0;
constexpr double kRowHeight = 24.0;
constexpr double kGroupGap = 18.0;
constexpr double kBottom = 56.0;
constexpr double kMinTickGap = 36.0;

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

std::string colour(Population p) {
  switch (p) {
    case Population::kPositive: return "#1b7837";
    case Population::kNegative: return "#b2182b";
    case Population::kMixed: return "#2166ac";
    case Population::kPooled: return "#000000";
  }
  return "#000000";
}

}  // namespace

ForestLayout layout_forest(const std::vector<ForestRow>& rows) {
  if (rows.empty()) throw ValidationError("forest plot needs at least one row");
  for (const auto& r : rows) r.validate();
  double lo = 0.0, hi = 0.0;
  for (const auto& r : rows) {
    lo = std::min(lo, r.lower);
    hi = std::max(hi, r.upper);
  }
  const double pad = std::max(0.05 * (hi - lo), 0.05);
  ForestLayout L;
  L.axis_log_min = lo - pad;
  L.axis_log_max = hi + pad;
  L.width = kWidth;
  const auto x = [&](double v) {
    return kPlotLeft + (v - L.axis_log_min) / (L.axis_log_max - L.axis_log_min) * (kPlotRight - kPlotLeft);
  };
  L.x_null = x(0.0);
  double y = kTop;
  bool previous_pooled = rows.front().population == Population::kPooled;
  for (const auto& r : rows) {
    const bool pooled = r.population == Population::kPooled;
    if (pooled != previous_pooled) y += kGroupGap;
    previous_pooled = pooled;
    y += kRowHeight;
    L.rows.push_back({y, x(r.estimate), x(r.lower), x(r.upper)});
  }
  L.height = y + kBottom;
  return L;
}

std::string render_forest_svg(const std::vector<ForestRow>& rows, const std::string& title) {
  const ForestLayout L = layout_forest(rows);
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(L.width) + "\" height=\"" +
         fixed(L.height) + "\" viewBox=\"0 0 " + fixed(L.width) + " " + fixed(L.height) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect x=\"0.00\" y=\"0.00\" width=\"" + fixed(L.width) + "\" height=\"" + fixed(L.height) +
         "\" fill=\"#ffffff\"/>\n";
  if (!title.empty())
    svg += "<text x=\"10.00\" y=\"22.00\" font-size=\"14\" font-weight=\"bold\">" + escape(title) +
           "</text>\n";
  double legend_x = kPlotLeft;
  for (Population p : {Population::kPositive, Population::kNegative, Population::kMixed,
                       Population::kPooled}) {
    svg += "<rect class=\"legend\" x=\"" + fixed(legend_x) + "\" y=\"32.00\" width=\"8.00\" "
           "height=\"8.00\" fill=\"" + colour(p) + "\"/>\n";
    svg += "<text x=\"" + fixed(legend_x + 12.0) + "\" y=\"40.00\">" + to_string(p) + "</text>\n";
    legend_x += 90.0;
  }
  const double axis_y = L.height - kBottom + 10.0;
  svg += "<line class=\"null-line\" x1=\"" + fixed(L.x_null) + "\" y1=\"" + fixed(kTop) +
         "\" x2=\"" + fixed(L.x_null) + "\" y2=\"" + fixed(axis_y) +
         "\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>\n";
  svg += "<line class=\"axis\" x1=\"" + fixed(kPlotLeft) + "\" y1=\"" + fixed(axis_y) + "\" x2=\"" +
         fixed(kPlotRight) + "\" y2=\"" + fixed(axis_y) + "\" stroke=\"#000000\"/>\n";
  double last_tick = -1e9;
  for (double hr : {0.125, 0.25, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.25, 1.5, 2.0, 3.0, 4.0, 8.0}) {
    const double v = std::log(hr);
    if (v < L.axis_log_min || v > L.axis_log_max) continue;
    const double xt = kPlotLeft + (v - L.axis_log_min) / (L.axis_log_max - L.axis_log_min) *
                                      (kPlotRight - kPlotLeft);
    if (xt - last_tick < kMinTickGap) continue;
    last_tick = xt;
    char label[16];
    std::snprintf(label, sizeof(label), "%g", hr);
    svg += "<line class=\"tick\" x1=\"" + fixed(xt) + "\" y1=\"" + fixed(axis_y) + "\" x2=\"" +
           fixed(xt) + "\" y2=\"" + fixed(axis_y + 5.0) + "\" stroke=\"#000000\"/>\n";
    svg += "<text x=\"" + fixed(xt) + "\" y=\"" + fixed(axis_y + 18.0) +
           "\" text-anchor=\"middle\">" + label + "</text>\n";
  }
  svg += "<text x=\"" + fixed((kPlotLeft + kPlotRight) / 2.0) + "\" y=\"" + fixed(axis_y + 36.0) +
         "\" text-anchor=\"middle\">Hazard ratio (log scale)</text>\n";

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const auto& g = L.rows[i];
    const std::string c = colour(r.population);
    std::string label = r.label;
    if (!r.model.empty()) label += " [" + r.model + "]";
    svg += "<text x=\"10.00\" y=\"" + fixed(g.y + 4.0) + "\">" + escape(label) + "</text>\n";
    svg += "<line class=\"whisker\" x1=\"" + fixed(g.x_lower) + "\" y1=\"" + fixed(g.y) +
           "\" x2=\"" + fixed(g.x_estimate) + "\" y2=\"" + fixed(g.y) + "\" stroke=\"" + c +
           "\" stroke-width=\"1.5\"/>\n";
    svg += "<line class=\"whisker\" x1=\"" + fixed(g.x_estimate) + "\" y1=\"" + fixed(g.y) +
           "\" x2=\"" + fixed(g.x_upper) + "\" y2=\"" + fixed(g.y) + "\" stroke=\"" + c +
           "\" stroke-width=\"1.5\"/>\n";
    if (r.population == Population::kPooled) {
      svg += "<polygon class=\"marker\" points=\"" + fixed(g.x_estimate - 6.0) + "," + fixed(g.y) +
             " " + fixed(g.x_estimate) + "," + fixed(g.y - 6.0) + " " + fixed(g.x_estimate + 6.0) +
             "," + fixed(g.y) + " " + fixed(g.x_estimate) + "," + fixed(g.y + 6.0) + "\" fill=\"" +
             c + "\"/>\n";
    } else {
      svg += "<rect class=\"marker\" x=\"" + fixed(g.x_estimate - 4.0) + "\" y=\"" +
             fixed(g.y - 4.0) + "\" width=\"8.00\" height=\"8.00\" fill=\"" + c + "\"/>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

void render_forest(const std::vector<ForestRow>& rows, const std::string& path,
                   const std::string& title) {
  csv::write_file(path, render_forest_svg(rows, title));
}

std::string serialize_forest_rows(const std::vector<ForestRow>& rows) {
  std::string out = "label,estimate,lower,upper,population,model\n";
  for (const auto& r : rows)
    out += csv::join({r.label, csv::format(r.estimate), csv::format(r.lower), csv::format(r.upper),
                      to_string(r.population), r.model}) +
           "\n";
  return out;
}

std::vector<ForestRow> parse_forest_rows(const std::string& text) {
  std::vector<ForestRow> rows;
  std::size_t pos = 0;
  int line_no = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line(csv::trim(std::string_view(text).substr(pos, end - pos)));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      if (line != "label,estimate,lower,upper,population,model")
        throw ParseError("expected forest header", line_no, 1);
      continue;
    }
    const auto cells = csv::split(line);
    if (cells.size() != 6) throw ParseError("expected 6 cells", line_no, 1);
    ForestRow r;
    r.label = cells[0];
    try {
      r.estimate = std::stod(cells[1]);
      r.lower = std::stod(cells[2]);
      r.upper = std::stod(cells[3]);
    } catch (const std::exception&) {
      throw ParseError("malformed number", line_no, 2);
    }
    r.population = parse_population(cells[4]);
    r.model = cells[5];
    r.validate();
    rows.push_back(r);
  }
  return rows;
}

std::string format_summary_table(const std::vector<FitResult>& fits, bool hr_scale) {
  std::vector<std::string> header{"parameter"};
  for (const auto& f : fits)
    for (const char* col : {"_mean", "_median", "_lo", "_hi"}) header.push_back(to_string(f.kind) + col);
  std::string out = csv::join(header) + "\n";
  for (const char* name : {kDPos, kTauPosSq, kMuBeta, kTauBetaSq}) {
    const bool location = std::string(name) == kDPos || std::string(name) == kMuBeta;
    const auto scale = [&](double v) { return hr_scale && location ? std::exp(v) : v; };
    std::vector<std::string> cells{name};
    for (const auto& f : fits) {
      const auto* s = f.summary.find(name);
      if (!s) {
        cells.insert(cells.end(), 4, "NA");
        continue;
      }
      for (double v : {s->mean, s->median, s->lower, s->upper}) cells.push_back(csv::format(scale(v)));
    }
    out += csv::join(cells) + "\n";
  }
  return out;
}

std::string format_posterior_summary(const mcmc::PosteriorSummary& summary, bool hr_scale) {
  std::string out = "parameter,mean,median,sd,lower,upper,rhat,ess,mcse_mean\n";
  for (const auto& p : summary.parameters) {
    const bool location = p.name == kDPos || p.name == kMuBeta;
    const auto scale = [&](double v) { return hr_scale && location ? std::exp(v) : v; };
    out += csv::join({p.name, csv::format(scale(p.mean)), csv::format(scale(p.median)),
                      csv::format(p.sd), csv::format(scale(p.lower)), csv::format(scale(p.upper)),
                      csv::format_optional(p.rhat), csv::format(p.ess), csv::format(p.mcse_mean)}) +
           "\n";
  }
  return out;
}

std::string to_string(Outcome o) { return o == Outcome::kPFS ? "pfs" : "os"; }
std::string to_string(Variant v) { return v == Variant::kMain ? "main" : "sens"; }

static std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

Outcome parse_outcome(const std::string& text) {
  const auto t = lower(text);
  if (t == "pfs") return Outcome::kPFS;
  if (t == "os") return Outcome::kOS;
  throw ConfigurationError("unknown outcome '" + text + "' (expected PFS or OS)");
}

Variant parse_variant(const std::string& text) {
  const auto t = lower(text);
  if (t == "main") return Variant::kMain;
  if (t == "sens" || t == "sensitivity") return Variant::kSensitivity;
  throw ConfigurationError("unknown variant '" + text + "' (expected main or sensitivity)");
}

std::string bundled_dataset_path(Outcome outcome, Variant variant, const std::string& data_dir) {
  return (std::filesystem::path(data_dir) /
          ("mcrc_" + to_string(outcome) + "_" + to_string(variant) + ".csv"))
      .string();
}

std::vector<ForestRow> forest_rows(const MetaDataset& dataset, const std::vector<FitResult>& fits) {
  std::vector<ForestRow> rows;
  const auto observed = [&](const std::string& id, const EffectEstimate& e, Population p) {
    rows.push_back({id, e.y, e.y - 1.959963984540054 * e.se, e.y + 1.959963984540054 * e.se, p, ""});
  };
  for (const auto& s : dataset.studies()) {
    if (s.positive) observed(s.study_id, *s.positive, Population::kPositive);
    if (s.negative) observed(s.study_id, *s.negative, Population::kNegative);
    if (s.mixed) observed(s.study_id, *s.mixed, Population::kMixed);
  }
  for (const auto& f : fits) {
    const auto& d = f.summary[kDPos];
    const double est = std::clamp(d.median, d.lower, d.upper);
    rows.push_back({"Pooled positive-subgroup effect", est, d.lower, d.upper, Population::kPooled,
                    to_string(f.kind)});
  }
  return rows;
}

ExampleResult reproduce_example(Outcome outcome, Variant variant, const mcmc::SamplerConfig& config,
                                bool hr_scale, const std::string& data_dir, double rhat_gate) {
  ExampleResult result;
  result.dataset = load_dataset(bundled_dataset_path(outcome, variant, data_dir));
  std::uint64_t k = 0;
  for (ModelKind kind : {ModelKind::kM1, ModelKind::kM2, ModelKind::kM3}) {
    mcmc::SamplerConfig cfg = config;
    cfg.seed = splitmix64(config.seed + k++);
    auto fit_result = fit(kind, result.dataset, HyperPriors{}, cfg, {}, true);
    const auto& d = fit_result.summary[kDPos];
    if (d.rhat && !(*d.rhat < rhat_gate))
      throw ConvergenceError(to_string(kind) + ": split-Rhat of d_pos is " + csv::format(*d.rhat));
    result.fits.push_back(std::move(fit_result));
  }
  result.forest = forest_rows(result.dataset, result.fits);
  result.table_csv = format_summary_table(result.fits, hr_scale);
  return result;
}

void write_example(const ExampleResult& result, const std::string& directory,
                   const std::string& prefix) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory + ": " + ec.message());
  const std::filesystem::path dir(directory);
  csv::write_file((dir / (prefix + "_table.csv")).string(), result.table_csv);
  csv::write_file((dir / (prefix + "_forest.csv")).string(), serialize_forest_rows(result.forest));
  render_forest(result.forest, (dir / (prefix + "_forest.svg")).string(), prefix);
}

}  // namespace bmeta
