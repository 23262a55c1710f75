#pragma once

#include <string>
#include <vector>

#include "bmeta/meta_models.hpp"

namespace bmeta {

enum class Population { kPositive, kNegative, kMixed, kPooled };
std::string to_string(Population population);

// One line of a forest plot, on the log scale.
struct ForestRow {
  std::string label;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  Population population = Population::kPooled;
  std::string model;  // empty for observed rows

  void validate() const;  // lower <= estimate <= upper
};

// Horizontal pixel positions of one rendered row.
struct ForestGeometry {
  double y = 0.0;
  double x_estimate = 0.0;
  double x_lower = 0.0;
  double x_upper = 0.0;
};

struct ForestLayout {
  double width = 0.0;
  double height = 0.0;
  double x_null = 0.0;  // HR = 1
  double axis_log_min = 0.0;
  double axis_log_max = 0.0;
  std::vector<ForestGeometry> rows;
};

ForestLayout layout_forest(const std::vector<ForestRow>& rows);

// Deterministic SVG: fixed layout constants, fixed-precision coordinates.
std::string render_forest_svg(const std::vector<ForestRow>& rows, const std::string& title = "");
void render_forest(const std::vector<ForestRow>& rows, const std::string& path,
                   const std::string& title = "");

// forest CSV: label,estimate,lower,upper,population,model
std::string serialize_forest_rows(const std::vector<ForestRow>& rows);
std::vector<ForestRow> parse_forest_rows(const std::string& text);

// Rows d_pos, tau_pos_sq, mu_beta, tau_beta_sq; four columns per fit
// (mean, median, 2.5%, 97.5%). With hr_scale the d_pos and mu_beta rows are
// exponentiated.
std::string format_summary_table(const std::vector<FitResult>& fits, bool hr_scale = false);

// summary CSV: parameter,mean,median,sd,lower,upper,rhat,ess,mcse_mean
std::string format_posterior_summary(const mcmc::PosteriorSummary& summary, bool hr_scale = false);

enum class Outcome { kPFS, kOS };
enum class Variant { kMain, kSensitivity };
std::string to_string(Outcome outcome);
std::string to_string(Variant variant);
Outcome parse_outcome(const std::string& text);
Variant parse_variant(const std::string& text);

std::string bundled_dataset_path(Outcome outcome, Variant variant,
                                 const std::string& data_dir = BMETA_DATA_DIR);

struct ExampleResult {
  MetaDataset dataset;
  std::vector<FitResult> fits;  // M1, M2, M3
  std::vector<ForestRow> forest;
  std::string table_csv;
};

// Fits M1, M2 and M3 to a bundled dataset. Throws ConvergenceError when any
// d_pos split-Rhat reaches `rhat_gate`.
ExampleResult reproduce_example(Outcome outcome, Variant variant,
                                const mcmc::SamplerConfig& config, bool hr_scale = false,
                                const std::string& data_dir = BMETA_DATA_DIR,
                                double rhat_gate = 1.05);

// Writes <prefix>_table.csv, <prefix>_forest.csv and <prefix>_forest.svg.
void write_example(const ExampleResult& result, const std::string& directory,
                   const std::string& prefix);

std::vector<ForestRow> forest_rows(const MetaDataset& dataset, const std::vector<FitResult>& fits);

}  // namespace bmeta
