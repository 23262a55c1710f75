#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bmeta/data_model.hpp"
#include "bmeta/mcmc.hpp"
#include "bmeta/survival_sim.hpp"

namespace bmeta {

struct ScenarioSpec {
  std::string scenario_id;
  int n_studies = 15;
  int n_studies_pos = 5;
  int n_studies_both = 5;
  int n_studies_mix = 5;
  double mu_beta = 0.25;
  double tau_beta_sq = 0.01;
  double d_pos = -0.25;
  double tau_pos_sq = 0.0056;
  // Per-trial constants; delta_pos/delta_neg are overwritten per study.
  GenerationParams generation;

  void validate() const;
};

// The 21 scenarios S1..S21 of the simulation grid.
std::vector<ScenarioSpec> scenario_table();
ScenarioSpec find_scenario(const std::string& id);  // throws ConfigurationError

struct MetaReplication {
  MetaDataset unadjusted;  // mixed studies carry the treatment-only Cox estimate
  MetaDataset adjusted;    // mixed studies carry the biomarker-adjusted estimate
  std::vector<double> delta_pos_true;
  std::vector<double> beta_true;
  int regenerations = 0;   // trials regenerated after a failed fit
};

// Studies are ordered positive-only, both subgroups, then mixed. A trial whose
// fits fail is regenerated from a fresh stream, at most `max_regenerations`
// times in total.
MetaReplication generate_meta_replication(const ScenarioSpec& spec, std::uint64_t seed,
                                          std::uint64_t replication,
                                          int max_regenerations = 100);

enum class Method { kM1, kM2, kM3Unadjusted, kM3Adjusted };
inline constexpr Method kAllMethods[] = {Method::kM1, Method::kM2, Method::kM3Unadjusted,
                                         Method::kM3Adjusted};
std::string to_string(Method method);
Method parse_method(const std::string& text);

struct ReplicationResult {
  std::string scenario;
  long replication = 0;
  Method method = Method::kM1;
  double d_pos_est = 0.0;  // posterior mean
  double cri_lo = 0.0;
  double cri_hi = 0.0;
  bool converged = true;   // split-Rhat of d_pos below the gate
  double d_pos_true = 0.0;
};

struct MethodPerformance {
  Method method = Method::kM1;
  double pct_bias = 0.0;
  double mcse_bias = 0.0;
  double coverage = 0.0;
  double mcse_coverage = 0.0;
  double mean_width = 0.0;
  double mcse_width = 0.0;
  long n_reps = 0;
  double nonconverged_fraction = 0.0;
  bool flagged_nonconverged = false;  // more than 5% of reps failed the gate
};

struct PerformanceReport {
  std::string scenario;
  std::vector<MethodPerformance> methods;
  int regenerations = 0;

  const MethodPerformance& operator[](Method method) const;
};

struct StudyOptions {
  std::uint64_t seed = 20240101;
  int workers = 1;
  double rhat_gate = 1.05;
  int max_regenerations = 100;
  // When set, per-replication rows are appended here in replication order.
  std::optional<std::string> results_path;
  // Reuse rows already in results_path for this scenario.
  bool resume = false;
};

// Compensated, order-independent aggregation of per-replication rows.
PerformanceReport aggregate(const std::string& scenario, std::vector<ReplicationResult> rows,
                            double d_pos_true);

PerformanceReport run_scenario(const ScenarioSpec& spec, long n_replications,
                               const mcmc::SamplerConfig& config,
                               const StudyOptions& options = {});

inline constexpr const char* kResultsHeader =
    "scenario,replication,method,d_pos_est,cri_lo,cri_hi,converged,d_pos_true";
inline constexpr const char* kReportHeader =
    "scenario,method,pct_bias,coverage,mean_width,mcse_bias,n_reps";

std::string format_result_row(const ReplicationResult& row);
std::vector<ReplicationResult> parse_results(const std::string& text);
std::string format_report(const std::vector<PerformanceReport>& reports);

}  // namespace bmeta
