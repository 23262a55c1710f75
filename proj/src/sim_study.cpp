#include "bmeta/sim_study.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "bmeta/csv.hpp"
#include "bmeta/errors.hpp"
#include "bmeta/meta_models.hpp"
#include "bmeta/priors.hpp"

namespace bmeta {

void ScenarioSpec::validate() const {
  if (n_studies_pos < 0 || n_studies_both < 0 || n_studies_mix < 0)
    throw ConfigurationError(scenario_id + ": study counts must be non-negative");
  if (n_studies_pos + n_studies_both + n_studies_mix != n_studies)
    throw ConfigurationError(scenario_id + ": block counts must sum to n_studies");
  if (n_studies_both < 1)
    throw ConfigurationError(scenario_id + ": M2 needs at least one study reporting both subgroups");
  if (!(tau_beta_sq >= 0.0) || !(tau_pos_sq >= 0.0))
    throw ConfigurationError(scenario_id + ": variances must be non-negative");
  generation.validate();
}

std::vector<ScenarioSpec> scenario_table() {
  struct Row {
    int n, pos, both, mix;
    double mu_beta, tau_beta_sq;
  };
  static constexpr Row kRows[] = {
      {15, 5, 5, 5, 0.25, 0.01},  {15, 4, 6, 5, 0.25, 0.01},  {15, 3, 7, 5, 0.25, 0.01},
      {15, 2, 8, 5, 0.25, 0.01},  {15, 1, 9, 5, 0.25, 0.01},  {15, 4, 5, 6, 0.25, 0.01},
      {15, 3, 5, 7, 0.25, 0.01},  {15, 2, 5, 8, 0.25, 0.01},  {15, 1, 5, 9, 0.25, 0.01},
      {15, 5, 5, 5, 0.5, 0.01},   {15, 5, 5, 5, 0.75, 0.01},  {15, 5, 5, 5, 1.0, 0.01},
      {15, 5, 5, 5, 1.25, 0.01},  {15, 5, 5, 5, 0.25, 0.05},  {15, 5, 5, 5, 0.25, 0.1},
      {15, 5, 5, 5, 0.25, 0.2},   {15, 5, 5, 5, 0.25, 0.3},   {9, 3, 3, 3, 0.25, 0.01},
      {30, 10, 10, 10, 0.25, 0.01}, {60, 20, 20, 20, 0.25, 0.01}, {90, 30, 30, 30, 0.25, 0.01},
  };
  std::vector<ScenarioSpec> out;
  int index = 1;
  for (const auto& r : kRows) {
    ScenarioSpec s;
    s.scenario_id = "S" + std::to_string(index++);
    s.n_studies = r.n;
    s.n_studies_pos = r.pos;
    s.n_studies_both = r.both;
    s.n_studies_mix = r.mix;
    s.mu_beta = r.mu_beta;
    s.tau_beta_sq = r.tau_beta_sq;
    out.push_back(s);
  }
  return out;
}

ScenarioSpec find_scenario(const std::string& id) {
  for (auto& s : scenario_table())
    if (s.scenario_id == id) return s;
  throw ConfigurationError("unknown scenario '" + id + "' (expected S1..S21)");
}

namespace {

// Stable key for stream derivation: the scenario number, or FNV-1a of the id.
std::uint64_t scenario_key(const std::string& id) {
  if (id.size() > 1 && id[0] == 'S' &&
      std::all_of(id.begin() + 1, id.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return std::stoull(id.substr(1));
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string study_label(int i) {
  std::string n = std::to_string(i + 1);
  return "study" + std::string(n.size() < 2 ? 2 - n.size() : 0, '0') + n;
}

}  // namespace

MetaReplication generate_meta_replication(const ScenarioSpec& spec, std::uint64_t seed,
                                          std::uint64_t replication, int max_regenerations) {
  spec.validate();
  const std::uint64_t key = scenario_key(spec.scenario_id);
  MetaReplication out;
  Rng truth_rng = make_stream(seed, {key, replication});
  for (int i = 0; i < spec.n_studies; ++i) {
    out.delta_pos_true.push_back(draw_normal(truth_rng, spec.d_pos, std::sqrt(spec.tau_pos_sq)));
    out.beta_true.push_back(draw_normal(truth_rng, spec.mu_beta, std::sqrt(spec.tau_beta_sq)));
  }

  std::vector<StudyRecord> unadjusted, adjusted;
  for (int i = 0; i < spec.n_studies; ++i) {
    const Reporting reporting = i < spec.n_studies_pos ? Reporting::kPositiveOnly
                                : i < spec.n_studies_pos + spec.n_studies_both
                                    ? Reporting::kBoth
                                    : Reporting::kMixed;
    GenerationParams params = spec.generation;
    params.delta_pos = out.delta_pos_true[static_cast<std::size_t>(i)];
    params.delta_neg = params.delta_pos + out.beta_true[static_cast<std::size_t>(i)];
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng = make_stream(seed, {key, replication, static_cast<std::uint64_t>(i) + 1, attempt});
      const TrialIPD ipd = generate_trial(params, rng);
      try {
        StudyRecord plain = make_study_record(ipd, reporting, MixedAdjustment::kUnadjusted,
                                              study_label(i));
        StudyRecord adj = reporting == Reporting::kMixed
                              ? make_study_record(ipd, reporting, MixedAdjustment::kAdjusted,
                                                  study_label(i))
                              : plain;
        unadjusted.push_back(std::move(plain));
        adjusted.push_back(std::move(adj));
        break;
      } catch (const NonConvergenceError& e) {
        if (++out.regenerations > max_regenerations)
          throw ConvergenceError(spec.scenario_id + ": regeneration cap exceeded (" + e.what() + ")");
      }
    }
  }
  out.unadjusted = MetaDataset(std::move(unadjusted));
  out.adjusted = MetaDataset(std::move(adjusted));
  return out;
}

std::string to_string(Method method) {
  switch (method) {
    case Method::kM1: return "M1";
    case Method::kM2: return "M2";
    case Method::kM3Unadjusted: return "M3-unadj";
    case Method::kM3Adjusted: return "M3-adj";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  for (Method m : kAllMethods)
    if (to_string(m) == text) return m;
  throw ValidationError("unknown method '" + text + "'");
}

const MethodPerformance& PerformanceReport::operator[](Method method) const {
  for (const auto& m : methods)
    if (m.method == method) return m;
  throw std::out_of_range("method " + to_string(method) + " not in report");
}

namespace {

// Neumaier summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      compensation_ += (sum_ - t) + x;
    else
      compensation_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

struct Moments {
  double mean = 0.0;
  double mcse = 0.0;
};

Moments moments(const std::vector<double>& values) {
  CompensatedSum sum;
  for (double v : values) sum.add(v);
  const double n = static_cast<double>(values.size());
  const double mean = sum.value() / n;
  CompensatedSum sq;
  for (double v : values) sq.add((v - mean) * (v - mean));
  const double var = values.size() > 1 ? sq.value() / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

}  // namespace

PerformanceReport aggregate(const std::string& scenario, std::vector<ReplicationResult> rows,
                            double d_pos_true) {
  if (d_pos_true == 0.0) throw ConfigurationError("zero truth: use absolute bias");
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a.method, a.replication) < std::tie(b.method, b.replication);
  });
  PerformanceReport report;
  report.scenario = scenario;
  for (Method method : kAllMethods) {
    std::vector<double> bias, covered, width;
    long nonconverged = 0;
    for (const auto& r : rows) {
      if (r.method != method) continue;
      bias.push_back(100.0 * (r.d_pos_est - d_pos_true) / d_pos_true);
      covered.push_back(r.cri_lo <= d_pos_true && d_pos_true <= r.cri_hi ? 1.0 : 0.0);
      width.push_back(r.cri_hi - r.cri_lo);
      if (!r.converged) ++nonconverged;
    }
    if (bias.empty()) continue;
    MethodPerformance m;
    m.method = method;
    m.n_reps = static_cast<long>(bias.size());
    const auto b = moments(bias), c = moments(covered), w = moments(width);
    m.pct_bias = b.mean;
    m.mcse_bias = b.mcse;
    m.coverage = c.mean;
    m.mcse_coverage = std::sqrt(c.mean * (1.0 - c.mean) / static_cast<double>(m.n_reps));
    m.mean_width = w.mean;
    m.mcse_width = w.mcse;
    m.nonconverged_fraction = static_cast<double>(nonconverged) / static_cast<double>(m.n_reps);
    m.flagged_nonconverged = m.nonconverged_fraction > 0.05;
    report.methods.push_back(m);
  }
  return report;
}

std::string format_result_row(const ReplicationResult& r) {
  return csv::join({r.scenario, std::to_string(r.replication), to_string(r.method),
                    csv::format(r.d_pos_est), csv::format(r.cri_lo), csv::format(r.cri_hi),
                    r.converged ? "1" : "0", csv::format(r.d_pos_true)});
}

std::vector<ReplicationResult> parse_results(const std::string& text) {
  std::vector<ReplicationResult> rows;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line(csv::trim(std::string_view(text).substr(pos, end - pos)));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line == kResultsHeader) continue;
    const auto cells = csv::split(line);
    // A torn final line from an interrupted run is dropped.
    if (cells.size() != 8) continue;
    try {
      ReplicationResult r;
      r.scenario = cells[0];
      r.replication = std::stol(cells[1]);
      r.method = parse_method(cells[2]);
      r.d_pos_est = std::stod(cells[3]);
      r.cri_lo = std::stod(cells[4]);
      r.cri_hi = std::stod(cells[5]);
      r.converged = cells[6] == "1";
      r.d_pos_true = std::stod(cells[7]);
      rows.push_back(r);
    } catch (const std::exception&) {
      throw ParseError("malformed results row", line_no, 1);
    }
  }
  return rows;
}

std::string format_report(const std::vector<PerformanceReport>& reports) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& rep : reports)
    for (const auto& m : rep.methods)
      out += csv::join({rep.scenario, to_string(m.method), csv::format(m.pct_bias),
                        csv::format(m.coverage), csv::format(m.mean_width),
                        csv::format(m.mcse_bias), std::to_string(m.n_reps)}) +
             "\n";
  return out;
}

namespace {

ModelKind kind_of(Method m) {
  switch (m) {
    case Method::kM1: return ModelKind::kM1;
    case Method::kM2: return ModelKind::kM2;
    default: return ModelKind::kM3;
  }
}

struct ReplicationOutcome {
  std::vector<ReplicationResult> rows;
  int regenerations = 0;
};

ReplicationOutcome run_replication(const ScenarioSpec& spec, long rep,
                                   const mcmc::SamplerConfig& config, const StudyOptions& options) {
  const auto data = generate_meta_replication(spec, options.seed, static_cast<std::uint64_t>(rep),
                                              options.max_regenerations);
  ReplicationOutcome out;
  out.regenerations = data.regenerations;
  const std::uint64_t key = scenario_key(spec.scenario_id);
  for (Method method : kAllMethods) {
    mcmc::SamplerConfig cfg = config;
    cfg.workers = 1;
    cfg.seed = splitmix64(options.seed ^ splitmix64(key)) ^
               splitmix64(static_cast<std::uint64_t>(rep) * 8 + static_cast<std::uint64_t>(method) + 1);
    const MetaDataset& dataset = method == Method::kM3Adjusted ? data.adjusted : data.unadjusted;
    const auto result = fit(kind_of(method), dataset, HyperPriors{}, cfg, {}, true);
    const auto& d = result.summary[kDPos];
    ReplicationResult row;
    row.scenario = spec.scenario_id;
    row.replication = rep;
    row.method = method;
    row.d_pos_est = d.mean;
    row.cri_lo = d.lower;
    row.cri_hi = d.upper;
    row.converged = !d.rhat || *d.rhat < options.rhat_gate;
    row.d_pos_true = spec.d_pos;
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace

PerformanceReport run_scenario(const ScenarioSpec& spec, long n_replications,
                               const mcmc::SamplerConfig& config, const StudyOptions& options) {
  spec.validate();
  config.validate();
  if (n_replications < 2) throw ConfigurationError("need at least 2 replications");
  if (spec.d_pos == 0.0) throw ConfigurationError("zero truth: use absolute bias");

  std::vector<ReplicationResult> rows;
  std::set<long> done;
  if (options.results_path) {
    const auto& path = *options.results_path;
    const bool exists = std::filesystem::exists(path);
    if (options.resume && exists) {
      const std::string existing = csv::read_file(path);
      // terminate a torn final line so appended rows start cleanly
      if (!existing.empty() && existing.back() != '\n') {
        std::ofstream out(path, std::ios::app);
        out << '\n';
      }
      std::map<long, int> methods_seen;
      for (auto& r : parse_results(existing))
        if (r.scenario == spec.scenario_id && r.replication < n_replications) {
          // Later duplicates of a key are ignored so a resumed run stays idempotent.
          const bool duplicate = std::any_of(rows.begin(), rows.end(), [&](const auto& o) {
            return o.replication == r.replication && o.method == r.method;
          });
          if (duplicate) continue;
          ++methods_seen[r.replication];
          rows.push_back(r);
        }
      for (const auto& [rep, count] : methods_seen)
        if (count == static_cast<int>(std::size(kAllMethods))) done.insert(rep);
      std::erase_if(rows, [&](const auto& r) { return !done.count(r.replication); });
    } else {
      std::ofstream out(path, std::ios::trunc);
      if (!out) throw IoError("cannot open " + path);
      out << kResultsHeader << '\n';
    }
  }

  std::vector<long> todo;
  for (long rep = 0; rep < n_replications; ++rep)
    if (!done.count(rep)) todo.push_back(rep);

  std::vector<std::optional<ReplicationOutcome>> slots(todo.size());
  std::vector<std::exception_ptr> errors(todo.size());
  std::mutex mutex;
  std::size_t flushed = 0;
  std::ofstream results_file;
  if (options.results_path) {
    results_file.open(*options.results_path, std::ios::app);
    if (!results_file) throw IoError("cannot open " + *options.results_path);
  }
  const auto flush_ready = [&] {
    while (flushed < slots.size() && (slots[flushed] || errors[flushed])) {
      if (slots[flushed] && results_file.is_open()) {
        for (const auto& r : slots[flushed]->rows) results_file << format_result_row(r) << '\n';
        results_file.flush();
      }
      ++flushed;
    }
  };

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      std::optional<ReplicationOutcome> outcome;
      std::exception_ptr error;
      try {
        outcome = run_replication(spec, todo[k], config, options);
      } catch (...) {
        error = std::current_exception();
      }
      std::lock_guard lock(mutex);
      slots[k] = std::move(outcome);
      errors[k] = error;
      flush_ready();
    }
  };
  const int n_workers = std::max(1, std::min<int>(options.workers, static_cast<int>(todo.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  int regenerations = 0;
  for (auto& slot : slots) {
    regenerations += slot->regenerations;
    rows.insert(rows.end(), slot->rows.begin(), slot->rows.end());
  }
  if (regenerations > options.max_regenerations)
    throw ConvergenceError(spec.scenario_id + ": more than " +
                           std::to_string(options.max_regenerations) + " trials regenerated");
  PerformanceReport report = aggregate(spec.scenario_id, std::move(rows), spec.d_pos);
  report.regenerations = regenerations;
  return report;
}

}  // namespace bmeta
