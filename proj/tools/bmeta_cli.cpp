// bmeta: command-line front end for the meta-analysis models, the trial
// simulator and the simulation study harness.
//
// Exit codes: 0 ok, 2 validation, 3 convergence, 4 I/O.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bmeta/csv.hpp"
#include "bmeta/errors.hpp"
#include "bmeta/meta_models.hpp"
#include "bmeta/priors.hpp"
#include "bmeta/report.hpp"
#include "bmeta/rng.hpp"
#include "bmeta/sim_study.hpp"
#include "bmeta/survival_sim.hpp"

namespace {

using namespace bmeta;

constexpr int kExitValidation = 2;
constexpr int kExitConvergence = 3;
constexpr int kExitIo = 4;

struct SamplerFlags {
  std::string preset = "paper";
  std::optional<int> chains;
  std::optional<long> burn_in;
  std::optional<long> samples;
  std::optional<long> thin;
  std::uint64_t seed = 20240101;
  int workers = 0;

  void attach(CLI::App* cmd, const std::string& default_preset) {
    preset = default_preset;
    cmd->add_option("--preset", preset, "sampler preset")
        ->check(CLI::IsMember({"paper", "desk"}))
        ->capture_default_str();
    cmd->add_option("--chains", chains, "number of chains");
    cmd->add_option("--burn-in", burn_in, "burn-in iterations per chain");
    cmd->add_option("--samples", samples, "retained iterations per chain");
    cmd->add_option("--thin", thin, "keep every k-th draw");
    cmd->add_option("--seed", seed, "master seed")->envname("BMETA_SEED")->capture_default_str();
    cmd->add_option("--workers", workers, "threads (0 = one per chain)")
        ->envname("BMETA_WORKERS")
        ->check(CLI::NonNegativeNumber);
  }

  mcmc::SamplerConfig config() const {
    auto cfg = preset == "desk" ? mcmc::SamplerConfig::desk() : mcmc::SamplerConfig::paper();
    if (chains) cfg.n_chains = *chains;
    if (burn_in) cfg.burn_in = *burn_in;
    if (samples) cfg.samples = *samples;
    if (thin) cfg.thin = *thin;
    cfg.seed = seed;
    cfg.workers = workers;
    cfg.validate();
    return cfg;
  }
};

void print_headline(const FitResult& f, std::ostream& os) {
  os << to_string(f.kind) << ":";
  for (const char* name : {kDPos, kTauPosSq, kMuBeta, kTauBetaSq}) {
    if (const auto* p = f.summary.find(name)) {
      os << " " << name << "=" << csv::format(p->mean) << " (" << csv::format(p->lower) << ", "
         << csv::format(p->upper) << ")";
      if (p->rhat) os << " rhat=" << csv::format(*p->rhat);
    }
  }
  os << "\n";
  for (const auto& w : f.summary.warnings) os << "  warning: " << w << "\n";
}

std::string with_label_column(const std::string& table, const std::string& label) {
  std::istringstream in(table);
  std::string line, out;
  bool header = true;
  while (std::getline(in, line)) {
    out += (header ? std::string("outcome") : label) + "," + line + "\n";
    header = false;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian meta-analysis with biomarker-positive, -negative and mixed studies"};
  app.set_config("--config", "", "TOML-style key = value file; flags override it");
  app.require_subcommand(1);

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit one model to a dataset CSV");
  std::string fit_model, fit_data, fit_label = "outcome", fit_out, fit_dump;
  bool fit_hr = false;
  SamplerFlags fit_sampler;
  fit_cmd->add_option("--model", fit_model, "m1|m2|m2neg|m3")->required();
  fit_cmd->add_option("--data", fit_data, "dataset CSV")->required();
  fit_cmd->add_option("--outcome-label", fit_label, "label written to the summary")
      ->capture_default_str();
  fit_cmd->add_option("--out", fit_out, "summary CSV")->required();
  fit_cmd->add_option("--dump-chains", fit_dump, "directory for per-chain draws");
  fit_cmd->add_flag("--hr-scale", fit_hr, "exponentiate d_pos and mu_beta rows");
  fit_sampler.attach(fit_cmd, "paper");

  // priors
  auto* priors_cmd = app.add_subcommand("priors", "construct proportion priors");
  priors_cmd->require_subcommand(1);
  auto* moments_cmd = priors_cmd->add_subcommand("moments", "beta prior by method of moments");
  std::optional<double> pm_mean, pm_var;
  std::vector<long> pm_counts;
  std::vector<double> pm_range;
  auto* o_mean = moments_cmd->add_option("--mean", pm_mean, "mean proportion");
  auto* o_var = moments_cmd->add_option("--var", pm_var, "variance");
  auto* o_counts = moments_cmd->add_option("--counts", pm_counts, "k n: negatives among known")
                       ->expected(2);
  auto* o_range = moments_cmd->add_option("--range", pm_range, "lo hi: plausible range")
                      ->expected(2);
  o_mean->needs(o_var);
  o_var->needs(o_mean);
  o_mean->excludes(o_counts)->excludes(o_range);
  o_counts->excludes(o_range);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "simulate a trial or run the simulation study");
  sim_cmd->require_subcommand(1);
  auto* trial_cmd = sim_cmd->add_subcommand("trial", "one trial of individual patient data");
  GenerationParams trial_params;
  std::uint64_t trial_seed = 20240101;
  std::string trial_out;
  std::optional<double> trial_censor, trial_pneg;
  trial_cmd->add_option("--delta-pos", trial_params.delta_pos, "logHR, biomarker-positive")
      ->required();
  trial_cmd->add_option("--delta-neg", trial_params.delta_neg, "logHR, biomarker-negative")
      ->required();
  trial_cmd->add_option("--n", trial_params.n_participants, "participants")->capture_default_str();
  trial_cmd->add_option("--lambda", trial_params.baseline_rate, "baseline hazard")
      ->capture_default_str();
  trial_cmd->add_option("--p-trt", trial_params.p_trt, "allocation probability")
      ->capture_default_str();
  trial_cmd->add_option("--p-neg", trial_pneg, "fixed biomarker-negative proportion");
  trial_cmd->add_option("--censor", trial_censor, "administrative censoring time");
  trial_cmd->add_option("--seed", trial_seed, "seed")->envname("BMETA_SEED")->capture_default_str();
  trial_cmd->add_option("--out", trial_out, "IPD CSV")->required();

  auto* study_cmd = sim_cmd->add_subcommand("study", "simulation study over the scenario grid");
  std::string study_scenario = "S1", study_out, study_report;
  long study_reps = 100;
  bool study_resume = false;
  SamplerFlags study_sampler;
  study_cmd->add_option("--scenario", study_scenario, "S1..S21 or all")->capture_default_str();
  study_cmd->add_option("--reps", study_reps, "replications")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  study_cmd->add_option("--out", study_out, "per-replication results CSV")->required();
  study_cmd->add_option("--report", study_report, "performance report CSV");
  study_cmd->add_flag("--resume", study_resume, "reuse rows already in --out");
  study_sampler.attach(study_cmd, "desk");

  // reproduce-example
  auto* ex_cmd = app.add_subcommand("reproduce-example", "fit M1, M2, M3 to bundled mCRC data");
  std::string ex_outcome = "OS", ex_variant = "main", ex_dir = ".", ex_data = BMETA_DATA_DIR;
  bool ex_hr = false;
  double ex_gate = 1.05;
  SamplerFlags ex_sampler;
  ex_cmd->add_option("--outcome", ex_outcome, "PFS|OS")->capture_default_str();
  ex_cmd->add_option("--variant", ex_variant, "main|sensitivity")->capture_default_str();
  ex_cmd->add_option("--out-dir", ex_dir, "output directory")->capture_default_str();
  ex_cmd->add_option("--data-dir", ex_data, "bundled data directory");
  ex_cmd->add_option("--rhat-gate", ex_gate, "fail when d_pos split-Rhat reaches this")
      ->capture_default_str();
  ex_cmd->add_flag("--hr-scale", ex_hr, "exponentiate d_pos and mu_beta rows");
  ex_sampler.attach(ex_cmd, "paper");

  // render-forest
  auto* rf_cmd = app.add_subcommand("render-forest", "render forest rows CSV to SVG");
  std::string rf_rows, rf_out, rf_title;
  rf_cmd->add_option("--rows", rf_rows, "forest rows CSV")->required();
  rf_cmd->add_option("--out", rf_out, "SVG path")->required();
  rf_cmd->add_option("--title", rf_title, "plot title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (fit_cmd->parsed()) {
      const auto cfg = fit_sampler.config();
      const auto kind = parse_model_kind(fit_model);
      const auto dataset = load_dataset(fit_data);
      const auto result = fit(kind, dataset, HyperPriors{}, cfg);
      print_headline(result, std::cout);
      csv::write_file(fit_out,
                      with_label_column(format_posterior_summary(result.summary, fit_hr), fit_label));
      if (!fit_dump.empty()) mcmc::write_chains(result.chains, fit_dump, to_string(kind) + "_");
    } else if (moments_cmd->parsed()) {
      ProportionPrior prior = [&] {
        if (pm_mean) return beta_from_moments(*pm_mean, *pm_var);
        if (pm_counts.size() == 2) return beta_from_counts(pm_counts[0], pm_counts[1]);
        if (pm_range.size() == 2) return beta_from_range(pm_range[0], pm_range[1]);
        throw ValidationError("give --mean and --var, --counts k n, or --range lo hi");
      }();
      std::cout << "alpha,beta\n"
                << csv::format(prior.alpha) << "," << csv::format(prior.beta) << "\n";
    } else if (trial_cmd->parsed()) {
      trial_params.censor_time = trial_censor;
      trial_params.fixed_p_neg = trial_pneg;
      trial_params.validate();
      Rng rng = make_stream(trial_seed, {0});
      const auto ipd = generate_trial(trial_params, rng);
      csv::write_file(trial_out, serialize_ipd(ipd));
      std::cout << "p_negative=" << csv::format(ipd.p_negative)
                << " n_negative=" << ipd.count_negative() << "\n";
    } else if (study_cmd->parsed()) {
      auto cfg = study_sampler.config();
      StudyOptions options;
      options.seed = cfg.seed;
      options.workers = cfg.workers > 0 ? cfg.workers : 1;
      options.results_path = study_out;
      std::vector<ScenarioSpec> specs;
      if (study_scenario == "all") {
        specs = scenario_table();
        if (!study_resume) {
          csv::write_file(study_out, std::string(kResultsHeader) + "\n");
        }
        options.resume = true;
      } else {
        specs.push_back(find_scenario(study_scenario));
        options.resume = study_resume;
      }
      std::vector<PerformanceReport> reports;
      for (const auto& spec : specs) {
        reports.push_back(run_scenario(spec, study_reps, cfg, options));
        const auto& r = reports.back();
        for (const auto& m : r.methods) {
          std::cout << r.scenario << " " << to_string(m.method)
                    << " pct_bias=" << csv::format(m.pct_bias)
                    << " coverage=" << csv::format(m.coverage)
                    << " mean_width=" << csv::format(m.mean_width);
          if (m.flagged_nonconverged) std::cout << " [non-converged reps above 5%]";
          std::cout << "\n";
        }
      }
      if (!study_report.empty()) csv::write_file(study_report, format_report(reports));
    } else if (ex_cmd->parsed()) {
      const auto cfg = ex_sampler.config();
      const auto outcome = parse_outcome(ex_outcome);
      const auto variant = parse_variant(ex_variant);
      const auto result = reproduce_example(outcome, variant, cfg, ex_hr, ex_data, ex_gate);
      for (const auto& f : result.fits) print_headline(f, std::cout);
      write_example(result, ex_dir, "mcrc_" + to_string(outcome) + "_" + to_string(variant));
    } else if (rf_cmd->parsed()) {
      const auto rows = parse_forest_rows(csv::read_file(rf_rows));
      render_forest(rows, rf_out, rf_title);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ConvergenceError& e) {
    std::cerr << "convergence failure: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const mcmc::AdaptationError& e) {
    std::cerr << "convergence failure: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const mcmc::InitializationError& e) {
    std::cerr << "convergence failure: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const NonConvergenceError& e) {
    std::cerr << "convergence failure: " << e.what() << "\n";
    return kExitConvergence;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  }
  return 0;
}
