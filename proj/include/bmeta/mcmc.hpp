#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

#include "bmeta/rng.hpp"

namespace bmeta::mcmc {

enum class Support { kReal, kPositive, kUnitInterval };

struct Parameter {
  std::string name;
  Support support = Support::kReal;
  // Fixed parameters keep their initial value for the whole run.
  bool fixed = false;
};

// Closed-form draw of one or more state entries from their full conditional.
struct GibbsBlock {
  std::vector<std::size_t> targets;
  std::function<void(std::span<double> state, Rng& rng)> draw;
};

// Deterministic function of the state recorded alongside the parameters.
struct DerivedQuantity {
  std::string name;
  std::function<double(std::span<const double> state)> value;
};

// Everything the sampler needs from a model. Parameters not fixed and not
// targeted by a Gibbs block are updated one at a time by adaptive random-walk
// Metropolis on the unconstrained scale (log for positive, logit for unit
// interval) against log_density, with the Jacobian added by the sampler.
// Returning -infinity rejects a proposal.
struct TargetModel {
  std::vector<Parameter> parameters;
  std::vector<double> initial_state;
  std::function<double(std::span<const double> state)> log_density;
  std::vector<GibbsBlock> gibbs_blocks;
  std::vector<DerivedQuantity> derived;
  // Gibbs blocks run before the Metropolis sweep when true. Collapsed schemes
  // need the Metropolis sweep first so the block draw conditions on it.
  bool gibbs_first = true;
};

struct SamplerConfig {
  int n_chains = 4;
  long burn_in = 50'000;
  long samples = 100'000;
  long thin = 1;
  std::uint64_t seed = 20240101;
  long adapt_window = 100;
  double target_acceptance = 0.44;
  // Chains run on this many threads; 0 means one per chain.
  int workers = 0;

  void validate() const;

  static SamplerConfig paper();  // 50k burn-in, 100k kept, 4 chains
  static SamplerConfig desk();   // 5k burn-in, 20k kept, 4 chains
};

struct ChainSet {
  std::vector<std::string> names;  // parameters, then derived quantities
  std::size_t n_parameters = 0;
  // draws[chain][iteration * names.size() + column]
  std::vector<std::vector<double>> draws;
  std::vector<std::string> metropolis_names;
  std::vector<std::vector<double>> acceptance_rates;  // [chain][metropolis param]
  std::vector<std::vector<double>> proposal_scales;   // frozen after burn-in

  std::size_t n_chains() const { return draws.size(); }
  std::size_t n_draws() const { return draws.empty() ? 0 : draws[0].size() / names.size(); }
  std::size_t column(const std::string& name) const;  // throws if unknown
  std::vector<double> chain_column(std::size_t chain, std::size_t column) const;
};

class AdaptationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InitializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Runs config.n_chains independent chains; chain c draws from
// make_stream(config.seed, {c}). Output is bit-identical for identical inputs
// regardless of the worker count.
ChainSet run_sampler(const TargetModel& model, const SamplerConfig& config);

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double median = 0.0;
  double sd = 0.0;
  double lower = 0.0;  // 2.5%
  double upper = 0.0;  // 97.5%
  std::optional<double> rhat;  // split-Rhat, absent with one chain
  double ess = 0.0;
  double mcse_mean = 0.0;

  double width() const { return upper - lower; }
};

struct PosteriorSummary {
  std::vector<ParameterSummary> parameters;
  std::vector<std::string> warnings;

  const ParameterSummary& operator[](const std::string& name) const;  // throws
  const ParameterSummary* find(const std::string& name) const;
};

// Type-7 quantile of an unsorted sample.
double quantile(std::vector<double> values, double prob);

// Split-Rhat over chains of equal length.
double split_rhat(const std::vector<std::vector<double>>& chains);

// Multi-chain effective sample size with Geyer's initial monotone sequence.
double effective_sample_size(const std::vector<std::vector<double>>& chains);

PosteriorSummary summarize(const ChainSet& chains);

// Summarizes only the named columns, in the given order.
PosteriorSummary summarize(const ChainSet& chains, const std::vector<std::string>& columns);

// Writes one CSV per chain: <directory>/<prefix>chain<k>.csv.
void write_chains(const ChainSet& chains, const std::string& directory,
                  const std::string& prefix = "");

}  // namespace bmeta::mcmc
