#include "bmeta/mcmc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <thread>

#include "bmeta/csv.hpp"
#include "bmeta/errors.hpp"

namespace bmeta::mcmc {

void SamplerConfig::validate() const {
  if (n_chains < 1) throw ConfigurationError("n_chains must be >= 1");
  if (burn_in < 0) throw ConfigurationError("burn_in must be >= 0");
  if (samples < 1) throw ConfigurationError("samples must be > 0");
  if (thin < 1) throw ConfigurationError("thin must be >= 1");
  if (samples / thin < 1) throw ConfigurationError("samples / thin must be >= 1");
  if (adapt_window < 1) throw ConfigurationError("adapt_window must be >= 1");
  if (!(target_acceptance > 0.0 && target_acceptance < 1.0))
    throw ConfigurationError("target acceptance must lie in (0, 1)");
  if (workers < 0) throw ConfigurationError("workers must be >= 0");
}

SamplerConfig SamplerConfig::paper() { return SamplerConfig{}; }

SamplerConfig SamplerConfig::desk() {
  SamplerConfig config;
  config.burn_in = 5'000;
  config.samples = 20'000;
  return config;
}

std::size_t ChainSet::column(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range("no column named " + name);
  return static_cast<std::size_t>(it - names.begin());
}

std::vector<double> ChainSet::chain_column(std::size_t chain, std::size_t col) const {
  const std::size_t width = names.size();
  const auto& d = draws.at(chain);
  std::vector<double> out(d.size() / width);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i * width + col];
  return out;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double to_unconstrained(Support support, double x) {
  switch (support) {
    case Support::kReal: return x;
    case Support::kPositive: return std::log(x);
    case Support::kUnitInterval: return std::log(x) - std::log1p(-x);
  }
  return x;
}

double to_constrained(Support support, double u) {
  switch (support) {
    case Support::kReal: return u;
    case Support::kPositive: return std::exp(u);
    case Support::kUnitInterval: return 1.0 / (1.0 + std::exp(-u));
  }
  return u;
}

bool in_support(Support support, double x) {
  if (!std::isfinite(x)) return false;
  switch (support) {
    case Support::kReal: return true;
    case Support::kPositive: return x > 0.0;
    case Support::kUnitInterval: return x > 0.0 && x < 1.0;
  }
  return false;
}

// log |dx/du| for the inverse transform.
double log_jacobian(Support support, double x) {
  switch (support) {
    case Support::kReal: return 0.0;
    case Support::kPositive: return std::log(x);
    case Support::kUnitInterval: return std::log(x) + std::log1p(-x);
  }
  return 0.0;
}

struct ChainResult {
  std::vector<double> draws;
  std::vector<double> acceptance;
  std::vector<double> scales;
};

ChainResult run_chain(const TargetModel& model, const SamplerConfig& config,
                      const std::vector<std::size_t>& metropolis, std::size_t chain) {
  Rng rng = make_stream(config.seed, {chain});
  std::vector<double> state = model.initial_state;
  const std::size_t n_param = state.size();
  const std::size_t width = n_param + model.derived.size();

  double log_density = model.log_density(state);
  if (!std::isfinite(log_density))
    throw InitializationError("log density is not finite at the initial state");

  std::vector<double> log_scale(metropolis.size(), std::log(0.5));
  std::vector<long> accepted(metropolis.size(), 0);
  std::vector<long> window_accepted(metropolis.size(), 0);

  const long retained = config.samples / config.thin;
  ChainResult result;
  result.draws.reserve(static_cast<std::size_t>(retained) * width);

  const auto metropolis_sweep = [&](long iteration, bool adapting) {
    for (std::size_t k = 0; k < metropolis.size(); ++k) {
      const std::size_t j = metropolis[k];
      const Support support = model.parameters[j].support;
      const double current = state[j];
      const double u = to_unconstrained(support, current);
      const double proposed_u = u + std::exp(log_scale[k]) * draw_normal(rng, 0.0, 1.0);
      const double proposed = to_constrained(support, proposed_u);
      double log_ratio = kNegInf;
      double proposed_density = kNegInf;
      if (in_support(support, proposed)) {
        state[j] = proposed;
        proposed_density = model.log_density(state);
        if (std::isfinite(proposed_density))
          log_ratio = proposed_density + log_jacobian(support, proposed) - log_density -
                      log_jacobian(support, current);
      }
      const bool accept = std::log(draw_uniform(rng)) < log_ratio;
      if (accept) {
        log_density = proposed_density;
        ++window_accepted[k];
        if (!adapting) ++accepted[k];
      } else {
        state[j] = current;
      }
      if (adapting) {
        const double prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
        const double gain = std::pow(static_cast<double>(iteration + 1), -0.6);
        log_scale[k] += gain * (prob - config.target_acceptance);
      }
    }
  };
  const auto gibbs_sweep = [&] {
    if (model.gibbs_blocks.empty()) return;
    for (const auto& block : model.gibbs_blocks) block.draw(state, rng);
    log_density = model.log_density(state);
  };

  const long total = config.burn_in + config.samples;
  for (long it = 0; it < total; ++it) {
    const bool adapting = it < config.burn_in;
    if (model.gibbs_first) {
      gibbs_sweep();
      metropolis_sweep(it, adapting);
    } else {
      metropolis_sweep(it, adapting);
      gibbs_sweep();
    }
    if (adapting && (it + 1) % config.adapt_window == 0) {
      for (std::size_t k = 0; k < metropolis.size(); ++k) {
        if (window_accepted[k] == 0)
          throw AdaptationError("no proposals accepted for '" +
                                model.parameters[metropolis[k]].name +
                                "' during an adaptation window");
        window_accepted[k] = 0;
      }
    }
    if (!adapting && (it - config.burn_in + 1) % config.thin == 0 &&
        (it - config.burn_in) / config.thin < retained) {
      for (std::size_t j = 0; j < n_param; ++j) result.draws.push_back(state[j]);
      for (const auto& q : model.derived) result.draws.push_back(q.value(state));
    }
  }
  for (std::size_t k = 0; k < metropolis.size(); ++k) {
    result.acceptance.push_back(static_cast<double>(accepted[k]) /
                                static_cast<double>(config.samples));
    result.scales.push_back(std::exp(log_scale[k]));
  }
  return result;
}

}  // namespace

ChainSet run_sampler(const TargetModel& model, const SamplerConfig& config) {
  config.validate();
  if (model.initial_state.size() != model.parameters.size())
    throw InitializationError("initial state does not match the parameter list");
  std::vector<bool> covered(model.parameters.size(), false);
  for (const auto& block : model.gibbs_blocks)
    for (std::size_t j : block.targets) covered.at(j) = true;
  std::vector<std::size_t> metropolis;
  for (std::size_t j = 0; j < model.parameters.size(); ++j) {
    if (!model.parameters[j].fixed &&
        !in_support(model.parameters[j].support, model.initial_state[j]))
      throw InitializationError("initial value of '" + model.parameters[j].name +
                                "' is outside its support");
    if (!covered[j] && !model.parameters[j].fixed) metropolis.push_back(j);
  }

  ChainSet out;
  for (const auto& p : model.parameters) out.names.push_back(p.name);
  for (const auto& q : model.derived) out.names.push_back(q.name);
  out.n_parameters = model.parameters.size();
  for (std::size_t j : metropolis) out.metropolis_names.push_back(model.parameters[j].name);

  const auto n_chains = static_cast<std::size_t>(config.n_chains);
  std::vector<ChainResult> results(n_chains);
  std::vector<std::exception_ptr> errors(n_chains);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t c = next++; c < n_chains; c = next++) {
      try {
        results[c] = run_chain(model, config, metropolis, c);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers =
      std::min<std::size_t>(n_chains, config.workers > 0 ? config.workers : n_chains);
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (auto& r : results) {
    out.draws.push_back(std::move(r.draws));
    out.acceptance_rates.push_back(std::move(r.acceptance));
    out.proposal_scales.push_back(std::move(r.scales));
  }
  return out;
}

double quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<long>(lo), values.end());
  const double x_lo = values[lo];
  double x_hi = x_lo;
  if (hi != lo)
    x_hi = *std::min_element(values.begin() + static_cast<long>(lo) + 1, values.end());
  return x_lo + (h - std::floor(h)) * (x_hi - x_lo);
}

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return v.size() > 1 ? s / static_cast<double>(v.size() - 1) : 0.0;
}

// Between/within decomposition for a set of equal-length chains.
struct VarianceParts {
  double within = 0.0;
  double var_plus = 0.0;
};

VarianceParts variance_parts(const std::vector<std::vector<double>>& chains) {
  const double n = static_cast<double>(chains[0].size());
  const double m = static_cast<double>(chains.size());
  std::vector<double> means;
  double within = 0.0;
  for (const auto& c : chains) {
    means.push_back(mean_of(c));
    within += variance_of(c, means.back());
  }
  within /= m;
  const double between = m > 1 ? n * variance_of(means, mean_of(means)) : 0.0;
  return {within, (n - 1.0) / n * within + between / n};
}

}  // namespace

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t half = c.size() / 2;
    halves.emplace_back(c.begin(), c.begin() + static_cast<long>(half));
    halves.emplace_back(c.end() - static_cast<long>(half), c.end());
  }
  if (halves.empty() || halves[0].size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const auto parts = variance_parts(halves);
  if (parts.within <= 0.0) return parts.var_plus <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(parts.var_plus / parts.within);
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  const std::size_t n = chains[0].size();
  const double total = static_cast<double>(n * chains.size());
  if (n < 4) return total;
  const auto parts = variance_parts(chains);
  if (parts.var_plus <= 0.0) return total;

  std::vector<double> means;
  for (const auto& c : chains) means.push_back(mean_of(c));
  const auto autocov = [&](std::size_t lag) {
    double acc = 0.0;
    for (std::size_t c = 0; c < chains.size(); ++c) {
      const auto& x = chains[c];
      double s = 0.0;
      for (std::size_t t = 0; t + lag < n; ++t) s += (x[t] - means[c]) * (x[t + lag] - means[c]);
      acc += s / static_cast<double>(n);
    }
    return acc / static_cast<double>(chains.size());
  };
  const auto rho = [&](std::size_t lag) { return 1.0 - (parts.within - autocov(lag)) / parts.var_plus; };

  // Geyer: sum pairs while positive, enforcing monotone decrease.
  double sum_pairs = 0.0;
  double previous_pair = std::numeric_limits<double>::infinity();
  for (std::size_t lag = 0; lag + 1 < n; lag += 2) {
    double pair = (lag == 0 ? 1.0 : rho(lag)) + rho(lag + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, previous_pair);
    previous_pair = pair;
    sum_pairs += pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum_pairs, 1.0 / std::log10(total));
  return total / tau;
}

PosteriorSummary summarize(const ChainSet& chains) { return summarize(chains, chains.names); }

PosteriorSummary summarize(const ChainSet& chains, const std::vector<std::string>& columns) {
  PosteriorSummary summary;
  if (chains.n_chains() < 2)
    summary.warnings.push_back("single chain: split-Rhat not reported");
  if (chains.n_draws() < 100)
    summary.warnings.push_back("fewer than 100 retained draws per chain");
  for (const auto& column_name : columns) {
    const std::size_t col = chains.column(column_name);
    std::vector<std::vector<double>> per_chain;
    std::vector<double> pooled;
    for (std::size_t c = 0; c < chains.n_chains(); ++c) {
      per_chain.push_back(chains.chain_column(c, col));
      pooled.insert(pooled.end(), per_chain.back().begin(), per_chain.back().end());
    }
    ParameterSummary s;
    s.name = chains.names[col];
    s.mean = mean_of(pooled);
    s.sd = std::sqrt(variance_of(pooled, s.mean));
    s.median = quantile(pooled, 0.5);
    s.lower = quantile(pooled, 0.025);
    s.upper = quantile(pooled, 0.975);
    if (chains.n_chains() >= 2) s.rhat = split_rhat(per_chain);
    s.ess = effective_sample_size(per_chain);
    s.mcse_mean = s.ess > 0.0 ? s.sd / std::sqrt(s.ess) : 0.0;
    summary.parameters.push_back(std::move(s));
  }
  return summary;
}

const ParameterSummary* PosteriorSummary::find(const std::string& name) const {
  for (const auto& p : parameters)
    if (p.name == name) return &p;
  return nullptr;
}

const ParameterSummary& PosteriorSummary::operator[](const std::string& name) const {
  const auto* p = find(name);
  if (!p) throw std::out_of_range("no summary for " + name);
  return *p;
}

void write_chains(const ChainSet& chains, const std::string& directory, const std::string& prefix) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory + ": " + ec.message());
  const std::size_t width = chains.names.size();
  for (std::size_t c = 0; c < chains.n_chains(); ++c) {
    std::string text = csv::join(chains.names) + "\n";
    const auto& d = chains.draws[c];
    for (std::size_t i = 0; i < d.size(); i += width) {
      for (std::size_t j = 0; j < width; ++j) {
        if (j) text += ',';
        text += csv::format(d[i + j]);
      }
      text += '\n';
    }
    csv::write_file((std::filesystem::path(directory) / (prefix + "chain" + std::to_string(c + 1) + ".csv")).string(), text);
  }
}

}  // namespace bmeta::mcmc
