#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bmeta/data_model.hpp"
#include "bmeta/mcmc.hpp"
#include "bmeta/priors.hpp"

namespace bmeta {

// M1: positive-subgroup REMA. M2: adds the systematic difference learned from
// studies reporting both subgroups. M2NEG: M2 plus negative-only studies.
// M3: M2 plus mixed-population studies interpolated through the proportion.
enum class ModelKind { kM1, kM2, kM2Neg, kM3 };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);  // m1|m2|m2neg|m3

enum class UpdateScheme {
  // Metropolis on (tau, p) against the posterior with every location
  // parameter integrated out, then one joint Gaussian draw of all locations.
  kCollapsed,
  // One-at-a-time conjugate draws of each location parameter and Metropolis
  // on (tau, p) against the full joint density.
  kSingleSite,
};

struct ModelOptions {
  UpdateScheme scheme = UpdateScheme::kCollapsed;
  // Holding a between-study scale fixed turns the model into a pure-normal one.
  std::optional<double> fixed_tau_pos;
  std::optional<double> fixed_tau_beta;
};

// The studies each model consumes from a full dataset. M1 keeps positive
// estimates only; M2 drops mixed and negative-only studies; M2NEG drops mixed
// studies; M3 keeps everything.
MetaDataset model_view(ModelKind kind, const MetaDataset& dataset);

// Throws ConfigurationError listing the blocks a model needs.
void check_compatible(ModelKind kind, const BlockCounts& counts);

// Positions of each symbol in the flat parameter vector
// [d_pos, tau_pos, mu_beta, tau_beta, delta_pos..., beta..., p...].
struct ParameterLayout {
  std::size_t d_pos = 0;
  std::size_t tau_pos = 1;
  std::optional<std::size_t> mu_beta;
  std::optional<std::size_t> tau_beta;
  std::vector<std::size_t> delta_pos;               // one per study
  std::vector<std::optional<std::size_t>> beta;     // studies with a negative or mixed estimate
  std::vector<std::optional<std::size_t>> proportion;  // mixed studies
  std::vector<std::string> names;
  std::vector<mcmc::Support> supports;

  std::size_t size() const { return names.size(); }
};

struct NormalConditional {
  double mean = 0.0;
  double precision = 0.0;
  double sd() const;
};

class BoundModel {
 public:
  // `dataset` must already be the model's view; see model_view().
  BoundModel(ModelKind kind, MetaDataset dataset, HyperPriors hyperpriors,
             ModelOptions options = {});

  ModelKind kind() const { return kind_; }
  const MetaDataset& dataset() const { return dataset_; }
  const HyperPriors& hyperpriors() const { return hyperpriors_; }
  const ModelOptions& options() const { return options_; }
  const ParameterLayout& layout() const { return layout_; }

  // Full log joint density (normalized normal, half-normal and beta terms).
  // Out-of-support parameters give -infinity.
  double log_joint(std::span<const double> theta) const;

  // Log posterior of (tau_pos, tau_beta, p) up to a constant, with d_pos,
  // mu_beta, delta_pos and beta integrated out. Reads only those entries.
  double log_marginal(std::span<const double> theta) const;

  // Full conditional of one location parameter (d_pos, mu_beta, a delta_pos
  // or a beta entry) given the rest of theta.
  NormalConditional conditional(std::span<const double> theta, std::size_t index) const;

  // Draws every location parameter jointly from p(locations | tau, p, y).
  void draw_locations(std::span<double> theta, Rng& rng) const;

  std::vector<double> initial_state() const;
  mcmc::TargetModel target() const;

 private:
  ModelKind kind_;
  MetaDataset dataset_;
  HyperPriors hyperpriors_;
  ModelOptions options_;
  ParameterLayout layout_;
};

// Reported rows: d_pos, tau_pos_sq and, when present, mu_beta, tau_beta_sq.
inline constexpr const char* kDPos = "d_pos";
inline constexpr const char* kTauPosSq = "tau_pos_sq";
inline constexpr const char* kMuBeta = "mu_beta";
inline constexpr const char* kTauBetaSq = "tau_beta_sq";

struct FitResult {
  ModelKind kind;
  BlockCounts blocks_used;
  mcmc::PosteriorSummary summary;
  mcmc::ChainSet chains;
};

// Binds the model to its view of the dataset, samples, and summarizes.
// With `headline_only` only d_pos, tau_pos_sq, mu_beta and tau_beta_sq are
// summarized.
FitResult fit(ModelKind kind, const MetaDataset& dataset, const HyperPriors& hyperpriors,
              const mcmc::SamplerConfig& config, const ModelOptions& options = {},
              bool headline_only = false);

}  // namespace bmeta
