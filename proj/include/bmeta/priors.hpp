#pragma once

#include "bmeta/data_model.hpp"

namespace bmeta {

// Vague hyperpriors on the pooled effect and the systematic difference.
// Half-normal priors are parameterized by the scale of the underlying normal.
struct HyperPriors {
  double d_pos_mean = 0.0;
  double d_pos_sd = 100.0;
  double tau_pos_halfnormal_sd = 10.0;
  double mu_beta_mean = 0.0;
  double mu_beta_sd = 100.0;
  double tau_beta_halfnormal_sd = 10.0;

  void validate() const;
};

// Method of moments: alpha = m*s, beta = (1-m)*s with s = m(1-m)/v - 1.
ProportionPrior beta_from_moments(double mean, double variance);

// Binomial proportion k/n with variance p(1-p)/n, fed to beta_from_moments.
ProportionPrior beta_from_counts(long n_negative, long n_known);

// Treats [low, high] as mean +/- 2 sd.
ProportionPrior beta_from_range(double low, double high);

}  // namespace bmeta
