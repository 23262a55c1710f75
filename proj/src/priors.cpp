#include "bmeta/priors.hpp"

#include <cmath>
#include <string>

#include "bmeta/errors.hpp"

namespace bmeta {

void HyperPriors::validate() const {
  for (double sd : {d_pos_sd, tau_pos_halfnormal_sd, mu_beta_sd, tau_beta_halfnormal_sd})
    if (!std::isfinite(sd) || !(sd > 0.0))
      throw ConfigurationError("hyperprior scales must be positive");
  if (!std::isfinite(d_pos_mean) || !std::isfinite(mu_beta_mean))
    throw ConfigurationError("hyperprior means must be finite");
}

ProportionPrior beta_from_moments(double mean, double variance) {
  if (!(mean > 0.0 && mean < 1.0))
    throw ValidationError("mean must lie strictly inside (0, 1)");
  if (!(variance > 0.0) || !std::isfinite(variance))
    throw ValidationError("variance must be positive");
  const double bernoulli_var = mean * (1.0 - mean);
  if (variance >= bernoulli_var) throw ValidationError("variance too large for beta");
  const double concentration = bernoulli_var / variance - 1.0;
  return ProportionPrior(mean * concentration, (1.0 - mean) * concentration);
}

ProportionPrior beta_from_counts(long n_negative, long n_known) {
  if (n_known <= 0 || n_negative < 0 || n_negative > n_known)
    throw ValidationError("counts must satisfy 0 <= k <= n with n > 0");
  if (n_negative == 0 || n_negative == n_known)
    throw ValidationError("degenerate proportion: " + std::to_string(n_negative) + " of " +
                          std::to_string(n_known));
  const double p = static_cast<double>(n_negative) / static_cast<double>(n_known);
  return beta_from_moments(p, p * (1.0 - p) / static_cast<double>(n_known));
}

ProportionPrior beta_from_range(double low, double high) {
  if (!(low > 0.0 && low < high && high < 1.0))
    throw ValidationError("range must satisfy 0 < low < high < 1");
  const double sd = (high - low) / 4.0;
  return beta_from_moments((low + high) / 2.0, sd * sd);
}

}  // namespace bmeta
