#pragma once
// Independent reference computations shared by the unit and acceptance tests.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "bmeta/meta_models.hpp"

namespace oracle {

inline double log_half_normal(double x, double s) {
  return std::log(2.0) - 0.5 * std::log(2 * std::numbers::pi * s * s) - 0.5 * x * x / (s * s);
}

inline double log_beta_pdf(double x, double a, double b) {
  return (a - 1) * std::log(x) + (b - 1) * std::log1p(-x) + std::lgamma(a + b) - std::lgamma(a) -
         std::lgamma(b);
}

inline double log_mvn(const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                      const Eigen::MatrixXd& cov) {
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::VectorXd r = y - mean;
  const Eigen::VectorXd z = llt.matrixL().solve(r);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (y.size() * std::log(2 * std::numbers::pi) + logdet + z.squaredNorm());
}

struct Obs {
  std::size_t study;
  double y, var, coef;
  bool has_beta;
};

inline std::vector<Obs> stack(const bmeta::BoundModel& m, std::span<const double> theta) {
  const auto& L = m.layout();
  std::vector<Obs> out;
  for (std::size_t i = 0; i < m.dataset().size(); ++i) {
    const auto& s = m.dataset()[i];
    const bool hb = L.beta[i].has_value();
    const double p = L.proportion[i] ? theta[*L.proportion[i]] : 0.0;
    if (s.positive) out.push_back({i, s.positive->y, s.positive->variance(), 0.0, hb});
    if (s.negative) out.push_back({i, s.negative->y, s.negative->variance(), 1.0, hb});
    if (s.mixed) out.push_back({i, s.mixed->y, s.mixed->variance(), p, hb});
  }
  return out;
}

// log p(y | tau, tau_beta, p) + log priors of (tau, tau_beta, p), with every
// location integrated out analytically as one multivariate normal over the
// stacked observations.
inline double log_marginal(const bmeta::BoundModel& m, std::span<const double> theta) {
  const auto& L = m.layout();
  const auto& H = m.hyperpriors();
  const auto obs = stack(m, theta);
  const double t2 = theta[L.tau_pos] * theta[L.tau_pos];
  const double tb2 = L.tau_beta ? theta[*L.tau_beta] * theta[*L.tau_beta] : 0.0;
  const double sd2 = H.d_pos_sd * H.d_pos_sd;
  const double sm2 = L.mu_beta ? H.mu_beta_sd * H.mu_beta_sd : 0.0;
  const auto n = static_cast<Eigen::Index>(obs.size());
  Eigen::VectorXd y(n), mean(n);
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    y(a) = obs[a].y;
    mean(a) = H.d_pos_mean + obs[a].coef * (L.mu_beta ? H.mu_beta_mean : 0.0);
    for (Eigen::Index b = 0; b < n; ++b) {
      double c = sd2 + obs[a].coef * obs[b].coef * sm2;
      if (obs[a].study == obs[b].study)
        c += t2 + (obs[a].has_beta ? obs[a].coef * obs[b].coef * tb2 : 0.0);
      if (a == b) c += obs[a].var;
      cov(a, b) = c;
    }
  }
  double lp = log_mvn(y, mean, cov) + log_half_normal(theta[L.tau_pos], H.tau_pos_halfnormal_sd);
  if (L.tau_beta) lp += log_half_normal(theta[*L.tau_beta], H.tau_beta_halfnormal_sd);
  for (std::size_t i = 0; i < m.dataset().size(); ++i)
    if (L.proportion[i]) {
      const auto& pr = *m.dataset()[i].proportion_prior;
      lp += log_beta_pdf(theta[*L.proportion[i]], pr.alpha, pr.beta);
    }
  return lp;
}

// Gaussian posterior of all location parameters given (tau, tau_beta, p),
// assembled term by term as a precision matrix over `index`.
struct GaussianPosterior {
  std::vector<std::size_t> index;  // positions in theta
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  Eigen::MatrixXd precision;
  Eigen::VectorXd shift;
};

inline GaussianPosterior location_posterior(const bmeta::BoundModel& m,
                                            std::span<const double> theta) {
  const auto& L = m.layout();
  const auto& H = m.hyperpriors();
  GaussianPosterior g;
  g.index.push_back(L.d_pos);
  if (L.mu_beta) g.index.push_back(*L.mu_beta);
  for (auto i : L.delta_pos) g.index.push_back(i);
  for (const auto& b : L.beta)
    if (b) g.index.push_back(*b);
  const auto k = static_cast<Eigen::Index>(g.index.size());
  const auto pos = [&](std::size_t j) {
    for (Eigen::Index q = 0; q < k; ++q)
      if (g.index[q] == j) return q;
    throw std::logic_error("not a location");
  };
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(k);
  // adds the quadratic form (a'z - c)^2 / v
  const auto add = [&](const std::vector<std::pair<Eigen::Index, double>>& a, double c, double v) {
    for (auto [i, ai] : a) {
      h(i) += ai * c / v;
      for (auto [j, aj] : a) Q(i, j) += ai * aj / v;
    }
  };
  const double tau = theta[L.tau_pos];
  add({{pos(L.d_pos), 1.0}}, H.d_pos_mean, H.d_pos_sd * H.d_pos_sd);
  if (L.mu_beta) add({{pos(*L.mu_beta), 1.0}}, H.mu_beta_mean, H.mu_beta_sd * H.mu_beta_sd);
  for (std::size_t i = 0; i < m.dataset().size(); ++i) {
    const auto di = pos(L.delta_pos[i]);
    add({{di, 1.0}, {pos(L.d_pos), -1.0}}, 0.0, tau * tau);
    std::optional<Eigen::Index> bi;
    if (L.beta[i]) {
      bi = pos(*L.beta[i]);
      const double tb = theta[*L.tau_beta];
      add({{*bi, 1.0}, {pos(*L.mu_beta), -1.0}}, 0.0, tb * tb);
    }
    const auto& s = m.dataset()[i];
    const double p = L.proportion[i] ? theta[*L.proportion[i]] : 0.0;
    if (s.positive) add({{di, 1.0}}, s.positive->y, s.positive->variance());
    if (s.negative) add({{di, 1.0}, {*bi, 1.0}}, s.negative->y, s.negative->variance());
    if (s.mixed) add({{di, 1.0}, {*bi, p}}, s.mixed->y, s.mixed->variance());
  }
  g.precision = Q;
  g.shift = h;
  g.cov = Q.inverse();
  g.mean = g.cov * h;
  return g;
}

// Golden-section maximization of a unimodal function on [lo, hi].
inline double golden_max(const std::function<double(double)>& f, double lo, double hi,
                         double tol = 1e-10) {
  const double r = (std::sqrt(5.0) - 1) / 2;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return (a + b) / 2;
}

// Breslow log partial likelihood written directly from its definition:
// sum over distinct event times t of [sum_{events at t} x'b - d_t log sum_{T_j >= t} exp(x_j'b)].
inline double breslow(const std::vector<double>& time, const std::vector<int>& event,
                      const Eigen::MatrixXd& x, const Eigen::VectorXd& b) {
  double ll = 0;
  const std::size_t n = time.size();
  std::vector<double> done;
  for (std::size_t i = 0; i < n; ++i) {
    if (!event[i]) continue;
    const double t = time[i];
    bool seen = false;
    for (double u : done) seen = seen || u == t;
    if (seen) continue;
    done.push_back(t);
    double risk = 0;
    int d = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (time[j] >= t) risk += std::exp(x.row(j).dot(b));
      if (time[j] == t && event[j]) {
        ll += x.row(j).dot(b);
        ++d;
      }
    }
    ll -= d * std::log(risk);
  }
  return ll;
}

}  // namespace oracle
