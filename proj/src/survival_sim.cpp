#include "bmeta/survival_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bmeta/csv.hpp"
#include "bmeta/errors.hpp"
#include "bmeta/priors.hpp"

namespace bmeta {

std::size_t TrialIPD::count_negative() const {
  return static_cast<std::size_t>(std::count_if(
      subjects.begin(), subjects.end(), [](const Subject& s) { return s.biomarker_negative; }));
}

TrialIPD TrialIPD::stratum(bool biomarker_negative) const {
  TrialIPD out;
  out.p_negative = p_negative;
  for (const auto& s : subjects)
    if (s.biomarker_negative == biomarker_negative) out.subjects.push_back(s);
  return out;
}

void GenerationParams::validate() const {
  if (!(baseline_rate > 0.0) || !std::isfinite(baseline_rate))
    throw ConfigurationError("baseline hazard must be positive");
  if (n_participants < 4) throw ConfigurationError("need at least 4 participants");
  if (!(p_trt > 0.0 && p_trt < 1.0)) throw ConfigurationError("p_trt must lie in (0, 1)");
  if (fixed_p_neg && !(*fixed_p_neg >= 0.0 && *fixed_p_neg <= 1.0))
    throw ConfigurationError("fixed p_neg must lie in [0, 1]");
  if (censor_time && !(*censor_time > 0.0))
    throw ConfigurationError("censoring time must be positive");
  if (!std::isfinite(delta_pos) || !std::isfinite(delta_neg))
    throw ConfigurationError("true effects must be finite");
}

TrialIPD generate_trial(const GenerationParams& params, Rng& rng) {
  params.validate();
  TrialIPD ipd;
  ipd.p_negative = params.fixed_p_neg
                       ? *params.fixed_p_neg
                       : draw_beta(rng, params.p_neg_prior.alpha, params.p_neg_prior.beta);
  ipd.subjects.reserve(static_cast<std::size_t>(params.n_participants));
  for (int j = 0; j < params.n_participants; ++j) {
    Subject s;
    s.biomarker_negative = draw_uniform(rng) < ipd.p_negative;
    s.treated = draw_uniform(rng) < params.p_trt;
    const double delta = s.biomarker_negative ? params.delta_neg : params.delta_pos;
    const double rate = params.baseline_rate * (s.treated ? std::exp(delta) : 1.0);
    s.time = draw_exponential(rng, rate);
    s.event = true;
    if (params.censor_time && s.time > *params.censor_time) {
      s.time = *params.censor_time;
      s.event = false;
    }
    ipd.subjects.push_back(s);
  }
  return ipd;
}

namespace {

struct PartialLikelihood {
  double log_lik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
};

// `order` lists subjects by decreasing time so risk sets grow as we scan.
PartialLikelihood evaluate(std::span<const double> time, std::span<const int> event,
                           const Eigen::MatrixXd& x, const Eigen::VectorXd& b,
                           const std::vector<std::size_t>& order) {
  const auto p = x.cols();
  PartialLikelihood out;
  out.score = Eigen::VectorXd::Zero(p);
  out.information = Eigen::MatrixXd::Zero(p, p);
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  const Eigen::VectorXd eta = x * b;
  std::size_t k = 0;
  const std::size_t n = order.size();
  while (k < n) {
    // Admit every subject tied at this time before scoring its events.
    std::size_t end = k;
    const double t = time[order[k]];
    while (end < n && time[order[end]] == t) {
      const std::size_t i = order[end];
      const double w = std::exp(eta(i));
      s0 += w;
      s1 += w * x.row(i).transpose();
      s2 += w * x.row(i).transpose() * x.row(i);
      ++end;
    }
    for (std::size_t m = k; m < end; ++m) {
      const std::size_t i = order[m];
      if (!event[i]) continue;
      const Eigen::VectorXd mean = s1 / s0;
      out.log_lik += eta(i) - std::log(s0);
      out.score += x.row(i).transpose() - mean;
      out.information += s2 / s0 - mean * mean.transpose();
    }
    k = end;
  }
  return out;
}

std::vector<std::size_t> descending_order(std::span<const double> time) {
  std::vector<std::size_t> order(time.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return time[a] > time[b]; });
  return order;
}

}  // namespace

double cox_log_partial_likelihood(std::span<const double> time, std::span<const int> event,
                                  const Eigen::MatrixXd& covariates,
                                  const Eigen::VectorXd& coefficients) {
  return evaluate(time, event, covariates, coefficients, descending_order(time)).log_lik;
}

CoxFit fit_cox(std::span<const double> time, std::span<const int> event,
               const Eigen::MatrixXd& x) {
  const auto n = static_cast<Eigen::Index>(time.size());
  if (x.rows() != n || static_cast<Eigen::Index>(event.size()) != n)
    throw ValidationError("time, event and covariates differ in length");
  const long events = std::count_if(event.begin(), event.end(), [](int e) { return e != 0; });
  if (events < 2) throw ValidationError("Cox fit needs at least two events");
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    if ((x.col(c).array() == x(0, c)).all())
      throw ValidationError("degenerate design: covariate " + std::to_string(c + 1) +
                            " is constant");
  if (x.cols() > 1) {
    Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(centered);
    if (lu.rank() < x.cols()) throw ValidationError("degenerate design: collinear covariates");
  }

  const auto order = descending_order(time);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(x.cols());
  auto current = evaluate(time, event, x, b, order);
  CoxFit fit;
  constexpr int kMaxIterations = 50;
  constexpr double kMaxStandardError = 100.0;
  constexpr double kDivergence = 20.0;
  for (int iter = 1; iter <= kMaxIterations; ++iter) {
    fit.iterations = iter;
    if (current.score.cwiseAbs().maxCoeff() < 1e-8) break;
    const Eigen::LDLT<Eigen::MatrixXd> solver(current.information);
    if (solver.info() != Eigen::Success || !(solver.vectorD().array() > 0.0).all()) break;
    const Eigen::VectorXd step = solver.solve(current.score);
    double scale = 1.0;
    PartialLikelihood next;
    Eigen::VectorXd candidate;
    for (int halving = 0; halving < 30; ++halving) {
      candidate = b + scale * step;
      next = evaluate(time, event, x, candidate, order);
      if (std::isfinite(next.log_lik) && next.log_lik >= current.log_lik - 1e-12) break;
      scale /= 2.0;
    }
    const double change = std::abs(next.log_lik - current.log_lik) /
                          std::max(1.0, std::abs(current.log_lik));
    b = candidate;
    current = std::move(next);
    if (change < 1e-10 || b.cwiseAbs().maxCoeff() > kDivergence) break;
  }

  fit.coefficients.assign(b.data(), b.data() + b.size());
  fit.score.assign(current.score.data(), current.score.data() + current.score.size());
  fit.log_likelihood = current.log_lik;
  fit.converged = current.score.cwiseAbs().maxCoeff() < 1e-6 &&
                  b.cwiseAbs().maxCoeff() <= kDivergence;
  const Eigen::LDLT<Eigen::MatrixXd> solver(current.information);
  if (fit.converged && solver.info() == Eigen::Success && (solver.vectorD().array() > 0.0).all()) {
    const Eigen::MatrixXd cov =
        solver.solve(Eigen::MatrixXd::Identity(x.cols(), x.cols()));
    for (Eigen::Index c = 0; c < x.cols(); ++c) fit.standard_errors.push_back(std::sqrt(cov(c, c)));
    // a huge SE means the likelihood is monotone (e.g. no events in one arm)
    for (double se : fit.standard_errors)
      if (!(se <= kMaxStandardError)) fit.converged = false;
  } else {
    fit.converged = false;
  }
  return fit;
}

CoxFit fit_cox(const TrialIPD& ipd, CoxCovariates covariates) {
  const std::size_t n = ipd.subjects.size();
  std::vector<double> time(n);
  std::vector<int> event(n);
  const Eigen::Index p = covariates == CoxCovariates::kTreatment ? 1 : 2;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = ipd.subjects[i];
    time[i] = s.time;
    event[i] = s.event ? 1 : 0;
    const auto r = static_cast<Eigen::Index>(i);
    x(r, 0) = s.treated ? 1.0 : 0.0;
    if (p == 2) x(r, 1) = s.biomarker_negative ? 1.0 : 0.0;
  }
  return fit_cox(time, event, x);
}

namespace {

EffectEstimate treatment_effect(const TrialIPD& ipd, CoxCovariates covariates,
                                const char* population) {
  CoxFit fit;
  try {
    fit = fit_cox(ipd, covariates);
  } catch (const ValidationError& e) {
    throw NonConvergenceError(std::string(population) + " fit: " + e.what());
  }
  if (!fit.converged) throw NonConvergenceError(std::string(population) + " fit did not converge");
  return EffectEstimate(fit.coefficients[0], fit.standard_errors[0]);
}

ProportionPrior counts_prior(const TrialIPD& ipd) {
  try {
    return beta_from_counts(static_cast<long>(ipd.count_negative()),
                            static_cast<long>(ipd.subjects.size()));
  } catch (const ValidationError& e) {
    throw NonConvergenceError(std::string("proportion prior: ") + e.what());
  }
}

}  // namespace

TrialEstimates estimate_trial(const TrialIPD& ipd) {
  return TrialEstimates{
      treatment_effect(ipd.stratum(false), CoxCovariates::kTreatment, "positive subgroup"),
      treatment_effect(ipd.stratum(true), CoxCovariates::kTreatment, "negative subgroup"),
      treatment_effect(ipd, CoxCovariates::kTreatment, "mixed population"),
      treatment_effect(ipd, CoxCovariates::kTreatmentAndBiomarker, "adjusted mixed population"),
      counts_prior(ipd)};
}

StudyRecord make_study_record(const TrialEstimates& e, Reporting reporting,
                              MixedAdjustment adjustment, std::string study_id) {
  StudyRecord r;
  r.study_id = std::move(study_id);
  switch (reporting) {
    case Reporting::kPositiveOnly: r.positive = e.positive; break;
    case Reporting::kBoth:
      r.positive = e.positive;
      r.negative = e.negative;
      break;
    case Reporting::kNegativeOnly: r.negative = e.negative; break;
    case Reporting::kMixed:
      r.mixed = adjustment == MixedAdjustment::kAdjusted ? e.mixed_adjusted : e.mixed_unadjusted;
      r.proportion_prior = e.proportion_prior;
      break;
  }
  r.validate();
  return r;
}

StudyRecord make_study_record(const TrialIPD& ipd, Reporting reporting,
                              MixedAdjustment adjustment, std::string study_id) {
  StudyRecord r;
  r.study_id = std::move(study_id);
  if (reporting == Reporting::kPositiveOnly || reporting == Reporting::kBoth)
    r.positive = treatment_effect(ipd.stratum(false), CoxCovariates::kTreatment, "positive subgroup");
  if (reporting == Reporting::kNegativeOnly || reporting == Reporting::kBoth)
    r.negative = treatment_effect(ipd.stratum(true), CoxCovariates::kTreatment, "negative subgroup");
  if (reporting == Reporting::kMixed) {
    r.mixed = treatment_effect(ipd,
                               adjustment == MixedAdjustment::kAdjusted
                                   ? CoxCovariates::kTreatmentAndBiomarker
                                   : CoxCovariates::kTreatment,
                               "mixed population");
    r.proportion_prior = counts_prior(ipd);
  }
  r.validate();
  return r;
}

std::string serialize_ipd(const TrialIPD& ipd) {
  std::string out = "id,time,event,trt,biomarker_negative\n";
  for (std::size_t i = 0; i < ipd.subjects.size(); ++i) {
    const auto& s = ipd.subjects[i];
    out += std::to_string(i + 1) + ',' + csv::format(s.time) + ',' + (s.event ? "1" : "0") + ',' +
           (s.treated ? "1" : "0") + ',' + (s.biomarker_negative ? "1" : "0") + '\n';
  }
  return out;
}

}  // namespace bmeta
