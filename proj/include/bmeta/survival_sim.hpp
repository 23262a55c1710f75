#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bmeta/data_model.hpp"
#include "bmeta/rng.hpp"

namespace bmeta {

struct Subject {
  double time = 0.0;
  bool event = true;
  bool treated = false;
  bool biomarker_negative = false;
};

struct TrialIPD {
  std::vector<Subject> subjects;
  double p_negative = 0.0;  // realized stratum probability for this trial

  std::size_t count_negative() const;
  TrialIPD stratum(bool biomarker_negative) const;
};

// Exponential survival with control hazard `baseline_rate` and treated
// hazard baseline_rate * exp(delta) within each biomarker stratum.
struct GenerationParams {
  int n_participants = 350;
  double p_trt = 0.5;
  double baseline_rate = 0.15;
  ProportionPrior p_neg_prior{9.2, 13.8};
  std::optional<double> fixed_p_neg;  // skips the per-trial beta draw
  double delta_pos = 0.0;
  double delta_neg = 0.0;
  std::optional<double> censor_time;  // administrative censoring

  void validate() const;
};

TrialIPD generate_trial(const GenerationParams& params, Rng& rng);

enum class CoxCovariates { kTreatment, kTreatmentAndBiomarker };

struct CoxFit {
  std::vector<double> coefficients;
  std::vector<double> standard_errors;
  std::vector<double> score;  // at the returned coefficients
  double log_likelihood = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Newton-Raphson on the Breslow partial likelihood. Throws ValidationError
// for fewer than two events or a constant or collinear design; monotone
// likelihoods come back with converged = false.
CoxFit fit_cox(std::span<const double> time, std::span<const int> event,
               const Eigen::MatrixXd& covariates);
CoxFit fit_cox(const TrialIPD& ipd, CoxCovariates covariates);

// Breslow log partial likelihood at `coefficients`; used by the fitter and
// convenient for checks.
double cox_log_partial_likelihood(std::span<const double> time, std::span<const int> event,
                                  const Eigen::MatrixXd& covariates,
                                  const Eigen::VectorXd& coefficients);

// All four effects a trial can report plus the proportion prior built from
// its realized stratum counts.
struct TrialEstimates {
  EffectEstimate positive;
  EffectEstimate negative;
  EffectEstimate mixed_unadjusted;
  EffectEstimate mixed_adjusted;
  ProportionPrior proportion_prior;
};

class NonConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws NonConvergenceError when any of the four fits fails.
TrialEstimates estimate_trial(const TrialIPD& ipd);

enum class Reporting { kPositiveOnly, kBoth, kNegativeOnly, kMixed };
enum class MixedAdjustment { kUnadjusted, kAdjusted };

StudyRecord make_study_record(const TrialEstimates& estimates, Reporting reporting,
                              MixedAdjustment adjustment, std::string study_id);
StudyRecord make_study_record(const TrialIPD& ipd, Reporting reporting,
                              MixedAdjustment adjustment, std::string study_id);

// id,time,event,trt,biomarker_negative
std::string serialize_ipd(const TrialIPD& ipd);

}  // namespace bmeta
