#include "bmeta/meta_models.hpp"

#include <array>
#include <cctype>
#include <stdexcept>
#include <cmath>
#include <limits>
#include <numbers>

#include "bmeta/errors.hpp"

namespace bmeta {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLogTwoPi = std::log(2.0 * std::numbers::pi);

double log_normal(double x, double mean, double variance) {
  const double r = x - mean;
  return -0.5 * (kLogTwoPi + std::log(variance)) - 0.5 * r * r / variance;
}

double log_half_normal(double x, double scale) {
  if (x < 0.0) return kNegInf;
  return std::log(2.0) + log_normal(x, 0.0, scale * scale);
}

double log_beta_density(double x, double a, double b) {
  if (!(x > 0.0 && x < 1.0)) return kNegInf;
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) + std::lgamma(a + b) -
         std::lgamma(a) - std::lgamma(b);
}

// One observed effect: y ~ N(delta_pos + coef * beta, variance), where coef is
// 0 for a positive estimate, 1 for a negative estimate and p for a mixed one.
struct Observation {
  double y;
  double variance;
  enum class Kind { kPositive, kNegative, kMixed } kind;
};

std::vector<Observation> observations(const StudyRecord& s) {
  std::vector<Observation> out;
  if (s.positive) out.push_back({s.positive->y, s.positive->variance(), Observation::Kind::kPositive});
  if (s.negative) out.push_back({s.negative->y, s.negative->variance(), Observation::Kind::kNegative});
  if (s.mixed) out.push_back({s.mixed->y, s.mixed->variance(), Observation::Kind::kMixed});
  return out;
}

double coefficient(const Observation& o, double proportion) {
  switch (o.kind) {
    case Observation::Kind::kPositive: return 0.0;
    case Observation::Kind::kNegative: return 1.0;
    case Observation::Kind::kMixed: return proportion;
  }
  return 0.0;
}

using Vec2 = std::array<double, 2>;

// Symmetric 2x2 stored as (a, b, c) = [[a, b], [b, c]].
struct Sym2 {
  double a = 0.0, b = 0.0, c = 0.0;
  double det() const { return a * c - b * b; }
  Sym2 inverse() const {
    const double d = det();
    return {c / d, -b / d, a / d};
  }
  Vec2 operator*(const Vec2& v) const { return {a * v[0] + b * v[1], b * v[0] + c * v[1]}; }
};

// Draws from N(mean, cov) for a positive semi-definite 2x2 covariance.
Vec2 draw_bivariate(Rng& rng, const Vec2& mean, const Sym2& cov) {
  const double l11 = std::sqrt(std::max(cov.a, 0.0));
  const double l21 = l11 > 0.0 ? cov.b / l11 : 0.0;
  const double l22 = std::sqrt(std::max(cov.c - l21 * l21, 0.0));
  const double z1 = draw_normal(rng, 0.0, 1.0);
  const double z2 = draw_normal(rng, 0.0, 1.0);
  return {mean[0] + l11 * z1, mean[1] + l21 * z1 + l22 * z2};
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kM1: return "M1";
    case ModelKind::kM2: return "M2";
    case ModelKind::kM2Neg: return "M2NEG";
    case ModelKind::kM3: return "M3";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& text) {
  std::string t;
  for (char c : text) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "m1") return ModelKind::kM1;
  if (t == "m2") return ModelKind::kM2;
  if (t == "m2neg") return ModelKind::kM2Neg;
  if (t == "m3") return ModelKind::kM3;
  throw ConfigurationError("unknown model '" + text + "' (expected m1|m2|m2neg|m3)");
}

MetaDataset model_view(ModelKind kind, const MetaDataset& dataset) {
  std::vector<StudyRecord> kept;
  for (const auto& s : dataset.studies()) {
    switch (kind) {
      case ModelKind::kM1:
        if (s.positive) {
          StudyRecord r;
          r.study_id = s.study_id;
          r.positive = s.positive;
          kept.push_back(std::move(r));
        }
        break;
      case ModelKind::kM2:
        if (s.block() == Block::kPositiveOnly || s.block() == Block::kBoth) kept.push_back(s);
        break;
      case ModelKind::kM2Neg:
        if (s.block() != Block::kMixed) kept.push_back(s);
        break;
      case ModelKind::kM3:
        kept.push_back(s);
        break;
    }
  }
  return MetaDataset(std::move(kept));
}

void check_compatible(ModelKind kind, const BlockCounts& c) {
  const auto fail = [&](const std::string& need) {
    throw ConfigurationError(to_string(kind) + " requires " + need + "; dataset has " +
                             std::to_string(c.positive_only) + " positive-only, " +
                             std::to_string(c.both) + " both-subgroup, " +
                             std::to_string(c.negative_only) + " negative-only and " +
                             std::to_string(c.mixed) + " mixed studies");
  };
  if (c.total() == 0) fail("at least one study");
  switch (kind) {
    case ModelKind::kM1:
      if (c.negative_only || c.mixed || c.both) fail("positive-only studies");
      break;
    case ModelKind::kM2:
      if (c.both < 1) fail("at least one study reporting both subgroups");
      if (c.negative_only || c.mixed) fail("no negative-only or mixed studies");
      break;
    case ModelKind::kM2Neg:
      if (c.both + c.negative_only < 1) fail("at least one study with a negative-subgroup estimate");
      if (c.mixed) fail("no mixed studies");
      break;
    case ModelKind::kM3:
      if (c.mixed < 1) fail("at least one mixed-population study");
      break;
  }
  if (c.positive_only + c.both == 0 && kind == ModelKind::kM1) fail("a positive-subgroup estimate");
}

double NormalConditional::sd() const { return 1.0 / std::sqrt(precision); }

BoundModel::BoundModel(ModelKind kind, MetaDataset dataset, HyperPriors hyperpriors,
                       ModelOptions options)
    : kind_(kind),
      dataset_(std::move(dataset)),
      hyperpriors_(hyperpriors),
      options_(options) {
  hyperpriors_.validate();
  check_compatible(kind_, dataset_.block_counts());
  if (options_.fixed_tau_pos && !(*options_.fixed_tau_pos >= 0.0))
    throw ConfigurationError("fixed tau_pos must be >= 0");
  if (options_.fixed_tau_beta && !(*options_.fixed_tau_beta >= 0.0))
    throw ConfigurationError("fixed tau_beta must be >= 0");
  if (options_.scheme == UpdateScheme::kSingleSite &&
      ((options_.fixed_tau_pos && *options_.fixed_tau_pos == 0.0) ||
       (options_.fixed_tau_beta && *options_.fixed_tau_beta == 0.0)))
    throw ConfigurationError("single-site updates need strictly positive between-study scales");

  const bool has_beta = kind_ != ModelKind::kM1;
  auto& L = layout_;
  const auto add = [&](const std::string& name, mcmc::Support support) {
    L.names.push_back(name);
    L.supports.push_back(support);
    return L.names.size() - 1;
  };
  L.d_pos = add("d_pos", mcmc::Support::kReal);
  L.tau_pos = add("tau_pos", mcmc::Support::kPositive);
  if (has_beta) {
    L.mu_beta = add("mu_beta", mcmc::Support::kReal);
    L.tau_beta = add("tau_beta", mcmc::Support::kPositive);
  }
  const std::size_t n = dataset_.size();
  for (std::size_t i = 0; i < n; ++i)
    L.delta_pos.push_back(add("delta_pos[" + std::to_string(i + 1) + "]", mcmc::Support::kReal));
  L.beta.assign(n, std::nullopt);
  L.proportion.assign(n, std::nullopt);
  for (std::size_t i = 0; i < n; ++i)
    if (has_beta && (dataset_[i].negative || dataset_[i].mixed))
      L.beta[i] = add("beta[" + std::to_string(i + 1) + "]", mcmc::Support::kReal);
  for (std::size_t i = 0; i < n; ++i)
    if (dataset_[i].mixed)
      L.proportion[i] = add("p[" + std::to_string(i + 1) + "]", mcmc::Support::kUnitInterval);
}

double BoundModel::log_joint(std::span<const double> theta) const {
  const auto& L = layout_;
  const auto& H = hyperpriors_;
  const double d = theta[L.d_pos];
  const double tau = theta[L.tau_pos];
  if (!(tau >= 0.0)) return kNegInf;
  double lp = log_normal(d, H.d_pos_mean, H.d_pos_sd * H.d_pos_sd) +
              log_half_normal(tau, H.tau_pos_halfnormal_sd);
  double mu = 0.0, tau_b = 0.0;
  if (L.mu_beta) {
    mu = theta[*L.mu_beta];
    tau_b = theta[*L.tau_beta];
    if (!(tau_b >= 0.0)) return kNegInf;
    lp += log_normal(mu, H.mu_beta_mean, H.mu_beta_sd * H.mu_beta_sd) +
          log_half_normal(tau_b, H.tau_beta_halfnormal_sd);
  }
  // Zero scale means a point mass: the random effect must equal its mean.
  const auto random_effect = [](double x, double mean, double scale) {
    if (scale == 0.0) return x == mean ? 0.0 : kNegInf;
    return log_normal(x, mean, scale * scale);
  };
  for (std::size_t i = 0; i < dataset_.size(); ++i) {
    const double delta = theta[L.delta_pos[i]];
    lp += random_effect(delta, d, tau);
    double beta = 0.0;
    if (L.beta[i]) {
      beta = theta[*L.beta[i]];
      lp += random_effect(beta, mu, tau_b);
    }
    double p = 0.0;
    if (L.proportion[i]) {
      p = theta[*L.proportion[i]];
      const auto& prior = *dataset_[i].proportion_prior;
      lp += log_beta_density(p, prior.alpha, prior.beta);
    }
    for (const auto& o : observations(dataset_[i]))
      lp += log_normal(o.y, delta + coefficient(o, p) * beta, o.variance);
    if (!std::isfinite(lp)) return kNegInf;
  }
  return lp;
}

namespace {

struct Collapsed {
  Sym2 precision;  // of (d_pos, mu_beta)
  Vec2 shift{};    // precision * mean
  double log_lik = 0.0;
};

}  // namespace

// Integrates each study's (delta_pos, beta) against N((d, mu), diag(tau^2,
// tau_b^2)), leaving a Gaussian likelihood in (d, mu) per study.
static Collapsed collapse(const MetaDataset& data, const ParameterLayout& L,
                          const HyperPriors& H, std::span<const double> theta, double tau,
                          double tau_b) {
  Collapsed c;
  c.precision = {1.0 / (H.d_pos_sd * H.d_pos_sd), 0.0, 1.0 / (H.mu_beta_sd * H.mu_beta_sd)};
  c.shift = {H.d_pos_mean * c.precision.a, H.mu_beta_mean * c.precision.c};
  const double t2 = tau * tau, tb2 = tau_b * tau_b;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double p = L.proportion[i] ? theta[*L.proportion[i]] : 0.0;
    const auto obs = observations(data[i]);
    if (obs.size() == 1) {
      const double k = coefficient(obs[0], p);
      const double v = t2 + k * k * tb2 + obs[0].variance;
      const double w = 1.0 / v;
      c.precision.a += w;
      c.precision.b += w * k;
      c.precision.c += w * k * k;
      c.shift[0] += w * obs[0].y;
      c.shift[1] += w * k * obs[0].y;
      c.log_lik += -0.5 * std::log(v) - 0.5 * obs[0].y * obs[0].y * w;
    } else {
      const double k0 = coefficient(obs[0], p), k1 = coefficient(obs[1], p);
      const Sym2 V{t2 + k0 * k0 * tb2 + obs[0].variance, t2 + k0 * k1 * tb2,
                   t2 + k1 * k1 * tb2 + obs[1].variance};
      const Sym2 W = V.inverse();
      const Vec2 y{obs[0].y, obs[1].y};
      const Vec2 wy = W * y;
      // R = [[1, k0], [1, k1]]
      const Vec2 w_col0 = W * Vec2{1.0, 1.0};
      const Vec2 w_col1 = W * Vec2{k0, k1};
      c.precision.a += w_col0[0] + w_col0[1];
      c.precision.b += k0 * w_col0[0] + k1 * w_col0[1];
      c.precision.c += k0 * w_col1[0] + k1 * w_col1[1];
      c.shift[0] += wy[0] + wy[1];
      c.shift[1] += k0 * wy[0] + k1 * wy[1];
      c.log_lik += -0.5 * std::log(V.det()) - 0.5 * (y[0] * wy[0] + y[1] * wy[1]);
    }
  }
  return c;
}

double BoundModel::log_marginal(std::span<const double> theta) const {
  const auto& L = layout_;
  const auto& H = hyperpriors_;
  const double tau = theta[L.tau_pos];
  if (!(tau >= 0.0)) return kNegInf;
  double lp = log_half_normal(tau, H.tau_pos_halfnormal_sd);
  double tau_b = 0.0;
  if (L.tau_beta) {
    tau_b = theta[*L.tau_beta];
    if (!(tau_b >= 0.0)) return kNegInf;
    lp += log_half_normal(tau_b, H.tau_beta_halfnormal_sd);
  }
  for (std::size_t i = 0; i < dataset_.size(); ++i) {
    if (!L.proportion[i]) continue;
    const auto& prior = *dataset_[i].proportion_prior;
    lp += log_beta_density(theta[*L.proportion[i]], prior.alpha, prior.beta);
  }
  if (!std::isfinite(lp)) return kNegInf;
  const Collapsed c = collapse(dataset_, L, H, theta, tau, tau_b);
  const Vec2 mean = c.precision.inverse() * c.shift;
  lp += c.log_lik - 0.5 * std::log(c.precision.det()) +
        0.5 * (mean[0] * c.shift[0] + mean[1] * c.shift[1]);
  return std::isfinite(lp) ? lp : kNegInf;
}

void BoundModel::draw_locations(std::span<double> theta, Rng& rng) const {
  const auto& L = layout_;
  const double tau = theta[L.tau_pos];
  const double tau_b = L.tau_beta ? theta[*L.tau_beta] : 0.0;
  const Collapsed c = collapse(dataset_, L, hyperpriors_, theta, tau, tau_b);
  const Sym2 cov = c.precision.inverse();
  const Vec2 global = draw_bivariate(rng, cov * c.shift, cov);
  theta[L.d_pos] = global[0];
  if (L.mu_beta) theta[*L.mu_beta] = global[1];

  const double t2 = tau * tau, tb2 = tau_b * tau_b;
  for (std::size_t i = 0; i < dataset_.size(); ++i) {
    const double p = L.proportion[i] ? theta[*L.proportion[i]] : 0.0;
    const auto obs = observations(dataset_[i]);
    // Prior (delta, beta) ~ N(global, D), D = diag(t2, tb2); observations
    // y = R (delta, beta) + e. Covariance-form update tolerates zero scales.
    const Sym2 D{t2, 0.0, L.beta[i] ? tb2 : 0.0};
    Vec2 mean = global;
    Sym2 post = D;
    if (obs.size() == 1) {
      const double k = coefficient(obs[0], p);
      const Vec2 dr{D.a, D.c * k};  // D R'
      const double v = t2 + k * k * D.c + obs[0].variance;
      const double resid = obs[0].y - (global[0] + k * global[1]);
      mean = {global[0] + dr[0] / v * resid, global[1] + dr[1] / v * resid};
      post = {D.a - dr[0] * dr[0] / v, -dr[0] * dr[1] / v, D.c - dr[1] * dr[1] / v};
    } else {
      const double k0 = coefficient(obs[0], p), k1 = coefficient(obs[1], p);
      const Sym2 V{t2 + k0 * k0 * D.c + obs[0].variance, t2 + k0 * k1 * D.c,
                   t2 + k1 * k1 * D.c + obs[1].variance};
      const Sym2 W = V.inverse();
      // G = D R' (2x2, rows = (delta, beta), cols = observations)
      const double g00 = D.a, g01 = D.a, g10 = D.c * k0, g11 = D.c * k1;
      const Vec2 resid{obs[0].y - (global[0] + k0 * global[1]),
                       obs[1].y - (global[0] + k1 * global[1])};
      const Vec2 wr = W * resid;
      mean = {global[0] + g00 * wr[0] + g01 * wr[1], global[1] + g10 * wr[0] + g11 * wr[1]};
      // post = D - G W G'
      const Vec2 wg0 = W * Vec2{g00, g01};
      const Vec2 wg1 = W * Vec2{g10, g11};
      post = {D.a - (g00 * wg0[0] + g01 * wg0[1]), -(g00 * wg1[0] + g01 * wg1[1]),
              D.c - (g10 * wg1[0] + g11 * wg1[1])};
    }
    const Vec2 local = draw_bivariate(rng, mean, post);
    theta[L.delta_pos[i]] = local[0];
    if (L.beta[i]) theta[*L.beta[i]] = local[1];
  }
}

NormalConditional BoundModel::conditional(std::span<const double> theta, std::size_t index) const {
  const auto& L = layout_;
  const auto& H = hyperpriors_;
  const double tau = theta[L.tau_pos];
  NormalConditional out;
  double shift = 0.0;
  if (index == L.d_pos) {
    out.precision = 1.0 / (H.d_pos_sd * H.d_pos_sd);
    shift = H.d_pos_mean * out.precision;
    for (std::size_t i : L.delta_pos) {
      out.precision += 1.0 / (tau * tau);
      shift += theta[i] / (tau * tau);
    }
  } else if (L.mu_beta && index == *L.mu_beta) {
    const double tb = theta[*L.tau_beta];
    out.precision = 1.0 / (H.mu_beta_sd * H.mu_beta_sd);
    shift = H.mu_beta_mean * out.precision;
    for (const auto& b : L.beta) {
      if (!b) continue;
      out.precision += 1.0 / (tb * tb);
      shift += theta[*b] / (tb * tb);
    }
  } else {
    bool found = false;
    for (std::size_t i = 0; i < dataset_.size() && !found; ++i) {
      const double p = L.proportion[i] ? theta[*L.proportion[i]] : 0.0;
      const double beta = L.beta[i] ? theta[*L.beta[i]] : 0.0;
      const double delta = theta[L.delta_pos[i]];
      if (index == L.delta_pos[i]) {
        found = true;
        out.precision = 1.0 / (tau * tau);
        shift = theta[L.d_pos] / (tau * tau);
        for (const auto& o : observations(dataset_[i])) {
          out.precision += 1.0 / o.variance;
          shift += (o.y - coefficient(o, p) * beta) / o.variance;
        }
      } else if (L.beta[i] && index == *L.beta[i]) {
        found = true;
        const double tb = theta[*L.tau_beta];
        out.precision = 1.0 / (tb * tb);
        shift = theta[*L.mu_beta] / (tb * tb);
        for (const auto& o : observations(dataset_[i])) {
          const double k = coefficient(o, p);
          out.precision += k * k / o.variance;
          shift += k * (o.y - delta) / o.variance;
        }
      }
    }
    if (!found) throw std::invalid_argument("parameter " + std::to_string(index) +
                                            " is not a location parameter");
  }
  out.mean = shift / out.precision;
  return out;
}

std::vector<double> BoundModel::initial_state() const {
  const auto& L = layout_;
  std::vector<double> theta(L.size(), 0.0);

  // Fixed-effect (inverse-variance) estimates as starting locations.
  double w_sum = 0.0, wy_sum = 0.0;
  for (const auto& s : dataset_.studies())
    if (s.positive) {
      w_sum += 1.0 / s.positive->variance();
      wy_sum += s.positive->y / s.positive->variance();
    }
  const double d = w_sum > 0.0 ? wy_sum / w_sum : hyperpriors_.d_pos_mean;
  double mu = 0.0;
  if (L.mu_beta) {
    double wb = 0.0, wyb = 0.0;
    for (const auto& s : dataset_.studies())
      if (s.negative) {
        const double base = s.positive ? s.positive->y : d;
        wb += 1.0 / s.negative->variance();
        wyb += (s.negative->y - base) / s.negative->variance();
      }
    mu = wb > 0.0 ? wyb / wb : hyperpriors_.mu_beta_mean;
    theta[*L.mu_beta] = mu;
    theta[*L.tau_beta] = options_.fixed_tau_beta.value_or(hyperpriors_.tau_beta_halfnormal_sd / 2.0);
  }
  theta[L.d_pos] = d;
  theta[L.tau_pos] = options_.fixed_tau_pos.value_or(hyperpriors_.tau_pos_halfnormal_sd / 2.0);
  for (std::size_t i = 0; i < dataset_.size(); ++i) {
    const auto& s = dataset_[i];
    theta[L.delta_pos[i]] = s.positive ? s.positive->y : d;
    if (L.beta[i]) theta[*L.beta[i]] = mu;
    if (L.proportion[i]) theta[*L.proportion[i]] = s.proportion_prior->mean();
  }
  if (options_.fixed_tau_pos && *options_.fixed_tau_pos == 0.0)
    for (std::size_t i : L.delta_pos) theta[i] = d;
  if (options_.fixed_tau_beta && *options_.fixed_tau_beta == 0.0)
    for (const auto& b : L.beta)
      if (b) theta[*b] = mu;
  return theta;
}

mcmc::TargetModel BoundModel::target() const {
  const auto& L = layout_;
  mcmc::TargetModel t;
  for (std::size_t j = 0; j < L.size(); ++j) t.parameters.push_back({L.names[j], L.supports[j], false});
  if (options_.fixed_tau_pos) t.parameters[L.tau_pos].fixed = true;
  if (options_.fixed_tau_beta && L.tau_beta) t.parameters[*L.tau_beta].fixed = true;
  t.initial_state = initial_state();

  std::vector<std::size_t> locations{L.d_pos};
  if (L.mu_beta) locations.push_back(*L.mu_beta);
  locations.insert(locations.end(), L.delta_pos.begin(), L.delta_pos.end());
  for (const auto& b : L.beta)
    if (b) locations.push_back(*b);

  if (options_.scheme == UpdateScheme::kCollapsed) {
    t.log_density = [this](std::span<const double> theta) { return log_marginal(theta); };
    t.gibbs_blocks.push_back(
        {locations, [this](std::span<double> theta, Rng& rng) { draw_locations(theta, rng); }});
    t.gibbs_first = false;
  } else {
    t.log_density = [this](std::span<const double> theta) { return log_joint(theta); };
    for (std::size_t j : locations)
      t.gibbs_blocks.push_back({{j}, [this, j](std::span<double> theta, Rng& rng) {
                                  const auto c = conditional(theta, j);
                                  theta[j] = draw_normal(rng, c.mean, c.sd());
                                }});
    t.gibbs_first = true;
  }

  const std::size_t tau_index = L.tau_pos;
  t.derived.push_back({kTauPosSq, [tau_index](std::span<const double> theta) {
                         return theta[tau_index] * theta[tau_index];
                       }});
  if (L.tau_beta) {
    const std::size_t tb = *L.tau_beta;
    t.derived.push_back({kTauBetaSq, [tb](std::span<const double> theta) {
                           return theta[tb] * theta[tb];
                         }});
  }
  return t;
}

FitResult fit(ModelKind kind, const MetaDataset& dataset, const HyperPriors& hyperpriors,
              const mcmc::SamplerConfig& config, const ModelOptions& options,
              bool headline_only) {
  const BoundModel model(kind, model_view(kind, dataset), hyperpriors, options);
  FitResult result;
  result.kind = kind;
  result.blocks_used = model.dataset().block_counts();
  result.chains = mcmc::run_sampler(model.target(), config);
  if (headline_only) {
    std::vector<std::string> columns{kDPos, kTauPosSq};
    if (model.layout().mu_beta) {
      columns.push_back(kMuBeta);
      columns.push_back(kTauBetaSq);
    }
    result.summary = mcmc::summarize(result.chains, columns);
  } else {
    result.summary = mcmc::summarize(result.chains);
  }
  const std::size_t dropped = dataset.size() - model.dataset().size();
  if (dropped > 0)
    result.summary.warnings.push_back(std::to_string(dropped) + " studies not used by " +
                                      to_string(kind));
  return result;
}

}  // namespace bmeta
