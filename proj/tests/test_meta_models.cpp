#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bmeta/errors.hpp"
#include "bmeta/meta_models.hpp"
#include "oracles.hpp"

using namespace bmeta;

namespace {

const char* kMixedData =
    "study,y_pos,se_pos,y_neg,se_neg,y_mix,se_mix,prop_alpha,prop_beta\n"
    "P1,-0.30,0.12,NA,NA,NA,NA,NA,NA\n"
    "P2,-0.10,0.15,NA,NA,NA,NA,NA,NA\n"
    "B1,-0.25,0.10,0.05,0.11,NA,NA,NA,NA\n"
    "B2,-0.20,0.09,0.10,0.10,NA,NA,NA,NA\n"
    "N1,NA,NA,0.20,0.14,NA,NA,NA,NA\n"
    "M1,NA,NA,NA,NA,-0.05,0.07,28,38.67\n"
    "M2,NA,NA,NA,NA,-0.12,0.08,9.2,13.8\n";

MetaDataset data() { return parse_dataset(kMixedData); }

BoundModel bind(ModelKind kind, ModelOptions options = {}) {
  return BoundModel(kind, model_view(kind, data()), HyperPriors{}, options);
}

std::vector<double> some_state(const BoundModel& m, double shift) {
  auto theta = m.initial_state();
  const auto& L = m.layout();
  for (std::size_t j = 0; j < theta.size(); ++j)
    if (L.supports[j] == mcmc::Support::kReal) theta[j] = 0.1 * std::sin(1.0 + j + shift);
  theta[L.tau_pos] = 0.2 + 0.05 * shift;
  if (L.tau_beta) theta[*L.tau_beta] = 0.3 - 0.04 * shift;
  for (const auto& p : L.proportion)
    if (p) theta[*p] = 0.35 + 0.02 * shift;
  return theta;
}

}  // namespace

TEST_CASE("model views and compatibility") {
  const auto ds = data();
  CHECK(model_view(ModelKind::kM1, ds).block_counts() == BlockCounts{4, 0, 0, 0});
  CHECK(model_view(ModelKind::kM2, ds).block_counts() == BlockCounts{2, 2, 0, 0});
  CHECK(model_view(ModelKind::kM2Neg, ds).block_counts() == BlockCounts{2, 2, 1, 0});
  CHECK(model_view(ModelKind::kM3, ds).block_counts() == ds.block_counts());
  CHECK_THROWS_WITH_AS(BoundModel(ModelKind::kM2, ds, HyperPriors{}),
                       doctest::Contains("1 negative-only"), ConfigurationError);
  const auto only_pos = model_view(ModelKind::kM1, ds);
  CHECK_THROWS_AS(BoundModel(ModelKind::kM3, only_pos, HyperPriors{}), ConfigurationError);
  CHECK_THROWS_AS(BoundModel(ModelKind::kM2, only_pos, HyperPriors{}), ConfigurationError);
  CHECK(parse_model_kind("M2NEG") == ModelKind::kM2Neg);
  CHECK_THROWS_AS(parse_model_kind("m4"), ConfigurationError);
}

TEST_CASE("parameter layout") {
  const auto m = bind(ModelKind::kM3);
  const auto& L = m.layout();
  CHECK(L.names[0] == "d_pos");
  CHECK(L.names[1] == "tau_pos");
  CHECK(L.names[2] == "mu_beta");
  CHECK(L.names[3] == "tau_beta");
  CHECK(L.names[4] == "delta_pos[1]");
  CHECK(L.delta_pos.size() == 7);
  CHECK_FALSE(L.beta[0].has_value());
  CHECK(L.beta[2].has_value());
  CHECK(L.beta[5].has_value());
  CHECK(L.names[*L.proportion[6]] == "p[7]");
  CHECK(L.size() == 4 + 7 + 5 + 2);
  CHECK(bind(ModelKind::kM1).layout().size() == 2 + 4);
}

TEST_CASE("log_joint matches a density written out by hand") {
  const auto m = bind(ModelKind::kM3);
  const auto theta = some_state(m, 0.0);
  const auto& L = m.layout();
  const auto ln = [](double x, double mu, double sd) {
    return -0.5 * std::log(2 * std::numbers::pi * sd * sd) - 0.5 * (x - mu) * (x - mu) / (sd * sd);
  };
  const double d = theta[0], tau = theta[1], mu = theta[2], tb = theta[3];
  double lp = ln(d, 0, 100) + ln(mu, 0, 100) + oracle::log_half_normal(tau, 10) +
              oracle::log_half_normal(tb, 10);
  const auto ds = m.dataset();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double delta = theta[L.delta_pos[i]];
    lp += ln(delta, d, tau);
    const double beta = L.beta[i] ? theta[*L.beta[i]] : 0.0;
    if (L.beta[i]) lp += ln(beta, mu, tb);
    if (ds[i].positive) lp += ln(ds[i].positive->y, delta, ds[i].positive->se);
    if (ds[i].negative) lp += ln(ds[i].negative->y, delta + beta, ds[i].negative->se);
    if (ds[i].mixed) {
      const double p = theta[*L.proportion[i]];
      lp += ln(ds[i].mixed->y, delta + p * beta, ds[i].mixed->se);
      lp += oracle::log_beta_pdf(p, ds[i].proportion_prior->alpha, ds[i].proportion_prior->beta);
    }
  }
  CHECK(m.log_joint(theta) == doctest::Approx(lp).epsilon(1e-12));

  auto bad = theta;
  bad[L.tau_pos] = -0.1;
  CHECK(std::isinf(m.log_joint(bad)));
  bad = theta;
  bad[*L.proportion[5]] = 1.2;
  CHECK(std::isinf(m.log_joint(bad)));
}

TEST_CASE("full conditionals match the curvature and stationary point of log_joint") {
  for (ModelKind kind : {ModelKind::kM1, ModelKind::kM2, ModelKind::kM2Neg, ModelKind::kM3}) {
    const auto m = bind(kind);
    const auto theta = some_state(m, 1.0);
    const auto g = oracle::location_posterior(m, theta);
    for (std::size_t j : g.index) {
      const auto c = m.conditional(theta, j);
      const double h = 1e-3;
      auto tp = theta, tm = theta;
      tp[j] += h;
      tm[j] -= h;
      const double f0 = m.log_joint(theta), fp = m.log_joint(tp), fm = m.log_joint(tm);
      const double curvature = -(fp - 2 * f0 + fm) / (h * h);
      CHECK(c.precision == doctest::Approx(curvature).epsilon(1e-5));
      auto at_mean = theta;
      at_mean[j] = c.mean;
      tp = at_mean;
      tm = at_mean;
      tp[j] += h;
      tm[j] -= h;
      const double slope = (m.log_joint(tp) - m.log_joint(tm)) / (2 * h);
      CHECK(std::abs(slope) < 1e-6 * c.precision);
    }
    CHECK_THROWS(m.conditional(theta, m.layout().tau_pos));
  }
}

TEST_CASE("log_marginal agrees with the stacked multivariate normal") {
  for (ModelKind kind : {ModelKind::kM1, ModelKind::kM2, ModelKind::kM2Neg, ModelKind::kM3}) {
    const auto m = bind(kind);
    const auto a = some_state(m, 0.0);
    const auto b = some_state(m, 2.0);
    const double ours = m.log_marginal(a) - m.log_marginal(b);
    const double ref = oracle::log_marginal(m, a) - oracle::log_marginal(m, b);
    CHECK(ours == doctest::Approx(ref).epsilon(1e-9));
  }
}

TEST_CASE("log_marginal handles zero between-study scales") {
  const auto m = bind(ModelKind::kM3);
  auto a = some_state(m, 0.0);
  auto b = some_state(m, 1.0);
  a[m.layout().tau_pos] = 0.0;
  b[m.layout().tau_pos] = 0.0;
  a[*m.layout().tau_beta] = 0.0;
  CHECK(std::isfinite(m.log_marginal(a)));
  const double ours = m.log_marginal(a) - m.log_marginal(b);
  const double ref = oracle::log_marginal(m, a) - oracle::log_marginal(m, b);
  CHECK(ours == doctest::Approx(ref).epsilon(1e-9));
}

TEST_CASE("a mixed study reduces to a positive or negative one at p = 0 or 1") {
  const std::string head = "study,y_pos,se_pos,y_neg,se_neg,y_mix,se_mix,prop_alpha,prop_beta\n";
  const std::string base = "B1,-0.25,0.10,0.05,0.11,NA,NA,NA,NA\nB2,-0.2,0.09,0.1,0.1,NA,NA,NA,NA\n";
  const BoundModel mixed(ModelKind::kM3, parse_dataset(head + base + "X,NA,NA,NA,NA,-0.1,0.08,2,3\n"),
                         HyperPriors{});
  const BoundModel as_pos(ModelKind::kM2, parse_dataset(head + base + "X,-0.1,0.08,NA,NA,NA,NA,NA,NA\n"),
                          HyperPriors{});
  const BoundModel as_neg(ModelKind::kM2Neg,
                          parse_dataset(head + base + "X,NA,NA,-0.1,0.08,NA,NA,NA,NA\n"), HyperPriors{});
  const auto state = [](const BoundModel& m, double tau, double tb, double p) {
    auto t = m.initial_state();
    t[m.layout().tau_pos] = tau;
    t[*m.layout().tau_beta] = tb;
    for (const auto& q : m.layout().proportion)
      if (q) t[*q] = p;
    return t;
  };
  for (double p : {1e-12, 1.0 - 1e-12}) {
    const auto& ref = p < 0.5 ? as_pos : as_neg;
    const double mixed_delta =
        mixed.log_marginal(state(mixed, 0.2, 0.3, p)) - mixed.log_marginal(state(mixed, 0.5, 0.1, p));
    const double ref_delta =
        ref.log_marginal(state(ref, 0.2, 0.3, p)) - ref.log_marginal(state(ref, 0.5, 0.1, p));
    CHECK(mixed_delta == doctest::Approx(ref_delta).epsilon(1e-8));
  }
}

TEST_CASE("adding a study adds its likelihood term to log_joint") {
  const std::string head = "study,y_pos,se_pos,y_neg,se_neg,y_mix,se_mix,prop_alpha,prop_beta\n";
  const std::string a = "A,-0.2,0.1,0.1,0.1,NA,NA,NA,NA\n";
  const std::string b = "B,NA,NA,NA,NA,0.0,0.1,4,6\n";
  const BoundModel both(ModelKind::kM3, parse_dataset(head + a + b), HyperPriors{});
  const BoundModel only_b(ModelKind::kM3, parse_dataset(head + b), HyperPriors{});
  // theta layouts: both = [d,t,m,tb,delA,delB,betA,betB,pB]; only_b = [d,t,m,tb,delB,betB,pB]
  const std::vector<double> tb{-0.1, 0.2, 0.15, 0.3, -0.15, -0.05, 0.2, 0.1, 0.4};
  const std::vector<double> tob{-0.1, 0.2, 0.15, 0.3, -0.05, 0.1, 0.4};
  const auto ln = [](double x, double mu, double sd) {
    return -0.5 * std::log(2 * std::numbers::pi * sd * sd) - 0.5 * (x - mu) * (x - mu) / (sd * sd);
  };
  const double study_a = ln(-0.15, -0.1, 0.2) + ln(0.2, 0.15, 0.3) + ln(-0.2, -0.15, 0.1) +
                         ln(0.1, -0.15 + 0.2, 0.1);
  CHECK(both.log_joint(tb) - only_b.log_joint(tob) == doctest::Approx(study_a).epsilon(1e-12));
}

TEST_CASE("draw_locations samples the exact Gaussian conditional") {
  const auto m = bind(ModelKind::kM3);
  const auto theta0 = some_state(m, 0.5);
  const auto g = oracle::location_posterior(m, theta0);
  Rng rng = make_stream(77, {0});
  const int n = 40000;
  const auto k = static_cast<Eigen::Index>(g.index.size());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(k), sumsq = Eigen::VectorXd::Zero(k);
  auto theta = theta0;
  for (int it = 0; it < n; ++it) {
    m.draw_locations(theta, rng);
    for (Eigen::Index q = 0; q < k; ++q) {
      sum(q) += theta[g.index[q]];
      sumsq(q) += theta[g.index[q]] * theta[g.index[q]];
    }
  }
  for (Eigen::Index q = 0; q < k; ++q) {
    const double mean = sum(q) / n;
    const double sd = std::sqrt(g.cov(q, q));
    CHECK(std::abs(mean - g.mean(q)) < 4 * sd / std::sqrt(n));
    CHECK(std::sqrt(sumsq(q) / n - mean * mean) == doctest::Approx(sd).epsilon(0.03));
  }
}

TEST_CASE("fixed zero scales pin the random effects to their means") {
  ModelOptions opt;
  opt.fixed_tau_pos = 0.0;
  const auto r = fit(ModelKind::kM1, data(), HyperPriors{}, [] {
    auto c = mcmc::SamplerConfig::desk();
    c.burn_in = 500;
    c.samples = 2000;
    c.workers = 1;
    return c;
  }(), opt);
  // fixed effect: inverse-variance weighted mean, shrunk negligibly by the N(0, 100^2) prior
  double w = 1.0 / (100.0 * 100.0), wy = 0.0;
  for (auto [y, se] : {std::pair{-0.30, 0.12}, {-0.10, 0.15}, {-0.25, 0.10}, {-0.20, 0.09}}) {
    w += 1 / (se * se);
    wy += y / (se * se);
  }
  const auto& d = r.summary["d_pos"];
  CHECK(std::abs(d.mean - wy / w) < 4 * d.mcse_mean);
  CHECK(d.sd == doctest::Approx(1 / std::sqrt(w)).epsilon(0.05));
  CHECK(r.summary["delta_pos[1]"].mean == doctest::Approx(d.mean).epsilon(1e-12));
  CHECK_THROWS_AS(BoundModel(ModelKind::kM1, model_view(ModelKind::kM1, data()), HyperPriors{},
                             {UpdateScheme::kSingleSite, 0.0, std::nullopt}),
                  ConfigurationError);
}

TEST_CASE("collapsed and single-site schemes target the same posterior") {
  auto cfg = mcmc::SamplerConfig::desk();
  cfg.burn_in = 4000;
  cfg.samples = 20000;
  cfg.workers = 1;
  const auto a = fit(ModelKind::kM3, data(), HyperPriors{}, cfg, {UpdateScheme::kCollapsed}, true);
  cfg.seed += 1;
  const auto b = fit(ModelKind::kM3, data(), HyperPriors{}, cfg, {UpdateScheme::kSingleSite}, true);
  for (const char* name : {kDPos, kMuBeta}) {
    const auto& x = a.summary[name];
    const auto& y = b.summary[name];
    const double se = std::hypot(x.mcse_mean, y.mcse_mean);
    CHECK(std::abs(x.mean - y.mean) < 4 * se);
    CHECK(x.sd == doctest::Approx(y.sd).epsilon(0.1));
  }
}

TEST_CASE("fit reports only the headline rows on request and warns about dropped studies") {
  auto cfg = mcmc::SamplerConfig::desk();
  cfg.burn_in = 500;
  cfg.samples = 1000;
  cfg.workers = 1;
  const auto r = fit(ModelKind::kM2, data(), HyperPriors{}, cfg, {}, true);
  CHECK(r.summary.parameters.size() == 4);
  CHECK(r.blocks_used == BlockCounts{2, 2, 0, 0});
  bool warned = false;
  for (const auto& w : r.summary.warnings) warned = warned || w.find("3 studies") != std::string::npos;
  CHECK(warned);
}
