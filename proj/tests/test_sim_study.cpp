#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bmeta/csv.hpp"
#include "bmeta/errors.hpp"
#include "bmeta/sim_study.hpp"

using namespace bmeta;

namespace {

mcmc::SamplerConfig tiny() {
  mcmc::SamplerConfig c;
  c.n_chains = 2;
  c.burn_in = 300;
  c.samples = 600;
  c.workers = 1;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("bmeta_test_" + name)).string();
}

}  // namespace

TEST_CASE("scenario grid") {
  const auto grid = scenario_table();
  REQUIRE(grid.size() == 21);
  for (const auto& s : grid) {
    CHECK_NOTHROW(s.validate());
    CHECK(s.d_pos == -0.25);
    CHECK(s.tau_pos_sq == 0.0056);
  }
  const auto s1 = find_scenario("S1");
  CHECK(s1.n_studies == 15);
  CHECK(s1.mu_beta == 0.25);
  CHECK(s1.tau_beta_sq == 0.01);
  CHECK(s1.generation.n_participants == 350);
  CHECK(s1.generation.baseline_rate == 0.15);
  CHECK(find_scenario("S5").n_studies_pos == 1);
  CHECK(find_scenario("S9").n_studies_mix == 9);
  CHECK(find_scenario("S13").mu_beta == 1.25);
  CHECK(find_scenario("S17").tau_beta_sq == 0.3);
  CHECK(find_scenario("S21").n_studies_both == 30);
  CHECK_THROWS_AS(find_scenario("S22"), ConfigurationError);

  auto bad = s1;
  bad.n_studies_mix = 6;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  bad = s1;
  bad.n_studies_both = 0;
  bad.n_studies_pos = 10;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
}

TEST_CASE("meta-analysis replications") {
  const auto spec = find_scenario("S1");
  const auto a = generate_meta_replication(spec, 5, 0);
  const auto b = generate_meta_replication(spec, 5, 0);
  CHECK(a.unadjusted == b.unadjusted);
  CHECK(a.adjusted == b.adjusted);
  CHECK(a.unadjusted.block_counts() == BlockCounts{5, 5, 0, 5});
  CHECK(a.unadjusted[0].study_id == "study01");
  for (std::size_t i = 0; i < 15; ++i) {
    if (i < 10) {
      CHECK(a.unadjusted[i] == a.adjusted[i]);
    } else {
      CHECK(a.unadjusted[i].mixed->y != a.adjusted[i].mixed->y);
      CHECK(a.unadjusted[i].proportion_prior == a.adjusted[i].proportion_prior);
    }
  }
  const auto c = generate_meta_replication(spec, 5, 1);
  CHECK_FALSE(c.unadjusted == a.unadjusted);
}

TEST_CASE("true study effects follow the scenario's random-effects distribution") {
  auto spec = find_scenario("S14");
  spec.generation.n_participants = 40;
  double sum_d = 0, sum_b = 0, sq_b = 0;
  int n = 0;
  for (std::uint64_t rep = 0; rep < 200; ++rep) {
    const auto r = generate_meta_replication(spec, 17, rep);
    for (std::size_t i = 0; i < r.delta_pos_true.size(); ++i) {
      sum_d += r.delta_pos_true[i];
      sum_b += r.beta_true[i];
      sq_b += r.beta_true[i] * r.beta_true[i];
      ++n;
    }
  }
  CHECK(std::abs(sum_d / n + 0.25) < 4 * std::sqrt(0.0056 / n));
  const double mb = sum_b / n;
  CHECK(std::abs(mb - 0.25) < 4 * std::sqrt(0.05 / n));
  CHECK(sq_b / n - mb * mb == doctest::Approx(0.05).epsilon(0.1));
}

TEST_CASE("aggregation by hand") {
  std::vector<ReplicationResult> rows{
      {"X", 0, Method::kM1, -0.2, -0.3, -0.1, true, -0.25},
      {"X", 1, Method::kM1, -0.3, -0.24, -0.1, false, -0.25},
  };
  const auto r = aggregate("X", rows, -0.25);
  REQUIRE(r.methods.size() == 1);
  const auto& m = r[Method::kM1];
  CHECK(m.pct_bias == doctest::Approx(0.0));
  CHECK(m.coverage == doctest::Approx(0.5));
  CHECK(m.mean_width == doctest::Approx(0.17));
  CHECK(m.mcse_bias == doctest::Approx(20.0));
  CHECK(m.n_reps == 2);
  CHECK(m.nonconverged_fraction == doctest::Approx(0.5));
  CHECK(m.flagged_nonconverged);
  CHECK_THROWS(r[Method::kM2]);
  CHECK_THROWS_WITH_AS(aggregate("X", rows, 0.0), doctest::Contains("absolute bias"),
                       ConfigurationError);
  std::reverse(rows.begin(), rows.end());
  CHECK(aggregate("X", rows, -0.25)[Method::kM1].pct_bias == m.pct_bias);
}

TEST_CASE("results rows round trip and torn lines are dropped") {
  const ReplicationResult r{"S3", 7, Method::kM3Adjusted, -0.2512, -0.4, -0.1, true, -0.25};
  const std::string text = std::string(kResultsHeader) + "\n" + format_result_row(r) + "\nS3,8,M1,-0.2";
  const auto rows = parse_results(text);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].replication == 7);
  CHECK(rows[0].method == Method::kM3Adjusted);
  CHECK(format_result_row(rows[0]) == format_result_row(r));
  CHECK_THROWS_AS(parse_method("M9"), ValidationError);
}

TEST_CASE("scenario runs are deterministic, resumable and worker-count independent") {
  const auto spec = find_scenario("S18");  // 9 studies keeps this quick
  const auto path = temp_path("results.csv");
  StudyOptions opt;
  opt.seed = 31;
  opt.results_path = path;
  const auto first = run_scenario(spec, 3, tiny(), opt);
  const std::string text = csv::read_file(path);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 3 * 4);
  CHECK(format_report({first}).rfind(kReportHeader, 0) == 0);

  opt.workers = 3;
  run_scenario(spec, 3, tiny(), opt);
  CHECK(csv::read_file(path) == text);

  // interrupt after the first replication and a torn row, then resume
  const auto cut = text.find('\n', text.find("S18,1,M1"));
  csv::write_file(path, text.substr(0, cut) + "\nS18,1,M2,-0.1");
  opt.resume = true;
  opt.workers = 1;
  const auto resumed = run_scenario(spec, 3, tiny(), opt);
  CHECK(format_report({resumed}) == format_report({first}));
  CHECK(parse_results(csv::read_file(path)).size() >= 12);

  CHECK_THROWS_AS(run_scenario(spec, 1, tiny(), opt), ConfigurationError);
  std::filesystem::remove(path);
}
