#include <doctest.h>

#include "ivfalign/error.hpp"
#include "ivfalign/random.hpp"
#include "ivfalign/stats.hpp"
#include "oracles.hpp"

using namespace ivfalign;

TEST_SUITE("stats") {
  TEST_CASE("t distribution against numeric integration") {
    for (double df : {1.0, 2.0, 5.0, 30.0}) {
      for (double t : {0.0, 0.5, 1.7, 4.0}) {
        const double p = 2 * (1 - student_t_cdf(std::abs(t), df));
        CHECK(std::abs(p - oracle::t_two_sided_p(t, df)) < 1e-6);
      }
    }
  }

  TEST_CASE("paired t on a small example") {
    const std::vector<double> x{1, 2, 3}, y{1, 1, 1};
    const auto r = paired_t(x, y);
    CHECK(r.t == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
    CHECK(r.df == 2);
    CHECK(std::abs(r.p - oracle::t_two_sided_p(std::sqrt(3.0), 2)) < 1e-6);
    CHECK(std::abs(r.p - 0.2254) < 1e-3);
  }

  TEST_CASE("paired t p-values on random instances") {
    Rng rng(17);
    for (int inst = 0; inst < 100; ++inst) {
      const auto n = static_cast<std::size_t>(uniform_int(rng, 3, 40));
      std::vector<double> x(n), y(n), d(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = 3 + normal01(rng);
        y[i] = 3 + 0.3 * normal01(rng) + 0.2;
        d[i] = x[i] - y[i];
      }
      const auto r = paired_t(x, y);
      const double t = oracle::mean(d) / (oracle::sample_sd(d) / std::sqrt(static_cast<double>(n)));
      REQUIRE(r.t == doctest::Approx(t).epsilon(1e-10));
      REQUIRE(std::abs(r.p - oracle::t_two_sided_p(t, static_cast<double>(n - 1))) < 1e-6);
    }
  }

  TEST_CASE("paired t edge cases") {
    const std::vector<double> x{4, 5, 3, 4};
    const auto same = paired_t(x, x);
    CHECK(same.t == 0);
    CHECK(same.p == 1);
    const std::vector<double> y{3, 3, 4, 4};
    const auto fwd = paired_t(x, y), rev = paired_t(y, x);
    CHECK(fwd.t == -rev.t);
    CHECK(fwd.p == rev.p);
    const std::vector<double> shifted{5, 6, 4, 5};
    CHECK_THROWS_AS(paired_t(shifted, x), ValidationError);
    const std::vector<double> one{1};
    CHECK_THROWS_AS(paired_t(one, one), ValidationError);
    CHECK_THROWS_AS(paired_t(x, one), ValidationError);
  }

  TEST_CASE("Benjamini-Hochberg") {
    const std::vector<double> p{0.015, 0.033, 0.90};
    const auto adj = bh_adjust(p);
    CHECK(adj[0] == doctest::Approx(0.045).epsilon(1e-12));
    CHECK(adj[1] == doctest::Approx(0.0495).epsilon(1e-12));
    CHECK(adj[2] == doctest::Approx(0.90).epsilon(1e-12));
    // Reported: p 0.015 -> 0.045, p 0.033 -> 0.048.
    CHECK(std::abs(adj[0] - 0.045) <= 0.002);
    CHECK(std::abs(adj[1] - 0.048) <= 0.002);
    CHECK(bh_adjust(std::vector<double>{}).empty());
    CHECK(bh_adjust(std::vector<double>{0.3}) == std::vector<double>{0.3});
    const auto ties = bh_adjust(std::vector<double>{0.02, 0.02, 0.02});
    for (double v : ties) CHECK(v == doctest::Approx(0.02));
    CHECK_THROWS_AS(bh_adjust(std::vector<double>{0.5, 1.5}), ValidationError);

    Rng rng(4);
    for (int inst = 0; inst < 200; ++inst) {
      std::vector<double> ps(static_cast<std::size_t>(uniform_int(rng, 1, 12)));
      for (auto& v : ps) v = uniform01(rng);
      const auto got = bh_adjust(ps);
      const auto want = oracle::bh(ps);
      for (std::size_t i = 0; i < ps.size(); ++i) {
        REQUIRE(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
        CHECK(got[i] >= ps[i]);
        CHECK(got[i] <= 1.0);
      }
    }
  }

  TEST_CASE("paired Cohen's d") {
    const std::vector<double> x{1, 2, 3}, y{1, 1, 1};
    CHECK(cohen_d_paired(x, y) == doctest::Approx(1.0).epsilon(1e-12));
    const std::vector<double> x10{10, 20, 30}, y10{10, 10, 10};
    CHECK(cohen_d_paired(x10, y10) == doctest::Approx(1.0).epsilon(1e-12));
    const std::vector<double> z{2, 3, 4};
    CHECK_THROWS_AS(cohen_d_paired(z, x), ValidationError);
  }

  TEST_CASE("Wilcoxon signed rank") {
    const std::vector<double> x{5, 6, 7, 8, 9, 10}, y{1, 2, 3, 4, 5, 6};
    const auto r = wilcoxon_signed_rank(x, y);
    CHECK(r.n_nonzero == 6);
    CHECK(r.w_plus == 21);
    CHECK(r.p < 0.05);
    const auto none = wilcoxon_signed_rank(x, x);
    CHECK(none.n_nonzero == 0);
    CHECK(none.p == 1);
  }

  TEST_CASE("chi-square") {
    CHECK(chi_square_sf(20.515, 5) == doctest::Approx(0.001).epsilon(1e-3));
    CHECK(chi_square_sf(0, 3) == 1.0);
    const std::vector<std::size_t> flat{100, 100, 100, 100, 100, 100};
    CHECK(chi_square_uniform_p(flat) == 1.0);
    const std::vector<std::size_t> skewed{200, 50, 100, 100, 100, 50};
    CHECK(chi_square_uniform_p(skewed) < 1e-6);
  }

  TEST_CASE("winning rates") {
    std::vector<std::vector<std::string>> picks;
    for (int i = 0; i < 512; ++i) picks.push_back({"GroundTruth"});
    for (int i = 0; i < 262; ++i) picks.push_back({"GRPO"});
    for (int i = 0; i < 227; ++i) picks.push_back({"SFT"});
    const std::vector<std::string> arms{"SFT", "GRPO", "GroundTruth"};
    const auto w = winning_rates(picks, arms);
    CHECK(w.total == 1001);
    CHECK(w.rates[2] * 100 == doctest::Approx(51.15).epsilon(1e-3));
    CHECK(w.rates[1] * 100 == doctest::Approx(26.17).epsilon(1e-3));
    CHECK(w.rates[0] * 100 == doctest::Approx(22.68).epsilon(1e-3));

    const std::vector<std::vector<std::string>> cases{{"SFT", "SFT", "GRPO"}, {"SFT", "GRPO", "GroundTruth"}};
    const auto modal = winning_rates(cases, arms, PickAggregation::ModalPerCase);
    CHECK(modal.total == 2);
    CHECK(modal.counts[0] == 1);
    CHECK(modal.ties == 1);
    CHECK(modal.tie_rate == 0.5);
    const std::vector<std::vector<std::string>> bad{{"Other"}};
    CHECK_THROWS_AS(winning_rates(bad, arms), ValidationError);
  }

  TEST_CASE("report from a ratings table") {
    RatingsTable table;
    table.arms = {"SFT", "GRPO", "GroundTruth"};
    Rng rng(3);
    for (int i = 0; i < 30; ++i) {
      CaseRatings c;
      c.case_id = "c" + std::to_string(100 + i);
      for (int a = 0; a < 3; ++a) {
        ArmRatings r;
        for (auto& m : r.mean) m = 3 + a * 0.3 + uniform01(rng);
        r.hallucination = bernoulli(rng, 0.2) ? 1.0 : 0.0;
        r.reviewers = 1;
        c.arms.push_back(r);
      }
      c.picks = {table.arms[static_cast<std::size_t>(uniform_int(rng, 0, 2))]};
      table.cases.push_back(c);
    }
    table.planned_cases = 30;
    table.hallucination_flags = {6, 6, 6};
    table.hallucination_total = {30, 30, 30};
    const auto report = build_stats_report(table, "SFT", "GRPO");
    REQUIRE(report.tests.size() == 3);
    std::vector<double> raw;
    for (std::size_t d = 0; d < 3; ++d) {
      std::vector<double> a, b;
      for (const auto& c : table.cases) {
        a.push_back(c.arms[0].mean[d]);
        b.push_back(c.arms[1].mean[d]);
      }
      const auto& t = report.tests[d];
      CHECK(t.dimension == kDimensions[d]);
      CHECK(t.mean_a == doctest::Approx(oracle::mean(a)));
      REQUIRE(t.p.has_value());
      raw.push_back(*t.p);
    }
    const auto adj = oracle::bh(raw);
    for (std::size_t d = 0; d < 3; ++d) CHECK(*report.tests[d].p_adjusted == doctest::Approx(adj[d]));
    CHECK(report.winning.total == 30);
    CHECK(to_json(report).contains("tests"));
    CHECK(to_text(report).find("accuracy") != std::string::npos);
    CHECK_THROWS_AS(build_stats_report(table, "SFT", "DPO"), ValidationError);
  }
}
