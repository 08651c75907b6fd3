#pragma once

// Statistics for the blinded review: per-case reviewer aggregation, paired
// t-tests with Benjamini-Hochberg adjustment, paired Cohen's d, hallucination
// rates and best-of-three winning rates.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace ivfalign {

// ---------------------------------------------------------------- distributions

/// P(T <= t) for Student's t with `df` degrees of freedom.
double student_t_cdf(double t, double df);
/// P(X > x) for chi-square with `k` degrees of freedom.
double chi_square_sf(double x, double k);
/// Pearson goodness-of-fit against equal expected counts; returns the p-value.
double chi_square_uniform_p(std::span<const std::size_t> counts);

// ---------------------------------------------------------------- tests

struct PairedT {
  double t = 0;
  double df = 0;
  double p = 1;  // two-sided
  std::size_t n = 0;
  double mean_diff = 0;
  double sd_diff = 0;
};

/// d = x - y; t = mean(d) / (sd(d) / sqrt(n)) with the n-1 sample sd. All-zero
/// differences give t = 0, p = 1; constant non-zero differences throw.
PairedT paired_t(std::span<const double> x, std::span<const double> y);

/// Benjamini-Hochberg step-up adjustment, returned in input order.
std::vector<double> bh_adjust(std::span<const double> pvals);

/// mean(d) / sd(d). Throws when sd(d) = 0.
double cohen_d_paired(std::span<const double> x, std::span<const double> y);

/// Wilcoxon signed-rank test (zero differences dropped, average ranks for
/// ties, normal approximation with tie and continuity correction).
struct SignedRank {
  double w_plus = 0;
  double z = 0;
  double p = 1;
  std::size_t n_nonzero = 0;
};
SignedRank wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------- ratings

inline constexpr std::array<std::string_view, 3> kDimensions{"accuracy", "reasoning",
                                                             "feasibility"};

struct ArmRatings {
  std::array<double, 3> mean{};  // per dimension, across reviewers
  double hallucination = 0;      // fraction of reviewers flagging
  std::size_t reviewers = 0;
};

struct CaseRatings {
  std::string case_id;
  std::vector<ArmRatings> arms;      // indexed like RatingsTable::arms
  std::vector<std::string> picks;    // best-pick arm per review, in log order
};

struct RatingsTable {
  std::vector<std::string> arms;
  std::vector<CaseRatings> cases;     // sorted by case id
  std::size_t events = 0;
  std::size_t reviewers = 0;          // distinct reviewers in the log
  std::size_t planned_cases = 0;      // size of the evaluation set
  std::vector<std::size_t> hallucination_flags;  // per arm, over all reviews
  std::vector<std::size_t> hallucination_total;

  std::optional<std::size_t> arm_index(std::string_view arm) const;
};

nlohmann::ordered_json to_json(const RatingsTable& t);

// ---------------------------------------------------------------- winning rates

enum class PickAggregation { PickLevel, ModalPerCase };

struct WinningRates {
  std::vector<std::string> arms;
  std::vector<std::size_t> counts;
  std::vector<double> rates;
  std::size_t ties = 0;   // modal mode only: cases without a unique modal pick
  double tie_rate = 0;
  std::size_t total = 0;  // picks (pick level) or cases (modal)
};

/// Pick level: share of all picks. Modal per case: each case contributes its
/// unique most-picked arm, or a tie.
WinningRates winning_rates(std::span<const std::vector<std::string>> picks_per_case,
                           std::span<const std::string> arms,
                           PickAggregation mode = PickAggregation::PickLevel);

// ---------------------------------------------------------------- report

struct TestResult {
  std::string dimension;
  std::size_t n = 0;
  double mean_a = 0;
  double mean_b = 0;
  std::optional<double> t, df, p, p_adjusted, cohen_d;
  std::optional<SignedRank> wilcoxon;  // extension, not part of the BH family
  std::string note;                    // set when the test is degenerate
};

struct StatsReport {
  std::string arm_a, arm_b;
  std::vector<TestResult> tests;
  std::vector<double> hallucination_rate;  // per arm of the table
  std::optional<PairedT> hallucination_test;
  WinningRates winning;
  RatingsTable table;
};

/// Compares `arm_a` with `arm_b` over cases rated for both.
StatsReport build_stats_report(const RatingsTable& table, const std::string& arm_a,
                               const std::string& arm_b,
                               PickAggregation mode = PickAggregation::PickLevel);

nlohmann::ordered_json to_json(const StatsReport& r);
std::string to_text(const StatsReport& r);

}  // namespace ivfalign
