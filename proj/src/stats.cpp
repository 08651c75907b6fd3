#include "ivfalign/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "ivfalign/error.hpp"

namespace ivfalign {
namespace {

void check_paired(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("paired samples differ in length");
  if (x.size() < 2) throw ValidationError("paired test needs at least 2 pairs");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw ValidationError("non-finite sample");
  }
}

struct DiffStats {
  double mean = 0;
  double sd = 0;
};

DiffStats diff_stats(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double mean = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mean += x[i] - y[i];
  mean /= n;
  double ss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i] - mean;
    ss += d * d;
  }
  return {mean, std::sqrt(ss / (n - 1))};
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

double student_t_cdf(double t, double df) {
  if (!(df > 0)) throw ValidationError("degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * boost::math::ibeta(df / 2, 0.5, df / (df + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

double chi_square_sf(double x, double k) {
  if (!(k > 0)) throw ValidationError("degrees of freedom must be positive");
  if (x <= 0) return 1.0;
  return boost::math::gamma_q(k / 2, x / 2);
}

double chi_square_uniform_p(std::span<const std::size_t> counts) {
  if (counts.size() < 2) throw ValidationError("chi-square needs at least two categories");
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (total == 0) throw ValidationError("chi-square needs observations");
  const double expected = total / static_cast<double>(counts.size());
  double stat = 0;
  for (auto c : counts) {
    const double d = static_cast<double>(c) - expected;
    stat += d * d / expected;
  }
  return chi_square_sf(stat, static_cast<double>(counts.size() - 1));
}

PairedT paired_t(std::span<const double> x, std::span<const double> y) {
  check_paired(x, y);
  const auto [mean, sd] = diff_stats(x, y);
  PairedT r;
  r.n = x.size();
  r.df = static_cast<double>(r.n - 1);
  r.mean_diff = mean;
  r.sd_diff = sd;
  if (sd == 0) {
    if (mean == 0) return r;
    throw ValidationError("paired differences are constant and non-zero; t is undefined");
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(r.n)));
  r.p = std::clamp(boost::math::ibeta(r.df / 2, 0.5, r.df / (r.df + r.t * r.t)), 0.0, 1.0);
  return r;
}

std::vector<double> bh_adjust(std::span<const double> pvals) {
  for (double p : pvals) {
    if (!(p >= 0 && p <= 1)) throw ValidationError("p-value outside [0, 1]");
  }
  const std::size_t m = pvals.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });
  std::vector<double> adj(m);
  double running = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    const double v = pvals[order[k]] * static_cast<double>(m) / static_cast<double>(k + 1);
    running = std::min(running, v);
    // Rounding in p * m / m must not push the adjusted value below p.
    adj[order[k]] = std::max(std::min(running, 1.0), pvals[order[k]]);
  }
  return adj;
}

double cohen_d_paired(std::span<const double> x, std::span<const double> y) {
  check_paired(x, y);
  const auto [mean, sd] = diff_stats(x, y);
  if (sd == 0) throw ValidationError("paired differences have zero spread; Cohen's d is undefined");
  return mean / sd;
}

SignedRank wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("paired samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != y[i]) d.push_back(x[i] - y[i]);
  }
  SignedRank r;
  r.n_nonzero = d.size();
  if (d.empty()) return r;
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> rank(d.size());
  double tie_term = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] > 0) r.w_plus += rank[i];
  }
  const double n = static_cast<double>(d.size());
  const double mu = n * (n + 1) / 4;
  const double var = n * (n + 1) * (2 * n + 1) / 24 - tie_term / 48;
  if (var <= 0) return r;
  const double diff = r.w_plus - mu;
  const double corrected = diff == 0 ? 0.0 : diff - std::copysign(0.5, diff);
  r.z = corrected / std::sqrt(var);
  r.p = std::min(1.0, std::erfc(std::abs(r.z) / std::sqrt(2.0)));
  return r;
}

// ---------------------------------------------------------------- ratings

std::optional<std::size_t> RatingsTable::arm_index(std::string_view arm) const {
  for (std::size_t i = 0; i < arms.size(); ++i) {
    if (arms[i] == arm) return i;
  }
  return std::nullopt;
}

nlohmann::ordered_json to_json(const RatingsTable& t) {
  nlohmann::ordered_json j;
  j["arms"] = t.arms;
  j["events"] = t.events;
  j["reviewers"] = t.reviewers;
  j["coverage"] = {{"rated_cases", t.cases.size()}, {"planned_cases", t.planned_cases}};
  auto& cases = j["cases"] = nlohmann::ordered_json::array();
  for (const auto& c : t.cases) {
    nlohmann::ordered_json cj;
    cj["case_id"] = c.case_id;
    auto& arms = cj["arms"] = nlohmann::ordered_json::object();
    for (std::size_t a = 0; a < t.arms.size(); ++a) {
      const auto& r = c.arms[a];
      nlohmann::ordered_json aj;
      for (std::size_t d = 0; d < kDimensions.size(); ++d) aj[std::string(kDimensions[d])] = r.mean[d];
      aj["hallucination"] = r.hallucination;
      aj["reviewers"] = r.reviewers;
      arms[t.arms[a]] = aj;
    }
    cj["picks"] = c.picks;
    cases.push_back(std::move(cj));
  }
  return j;
}

// ---------------------------------------------------------------- winning rates

WinningRates winning_rates(std::span<const std::vector<std::string>> picks_per_case,
                           std::span<const std::string> arms, PickAggregation mode) {
  WinningRates w;
  w.arms.assign(arms.begin(), arms.end());
  w.counts.assign(arms.size(), 0);
  auto index = [&](const std::string& arm) {
    const auto it = std::find(arms.begin(), arms.end(), arm);
    if (it == arms.end()) throw ValidationError("pick names unknown arm '" + arm + "'");
    return static_cast<std::size_t>(it - arms.begin());
  };
  for (const auto& picks : picks_per_case) {
    if (mode == PickAggregation::PickLevel) {
      for (const auto& p : picks) {
        ++w.counts[index(p)];
        ++w.total;
      }
      continue;
    }
    if (picks.empty()) continue;
    std::vector<std::size_t> local(arms.size(), 0);
    for (const auto& p : picks) ++local[index(p)];
    const auto best = *std::max_element(local.begin(), local.end());
    const auto winners = std::count(local.begin(), local.end(), best);
    ++w.total;
    if (winners == 1) {
      ++w.counts[static_cast<std::size_t>(std::find(local.begin(), local.end(), best) - local.begin())];
    } else {
      ++w.ties;
    }
  }
  w.rates.assign(arms.size(), 0.0);
  if (w.total > 0) {
    for (std::size_t i = 0; i < arms.size(); ++i) {
      w.rates[i] = static_cast<double>(w.counts[i]) / static_cast<double>(w.total);
    }
    w.tie_rate = static_cast<double>(w.ties) / static_cast<double>(w.total);
  }
  return w;
}

// ---------------------------------------------------------------- report

StatsReport build_stats_report(const RatingsTable& table, const std::string& arm_a,
                               const std::string& arm_b, PickAggregation mode) {
  const auto ia = table.arm_index(arm_a);
  const auto ib = table.arm_index(arm_b);
  if (!ia || !ib) throw ValidationError("arms '" + arm_a + "' and '" + arm_b + "' must both be rated");
  if (*ia == *ib) throw ValidationError("cannot compare an arm with itself");
  StatsReport r;
  r.arm_a = arm_a;
  r.arm_b = arm_b;
  r.table = table;

  std::vector<const CaseRatings*> rated;
  for (const auto& c : table.cases) {
    if (c.arms[*ia].reviewers > 0 && c.arms[*ib].reviewers > 0) rated.push_back(&c);
  }
  std::vector<double> raw_p;
  std::vector<std::size_t> tested;
  for (std::size_t d = 0; d < kDimensions.size(); ++d) {
    TestResult t;
    t.dimension = kDimensions[d];
    t.n = rated.size();
    std::vector<double> xa, xb;
    for (const auto* c : rated) {
      xa.push_back(c->arms[*ia].mean[d]);
      xb.push_back(c->arms[*ib].mean[d]);
    }
    if (!xa.empty()) {
      t.mean_a = std::accumulate(xa.begin(), xa.end(), 0.0) / static_cast<double>(xa.size());
      t.mean_b = std::accumulate(xb.begin(), xb.end(), 0.0) / static_cast<double>(xb.size());
    }
    try {
      const PairedT pt = paired_t(xa, xb);
      t.t = pt.t;
      t.df = pt.df;
      t.p = pt.p;
      if (pt.sd_diff > 0) {
        t.cohen_d = cohen_d_paired(xa, xb);
      } else {
        t.note = "all paired differences are zero; Cohen's d undefined";
      }
      t.wilcoxon = wilcoxon_signed_rank(xa, xb);
      raw_p.push_back(pt.p);
      tested.push_back(d);
    } catch (const ValidationError& e) {
      t.note = std::string("degenerate: ") + e.what();
    }
    r.tests.push_back(std::move(t));
  }
  const auto adj = bh_adjust(raw_p);
  for (std::size_t k = 0; k < tested.size(); ++k) r.tests[tested[k]].p_adjusted = adj[k];

  for (std::size_t a = 0; a < table.arms.size(); ++a) {
    const auto total = table.hallucination_total[a];
    r.hallucination_rate.push_back(
        total ? static_cast<double>(table.hallucination_flags[a]) / static_cast<double>(total) : 0.0);
  }
  std::vector<double> ha, hb;
  for (const auto* c : rated) {
    ha.push_back(c->arms[*ia].hallucination);
    hb.push_back(c->arms[*ib].hallucination);
  }
  try {
    r.hallucination_test = paired_t(ha, hb);
  } catch (const ValidationError&) {
    r.hallucination_test.reset();
  }

  std::vector<std::vector<std::string>> picks;
  for (const auto& c : table.cases) picks.push_back(c.picks);
  r.winning = winning_rates(picks, table.arms, mode);
  return r;
}

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

nlohmann::ordered_json to_json(const StatsReport& r) {
  nlohmann::ordered_json j;
  j["comparison"] = {{"arm_a", r.arm_a}, {"arm_b", r.arm_b}};
  j["n_cases"] = r.tests.empty() ? 0 : r.tests.front().n;
  j["multiple_testing"] = {{"method", "benjamini-hochberg"}, {"family", "tested dimensions"}};
  auto& tests = j["tests"] = nlohmann::ordered_json::array();
  for (const auto& t : r.tests) {
    nlohmann::ordered_json tj;
    tj["dimension"] = t.dimension;
    tj["n"] = t.n;
    tj["mean_a"] = t.mean_a;
    tj["mean_b"] = t.mean_b;
    tj["t"] = opt(t.t);
    tj["df"] = opt(t.df);
    tj["p"] = opt(t.p);
    tj["p_adjusted"] = opt(t.p_adjusted);
    tj["cohen_d"] = opt(t.cohen_d);
    if (t.wilcoxon) {
      tj["wilcoxon_extension"] = {{"w_plus", t.wilcoxon->w_plus},
                                  {"z", t.wilcoxon->z},
                                  {"p", t.wilcoxon->p},
                                  {"n_nonzero", t.wilcoxon->n_nonzero}};
    } else {
      tj["wilcoxon_extension"] = nullptr;
    }
    tj["note"] = t.note;
    tests.push_back(std::move(tj));
  }
  auto& hall = j["hallucination"];
  for (std::size_t a = 0; a < r.table.arms.size(); ++a) {
    hall["rates"][r.table.arms[a]] = {{"rate", r.hallucination_rate[a]},
                                      {"flags", r.table.hallucination_flags[a]},
                                      {"reviews", r.table.hallucination_total[a]}};
  }
  if (r.hallucination_test) {
    hall["paired_t"] = {{"t", r.hallucination_test->t},
                        {"df", r.hallucination_test->df},
                        {"p", r.hallucination_test->p},
                        {"n", r.hallucination_test->n}};
  } else {
    hall["paired_t"] = nullptr;
  }
  auto& win = j["winning_rates"];
  win["total"] = r.winning.total;
  for (std::size_t a = 0; a < r.winning.arms.size(); ++a) {
    win["arms"][r.winning.arms[a]] = {{"count", r.winning.counts[a]}, {"rate", r.winning.rates[a]}};
  }
  win["ties"] = r.winning.ties;
  win["tie_rate"] = r.winning.tie_rate;
  j["coverage"] = {{"events", r.table.events},
                   {"reviewers", r.table.reviewers},
                   {"rated_cases", r.table.cases.size()},
                   {"planned_cases", r.table.planned_cases}};
  return j;
}

std::string to_text(const StatsReport& r) {
  std::ostringstream os;
  os << "Paired comparison: " << r.arm_a << " vs " << r.arm_b << '\n';
  os << "dimension     n    mean_a  mean_b  t        df   p        p_adj    cohen_d\n";
  for (const auto& t : r.tests) {
    char line[256];
    std::snprintf(line, sizeof line, "%-12s %4zu  %6.3f  %6.3f  ", t.dimension.c_str(), t.n,
                  t.mean_a, t.mean_b);
    os << line;
    if (t.t) {
      std::snprintf(line, sizeof line, "%7.4f  %3.0f  %7.5f  %7.5f  %s", *t.t, *t.df, *t.p,
                    t.p_adjusted ? *t.p_adjusted : std::nan(""),
                    t.cohen_d ? fixed(*t.cohen_d, 4).c_str() : "n/a");
      os << line;
    } else {
      os << "n/a";
    }
    if (!t.note.empty()) os << "  (" << t.note << ')';
    os << '\n';
  }
  os << "Wilcoxon signed-rank (extension, unadjusted):\n";
  for (const auto& t : r.tests) {
    if (!t.wilcoxon) continue;
    os << "  " << t.dimension << ": W+ = " << fixed(t.wilcoxon->w_plus, 1)
       << ", z = " << fixed(t.wilcoxon->z, 4) << ", p = " << fixed(t.wilcoxon->p, 5) << '\n';
  }
  os << "Hallucination rate:";
  for (std::size_t a = 0; a < r.table.arms.size(); ++a) {
    os << ' ' << r.table.arms[a] << ' ' << fixed(100 * r.hallucination_rate[a], 1) << '%';
  }
  os << '\n';
  os << "Winning rate (n = " << r.winning.total << "):";
  for (std::size_t a = 0; a < r.winning.arms.size(); ++a) {
    os << ' ' << r.winning.arms[a] << ' ' << fixed(100 * r.winning.rates[a], 1) << '%';
  }
  if (r.winning.ties) os << " ties " << fixed(100 * r.winning.tie_rate, 1) << '%';
  os << '\n';
  os << "Coverage: " << r.table.cases.size() << " of " << r.table.planned_cases << " cases, "
     << r.table.events << " reviews by " << r.table.reviewers << " reviewers\n";
  return os.str();
}

}  // namespace ivfalign
