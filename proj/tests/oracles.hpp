#pragma once

// Reference implementations used as test oracles. They are written directly
// from the textbook definitions and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "ivfalign/policy.hpp"

namespace oracle {

// ---------------------------------------------------------------- numerics

/// Composite Simpson rule with `n` (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3;
}

inline double t_density(double x, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  return c * std::pow(1 + x * x / df, -(df + 1) / 2);
}

/// Two-sided p-value of Student's t by integrating the density.
inline double t_two_sided_p(double t, double df) {
  const double half = simpson([df](double x) { return t_density(x, df); }, 0.0, std::abs(t));
  return 1.0 - 2.0 * half;
}

inline double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sample_sd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Benjamini-Hochberg by definition: adj_i = min over p_j >= p_i of m p_j / rank_j.
inline std::vector<double> bh(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  std::vector<std::size_t> rank(m);
  for (std::size_t r = 0; r < m; ++r) rank[order[r]] = r + 1;
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = 1.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (rank[j] >= rank[i]) best = std::min(best, p[j] * static_cast<double>(m) / static_cast<double>(rank[j]));
    }
    out[i] = best;
  }
  return out;
}

// ---------------------------------------------------------------- metrics

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0, support = 0;
};

inline std::map<std::string, ClassCounts> class_counts(const std::vector<std::string>& pred,
                                                       const std::vector<std::string>& truth) {
  std::set<std::string> labels(pred.begin(), pred.end());
  labels.insert(truth.begin(), truth.end());
  std::map<std::string, ClassCounts> out;
  for (const auto& l : labels) {
    ClassCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == l, t = truth[i] == l;
      c.tp += p && t;
      c.fp += p && !t;
      c.fn += !p && t;
      c.support += t;
    }
    out[l] = c;
  }
  return out;
}

inline double f1(const ClassCounts& c) {
  const double prec = c.tp + c.fp ? double(c.tp) / double(c.tp + c.fp) : 0.0;
  const double rec = c.tp + c.fn ? double(c.tp) / double(c.tp + c.fn) : 0.0;
  return prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
}

inline double accuracy(const std::vector<std::string>& pred, const std::vector<std::string>& truth) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return double(hit) / double(pred.size());
}

inline double macro_f1(const std::vector<std::string>& pred, const std::vector<std::string>& truth) {
  double s = 0;
  int k = 0;
  for (const auto& [label, c] : class_counts(pred, truth)) {
    if (c.support == 0) continue;
    s += f1(c);
    ++k;
  }
  return s / k;
}

// ---------------------------------------------------------------- policy

/// Log-probabilities of every completion token, computed with plain loops
/// straight from the architecture description.
inline std::vector<double> logprobs(const ivfalign::PolicyParams& p, const ivfalign::TokenSeq& s) {
  const auto& sh = p.shape();
  const int V = sh.vocab, E = sh.embed, K = sh.window, H = sh.hidden, D = sh.input_dim();
  const auto tok = p.token_embedding(), pe = p.prompt_embedding(), w1 = p.w1(), b1 = p.b1(),
             w2 = p.w2(), b2 = p.b2();
  std::vector<int> all(s.prompt.begin(), s.prompt.end());
  all.insert(all.end(), s.completion.begin(), s.completion.end());
  std::vector<double> pool(E, 0.0);
  for (int t : s.prompt) {
    for (int e = 0; e < E; ++e) pool[e] += pe[t * E + e] / double(s.prompt.size());
  }
  const int pad = ivfalign::Vocab::standard().pad();
  std::vector<double> out;
  for (std::size_t t = 0; t < s.completion.size(); ++t) {
    const long end = long(s.prompt.size() + t);
    std::vector<double> x;
    for (int k = 0; k < K; ++k) {
      const long pos = end - (K - k);
      const int id = pos < 0 ? pad : all[pos];
      for (int e = 0; e < E; ++e) x.push_back(tok[id * E + e]);
    }
    x.insert(x.end(), pool.begin(), pool.end());
    std::vector<double> h(H);
    for (int j = 0; j < H; ++j) {
      double a = b1[j];
      for (int d = 0; d < D; ++d) a += w1[j * D + d] * x[d];
      h[j] = std::tanh(a);
    }
    std::vector<double> z(V);
    double zmax = -1e300;
    for (int v = 0; v < V; ++v) {
      z[v] = b2[v];
      for (int j = 0; j < H; ++j) z[v] += w2[v * H + j] * h[j];
      zmax = std::max(zmax, z[v]);
    }
    double sum = 0;
    for (int v = 0; v < V; ++v) sum += std::exp(z[v] - zmax);
    out.push_back(z[s.completion[t]] - zmax - std::log(sum));
  }
  return out;
}

}  // namespace oracle
