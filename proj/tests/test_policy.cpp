#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <fstream>
#include <set>

#include "fixtures.hpp"
#include "ivfalign/error.hpp"
#include "ivfalign/policy.hpp"
#include "ivfalign/synthgen.hpp"
#include "oracles.hpp"

using namespace ivfalign;

namespace {

TokenSeq sample_seq(std::uint64_t seed) {
  Rng rng(seed);
  auto record = fixture::record("p" + std::to_string(seed));
  record.amh = 0.5 + 4 * uniform01(rng);
  record.age = 25 + uniform_int(rng, 0, 15);
  const auto bundle = fixture::random_bundle(rng);
  return encode(record, &bundle);
}

PolicyShape small_shape() {
  PolicyShape s = standard_shape();
  s.embed = 4;
  s.window = 3;
  s.hidden = 6;
  return s;
}

double chi_square_p(const std::vector<double>& observed, const std::vector<double>& expected) {
  // Bins with expected count below 5 are pooled into one.
  double stat = 0, pooled_o = 0, pooled_e = 0;
  int bins = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (expected[i] < 5) {
      pooled_o += observed[i];
      pooled_e += expected[i];
      continue;
    }
    stat += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
    ++bins;
  }
  if (pooled_e > 0) {
    stat += (pooled_o - pooled_e) * (pooled_o - pooled_e) / pooled_e;
    ++bins;
  }
  boost::math::chi_squared dist(bins - 1);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace

TEST_SUITE("policy") {
  TEST_CASE("vocabulary") {
    const auto& v = Vocab::standard();
    CHECK(v.size() <= 512);
    CHECK(v.symbol(v.eos()) == "<eos>");
    CHECK(v.id("art:PGT-M") >= 0);
    CHECK_THROWS_AS(v.id("art:PGD"), ValidationError);
    CHECK_THROWS_AS(v.symbol(v.size()), ValidationError);
    CHECK(standard_shape().vocab == v.size());
  }

  TEST_CASE("decode inverts encode on 1000 random bundles") {
    const auto& v = Vocab::standard();
    Rng rng(2024);
    for (int i = 0; i < 1000; ++i) {
      const auto b = fixture::random_bundle(rng);
      const auto tokens = encode_completion(b);
      REQUIRE(tokens.size() <= kMaxCompletionLength);
      CHECK(tokens.back() == v.eos());
      int art_tokens = 0, cos_tokens = 0;
      for (auto t : tokens) {
        const auto sym = v.symbol(t);
        art_tokens += sym.rfind("art:", 0) == 0;
        cos_tokens += sym.rfind("cos:", 0) == 0;
      }
      CHECK(art_tokens == 1);
      CHECK(cos_tokens == 1);
      const auto back = decode(tokens);
      REQUIRE(back.has_value());
      REQUIRE(*back == b);
    }
  }

  TEST_CASE("malformed completions do not decode") {
    auto tokens = encode_completion(fixture::bundle());
    CHECK_FALSE(decode(std::span(tokens).first(tokens.size() / 2)).has_value());
    CHECK_FALSE(decode(std::vector<TokenId>{}).has_value());
    const auto& v = Vocab::standard();
    for (auto& t : tokens) {
      if (v.symbol(t).rfind("art:", 0) == 0) t = v.id("cos:PPOS");
    }
    CHECK_FALSE(decode(tokens).has_value());
  }

  TEST_CASE("zero parameters give the uniform distribution") {
    const auto params = zero_params();
    const auto seq = sample_seq(1);
    const double expected = -std::log(static_cast<double>(Vocab::standard().size()));
    for (double lp : logprobs(params, seq)) CHECK(lp == doctest::Approx(expected).epsilon(1e-14));
  }

  TEST_CASE("distribution rows are normalized log-probabilities") {
    const auto params = random_params(5);
    const auto seq = sample_seq(2);
    const auto d = distributions(params, seq);
    for (std::size_t t = 0; t < seq.completion.size(); ++t) {
      double total = 0;
      for (double lp : d.row(t)) {
        CHECK(lp <= 0.0);
        total += std::exp(lp);
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }

  TEST_CASE("forward pass matches the loop oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto params = random_params(seed);
      const auto seq = sample_seq(100 + seed);
      const auto fast = logprobs(params, seq);
      const auto slow = oracle::logprobs(params, seq);
      REQUIRE(fast.size() == slow.size());
      for (std::size_t t = 0; t < fast.size(); ++t) CHECK(fast[t] == doctest::Approx(slow[t]).epsilon(1e-10));
      double total = 0;
      for (double x : slow) total += x;
      CHECK(sequence_logprob(params, seq) == doctest::Approx(total).epsilon(1e-10));
    }
  }

  TEST_CASE("out-of-range tokens are rejected") {
    const auto params = random_params(1);
    auto seq = sample_seq(3);
    seq.completion[2] = Vocab::standard().size();
    CHECK_THROWS_AS(logprobs(params, seq), ValidationError);
    seq.completion[2] = -1;
    CHECK_THROWS_AS(logprobs(params, seq), ValidationError);
  }

  TEST_CASE("log-probability gradient matches finite differences") {
    const auto shape = small_shape();
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto params = random_params(seed, shape);
      const auto seq = sample_seq(seed + 10);
      Rng rng(seed);
      std::vector<double> coeffs(seq.completion.size());
      for (auto& c : coeffs) c = normal01(rng);
      const LossFn loss = [&](const PolicyParams& p, std::vector<double>* grad) {
        const auto lp = logprobs(p, seq);
        double v = 0;
        for (std::size_t t = 0; t < lp.size(); ++t) v += coeffs[t] * lp[t];
        if (grad) {
          grad->assign(p.size(), 0.0);
          accumulate_logprob_grad(p, seq, coeffs, *grad);
        }
        return v;
      };
      const auto report = grad_check(loss, params, 1e-5, seed, 0.2);
      CHECK(report.coords_checked > 0);
      CHECK(report.max_rel_error < 1e-5);
      CHECK(report.passed);
    }
  }

  TEST_CASE("sampling follows the softmax") {
    const auto params = random_params(9);
    const auto prompt = encode_prompt(fixture::record("s"));
    const auto d = distributions(params, TokenSeq{prompt, {0}});
    const int V = Vocab::standard().size();
    std::vector<double> observed(V, 0.0), expected(V, 0.0);
    const int draws = 100000, per_call = 1000;
    for (int call = 0; call < draws / per_call; ++call) {
      for (const auto& c : sample_group(params, prompt, per_call, 1.0, 700 + call, 1)) {
        REQUIRE(c.size() == 1);
        observed[c[0]] += 1;
      }
    }
    for (int v = 0; v < V; ++v) expected[v] = draws * std::exp(d.row(0)[v]);
    CHECK(chi_square_p(observed, expected) > 0.001);
  }

  TEST_CASE("sampling determinism and limits") {
    const auto params = random_params(4);
    const auto prompt = encode_prompt(fixture::record("d"));
    const auto a = sample_group(params, prompt, 4, 1.0, 77);
    CHECK(a == sample_group(params, prompt, 4, 1.0, 77));
    CHECK(a.size() == 4);
    for (const auto& c : a) CHECK(c.size() <= kMaxCompletionLength);
    CHECK_THROWS_AS(sample_group(params, prompt, 1, 1.0, 1), ValidationError);
    CHECK_THROWS_AS(sample_group(params, prompt, 4, 0.0, 1), ValidationError);
  }

  TEST_CASE("low temperature collapses to greedy decoding") {
    const auto params = random_params(6);
    const auto prompt = encode_prompt(fixture::record("g"));
    const auto greedy = greedy_decode(params, prompt);
    for (const auto& c : sample_group(params, prompt, 8, 1e-6, 3)) CHECK(c == greedy);
  }

  TEST_CASE("checkpoint round trip is bit-exact") {
    fixture::TempDir dir("ckpt");
    const auto params = random_params(12);
    save_checkpoint(params, dir / "p.bin");
    const auto back = load_checkpoint(dir / "p.bin");
    CHECK(back == params);
    CHECK(max_abs_diff(back, params) == 0.0);
    std::ofstream(dir / "junk.bin") << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.bin"), ValidationError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), IoError);
  }

  TEST_CASE("prompt encoding reflects the record") {
    auto r = fixture::record("e");
    const auto plain = encode_prompt(r);
    r.history_text += " monogenic disorder carrier.";
    const auto with_finding = encode_prompt(r);
    CHECK(plain != with_finding);
    CHECK(with_finding.size() == plain.size() + 1);
    r.amh = 0.3;
    CHECK(encode_prompt(r) != with_finding);
  }
}
