#include "ivfalign/align.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ivfalign/error.hpp"
#include "ivfalign/log.hpp"
#include "ivfalign/random.hpp"

namespace ivfalign {
namespace {

void check_finite(const PolicyParams& p, const std::string& where) {
  if (!p.all_finite()) throw DivergenceError("non-finite parameters at " + where);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  shuffle(std::span(idx), rng);
  return idx;
}

}  // namespace

void Adam::step(std::span<double> params, std::span<const double> grad, bool maximize) {
  if (params.size() != grad.size()) throw ValidationError("gradient size mismatch");
  if (m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
    t_ = 0;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double sign = maximize ? 1.0 : -1.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = beta1_ * m_[i] + (1 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1 - beta2_) * g * g;
    params[i] += sign * lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

// ---------------------------------------------------------------- SFT

double sft_loss(const PolicyParams& params, std::span<const TokenSeq> batch,
                std::vector<double>* grad) {
  if (batch.empty()) throw ValidationError("SFT batch is empty");
  std::size_t tokens = 0;
  for (const auto& seq : batch) tokens += seq.completion.size();
  if (grad) grad->assign(params.size(), 0.0);
  if (tokens == 0) {
    warn("SFT batch has no completion tokens; all cases skipped");
    return 0.0;
  }
  const double inv = 1.0 / static_cast<double>(tokens);
  double nll = 0;
  std::vector<double> coeffs;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& seq = batch[i];
    if (seq.completion.empty()) {
      warn("SFT case " + std::to_string(i) + " has an empty completion; skipped");
      continue;
    }
    for (double lp : logprobs(params, seq)) nll -= lp;
    if (grad) {
      coeffs.assign(seq.completion.size(), -inv);
      accumulate_logprob_grad(params, seq, coeffs, *grad);
    }
  }
  return nll * inv;
}

void SftConfig::validate() const {
  if (epochs < 0) throw ValidationError("sft epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("sft batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("sft learning_rate must be positive");
}

SftResult train_sft(PolicyParams init, std::span<const TokenSeq> data, const SftConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ValidationError("SFT training set is empty");
  SftResult result{std::move(init), {}};
  Adam opt(cfg.learning_rate);
  Rng rng(derive_seed(cfg.seed, 0x5F7));
  std::vector<double> grad;
  std::vector<TokenSeq> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(data.size(), rng);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(data[order[k]]);
      total += sft_loss(result.params, batch, &grad);
      ++batches;
      opt.step(result.params.data(), grad);
      check_finite(result.params, "SFT epoch " + std::to_string(epoch) + " batch " +
                                      std::to_string(batches - 1));
    }
    result.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  return result;
}

// ---------------------------------------------------------------- DPO

void DpoConfig::validate() const {
  if (!(beta > 0)) throw ValidationError("dpo beta must be positive");
  if (!(learning_rate > 0)) throw ValidationError("dpo learning_rate must be positive");
  if (epochs < 0) throw ValidationError("dpo epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("dpo batch_size must be >= 1");
}

double dpo_loss_value(double logp_chosen, double logp_rejected, double ref_chosen,
                      double ref_rejected, double beta) {
  const double u = (logp_chosen - ref_chosen) - (logp_rejected - ref_rejected);
  return softplus(-beta * u);
}

namespace {

struct PairSeqs {
  TokenSeq chosen, rejected;
};

PairSeqs pair_seqs(const PreferencePair& p) {
  return {TokenSeq{p.prompt, p.chosen}, TokenSeq{p.prompt, p.rejected}};
}

// Adds scale * d(loss)/d(theta) for one pair given the reference log-probs.
double dpo_accumulate(const PolicyParams& params, const PairSeqs& s, double ref_w, double ref_l,
                      double beta, double scale, std::vector<double>* grad) {
  const double lw = sequence_logprob(params, s.chosen);
  const double ll = sequence_logprob(params, s.rejected);
  const double loss = dpo_loss_value(lw, ll, ref_w, ref_l, beta);
  if (grad) {
    const double u = (lw - ref_w) - (ll - ref_l);
    const double g = beta * sigmoid(-beta * u) * scale;
    std::vector<double> cw(s.chosen.completion.size(), -g);
    std::vector<double> cl(s.rejected.completion.size(), g);
    accumulate_logprob_grad(params, s.chosen, cw, *grad);
    accumulate_logprob_grad(params, s.rejected, cl, *grad);
  }
  return loss;
}

}  // namespace

double dpo_loss(const PolicyParams& params, const PolicyParams& ref, const PreferencePair& pair,
                double beta, std::vector<double>* grad) {
  const PairSeqs s = pair_seqs(pair);
  if (grad) grad->assign(params.size(), 0.0);
  return dpo_accumulate(params, s, sequence_logprob(ref, s.chosen),
                        sequence_logprob(ref, s.rejected), beta, 1.0, grad);
}

DpoResult train_dpo(PolicyParams init, const PolicyParams& ref,
                    std::span<const PreferencePair> pairs, const DpoConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw ValidationError("DPO training set is empty");
  std::vector<PairSeqs> seqs;
  std::vector<double> ref_w, ref_l;
  for (const auto& p : pairs) {
    seqs.push_back(pair_seqs(p));
    ref_w.push_back(sequence_logprob(ref, seqs.back().chosen));
    ref_l.push_back(sequence_logprob(ref, seqs.back().rejected));
  }
  DpoResult result{std::move(init), {}};
  Adam opt(cfg.learning_rate);
  Rng rng(derive_seed(cfg.seed, 0xD90));
  std::vector<double> grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(pairs.size(), rng);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      grad.assign(result.params.size(), 0.0);
      double loss = 0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        loss += dpo_accumulate(result.params, seqs[i], ref_w[i], ref_l[i], cfg.beta, scale, &grad);
      }
      total += loss * scale;
      ++batches;
      opt.step(result.params.data(), grad);
      check_finite(result.params, "DPO epoch " + std::to_string(epoch) + " batch " +
                                      std::to_string(batches - 1));
    }
    result.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  return result;
}

// ---------------------------------------------------------------- GRPO

std::string_view to_string(AdvantageMode m) {
  return m == AdvantageMode::Standardized ? "standardized" : "mean-baseline";
}

std::string_view to_string(KlMode m) { return m == KlMode::Estimator ? "estimator" : "exact"; }

AdvantageMode parse_advantage_mode(std::string_view s) {
  if (s == "standardized") return AdvantageMode::Standardized;
  if (s == "mean-baseline") return AdvantageMode::MeanBaseline;
  throw ValidationError("unknown advantage mode '" + std::string(s) +
                        "' (valid: standardized, mean-baseline)");
}

KlMode parse_kl_mode(std::string_view s) {
  if (s == "estimator") return KlMode::Estimator;
  if (s == "exact") return KlMode::Exact;
  throw ValidationError("unknown KL mode '" + std::string(s) + "' (valid: estimator, exact)");
}

std::vector<double> group_advantages(std::span<const double> rewards, AdvantageMode mode) {
  if (rewards.size() < 2) throw ValidationError("group advantages need at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  std::vector<double> adv(rewards.size(), 0.0);
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) {
    return adv;  // the rounded mean may differ from the common value
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = rewards[i] - mean;
  if (mode == AdvantageMode::MeanBaseline) return adv;
  double ss = 0;
  for (double a : adv) ss += a * a;
  const double denom = std::sqrt(ss / n) + 1e-8;
  for (double& a : adv) a /= denom;
  return adv;
}

void GrpoConfig::validate() const {
  if (group_size < 2) throw ValidationError("grpo group_size must be >= 2");
  if (!(clip_eps > 0 && clip_eps < 1)) throw ValidationError("grpo clip_eps must lie in (0, 1)");
  if (!(beta_kl >= 0) || !std::isfinite(beta_kl)) throw ValidationError("grpo beta_kl must be >= 0");
  if (!(temperature > 0)) throw ValidationError("grpo temperature must be positive");
  if (steps < 0) throw ValidationError("grpo steps must be >= 0");
  if (prompts_per_step < 1) throw ValidationError("grpo prompts_per_step must be >= 1");
  if (policy_iterations < 1) throw ValidationError("grpo policy_iterations must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("grpo learning_rate must be positive");
}

FrozenGroup freeze_group(const PolicyParams& old, const PolicyParams& ref,
                         std::vector<TokenId> prompt,
                         std::vector<std::vector<TokenId>> completions,
                         std::vector<double> advantages, KlMode kl) {
  if (completions.size() != advantages.size()) {
    throw ValidationError("one advantage per completion is required");
  }
  FrozenGroup g;
  g.prompt = std::move(prompt);
  g.completions = std::move(completions);
  g.advantages = std::move(advantages);
  for (const auto& c : g.completions) {
    const TokenSeq seq{g.prompt, c};
    g.old_logprobs.push_back(logprobs(old, seq));
    if (kl == KlMode::Exact) {
      g.ref_distributions.push_back(distributions(ref, seq));
      std::vector<double> lr(c.size());
      for (std::size_t t = 0; t < c.size(); ++t) {
        lr[t] = g.ref_distributions.back().row(t)[static_cast<std::size_t>(c[t])];
      }
      g.ref_logprobs.push_back(std::move(lr));
    } else {
      g.ref_logprobs.push_back(logprobs(ref, seq));
    }
  }
  return g;
}

ObjectiveTerms grpo_objective(const PolicyParams& params, std::span<const FrozenGroup> groups,
                              const GrpoConfig& cfg, std::vector<double>* grad) {
  if (groups.empty()) throw ValidationError("GRPO objective needs at least one group");
  if (grad) grad->assign(params.size(), 0.0);
  const bool exact = cfg.kl == KlMode::Exact;
  const double lo = 1.0 - cfg.clip_eps;
  const double hi = 1.0 + cfg.clip_eps;
  const auto V = static_cast<std::size_t>(params.shape().vocab);

  ObjectiveTerms terms;
  std::size_t tokens = 0, clipped = 0;
  std::vector<double> coeffs, dlogits;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const FrozenGroup& g = groups[gi];
    if (g.completions.empty()) throw ValidationError("GRPO group is empty");
    if (exact && g.ref_distributions.size() != g.completions.size()) {
      throw ValidationError("exact KL requires a group frozen with KlMode::Exact");
    }
    const double group_w =
        1.0 / (static_cast<double>(groups.size()) * static_cast<double>(g.completions.size()));
    for (std::size_t i = 0; i < g.completions.size(); ++i) {
      const TokenSeq seq{g.prompt, g.completions[i]};
      const std::size_t T = seq.completion.size();
      if (T == 0) continue;
      const double w = group_w / static_cast<double>(T);
      const double A = g.advantages[i];
      Distributions dist;
      std::vector<double> lp;
      if (exact) {
        dist = distributions(params, seq);
        lp.resize(T);
        for (std::size_t t = 0; t < T; ++t) lp[t] = dist.row(t)[static_cast<std::size_t>(seq.completion[t])];
      } else {
        lp = logprobs(params, seq);
      }
      coeffs.assign(T, 0.0);
      if (exact && grad) dlogits.assign(T * V, 0.0);
      double factor_sum = 0;
      for (std::size_t t = 0; t < T; ++t) {
        const double rho = std::exp(lp[t] - g.old_logprobs[i][t]);
        if (!std::isfinite(rho)) {
          throw DivergenceError("non-finite probability ratio at group " + std::to_string(gi) +
                                ", output " + std::to_string(i) + ", token position " +
                                std::to_string(t));
        }
        const double unclipped = rho * A;
        const double clip_term = std::clamp(rho, lo, hi) * A;
        double sur_coef = 0;
        if (unclipped <= clip_term) {
          sur_coef = unclipped;
        } else {
          ++clipped;
        }
        // min(rho A, clip(rho) A) = A * factor; summing factors first makes
        // the identity point (every rho = 1) reduce to the mean advantage.
        const double clipped_rho = std::clamp(rho, lo, hi);
        factor_sum += A >= 0 ? std::min(rho, clipped_rho) : std::max(rho, clipped_rho);

        double kl = 0;
        double kl_coef = 0;
        if (exact) {
          const auto p_row = dist.row(t);
          const auto q_row = g.ref_distributions[i].row(t);
          for (std::size_t v = 0; v < V; ++v) kl += std::exp(p_row[v]) * (p_row[v] - q_row[v]);
          if (grad) {
            double* row = dlogits.data() + t * V;
            for (std::size_t v = 0; v < V; ++v) {
              const double p = std::exp(p_row[v]);
              row[v] = w * (-cfg.beta_kl * p * (p_row[v] - q_row[v] - kl) - sur_coef * p);
            }
            row[static_cast<std::size_t>(seq.completion[t])] += w * sur_coef;
          }
        } else {
          const double x = g.ref_logprobs[i][t] - lp[t];
          kl = std::exp(x) - x - 1.0;
          kl_coef = -cfg.beta_kl * (1.0 - std::exp(x));
        }
        coeffs[t] = w * (sur_coef + kl_coef);
        terms.kl += w * kl;
        ++tokens;
      }
      terms.surrogate += group_w * A * (factor_sum / static_cast<double>(T));
      if (grad) {
        if (exact) {
          accumulate_logit_grad(params, seq, dlogits, *grad);
        } else {
          accumulate_logprob_grad(params, seq, coeffs, *grad);
        }
      }
    }
  }
  terms.objective = terms.surrogate - cfg.beta_kl * terms.kl;
  terms.clipped_fraction = tokens ? static_cast<double>(clipped) / static_cast<double>(tokens) : 0;
  return terms;
}

ObjectiveTerms grpo_objective(const PolicyParams& params, const PolicyParams& old,
                              const PolicyParams& ref, std::vector<TokenId> prompt,
                              std::vector<std::vector<TokenId>> completions,
                              std::vector<double> advantages, const GrpoConfig& cfg,
                              std::vector<double>* grad) {
  const FrozenGroup g = freeze_group(old, ref, std::move(prompt), std::move(completions),
                                     std::move(advantages), cfg.kl);
  return grpo_objective(params, std::span(&g, 1), cfg, grad);
}

RewardFn composite_reward_fn(RewardWeights w) {
  w.validate();
  return [w](std::span<const TokenId> completion, const DecisionBundle& reference) {
    return composite_reward(decode(completion), reference, w).composite;
  };
}

GrpoResult train_grpo(PolicyParams init, const PolicyParams& ref,
                      std::span<const GrpoPrompt> prompts, const RewardFn& reward,
                      const GrpoConfig& cfg) {
  cfg.validate();
  if (prompts.empty()) throw ValidationError("GRPO prompt set is empty");
  if (!(init.shape() == ref.shape())) throw ValidationError("policy and reference shapes differ");
  GrpoResult result{std::move(init), {}, {}, {}};
  Adam opt(cfg.learning_rate);
  Rng order_rng(derive_seed(cfg.seed, 0x6290));
  const std::uint64_t sample_seed = derive_seed(cfg.seed, 0x5A3);
  auto order = shuffled_indices(prompts.size(), order_rng);
  std::size_t cursor = 0;
  const auto per_step = static_cast<std::size_t>(cfg.prompts_per_step);

  std::vector<FrozenGroup> groups;
  std::vector<double> grad;
  for (int step = 0; step < cfg.steps; ++step) {
    const PolicyParams old = result.params;
    groups.clear();
    double reward_sum = 0;
    std::size_t reward_n = 0;
    for (std::size_t j = 0; j < per_step; ++j) {
      if (cursor == order.size()) {
        order = shuffled_indices(prompts.size(), order_rng);
        cursor = 0;
      }
      const GrpoPrompt& p = prompts[order[cursor++]];
      auto completions = sample_group(old, p.prompt, cfg.group_size, cfg.temperature,
                                      derive_seed(sample_seed, static_cast<std::uint64_t>(step) * per_step + j));
      std::vector<double> rewards;
      rewards.reserve(completions.size());
      for (const auto& c : completions) rewards.push_back(reward(c, p.reference));
      reward_sum += std::accumulate(rewards.begin(), rewards.end(), 0.0);
      reward_n += rewards.size();
      groups.push_back(freeze_group(old, ref, p.prompt, std::move(completions),
                                    group_advantages(rewards, cfg.advantage), cfg.kl));
    }
    ObjectiveTerms terms;
    for (int it = 0; it < cfg.policy_iterations; ++it) {
      terms = grpo_objective(result.params, groups, cfg, &grad);
      opt.step(result.params.data(), grad, /*maximize=*/true);
      check_finite(result.params, "GRPO step " + std::to_string(step));
    }
    result.reward_trace.push_back(reward_sum / static_cast<double>(reward_n));
    result.objective_trace.push_back(terms.objective);
    result.kl_trace.push_back(terms.kl);
  }
  return result;
}

// ---------------------------------------------------------------- ICL

GuidelineBlock GuidelineBlock::standard(lexicon::GuidelineTopic topic) {
  GuidelineBlock b;
  b.topic = topic;
  for (auto line : lexicon::guideline_lines(topic)) b.lines.emplace_back(line);
  return b;
}

std::vector<TokenId> assemble_icl_prompt(const PatientRecord& record,
                                         std::span<const GuidelineBlock> blocks) {
  if (blocks.empty()) return encode_prompt(record);
  if (blocks.size() > 2) throw ValidationError("at most two guideline blocks are allowed");
  if (blocks.size() == 2 && blocks[0].topic == blocks[1].topic) {
    throw ValidationError("duplicate guideline topic '" +
                          std::string(lexicon::to_string(blocks[0].topic)) + "'");
  }
  std::vector<const GuidelineBlock*> ordered;
  for (const auto& b : blocks) {
    if (b.lines.empty()) throw ValidationError("guideline block has no lines");
    ordered.push_back(&b);
  }
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const GuidelineBlock* a, const GuidelineBlock* b) { return a->topic < b->topic; });

  const Vocab& v = Vocab::standard();
  std::vector<TokenId> out{v.icl_instruction()};
  for (const GuidelineBlock* b : ordered) {
    const std::string t = b->topic == lexicon::GuidelineTopic::Art ? "art" : "cos";
    out.push_back(v.id("[guide-" + t + "]"));
    const auto canon = lexicon::guideline_lines(b->topic);
    for (const auto& line : b->lines) {
      const auto it = std::find(canon.begin(), canon.end(), line);
      out.push_back(it == canon.end()
                        ? v.id("guide:unknown")
                        : v.id("guide-" + t + ":" + std::to_string(it - canon.begin())));
    }
  }
  const auto base = encode_prompt(record);
  out.insert(out.end(), base.begin(), base.end());
  return out;
}

}  // namespace ivfalign
