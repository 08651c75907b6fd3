#pragma once

// Alignment stages on the toy policy: supervised likelihood, direct
// preference optimization, group relative policy optimization and the
// guideline-augmented (ICL) prompt.
//
// DPO loss for a pair (x, y_w, y_l):
//   -log sigmoid(beta * [(log pi(y_w|x) - log ref(y_w|x)) - (log pi(y_l|x) - log ref(y_l|x))])
//
// GRPO objective for a group {o_i} sampled from pi_old with advantages A_i:
//   J = 1/G sum_i 1/|o_i| sum_t [ min(rho A_i, clip(rho, 1-eps, 1+eps) A_i) - beta_kl D_t ]
//   rho = pi(o_it|...) / pi_old(o_it|...)
//   D_t = ref/pi - log(ref/pi) - 1     (per-token estimator, default)
//       = KL(pi(.|...) || ref(.|...))  (exact categorical KL, optional)

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ivfalign/lexicon.hpp"
#include "ivfalign/policy.hpp"
#include "ivfalign/rewards.hpp"

namespace ivfalign {

// ---------------------------------------------------------------- optimizer

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Descends `grad` (or ascends it when `maximize`).
  void step(std::span<double> params, std::span<const double> grad, bool maximize = false);
  long steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

// ---------------------------------------------------------------- SFT

/// Mean negative log-likelihood per completion token over the batch; prompt
/// tokens are context only. Cases with an empty completion are skipped with a
/// warning. When `grad` is non-null it receives the gradient (resized).
double sft_loss(const PolicyParams& params, std::span<const TokenSeq> batch,
                std::vector<double>* grad = nullptr);

struct SftConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 3e-3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SftResult {
  PolicyParams params;
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

/// Adam over shuffled minibatches. Throws DivergenceError on non-finite
/// parameters.
SftResult train_sft(PolicyParams init, std::span<const TokenSeq> data, const SftConfig& cfg);

// ---------------------------------------------------------------- DPO

struct PreferencePair {
  std::vector<TokenId> prompt;
  std::vector<TokenId> chosen;
  std::vector<TokenId> rejected;

  bool operator==(const PreferencePair&) const = default;
};

struct DpoConfig {
  double beta = 0.3;
  double learning_rate = 1e-3;
  int epochs = 1;
  int batch_size = 8;
  std::uint64_t seed = 1;

  void validate() const;
};

double dpo_loss(const PolicyParams& params, const PolicyParams& ref, const PreferencePair& pair,
                double beta, std::vector<double>* grad = nullptr);

/// Loss from precomputed sequence log-probabilities (policy and reference).
double dpo_loss_value(double logp_chosen, double logp_rejected, double ref_chosen,
                      double ref_rejected, double beta);

struct DpoResult {
  PolicyParams params;
  std::vector<double> epoch_loss;
};

DpoResult train_dpo(PolicyParams init, const PolicyParams& ref,
                    std::span<const PreferencePair> pairs, const DpoConfig& cfg);

// ---------------------------------------------------------------- GRPO

enum class AdvantageMode { Standardized, MeanBaseline };
enum class KlMode { Estimator, Exact };

std::string_view to_string(AdvantageMode m);
std::string_view to_string(KlMode m);
AdvantageMode parse_advantage_mode(std::string_view s);
KlMode parse_kl_mode(std::string_view s);

/// Standardized: (r - mean) / (population std + 1e-8). Mean baseline: r - mean.
std::vector<double> group_advantages(std::span<const double> rewards,
                                     AdvantageMode mode = AdvantageMode::Standardized);

struct GrpoConfig {
  int group_size = 8;
  double clip_eps = 0.2;
  double beta_kl = 0.04;
  double temperature = 1.0;
  int steps = 200;
  int prompts_per_step = 4;
  int policy_iterations = 1;
  double learning_rate = 5e-4;
  AdvantageMode advantage = AdvantageMode::Standardized;
  KlMode kl = KlMode::Estimator;
  std::uint64_t seed = 1;

  void validate() const;
};

/// One prompt's sampled group with everything that stays fixed while the
/// policy is optimized against it.
struct FrozenGroup {
  std::vector<TokenId> prompt;
  std::vector<std::vector<TokenId>> completions;
  std::vector<double> advantages;
  std::vector<std::vector<double>> old_logprobs;
  std::vector<std::vector<double>> ref_logprobs;
  std::vector<Distributions> ref_distributions;  // filled only for KlMode::Exact
};

FrozenGroup freeze_group(const PolicyParams& old, const PolicyParams& ref,
                         std::vector<TokenId> prompt,
                         std::vector<std::vector<TokenId>> completions,
                         std::vector<double> advantages, KlMode kl = KlMode::Estimator);

struct ObjectiveTerms {
  double objective = 0;   // surrogate - beta_kl * kl
  double surrogate = 0;
  double kl = 0;          // mean per-token divergence
  double clipped_fraction = 0;
};

/// J averaged over the groups (each group as in the header formula). When
/// `grad` is non-null it receives dJ/dtheta (resized). Throws DivergenceError
/// naming the group, output and token position of a non-finite ratio.
ObjectiveTerms grpo_objective(const PolicyParams& params, std::span<const FrozenGroup> groups,
                              const GrpoConfig& cfg, std::vector<double>* grad = nullptr);

/// Convenience form that freezes a single group against `old` and `ref`.
ObjectiveTerms grpo_objective(const PolicyParams& params, const PolicyParams& old,
                              const PolicyParams& ref, std::vector<TokenId> prompt,
                              std::vector<std::vector<TokenId>> completions,
                              std::vector<double> advantages, const GrpoConfig& cfg,
                              std::vector<double>* grad = nullptr);

struct GrpoPrompt {
  std::vector<TokenId> prompt;
  DecisionBundle reference;
};

/// Scores one sampled completion against the reference answer.
using RewardFn = std::function<double(std::span<const TokenId> completion,
                                      const DecisionBundle& reference)>;

/// Decodes the completion and applies composite_reward.
RewardFn composite_reward_fn(RewardWeights w = {});

struct GrpoResult {
  PolicyParams params;
  std::vector<double> reward_trace;     // mean group reward per step
  std::vector<double> objective_trace;  // objective after the last inner iteration
  std::vector<double> kl_trace;
};

/// Each step snapshots the current policy as pi_old, samples G completions for
/// `prompts_per_step` prompts (cycling through a seeded shuffle), and takes
/// `policy_iterations` Adam ascent steps on J. Throws DivergenceError with the
/// step index when parameters become non-finite.
GrpoResult train_grpo(PolicyParams init, const PolicyParams& ref,
                      std::span<const GrpoPrompt> prompts, const RewardFn& reward,
                      const GrpoConfig& cfg);

// ---------------------------------------------------------------- ICL

inline constexpr std::string_view kIclInstruction =
    "DO NOT USE THE GUIDELINE UNLESS YOU ARE NOT SURE ABOUT YOUR ANSWER.";

struct GuidelineBlock {
  lexicon::GuidelineTopic topic = lexicon::GuidelineTopic::Art;
  std::vector<std::string> lines;

  /// The synthetic guideline's rule list for `topic`.
  static GuidelineBlock standard(lexicon::GuidelineTopic topic);
  /// Marker token plus one token per line.
  std::size_t token_length() const { return 1 + lines.size(); }
};

/// [instruction] ++ blocks (ART before COS) ++ record prompt. Zero blocks
/// yields the plain record prompt. Throws ValidationError for more than two
/// blocks, a repeated topic or an empty block.
std::vector<TokenId> assemble_icl_prompt(const PatientRecord& record,
                                         std::span<const GuidelineBlock> blocks);

}  // namespace ivfalign
