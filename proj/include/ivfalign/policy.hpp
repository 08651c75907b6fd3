#pragma once

// Tiny autoregressive policy over a compact token vocabulary.
//
// The prompt encodes a PatientRecord (binned numerics plus narrative finding
// atoms); the completion encodes a DecisionBundle (four reasoning sections,
// then the five decision fields, then EOS). Next-token logits come from
//
//   x_t = [E(s_{t-k}) ... E(s_{t-1}), mean_j P(prompt_j)]
//   h_t = tanh(W1 x_t + b1)
//   z_t = W2 h_t + b2
//
// with a k-token window embedding E and a mean-pooled prompt embedding P, so
// every completion token sees the whole record. Gradients are hand-derived.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ivfalign/schema.hpp"

namespace ivfalign {

using TokenId = int;

class Vocab {
 public:
  static const Vocab& standard();

  int size() const { return static_cast<int>(symbols_.size()); }
  TokenId id(std::string_view symbol) const;  // throws ValidationError if unknown
  std::optional<TokenId> find(std::string_view symbol) const;
  std::string_view symbol(TokenId id) const;
  /// FNV-1a over the ordered symbol list; guards checkpoint compatibility.
  std::uint64_t fingerprint() const;

  TokenId pad() const { return pad_; }
  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  TokenId answer() const { return answer_; }
  TokenId icl_instruction() const { return icl_instruction_; }

 private:
  Vocab();
  TokenId add(std::string symbol);

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId pad_ = 0, bos_ = 0, eos_ = 0, answer_ = 0, icl_instruction_ = 0;
};

inline constexpr std::size_t kMaxCompletionLength = 96;

struct TokenSeq {
  std::vector<TokenId> prompt;
  std::vector<TokenId> completion;

  bool operator==(const TokenSeq&) const = default;
};

std::vector<TokenId> encode_prompt(const PatientRecord& record);
std::vector<TokenId> encode_completion(const DecisionBundle& bundle);
TokenSeq encode(const PatientRecord& record, const DecisionBundle* bundle = nullptr);

/// Parses a completion back into a bundle; nullopt when the token sequence is
/// not a well-formed decision encoding.
std::optional<DecisionBundle> decode(std::span<const TokenId> completion);

/// Human-readable token dump.
std::string render_tokens(std::span<const TokenId> tokens);

struct PolicyShape {
  int vocab = 0;
  int embed = 16;
  int window = 8;
  int hidden = 64;

  int input_dim() const { return window * embed + embed; }
  std::size_t param_count() const;
  bool operator==(const PolicyShape&) const = default;
};

PolicyShape standard_shape();

/// All parameters live in one flat buffer; the accessors return views onto
/// their blocks (row-major).
class PolicyParams {
 public:
  PolicyParams() = default;
  explicit PolicyParams(PolicyShape shape);

  const PolicyShape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::span<const double> token_embedding() const { return block(0); }
  std::span<const double> prompt_embedding() const { return block(1); }
  std::span<const double> w1() const { return block(2); }
  std::span<const double> b1() const { return block(3); }
  std::span<const double> w2() const { return block(4); }
  std::span<const double> b2() const { return block(5); }

  /// Offsets of the six blocks in the flat buffer (plus the end offset).
  std::array<std::size_t, 7> offsets() const;

  bool all_finite() const;
  bool operator==(const PolicyParams&) const = default;

 private:
  std::span<const double> block(int i) const;

  PolicyShape shape_{};
  std::vector<double> data_;
};

PolicyParams zero_params(PolicyShape shape = standard_shape());
PolicyParams random_params(std::uint64_t seed, PolicyShape shape = standard_shape());

/// Max absolute element-wise difference; shapes must match.
double max_abs_diff(const PolicyParams& a, const PolicyParams& b);

/// Log-softmax rows for every completion position (|completion| x V).
struct Distributions {
  int vocab = 0;
  std::vector<double> logp;

  std::span<const double> row(std::size_t t) const {
    return {logp.data() + t * static_cast<std::size_t>(vocab), static_cast<std::size_t>(vocab)};
  }
};

/// log pi(completion_t | prompt, completion_<t) for every completion token.
std::vector<double> logprobs(const PolicyParams& params, const TokenSeq& seq);
double sequence_logprob(const PolicyParams& params, const TokenSeq& seq);
Distributions distributions(const PolicyParams& params, const TokenSeq& seq);

/// grad += d/dtheta sum_t coeffs[t] * log pi(completion_t | ...).
void accumulate_logprob_grad(const PolicyParams& params, const TokenSeq& seq,
                             std::span<const double> coeffs, std::span<double> grad);

/// grad += d/dtheta sum_t <dlogits[t], z_t>, where dlogits is |completion| x V.
void accumulate_logit_grad(const PolicyParams& params, const TokenSeq& seq,
                           std::span<const double> dlogits, std::span<double> grad);

/// G completions sampled at `temperature`; each ends in EOS or stops at
/// max_len. Throws ValidationError for G < 2 or temperature <= 0.
std::vector<std::vector<TokenId>> sample_group(const PolicyParams& params,
                                               std::span<const TokenId> prompt, int group_size,
                                               double temperature, std::uint64_t seed,
                                               std::size_t max_len = kMaxCompletionLength);

std::vector<TokenId> greedy_decode(const PolicyParams& params, std::span<const TokenId> prompt,
                                   std::size_t max_len = kMaxCompletionLength);

/// Loss callback for gradient checking: returns the loss and, when `grad` is
/// non-null, writes its gradient (sized like the parameters).
using LossFn = std::function<double(const PolicyParams&, std::vector<double>* grad)>;

struct GradCheckReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t coords_checked = 0;
  std::size_t worst_index = 0;
  bool passed = false;
};

/// Compares the analytic gradient with central differences on a seeded random
/// sample of coordinates. Relative error is |a - n| / max(|a|, |n|, 1e-4).
GradCheckReport grad_check(const LossFn& loss, const PolicyParams& params, double tol,
                           std::uint64_t seed = 0, double fraction = 0.01, double h = 1e-5);

void save_checkpoint(const PolicyParams& params, const std::filesystem::path& path);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace ivfalign
