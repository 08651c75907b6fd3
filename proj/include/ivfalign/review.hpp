#pragma once

// Blinded three-arm review. Cases are served to reviewers with the arms in a
// freshly drawn random order under the neutral labels A/B/C; the order is
// kept server-side only. Every action is appended to a hash-chained JSONL log:
//
//   {"seq":0,"type":"open","timestamp":...,"arms":[...],"cases":[...],"prev_hash":...,"hash":...}
//   {"seq":n,"type":"serve","timestamp":...,"reviewer":...,"case_id":...,"permutation":k,...}
//   {"seq":n,"type":"review","timestamp":...,"reviewer":...,"case_id":...,"permutation":k,
//    "scores":{"A":{"accuracy":..,"reasoning":..,"feasibility":..,"hallucination":..},"B":..,"C":..},
//    "best_pick":"A","idempotency_key":...|null,"prev_hash":...,"hash":...}
//
// Keys appear in exactly this order. hash = SHA-256 hex of prev_hash + "\n" +
// the compact JSON of the event without its "hash" key; the first event's
// prev_hash is 64 zeros. Permutation k lists, for labels A, B, C, the arm
// indices kPermutations[k].

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivfalign/random.hpp"
#include "ivfalign/schema.hpp"
#include "ivfalign/stats.hpp"

namespace ivfalign {

class AuthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<std::array<int, 3>, 6> kPermutations{{
    {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
inline constexpr std::array<std::string_view, 3> kArmLabels{"A", "B", "C"};
inline constexpr std::string_view kGenesisHash =
    "0000000000000000000000000000000000000000000000000000000000000000";

// ---------------------------------------------------------------- evaluation set

struct EvaluationSet {
  std::vector<CaseExample> cases;
  std::vector<std::string> warnings;
};

/// Stratified by ART generation with largest-remainder strata sizes.
EvaluationSet build_evaluation_set(std::span<const CaseExample> test_split, std::size_t n,
                                   std::uint64_t seed);

/// Plain-text renderings shown to reviewers.
std::string render_record(const PatientRecord& r);
std::string render_bundle(const DecisionBundle& b);

struct ArmResponse {
  std::string arm;       // identity, never served
  std::string response;  // rendered text
};

struct ReviewItem {
  std::string case_id;
  std::string patient;             // rendered record
  std::vector<ArmResponse> arms;   // exactly three, in the configured arm order
};

/// What a reviewer sees. Serialization emits only case_id, patient and
/// arms[{label, response}].
struct BlindCase {
  std::string case_id;
  std::string patient;
  std::array<std::string, 3> responses;  // labels A, B, C

  nlohmann::ordered_json to_json() const;
};

/// JSON Schemas shared with the browser client.
nlohmann::ordered_json blind_case_schema();
nlohmann::ordered_json review_submission_schema();
nlohmann::ordered_json review_event_schema();

// ---------------------------------------------------------------- events

struct ArmScores {
  int accuracy = 0;
  int reasoning = 0;
  int feasibility = 0;
  bool hallucination = false;

  bool operator==(const ArmScores&) const = default;
};

struct ReviewSubmission {
  std::string case_id;
  std::array<ArmScores, 3> scores;  // by label A, B, C
  int best_pick = 0;                // label index
  std::optional<std::string> idempotency_key;
};

/// Validates a client payload; the error message names every bad field.
ReviewSubmission parse_submission(const nlohmann::json& body);
nlohmann::ordered_json to_json(const ReviewSubmission& s);

struct LogEvent {
  std::uint64_t seq = 0;
  std::string type;  // open | serve | review
  nlohmann::ordered_json body;  // full event, hash included
};

/// Reads and verifies a log. Throws ValidationError naming the first bad
/// sequence number when the chain or an event is broken.
std::vector<LogEvent> read_event_log(const std::filesystem::path& path);

/// Per-case, per-arm running sums; the table it produces is identical
/// whether events arrive live or from a replay.
class RatingsAccumulator {
 public:
  void open(std::vector<std::string> arms, std::vector<std::string> cases);
  /// Applies one review event (unblinding its permutation).
  void add_review(const nlohmann::json& event);
  RatingsTable table() const;

 private:
  struct Sums {
    std::array<std::array<long long, 3>, 3> score{};  // [arm][dimension]
    std::array<long long, 3> hallucination{};
    std::size_t reviews = 0;
    std::vector<std::string> picks;
  };
  std::vector<std::string> arms_;
  std::vector<std::string> cases_;
  std::map<std::string, Sums> sums_;
  std::set<std::string> reviewers_;
  std::size_t events_ = 0;
};

/// Verifies the chain and rebuilds the ratings table.
RatingsTable unblind_and_export(const std::filesystem::path& log_path);

// ---------------------------------------------------------------- service

using Clock = std::function<std::string()>;

/// UTC ISO-8601 timestamp with millisecond precision.
std::string system_timestamp();

struct ReviewServiceConfig {
  std::vector<std::string> arms{"SFT", "GRPO", "GroundTruth"};
  std::vector<std::string> reviewer_tokens;
  std::string operator_token;
  std::filesystem::path log_path;
  std::uint64_t seed = 1;
  Clock clock = system_timestamp;
};

struct SubmitAck {
  std::uint64_t seq = 0;
  std::string case_id;
  bool replayed = false;  // same idempotency key seen before
};

struct Progress {
  std::size_t reviewed = 0;
  std::size_t total = 0;
};

class ReviewService {
 public:
  /// Opens or resumes the log at cfg.log_path. A resumed log must describe the
  /// same arms and cases.
  ReviewService(std::vector<ReviewItem> items, ReviewServiceConfig cfg);

  /// Throws AuthError for unknown tokens.
  std::string reviewer_id(const std::string& token) const;
  bool is_operator(const std::string& token) const;

  /// The reviewer's pending case (unchanged until submitted) or the next
  /// unreviewed one with a new permutation; nullopt when all are done.
  std::optional<BlindCase> next_case(const std::string& token);

  /// ValidationError for bad payloads or cases not served to this reviewer;
  /// ConflictError for a second review of the same case without the original
  /// idempotency key.
  SubmitAck submit(const std::string& token, const ReviewSubmission& submission);

  Progress progress(const std::string& token) const;
  RatingsTable ratings() const;
  const std::vector<std::string>& arms() const { return cfg_.arms; }
  std::size_t case_count() const { return items_.size(); }

 private:
  struct ReviewerState {
    std::set<std::size_t> reviewed;
    std::optional<std::pair<std::size_t, int>> pending;  // case index, permutation
    std::map<std::string, SubmitAck> idempotent;
  };

  std::uint64_t append(nlohmann::ordered_json event);
  void replay_existing();
  BlindCase blind(std::size_t index, int permutation) const;

  std::vector<ReviewItem> items_;
  std::map<std::string, std::size_t> index_;
  ReviewServiceConfig cfg_;
  std::map<std::string, std::string> token_to_id_;
  mutable std::mutex mutex_;
  Rng rng_;
  std::map<std::string, ReviewerState> state_;
  RatingsAccumulator acc_;
  std::ofstream log_;
  std::uint64_t next_seq_ = 0;
  std::string last_hash_;
};

}  // namespace ivfalign
