#pragma once

// Command implementations behind the CLI. Every command takes a JSON config
// object (file values already merged with flag overrides), validates it
// strictly, writes its artifacts and one run manifest per artifact-producing
// command, and returns a JSON summary for stdout.
//
// Manifest (written next to the main output as <output>.manifest.json):
//   {"command","config","seeds","inputs":[{"path","sha256"}],
//    "outputs":[{"path","sha256"}],"timings":{"wall_seconds"},
//    "previous_manifest_hash"}
// previous_manifest_hash is the SHA-256 of the first input's own manifest,
// or null when no input has one.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivfalign/metrics.hpp"
#include "ivfalign/review.hpp"
#include "ivfalign/schema.hpp"

namespace ivfalign {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Subcommands in the order they appear in usage text.
const std::vector<std::string>& command_names();

/// Runs `command` with `config`. Throws ValidationError, IoError,
/// DivergenceError like the library.
nlohmann::ordered_json run_command(const std::string& command, const nlohmann::json& config);

// ---------------------------------------------------------------- artifacts

/// One inference result; `output` is nullopt for an unparseable completion.
struct Prediction {
  std::string id;
  std::optional<DecisionBundle> output;
  std::vector<int> tokens;
};

void write_predictions(std::span<const Prediction> preds, const std::filesystem::path& path);
/// Accepts prediction lines ({"id","output","tokens"}) or corpus lines, whose
/// truth is read as the prediction.
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

std::string manifest_path_for(const std::filesystem::path& output);

// ---------------------------------------------------------------- scripted review panel

/// Deterministic stand-in for a human reviewer: scores each blinded response
/// by comparing the decision it encodes with the case's reference answer.
class ScriptedReviewer {
 public:
  /// `answers` maps case id to reference bundle; `responses` maps rendered
  /// response text to the bundle it renders (nullopt when unparseable).
  ScriptedReviewer(std::string token, std::uint64_t seed,
                   std::map<std::string, DecisionBundle> answers,
                   std::map<std::string, std::optional<DecisionBundle>> responses);

  const std::string& token() const { return token_; }
  ReviewSubmission review(const BlindCase& c);

 private:
  std::string token_;
  Rng rng_;
  std::map<std::string, DecisionBundle> answers_;
  std::map<std::string, std::optional<DecisionBundle>> responses_;
  DiagnosisJudge judge_;
};

/// Text shown for an arm whose output could not be parsed.
inline constexpr std::string_view kUnparseableResponse = "(no parseable answer)";

/// Each reviewer in turn pulls and reviews cases until the service reports
/// completion. Returns the number of submitted reviews.
std::size_t run_scripted_panel(ReviewService& service, std::span<ScriptedReviewer> panel);

}  // namespace ivfalign
