#pragma once

// Three-layer alignment dataset built from a model's scored outputs:
//   top     (Human)     up to N cases per listed rare ART category
//   middle  (Confusion) cases whose truth ART or COS class sits in a confusion
//                       row with off-diagonal mass above the threshold
//   bottom  (General)   cases with at least one wrong field, plus fully
//                       correct cases
// A case joins the highest layer it qualifies for. Every layer samples its
// eligible pool with a seeded shuffle and warns when the pool is too small.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivfalign/align.hpp"
#include "ivfalign/metrics.hpp"
#include "ivfalign/schema.hpp"

namespace ivfalign {

enum class Layer : std::uint8_t { Human, Confusion, General, Unassigned };

std::string_view to_string(Layer l);
Layer parse_layer(std::string_view s);

/// Exact-match correctness per rewarded field; Gn counts as correct when its
/// tier reward is 1 (within 25 IU).
struct FieldCorrectness {
  bool it = false;
  bool art = false;
  bool cos = false;
  bool gn = false;

  bool all() const { return it && art && cos && gn; }
  bool operator==(const FieldCorrectness&) const = default;
};

FieldCorrectness field_correctness(const std::optional<DecisionBundle>& output,
                                   const DecisionBundle& truth);

struct ScoredCase {
  CaseExample example;
  std::optional<DecisionBundle> output;  // nullopt when unparseable
  std::vector<TokenId> output_tokens;    // raw completion, may be empty
  FieldCorrectness correct;
  Layer layer = Layer::Unassigned;

  bool operator==(const ScoredCase&) const = default;
};

ScoredCase score_case(CaseExample example, std::optional<DecisionBundle> output,
                      std::vector<TokenId> output_tokens = {});

struct PyramidConfig {
  std::size_t top_quota_per_category = 25;
  std::vector<ArtStrategy> top_categories{ArtStrategy::IVF_ICSI, ArtStrategy::IVF_Short};
  double confusion_threshold = 0.10;
  std::size_t mid_quota = 628;
  std::size_t bottom_incorrect_quota = 700;
  std::size_t bottom_correct_quota = 300;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};  // train, val, test
  std::vector<CosRegimen> force_include_cos;          // always eligible for the middle layer
  std::uint64_t seed = 1;

  void validate() const;
  /// Copy with every quota multiplied by `factor` and rounded to nearest.
  PyramidConfig scaled(double factor) const;
};

nlohmann::ordered_json to_json(const PyramidConfig& c);
PyramidConfig pyramid_config_from_json(const nlohmann::json& j);

struct LayerFill {
  std::string name;
  std::size_t quota = 0;
  std::size_t eligible = 0;
  std::size_t selected = 0;
};

struct LayeredDataset {
  std::vector<ScoredCase> cases;  // Human, then Confusion, then General; corpus order within a layer
  std::vector<LayerFill> fills;   // one per quota (top categories, middle, bottom incorrect, bottom correct)
  std::vector<std::string> warnings;

  std::size_t count(Layer l) const;
};

/// `art_confusion` may be labelled by ART subtype or by generation; the
/// case's truth ART is looked up at the matching granularity.
LayeredDataset assign_layers(std::span<const ScoredCase> scored,
                             const ConfusionMatrix& art_confusion,
                             const ConfusionMatrix& cos_confusion, const PyramidConfig& cfg);

struct DpoPairSet {
  std::vector<PreferencePair> pairs;
  std::vector<std::string> case_ids;
  std::size_t dropped = 0;  // chosen and rejected encode identically
};

/// chosen = encoded truth, rejected = the model's completion.
DpoPairSet make_dpo_pairs(std::span<const ScoredCase> cases);

struct GrpoPromptSet {
  std::vector<GrpoPrompt> prompts;
  std::vector<std::string> case_ids;
};

/// Every case, including those DPO drops; the reference is kept only for
/// scoring.
GrpoPromptSet make_grpo_prompts(std::span<const ScoredCase> cases);

struct DatasetSplit {
  std::vector<ScoredCase> train, val, test;
};

/// val = floor(r_val * N), test = floor(r_test * N), train = the rest. Each
/// split's count is spread over the layers by largest remainder, then drawn
/// from a seeded shuffle of each layer. Throws for fewer than 10 cases.
DatasetSplit split_dataset(std::span<const ScoredCase> cases, const std::array<double, 3>& ratios,
                           std::uint64_t seed);

nlohmann::ordered_json to_json(const ScoredCase& c);
ScoredCase scored_case_from_json(const nlohmann::json& j, const std::string& where = "");

/// One JSON object per line with a "split" tag on top of the scored case.
void write_layered_jsonl(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit read_layered_jsonl(const std::filesystem::path& path);

}  // namespace ivfalign
