#pragma once

// Field-level rewards and their weighted composite. Initial diagnosis is
// scored by the metrics module only and never rewarded.

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "ivfalign/schema.hpp"

namespace ivfalign {

struct RewardWeights {
  double it = 0.2;
  double cos = 0.3;
  double gn = 0.2;
  double art = 0.3;

  /// Each weight >= 0 and the sum equals 1 within 1e-12.
  void validate() const;
  bool operator==(const RewardWeights&) const = default;
};

RewardWeights weights_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const RewardWeights& w);
RewardWeights load_weights(const std::filesystem::path& path);

struct RewardBreakdown {
  double r_it = 0;
  double r_cos = 0;
  double r_gn = 0;
  double r_art = 0;
  double composite = 0;
};

/// 1.0 within 25 IU, 0.5 within 50 IU, otherwise 0.
double gn_reward(GnDose pred, GnDose truth);

/// Exact-match field rewards (ART at subtype granularity) combined with `w`.
/// An unparseable prediction (nullopt) scores all zeros.
RewardBreakdown composite_reward(const std::optional<DecisionBundle>& pred,
                                 const DecisionBundle& truth, const RewardWeights& w = {});

}  // namespace ivfalign
