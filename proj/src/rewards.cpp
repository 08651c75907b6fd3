#include "ivfalign/rewards.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

#include "ivfalign/error.hpp"

namespace ivfalign {

void RewardWeights::validate() const {
  for (double v : {it, cos, gn, art}) {
    if (!std::isfinite(v) || v < 0) throw ValidationError("reward weights must be non-negative");
  }
  const double sum = it + cos + gn + art;
  if (std::abs(sum - 1.0) > 1e-12) {
    throw ValidationError("reward weights must sum to 1 (got " + std::to_string(sum) + ")");
  }
}

RewardWeights weights_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("reward weights must be a JSON object");
  RewardWeights w;
  for (auto& [key, value] : j.items()) {
    if (!value.is_number()) throw ValidationError("reward weight '" + key + "' must be a number");
    const double v = value.get<double>();
    if (key == "it") w.it = v;
    else if (key == "cos") w.cos = v;
    else if (key == "gn") w.gn = v;
    else if (key == "art") w.art = v;
    else throw ValidationError("unknown reward weight '" + key + "' (expected it, cos, gn, art)");
  }
  w.validate();
  return w;
}

nlohmann::ordered_json to_json(const RewardWeights& w) {
  return {{"it", w.it}, {"cos", w.cos}, {"gn", w.gn}, {"art", w.art}};
}

RewardWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open reward weights '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("reward weights '" + path.string() + "': " + e.what());
  }
  return weights_from_json(j);
}

double gn_reward(GnDose pred, GnDose truth) {
  const int delta = std::abs(pred.iu - truth.iu);
  if (delta <= 25) return 1.0;
  if (delta <= 50) return 0.5;
  return 0.0;
}

RewardBreakdown composite_reward(const std::optional<DecisionBundle>& pred,
                                 const DecisionBundle& truth, const RewardWeights& w) {
  RewardBreakdown r;
  if (!pred) return r;
  r.r_it = pred->infertility_type == truth.infertility_type ? 1.0 : 0.0;
  r.r_cos = pred->cos == truth.cos ? 1.0 : 0.0;
  r.r_gn = gn_reward(pred->gn_dose, truth.gn_dose);
  r.r_art = pred->art == truth.art ? 1.0 : 0.0;
  r.composite = w.it * r.r_it + w.cos * r.r_cos + w.gn * r.r_gn + w.art * r.r_art;
  return r;
}

}  // namespace ivfalign
