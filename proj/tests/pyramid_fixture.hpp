#pragma once

// Scored cohort at the reference scale with a known confusion structure:
// Antagonist-Fixed and PPOS are often mistaken for Antagonist-Flex, PGT-A for
// PGT-M and ICSI-FS for ICSI; a fifth of the remaining cases miss the Gn dose.

#include <vector>

#include "ivfalign/metrics.hpp"
#include "ivfalign/pyramid.hpp"
#include "ivfalign/random.hpp"
#include "ivfalign/synthgen.hpp"

namespace fixture {

struct ScoredCohort {
  std::vector<ivfalign::ScoredCase> scored;
  ivfalign::ConfusionMatrix art;
  ivfalign::ConfusionMatrix cos;
};

inline ScoredCohort scored_cohort(std::size_t n = 8201, std::uint64_t seed = 3) {
  using namespace ivfalign;
  GeneratorConfig gen;
  gen.n = n;
  gen.seed = seed;
  gen.rule_noise = 0;
  ScoredCohort out;
  Rng rng(seed);
  std::vector<std::string> art_t, art_p, cos_t, cos_p;
  for (auto& c : generate(gen)) {
    DecisionBundle o = c.truth;
    if ((o.cos == CosRegimen::AntagonistFixed || o.cos == CosRegimen::PPOS) && bernoulli(rng, 0.3)) {
      o.cos = CosRegimen::AntagonistFlex;
    } else if (o.art == ArtStrategy::PGT_A && bernoulli(rng, 0.4)) {
      o.art = ArtStrategy::PGT_M;
    } else if (o.art == ArtStrategy::ICSI_FS && bernoulli(rng, 0.5)) {
      o.art = ArtStrategy::ICSI;
    } else if (bernoulli(rng, 0.2)) {
      o.gn_dose = GnDose{o.gn_dose.iu >= 200 ? o.gn_dose.iu - 100 : o.gn_dose.iu + 100};
    }
    art_t.emplace_back(to_string(c.truth.art));
    art_p.emplace_back(to_string(o.art));
    cos_t.emplace_back(to_string(c.truth.cos));
    cos_p.emplace_back(to_string(o.cos));
    out.scored.push_back(score_case(std::move(c), o, encode_completion(o)));
  }
  std::vector<std::string> art_labels, cos_labels;
  for (auto a : kArtStrategies) art_labels.emplace_back(to_string(a));
  for (auto r : kCosRegimens) cos_labels.emplace_back(to_string(r));
  out.art = confusion(art_p, art_t, art_labels);
  out.cos = confusion(cos_p, cos_t, cos_labels);
  return out;
}

}  // namespace fixture
