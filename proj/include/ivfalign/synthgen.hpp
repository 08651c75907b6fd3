#pragma once

// Seeded synthetic corpus generator and the decision table ("synthetic
// guideline") that defines its noise-free ground truth.
//
// Decision table, evaluated on the observable record (first match wins):
//
//   Infertility type
//     IT1  fertility preservation request                      -> Other
//     IT2  previous live birth / miscarriage / ectopic / RPL   -> Secondary
//          otherwise                                           -> Primary
//   ART strategy
//     A1   balanced translocation carrier                      -> PGT-SR
//     A2   monogenic disorder carrier                          -> PGT-M
//     A3   recurrent pregnancy loss or implantation failure    -> PGT-A
//     A4   obstructive azoospermia                             -> TESA+ICSI
//     A5   donor sperm and previous fertilization failure      -> ICSI-DS
//     A6   donor sperm                                         -> IVF-DS
//     A7   frozen sperm only                                   -> ICSI-FS
//     A8   severe oligoasthenozoospermia                       -> ICSI
//     A9   borderline semen parameters                         -> IVF+ICSI
//     A10  mild asthenozoospermia                              -> IVF-Short
//          otherwise                                           -> IVF
//   COS regimen
//     C1   endometrioma, AMH >= 2.0                            -> Ultra-Long
//     C2   endometrioma                                        -> Mod-ULong
//     C3   adenomyosis                                         -> Long-Acting
//     C4   AMH < 0.5                                           -> Luteal-Stim
//     C5   AMH < 1.1, age >= 38                                -> Mild/Direct Gn
//     C6   AMH < 1.1, cycle >= 36 days                         -> CC/Letro+Gn
//     C7   AMH < 1.1                                           -> CC+Gn
//     C8   any PGT strategy                                    -> PPOS
//     C9   polycystic morphology or AMH >= 4.5                 -> Antagonist-Fixed
//     C10  previous poor response                              -> Short
//     C11  age < 30, AMH >= 2.0                                -> Luteal-Short
//          otherwise                                           -> Antagonist-Flex
//   Gn starting dose (start at 150 IU, adjustments accumulate)
//     G1   AMH < 1.1                                           +75
//     G2   AMH >= 4.5 or polycystic morphology                 -50
//     G3   age >= 40 / age >= 35                               +50 / +25
//     G4   BMI >= 28                                           +25
//     G5   Mild/Direct Gn or Luteal-Stim                       cap at 150
//          clamp to [75, 300]
//
// Diagnoses follow from the findings (tubal obstruction or hydrosalpinx ->
// tubal factor; polycystic morphology with cycle >= 36 -> PCOS; AMH < 1.1 ->
// diminished reserve; ...), falling back to "unexplained infertility".

#include <array>
#include <cstdint>
#include <vector>

#include "ivfalign/schema.hpp"

namespace ivfalign {

/// Hidden factors behind one synthetic patient. Only their observable
/// consequences reach the PatientRecord.
struct LatentProfile {
  ArtStrategy indication = ArtStrategy::IVF;
  double ovarian_reserve = 0;   // standard-normal score; drives AMH and FSH
  double male_factor = 0;       // 0 = normal semen
  bool genetic_risk = false;
  double cycle_regularity = 1;  // 1 = regular, 0 = oligomenorrhea
  bool prior_pregnancy = false;
  bool preservation_only = false;
};

struct GeneratorConfig {
  std::uint64_t seed = 1;
  std::size_t n = 0;
  std::array<double, 11> marginals{};  // indexed like kArtStrategies
  double rule_noise = 0.1;

  GeneratorConfig();
  void validate() const;
};

/// ART subtype frequencies of the reference cohort (n = 8201).
std::array<double, 11> default_art_marginals();

/// COS prior used when rule noise re-draws a regimen.
std::array<double, 12> default_cos_noise_prior();

std::vector<CaseExample> generate(const GeneratorConfig& cfg);

/// Noise-free decision-table output for a record. Throws ValidationError for
/// records outside the generator's ranges.
DecisionBundle oracle_decide(const PatientRecord& record);

/// Assigns Train/Val/Test in place: floor(10%) val, floor(10%) test, rest
/// train, over a seeded shuffle.
void assign_splits(std::vector<CaseExample>& cases, std::uint64_t seed);

}  // namespace ivfalign
