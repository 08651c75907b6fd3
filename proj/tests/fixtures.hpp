#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "ivfalign/lexicon.hpp"
#include "ivfalign/random.hpp"
#include "ivfalign/schema.hpp"

namespace fixture {

inline ivfalign::PatientRecord record(const std::string& id) {
  ivfalign::PatientRecord r;
  r.id = id;
  r.age = 32;
  r.cycle_days = 28;
  r.weight_kg = 58;
  r.bmi = 22.4;
  r.amh = 2.6;
  r.fsh = 6.8;
  r.infertility_years = 3;
  r.ultrasound_text = "Transvaginal ultrasound: normal uterus and adnexa.";
  r.history_text = "Infertility for 3 years; no prior conception; normal semen analysis.";
  return r;
}

inline ivfalign::DecisionBundle bundle(ivfalign::ArtStrategy art = ivfalign::ArtStrategy::IVF,
                                       ivfalign::CosRegimen cos = ivfalign::CosRegimen::AntagonistFlex,
                                       int dose = 150) {
  ivfalign::DecisionBundle b;
  b.infertility_type = ivfalign::InfertilityType::Primary;
  b.initial_diagnosis = {std::string(ivfalign::lexicon::dx::kUnexplained)};
  b.art = art;
  b.cos = cos;
  b.gn_dose = ivfalign::GnDose{dose};
  b.cot.diagnosis_reasoning = std::string(ivfalign::lexicon::why::kNoCause);
  b.cot.art_decision = std::string(ivfalign::lexicon::art_reason(art));
  b.cot.cos_selection = std::string(ivfalign::lexicon::cos_reason(cos));
  b.cot.gn_rationale = std::string(ivfalign::lexicon::why::kGnStandard);
  return b;
}

inline ivfalign::CaseExample example(const std::string& id, ivfalign::ArtStrategy art = ivfalign::ArtStrategy::IVF,
                                     ivfalign::CosRegimen cos = ivfalign::CosRegimen::AntagonistFlex,
                                     int dose = 150, ivfalign::Split split = ivfalign::Split::Train) {
  return ivfalign::CaseExample{record(id), bundle(art, cos, dose), split};
}

/// Random bundle drawn from the policy vocabulary.
inline ivfalign::DecisionBundle random_bundle(ivfalign::Rng& rng) {
  using namespace ivfalign;
  auto pick = [&](std::size_t n) {
    return static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n) - 1));
  };
  auto atoms = [&](lexicon::CotSection s) {
    const auto all = lexicon::reasoning_atoms(s);
    std::vector<std::string> chosen;
    for (const auto& a : all) {
      if (bernoulli(rng, 0.3)) chosen.emplace_back(a);
    }
    if (chosen.empty()) chosen.emplace_back(all[pick(all.size())]);
    return lexicon::join_atoms(chosen);
  };
  DecisionBundle b;
  b.infertility_type = kInfertilityTypes[pick(kInfertilityTypes.size())];
  for (const auto& d : lexicon::diagnoses()) {
    if (bernoulli(rng, 0.2)) b.initial_diagnosis.emplace_back(d);
  }
  if (b.initial_diagnosis.empty()) b.initial_diagnosis.emplace_back(lexicon::dx::kUnexplained);
  b.art = kArtStrategies[pick(kArtStrategies.size())];
  b.cos = kCosRegimens[pick(kCosRegimens.size())];
  b.gn_dose = GnDose{75 + 25 * static_cast<int>(pick(10))};
  b.cot.diagnosis_reasoning = atoms(lexicon::CotSection::Diagnosis);
  b.cot.art_decision = atoms(lexicon::CotSection::Art);
  b.cot.cos_selection = atoms(lexicon::CotSection::Cos);
  b.cot.gn_rationale = atoms(lexicon::CotSection::Gn);
  return b;
}

/// Fresh scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("ivfalign-test-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixture
