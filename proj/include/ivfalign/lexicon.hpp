#pragma once

// Canonical phrase atoms shared by the synthetic corpus generator, the
// decision-table oracle and the policy tokenizer. Every narrative finding,
// reasoning phrase, diagnosis and guideline rule that the toy pipeline can
// express is listed here exactly once.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ivfalign/schema.hpp"

namespace ivfalign::lexicon {

enum class Finding : std::uint8_t {
  // history narrative
  PreviousLiveBirth,
  PreviousMiscarriage,
  PreviousEctopic,
  FertilityPreservation,
  Translocation,
  Monogenic,
  RecurrentLoss,
  ImplantationFailure,
  ObstructiveAzoospermia,
  DonorSperm,
  FertilizationFailure,
  FrozenSpermOnly,
  SevereOligo,
  BorderlineSemen,
  MildAstheno,
  PoorResponse,
  TubalObstruction,
  LaparoscopicSurgery,
  NormalSemen,
  // ultrasound narrative
  Pcom,
  Endometrioma,
  Adenomyosis,
  Fibroid,
  Hydrosalpinx,
  NormalPelvis,
  ThinEndometrium,
};

inline constexpr std::size_t kFindingCount = 26;

struct FindingInfo {
  Finding finding;
  std::string_view phrase;  // lowercase; matched as a substring of lowercased text
  bool ultrasound;
};

std::span<const FindingInfo> findings();
std::string_view phrase(Finding f);

/// Findings present in `text`, in enum order, each at most once.
std::vector<Finding> detect_findings(std::string_view text);

enum class CotSection : std::uint8_t { Diagnosis, Art, Cos, Gn };

inline constexpr std::array kCotSections{CotSection::Diagnosis, CotSection::Art, CotSection::Cos,
                                         CotSection::Gn};

/// Reasoning phrases admissible in a CoT section, in canonical order.
std::span<const std::string_view> reasoning_atoms(CotSection s);

/// Separator used when a section holds several phrases.
inline constexpr std::string_view kAtomSeparator = "; ";

std::vector<std::string> split_atoms(std::string_view section_text);
std::string join_atoms(std::span<const std::string> atoms);

// Reasoning atom that justifies each ART strategy / COS regimen.
std::string_view art_reason(ArtStrategy a);
std::string_view cos_reason(CosRegimen c);

namespace dx {
inline constexpr std::string_view kTubal = "tubal factor infertility";
inline constexpr std::string_view kPcos = "polycystic ovary syndrome";
inline constexpr std::string_view kDor = "diminished ovarian reserve";
inline constexpr std::string_view kEndometriosis = "endometriosis";
inline constexpr std::string_view kAdenomyosis = "adenomyosis";
inline constexpr std::string_view kFibroid = "uterine fibroid";
inline constexpr std::string_view kMale = "male factor infertility";
inline constexpr std::string_view kTranslocation = "chromosomal translocation carrier";
inline constexpr std::string_view kMonogenic = "monogenic disorder carrier";
inline constexpr std::string_view kRecurrentLoss = "recurrent pregnancy loss";
inline constexpr std::string_view kImplantationFailure = "repeated implantation failure";
inline constexpr std::string_view kUnexplained = "unexplained infertility";
inline constexpr std::string_view kPreservation = "fertility preservation";
}  // namespace dx

/// Canonical diagnosis strings, in canonical order.
std::span<const std::string_view> diagnoses();

namespace why {
inline constexpr std::string_view kPriorPregnancy = "prior pregnancy documented";
inline constexpr std::string_view kNoConception = "no prior conception";
inline constexpr std::string_view kPreservationRequest = "fertility preservation request noted";
inline constexpr std::string_view kTubal = "tubal obstruction on imaging";
inline constexpr std::string_view kPcos = "polycystic ovarian morphology with oligomenorrhea";
inline constexpr std::string_view kLowAmh = "low amh indicates reduced reserve";
inline constexpr std::string_view kEndometrioma = "endometrioma on ultrasound";
inline constexpr std::string_view kAdenomyosis = "adenomyosis on ultrasound";
inline constexpr std::string_view kFibroid = "fibroid on ultrasound";
inline constexpr std::string_view kSemen = "abnormal semen analysis";
inline constexpr std::string_view kTranslocation = "parental translocation reported";
inline constexpr std::string_view kMonogenic = "monogenic disease in family";
inline constexpr std::string_view kRecurrentLoss = "recurrent pregnancy loss history";
inline constexpr std::string_view kImplantation = "repeated implantation failure history";
inline constexpr std::string_view kNoCause = "no identifiable cause";

inline constexpr std::string_view kGnStandard = "standard starting dose";
inline constexpr std::string_view kGnLowReserve = "dose increased for reduced reserve";
inline constexpr std::string_view kGnHighReserve = "dose reduced for high reserve";
inline constexpr std::string_view kGnAge = "dose increased for age";
inline constexpr std::string_view kGnAdvancedAge = "dose increased for advanced age";
inline constexpr std::string_view kGnBmi = "dose increased for high bmi";
inline constexpr std::string_view kGnMildCap = "dose capped for mild stimulation";
inline constexpr std::string_view kGnClinician = "dose adjusted by clinician judgment";
}  // namespace why

enum class GuidelineTopic : std::uint8_t { Art, Cos };

std::string_view to_string(GuidelineTopic t);

/// Natural-language rule lines of the synthetic guideline, one per rule.
std::span<const std::string_view> guideline_lines(GuidelineTopic t);

}  // namespace ivfalign::lexicon
