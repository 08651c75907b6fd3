#include "ivfalign/lexicon.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace ivfalign::lexicon {
namespace {

constexpr std::array<FindingInfo, kFindingCount> kFindings{{
    {Finding::PreviousLiveBirth, "previous live birth", false},
    {Finding::PreviousMiscarriage, "previous miscarriage", false},
    {Finding::PreviousEctopic, "previous ectopic pregnancy", false},
    {Finding::FertilityPreservation, "fertility preservation request", false},
    {Finding::Translocation, "balanced chromosomal translocation carrier", false},
    {Finding::Monogenic, "monogenic disorder carrier", false},
    {Finding::RecurrentLoss, "recurrent pregnancy loss", false},
    {Finding::ImplantationFailure, "repeated implantation failure", false},
    {Finding::ObstructiveAzoospermia, "obstructive azoospermia", false},
    {Finding::DonorSperm, "donor sperm", false},
    {Finding::FertilizationFailure, "previous fertilization failure", false},
    {Finding::FrozenSpermOnly, "frozen sperm only", false},
    {Finding::SevereOligo, "severe oligoasthenozoospermia", false},
    {Finding::BorderlineSemen, "borderline semen parameters", false},
    {Finding::MildAstheno, "mild asthenozoospermia", false},
    {Finding::PoorResponse, "previous poor response", false},
    {Finding::TubalObstruction, "bilateral tubal obstruction", false},
    {Finding::LaparoscopicSurgery, "laparoscopic surgery", false},
    {Finding::NormalSemen, "normal semen analysis", false},
    {Finding::Pcom, "polycystic ovarian morphology", true},
    {Finding::Endometrioma, "endometrioma", true},
    {Finding::Adenomyosis, "adenomyosis", true},
    {Finding::Fibroid, "intramural fibroid", true},
    {Finding::Hydrosalpinx, "hydrosalpinx", true},
    {Finding::NormalPelvis, "normal uterus and adnexa", true},
    {Finding::ThinEndometrium, "thin endometrium", true},
}};

constexpr std::array<std::string_view, 15> kDiagnosisReasons{
    why::kPriorPregnancy, why::kNoConception, why::kPreservationRequest, why::kTubal,
    why::kPcos,           why::kLowAmh,       why::kEndometrioma,        why::kAdenomyosis,
    why::kFibroid,        why::kSemen,        why::kTranslocation,       why::kMonogenic,
    why::kRecurrentLoss,  why::kImplantation, why::kNoCause,
};

// Indexed like kArtStrategies.
constexpr std::array<std::string_view, 11> kArtReasons{
    "conventional insemination adequate",
    "mild male factor supports short insemination",
    "donor sperm allows conventional insemination",
    "severe male factor requires icsi",
    "frozen sperm sample requires icsi",
    "donor sperm with prior fertilization failure requires icsi",
    "obstructive azoospermia requires testicular sperm",
    "borderline semen supports split insemination",
    "aneuploidy screening indicated",
    "monogenic testing indicated",
    "structural rearrangement testing indicated",
};

// Indexed like kCosRegimens.
constexpr std::array<std::string_view, 12> kCosReasons{
    "flexible antagonist for normal reserve",
    "fixed antagonist for high responder",
    "luteal long protocol for young normal responder",
    "long-acting agonist for adenomyosis",
    "progestin priming for freeze-all cycle",
    "clomiphene with gonadotropin for low reserve",
    "mild stimulation for older low responder",
    "luteal phase stimulation for very low reserve",
    "letrozole with gonadotropin for anovulatory low reserve",
    "ultra-long downregulation for endometriosis",
    "modified ultra-long for endometriosis with low reserve",
    "short agonist protocol after poor response",
};

constexpr std::array<std::string_view, 8> kGnReasons{
    why::kGnStandard, why::kGnLowReserve, why::kGnHighReserve, why::kGnAge,
    why::kGnAdvancedAge, why::kGnBmi,     why::kGnMildCap,     why::kGnClinician,
};

constexpr std::array<std::string_view, 13> kDiagnoses{
    dx::kTubal,         dx::kPcos,         dx::kDor,           dx::kEndometriosis,
    dx::kAdenomyosis,   dx::kFibroid,      dx::kMale,          dx::kTranslocation,
    dx::kMonogenic,     dx::kRecurrentLoss, dx::kImplantationFailure, dx::kUnexplained,
    dx::kPreservation,
};

constexpr std::array<std::string_view, 11> kArtGuideline{
    "if a parent carries a balanced chromosomal translocation choose PGT-SR",
    "if a parent carries a monogenic disorder choose PGT-M",
    "if there is recurrent pregnancy loss or repeated implantation failure choose PGT-A",
    "if the partner has obstructive azoospermia choose TESA+ICSI",
    "if donor sperm is used after a previous fertilization failure choose ICSI-DS",
    "if donor sperm is used choose IVF-DS",
    "if only frozen sperm is available choose ICSI-FS",
    "if semen shows severe oligoasthenozoospermia choose ICSI",
    "if semen parameters are borderline choose IVF+ICSI",
    "if semen shows mild asthenozoospermia choose IVF-Short",
    "otherwise choose conventional IVF",
};

constexpr std::array<std::string_view, 12> kCosGuideline{
    "endometrioma with AMH of at least 2.0 calls for Ultra-Long",
    "endometrioma with lower AMH calls for Mod-ULong",
    "adenomyosis calls for Long-Acting",
    "AMH below 0.5 calls for Luteal-Stim",
    "AMH below 1.1 at age 38 or older calls for Mild/Direct Gn",
    "AMH below 1.1 with cycles of 36 days or more calls for CC/Letro+Gn",
    "other AMH below 1.1 calls for CC+Gn",
    "cycles with genetic testing call for PPOS",
    "polycystic morphology or AMH of at least 4.5 calls for Antagonist-Fixed",
    "a previous poor response calls for Short",
    "age under 30 with AMH of at least 2.0 calls for Luteal-Short",
    "otherwise use Antagonist-Flex",
};

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::span<const FindingInfo> findings() { return kFindings; }

std::string_view phrase(Finding f) { return kFindings[static_cast<std::size_t>(f)].phrase; }

std::vector<Finding> detect_findings(std::string_view text) {
  const std::string lower = lowercase(text);
  std::vector<Finding> out;
  for (const auto& info : kFindings) {
    if (lower.find(info.phrase) != std::string::npos) out.push_back(info.finding);
  }
  return out;
}

std::span<const std::string_view> reasoning_atoms(CotSection s) {
  switch (s) {
    case CotSection::Diagnosis: return kDiagnosisReasons;
    case CotSection::Art: return kArtReasons;
    case CotSection::Cos: return kCosReasons;
    case CotSection::Gn: return kGnReasons;
  }
  return {};
}

std::vector<std::string> split_atoms(std::string_view text) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = text.find(kAtomSeparator, pos);
    out.emplace_back(text.substr(pos, next - pos));
    if (next == std::string_view::npos) break;
    pos = next + kAtomSeparator.size();
  }
  return out;
}

std::string join_atoms(std::span<const std::string> atoms) {
  std::string out;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    if (i) out += kAtomSeparator;
    out += atoms[i];
  }
  return out;
}

std::string_view art_reason(ArtStrategy a) { return kArtReasons[static_cast<std::size_t>(a)]; }
std::string_view cos_reason(CosRegimen c) { return kCosReasons[static_cast<std::size_t>(c)]; }

std::span<const std::string_view> diagnoses() { return kDiagnoses; }

std::string_view to_string(GuidelineTopic t) { return t == GuidelineTopic::Art ? "ART" : "COS"; }

std::span<const std::string_view> guideline_lines(GuidelineTopic t) {
  if (t == GuidelineTopic::Art) return kArtGuideline;
  return kCosGuideline;
}

}  // namespace ivfalign::lexicon
