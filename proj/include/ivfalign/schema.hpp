#pragma once

// Domain types for the infertility decision task: the nine-field patient
// record, the five-field decision bundle with its four reasoning sections,
// label taxonomies and the JSONL corpus format.

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ivfalign {

enum class InfertilityType : std::uint8_t { Primary, Secondary, Other };

enum class ArtStrategy : std::uint8_t {
  IVF,
  IVF_Short,
  IVF_DS,
  ICSI,
  ICSI_FS,
  ICSI_DS,
  TESA_ICSI,
  IVF_ICSI,
  PGT_A,
  PGT_M,
  PGT_SR,
};

enum class ArtGeneration : std::uint8_t { IVF, ICSI, PGT };

enum class CosRegimen : std::uint8_t {
  AntagonistFlex,
  AntagonistFixed,
  LutealShort,
  LongActing,
  PPOS,
  CcGn,
  MildDirectGn,
  LutealStim,
  CcLetroGn,
  UltraLong,
  ModUltraLong,
  Short,
};

enum class Split : std::uint8_t { Train, Val, Test };

inline constexpr std::array kInfertilityTypes{InfertilityType::Primary, InfertilityType::Secondary,
                                              InfertilityType::Other};

inline constexpr std::array kArtStrategies{
    ArtStrategy::IVF,     ArtStrategy::IVF_Short, ArtStrategy::IVF_DS,   ArtStrategy::ICSI,
    ArtStrategy::ICSI_FS, ArtStrategy::ICSI_DS,   ArtStrategy::TESA_ICSI, ArtStrategy::IVF_ICSI,
    ArtStrategy::PGT_A,   ArtStrategy::PGT_M,     ArtStrategy::PGT_SR,
};

inline constexpr std::array kArtGenerations{ArtGeneration::IVF, ArtGeneration::ICSI,
                                            ArtGeneration::PGT};

inline constexpr std::array kCosRegimens{
    CosRegimen::AntagonistFlex, CosRegimen::AntagonistFixed, CosRegimen::LutealShort,
    CosRegimen::LongActing,     CosRegimen::PPOS,            CosRegimen::CcGn,
    CosRegimen::MildDirectGn,   CosRegimen::LutealStim,      CosRegimen::CcLetroGn,
    CosRegimen::UltraLong,      CosRegimen::ModUltraLong,    CosRegimen::Short,
};

static_assert(kInfertilityTypes.size() == 3);
static_assert(kArtStrategies.size() == 11);
static_assert(kCosRegimens.size() == 12);

std::string_view to_string(InfertilityType v);
std::string_view to_string(ArtStrategy v);
std::string_view to_string(ArtGeneration v);
std::string_view to_string(CosRegimen v);
std::string_view to_string(Split v);

/// Long clinical name of a COS regimen, for display only.
std::string_view display_name(CosRegimen v);

// Parsers are case-insensitive on canonical names and throw ValidationError
// listing the valid labels otherwise.
InfertilityType parse_infertility_type(std::string_view s);
ArtStrategy parse_art_strategy(std::string_view s);
ArtGeneration parse_art_generation(std::string_view s);
CosRegimen parse_cos_regimen(std::string_view s);
Split parse_split(std::string_view s);

/// IVF* -> IVF, *ICSI* (including IVF+ICSI) -> ICSI, PGT-* -> PGT.
ArtGeneration art_generation(ArtStrategy a);

inline constexpr int kMaxGnDose = 1000;

/// Gonadotropin starting dose in whole International Units.
struct GnDose {
  int iu = 0;

  static GnDose checked(long long iu);
  auto operator<=>(const GnDose&) const = default;
};

struct PatientRecord {
  std::string id;
  double age = 0;
  double cycle_days = 0;
  double weight_kg = 0;
  double bmi = 0;
  double amh = 0;
  double fsh = 0;
  double infertility_years = 0;
  std::string ultrasound_text;
  std::string history_text;

  bool operator==(const PatientRecord&) const = default;
};

struct CotSections {
  std::string diagnosis_reasoning;
  std::string art_decision;
  std::string cos_selection;
  std::string gn_rationale;

  bool operator==(const CotSections&) const = default;
};

struct DecisionBundle {
  InfertilityType infertility_type = InfertilityType::Primary;
  std::vector<std::string> initial_diagnosis;
  ArtStrategy art = ArtStrategy::IVF;
  CosRegimen cos = CosRegimen::AntagonistFlex;
  GnDose gn_dose{};
  CotSections cot;

  bool operator==(const DecisionBundle&) const = default;
};

struct CaseExample {
  PatientRecord record;
  DecisionBundle truth;
  Split split = Split::Train;

  bool operator==(const CaseExample&) const = default;
};

/// Lowercase, trim, collapse internal whitespace.
std::string normalize_diagnosis(std::string_view s);

void validate(const PatientRecord& r);
void validate(const DecisionBundle& b);

nlohmann::ordered_json to_json(const PatientRecord& r);
nlohmann::ordered_json to_json(const DecisionBundle& b);
nlohmann::ordered_json to_json(const CaseExample& c);

// `where` prefixes error messages (e.g. "line 4").
DecisionBundle bundle_from_json(const nlohmann::json& j, const std::string& where = "");
CaseExample case_from_json(const nlohmann::json& j, const std::string& where = "");

/// Single JSONL line (no trailing newline) with stable key order.
std::string serialize_case_line(const CaseExample& c);

std::vector<CaseExample> parse_corpus(std::istream& in);
std::vector<CaseExample> parse_corpus(const std::filesystem::path& path);

void serialize_corpus(std::span<const CaseExample> cases, std::ostream& out);
void serialize_corpus(std::span<const CaseExample> cases, const std::filesystem::path& path);

/// Cases of the given split, in corpus order.
std::vector<CaseExample> select_split(std::span<const CaseExample> cases, Split split);

}  // namespace ivfalign
