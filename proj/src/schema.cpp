#include "ivfalign/schema.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "ivfalign/error.hpp"

namespace ivfalign {
namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

template <typename Enum, std::size_t N>
Enum parse_label(std::string_view s, const std::array<Enum, N>& values, std::string_view kind,
                 std::string_view hint = {}) {
  for (Enum v : values) {
    if (iequals(s, to_string(v))) return v;
  }
  std::ostringstream msg;
  msg << "unknown " << kind << " '" << s << "'";
  if (!hint.empty()) msg << " (" << hint << ")";
  msg << "; valid labels:";
  for (Enum v : values) msg << ' ' << to_string(v);
  throw ValidationError(msg.str());
}

std::string prefix(const std::string& where) { return where.empty() ? "" : where + ": "; }

const nlohmann::json& field(const nlohmann::json& j, const char* name, const std::string& where,
                            const std::string& path) {
  if (!j.is_object()) throw ValidationError(prefix(where) + "expected object at '" + path + "'");
  auto it = j.find(name);
  if (it == j.end()) {
    throw ValidationError(prefix(where) + "missing field '" + path + name + "'");
  }
  return *it;
}

double number_field(const nlohmann::json& j, const char* name, const std::string& where,
                    const std::string& path = "") {
  const auto& v = field(j, name, where, path);
  if (!v.is_number()) {
    throw ValidationError(prefix(where) + "field '" + path + name + "' must be a number");
  }
  return v.get<double>();
}

std::string string_field(const nlohmann::json& j, const char* name, const std::string& where,
                         const std::string& path = "") {
  const auto& v = field(j, name, where, path);
  if (!v.is_string()) {
    throw ValidationError(prefix(where) + "field '" + path + name + "' must be a string");
  }
  return v.get<std::string>();
}

template <typename F>
auto with_field_context(const std::string& where, const std::string& fieldname, F&& f) {
  try {
    return f();
  } catch (const ValidationError& e) {
    throw ValidationError(prefix(where) + "field '" + fieldname + "': " + e.what());
  }
}

}  // namespace

std::string_view to_string(InfertilityType v) {
  switch (v) {
    case InfertilityType::Primary: return "Primary";
    case InfertilityType::Secondary: return "Secondary";
    case InfertilityType::Other: return "Other";
  }
  return "?";
}

std::string_view to_string(ArtStrategy v) {
  switch (v) {
    case ArtStrategy::IVF: return "IVF";
    case ArtStrategy::IVF_Short: return "IVF-Short";
    case ArtStrategy::IVF_DS: return "IVF-DS";
    case ArtStrategy::ICSI: return "ICSI";
    case ArtStrategy::ICSI_FS: return "ICSI-FS";
    case ArtStrategy::ICSI_DS: return "ICSI-DS";
    case ArtStrategy::TESA_ICSI: return "TESA+ICSI";
    case ArtStrategy::IVF_ICSI: return "IVF+ICSI";
    case ArtStrategy::PGT_A: return "PGT-A";
    case ArtStrategy::PGT_M: return "PGT-M";
    case ArtStrategy::PGT_SR: return "PGT-SR";
  }
  return "?";
}

std::string_view to_string(ArtGeneration v) {
  switch (v) {
    case ArtGeneration::IVF: return "IVF";
    case ArtGeneration::ICSI: return "ICSI";
    case ArtGeneration::PGT: return "PGT";
  }
  return "?";
}

std::string_view to_string(CosRegimen v) {
  switch (v) {
    case CosRegimen::AntagonistFlex: return "Antagonist-Flex";
    case CosRegimen::AntagonistFixed: return "Antagonist-Fixed";
    case CosRegimen::LutealShort: return "Luteal-Short";
    case CosRegimen::LongActing: return "Long-Acting";
    case CosRegimen::PPOS: return "PPOS";
    case CosRegimen::CcGn: return "CC+Gn";
    case CosRegimen::MildDirectGn: return "Mild/Direct Gn";
    case CosRegimen::LutealStim: return "Luteal-Stim";
    case CosRegimen::CcLetroGn: return "CC/Letro+Gn";
    case CosRegimen::UltraLong: return "Ultra-Long";
    case CosRegimen::ModUltraLong: return "Mod-ULong";
    case CosRegimen::Short: return "Short";
  }
  return "?";
}

std::string_view display_name(CosRegimen v) {
  switch (v) {
    case CosRegimen::AntagonistFlex: return "GnRH Antagonist Flexible Protocol";
    case CosRegimen::AntagonistFixed: return "GnRH Antagonist Fixed Protocol";
    case CosRegimen::LutealShort: return "Luteal Short-Acting Long Protocol";
    case CosRegimen::LongActing: return "Follicular Phase Long-Acting Protocol";
    case CosRegimen::PPOS: return "Progestin-Primed Ovarian Stimulation Protocol";
    case CosRegimen::CcGn: return "Clomiphene Citrate Plus Gonadotropins";
    case CosRegimen::MildDirectGn: return "Mild Stimulation Protocol / Direct Gn Protocol";
    case CosRegimen::LutealStim: return "Luteal Phase Stimulation Protocol";
    case CosRegimen::CcLetroGn: return "Clomiphene or Letrozole Combined with Gonadotropins";
    case CosRegimen::UltraLong: return "Conventional Ultra-Long Protocol";
    case CosRegimen::ModUltraLong: return "Modified Ultra-Long Protocol";
    case CosRegimen::Short: return "GnRH-a Short Protocol";
  }
  return "?";
}

std::string_view to_string(Split v) {
  switch (v) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

InfertilityType parse_infertility_type(std::string_view s) {
  return parse_label(s, kInfertilityTypes, "infertility type");
}

ArtStrategy parse_art_strategy(std::string_view s) {
  std::string_view hint;
  if (iequals(s, "PGD")) hint = "outdated name; use 'PGT-M'";
  if (iequals(s, "PGS")) hint = "outdated name; use 'PGT-A'";
  return parse_label(s, kArtStrategies, "ART strategy", hint);
}

ArtGeneration parse_art_generation(std::string_view s) {
  return parse_label(s, kArtGenerations, "ART generation");
}

CosRegimen parse_cos_regimen(std::string_view s) {
  return parse_label(s, kCosRegimens, "COS regimen");
}

Split parse_split(std::string_view s) {
  static constexpr std::array kSplits{Split::Train, Split::Val, Split::Test};
  return parse_label(s, kSplits, "split");
}

ArtGeneration art_generation(ArtStrategy a) {
  switch (a) {
    case ArtStrategy::IVF:
    case ArtStrategy::IVF_Short:
    case ArtStrategy::IVF_DS: return ArtGeneration::IVF;
    case ArtStrategy::ICSI:
    case ArtStrategy::ICSI_FS:
    case ArtStrategy::ICSI_DS:
    case ArtStrategy::TESA_ICSI:
    case ArtStrategy::IVF_ICSI: return ArtGeneration::ICSI;
    case ArtStrategy::PGT_A:
    case ArtStrategy::PGT_M:
    case ArtStrategy::PGT_SR: return ArtGeneration::PGT;
  }
  return ArtGeneration::IVF;
}

GnDose GnDose::checked(long long iu) {
  if (iu < 0 || iu > kMaxGnDose) {
    throw ValidationError("Gn dose " + std::to_string(iu) + " IU outside [0, " +
                          std::to_string(kMaxGnDose) + "]");
  }
  return GnDose{static_cast<int>(iu)};
}

std::string normalize_diagnosis(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

void validate(const PatientRecord& r) {
  if (r.id.empty()) throw ValidationError("record id must be non-empty");
  const std::pair<const char*, double> numeric[] = {
      {"age", r.age}, {"cycle_days", r.cycle_days}, {"weight_kg", r.weight_kg},
      {"bmi", r.bmi}, {"amh", r.amh},               {"fsh", r.fsh},
      {"infertility_years", r.infertility_years},
  };
  for (const auto& [name, v] : numeric) {
    if (!std::isfinite(v) || v < 0) {
      throw ValidationError(std::string("field '") + name + "' must be finite and non-negative");
    }
  }
}

void validate(const DecisionBundle& b) {
  if (b.initial_diagnosis.empty()) {
    throw ValidationError("field 'initial_diagnosis' must contain at least one diagnosis");
  }
  for (const auto& d : b.initial_diagnosis) {
    if (d.empty()) throw ValidationError("field 'initial_diagnosis' contains an empty diagnosis");
  }
  if (b.gn_dose.iu < 0 || b.gn_dose.iu > kMaxGnDose) {
    throw ValidationError("field 'gn_dose' outside [0, 1000]");
  }
}

nlohmann::ordered_json to_json(const PatientRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["age"] = r.age;
  j["cycle_days"] = r.cycle_days;
  j["weight_kg"] = r.weight_kg;
  j["bmi"] = r.bmi;
  j["amh"] = r.amh;
  j["fsh"] = r.fsh;
  j["infertility_years"] = r.infertility_years;
  j["ultrasound_text"] = r.ultrasound_text;
  j["history_text"] = r.history_text;
  return j;
}

nlohmann::ordered_json to_json(const DecisionBundle& b) {
  nlohmann::ordered_json j;
  j["infertility_type"] = std::string(to_string(b.infertility_type));
  j["initial_diagnosis"] = b.initial_diagnosis;
  j["art"] = std::string(to_string(b.art));
  j["cos"] = std::string(to_string(b.cos));
  j["gn_dose"] = b.gn_dose.iu;
  nlohmann::ordered_json cot;
  cot["diagnosis_reasoning"] = b.cot.diagnosis_reasoning;
  cot["art_decision"] = b.cot.art_decision;
  cot["cos_selection"] = b.cot.cos_selection;
  cot["gn_rationale"] = b.cot.gn_rationale;
  j["cot"] = std::move(cot);
  return j;
}

nlohmann::ordered_json to_json(const CaseExample& c) {
  nlohmann::ordered_json j = to_json(c.record);
  j["truth"] = to_json(c.truth);
  j["split"] = std::string(to_string(c.split));
  return j;
}

DecisionBundle bundle_from_json(const nlohmann::json& j, const std::string& where) {
  const std::string p = "truth.";
  DecisionBundle b;
  b.infertility_type = with_field_context(where, p + "infertility_type", [&] {
    return parse_infertility_type(string_field(j, "infertility_type", where, p));
  });
  const auto& dx = field(j, "initial_diagnosis", where, p);
  if (!dx.is_array()) {
    throw ValidationError(prefix(where) + "field 'truth.initial_diagnosis' must be an array");
  }
  for (const auto& d : dx) {
    if (!d.is_string()) {
      throw ValidationError(prefix(where) +
                            "field 'truth.initial_diagnosis' must contain strings");
    }
    b.initial_diagnosis.push_back(normalize_diagnosis(d.get<std::string>()));
  }
  b.art = with_field_context(where, p + "art",
                             [&] { return parse_art_strategy(string_field(j, "art", where, p)); });
  b.cos = with_field_context(where, p + "cos",
                             [&] { return parse_cos_regimen(string_field(j, "cos", where, p)); });
  const auto& gn = field(j, "gn_dose", where, p);
  if (!gn.is_number_integer()) {
    throw ValidationError(prefix(where) + "field 'truth.gn_dose' must be an integer");
  }
  b.gn_dose = with_field_context(where, p + "gn_dose",
                                 [&] { return GnDose::checked(gn.get<long long>()); });
  const std::string cp = p + "cot.";
  const auto& cot = field(j, "cot", where, p);
  b.cot.diagnosis_reasoning = string_field(cot, "diagnosis_reasoning", where, cp);
  b.cot.art_decision = string_field(cot, "art_decision", where, cp);
  b.cot.cos_selection = string_field(cot, "cos_selection", where, cp);
  b.cot.gn_rationale = string_field(cot, "gn_rationale", where, cp);
  with_field_context(where, p + "initial_diagnosis", [&] {
    validate(b);
    return 0;
  });
  return b;
}

CaseExample case_from_json(const nlohmann::json& j, const std::string& where) {
  CaseExample c;
  auto& r = c.record;
  r.id = string_field(j, "id", where);
  r.age = number_field(j, "age", where);
  r.cycle_days = number_field(j, "cycle_days", where);
  r.weight_kg = number_field(j, "weight_kg", where);
  r.bmi = number_field(j, "bmi", where);
  r.amh = number_field(j, "amh", where);
  r.fsh = number_field(j, "fsh", where);
  r.infertility_years = number_field(j, "infertility_years", where);
  r.ultrasound_text = string_field(j, "ultrasound_text", where);
  r.history_text = string_field(j, "history_text", where);
  try {
    validate(r);
  } catch (const ValidationError& e) {
    throw ValidationError(prefix(where) + e.what());
  }
  c.truth = bundle_from_json(field(j, "truth", where, ""), where);
  c.split = with_field_context(where, "split",
                               [&] { return parse_split(string_field(j, "split", where)); });
  return c;
}

std::string serialize_case_line(const CaseExample& c) { return to_json(c).dump(); }

std::vector<CaseExample> parse_corpus(std::istream& in) {
  std::vector<CaseExample> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(where + ": malformed JSON: " + e.what());
    }
    CaseExample c = case_from_json(j, where);
    if (!ids.insert(c.record.id).second) {
      throw ValidationError(where + ": duplicate id '" + c.record.id + "'");
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<CaseExample> parse_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus '" + path.string() + "'");
  return parse_corpus(in);
}

void serialize_corpus(std::span<const CaseExample> cases, std::ostream& out) {
  for (const auto& c : cases) out << serialize_case_line(c) << '\n';
}

void serialize_corpus(std::span<const CaseExample> cases, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write corpus '" + path.string() + "'");
  serialize_corpus(cases, out);
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<CaseExample> select_split(std::span<const CaseExample> cases, Split split) {
  std::vector<CaseExample> out;
  for (const auto& c : cases) {
    if (c.split == split) out.push_back(c);
  }
  return out;
}

}  // namespace ivfalign
