#include "ivfalign/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ivfalign/allocation.hpp"
#include "ivfalign/error.hpp"
#include "ivfalign/lexicon.hpp"
#include "ivfalign/random.hpp"

namespace ivfalign {
namespace {

using lexicon::Finding;

constexpr std::array<double, 11> kReferenceCounts{
    4885,  // IVF
    670,   // IVF-Short
    285,   // IVF-DS
    949,   // ICSI
    53,    // ICSI-FS
    11,    // ICSI-DS
    302,   // TESA+ICSI
    155,   // IVF+ICSI
    308,   // PGT-A
    163,   // PGT-M
    420,   // PGT-SR
};

struct Observed {
  std::array<bool, lexicon::kFindingCount> has{};
  double age = 0;
  double amh = 0;
  double cycle = 0;
  double bmi = 0;

  bool operator()(Finding f) const { return has[static_cast<std::size_t>(f)]; }
};

Observed observe(const PatientRecord& r) {
  Observed o;
  for (const auto* text : {&r.ultrasound_text, &r.history_text}) {
    for (Finding f : lexicon::detect_findings(*text)) o.has[static_cast<std::size_t>(f)] = true;
  }
  o.age = r.age;
  o.amh = r.amh;
  o.cycle = r.cycle_days;
  o.bmi = r.bmi;
  return o;
}

bool is_pgt(ArtStrategy a) { return art_generation(a) == ArtGeneration::PGT; }

InfertilityType decide_type(const Observed& o) {
  if (o(Finding::FertilityPreservation)) return InfertilityType::Other;
  if (o(Finding::PreviousLiveBirth) || o(Finding::PreviousMiscarriage) ||
      o(Finding::PreviousEctopic) || o(Finding::RecurrentLoss)) {
    return InfertilityType::Secondary;
  }
  return InfertilityType::Primary;
}

ArtStrategy decide_art(const Observed& o) {
  if (o(Finding::Translocation)) return ArtStrategy::PGT_SR;
  if (o(Finding::Monogenic)) return ArtStrategy::PGT_M;
  if (o(Finding::RecurrentLoss) || o(Finding::ImplantationFailure)) return ArtStrategy::PGT_A;
  if (o(Finding::ObstructiveAzoospermia)) return ArtStrategy::TESA_ICSI;
  if (o(Finding::DonorSperm) && o(Finding::FertilizationFailure)) return ArtStrategy::ICSI_DS;
  if (o(Finding::DonorSperm)) return ArtStrategy::IVF_DS;
  if (o(Finding::FrozenSpermOnly)) return ArtStrategy::ICSI_FS;
  if (o(Finding::SevereOligo)) return ArtStrategy::ICSI;
  if (o(Finding::BorderlineSemen)) return ArtStrategy::IVF_ICSI;
  if (o(Finding::MildAstheno)) return ArtStrategy::IVF_Short;
  return ArtStrategy::IVF;
}

CosRegimen decide_cos(const Observed& o, ArtStrategy art) {
  if (o(Finding::Endometrioma)) {
    return o.amh >= 2.0 ? CosRegimen::UltraLong : CosRegimen::ModUltraLong;
  }
  if (o(Finding::Adenomyosis)) return CosRegimen::LongActing;
  if (o.amh < 0.5) return CosRegimen::LutealStim;
  if (o.amh < 1.1) {
    if (o.age >= 38) return CosRegimen::MildDirectGn;
    if (o.cycle >= 36) return CosRegimen::CcLetroGn;
    return CosRegimen::CcGn;
  }
  if (is_pgt(art)) return CosRegimen::PPOS;
  if (o(Finding::Pcom) || o.amh >= 4.5) return CosRegimen::AntagonistFixed;
  if (o(Finding::PoorResponse)) return CosRegimen::Short;
  if (o.age < 30 && o.amh >= 2.0) return CosRegimen::LutealShort;
  return CosRegimen::AntagonistFlex;
}

std::pair<int, std::vector<std::string>> decide_gn(const Observed& o, CosRegimen cos) {
  int dose = 150;
  std::vector<std::string> why;
  if (o.amh < 1.1) {
    dose += 75;
    why.emplace_back(lexicon::why::kGnLowReserve);
  }
  if (o.amh >= 4.5 || o(Finding::Pcom)) {
    dose -= 50;
    why.emplace_back(lexicon::why::kGnHighReserve);
  }
  if (o.age >= 40) {
    dose += 50;
    why.emplace_back(lexicon::why::kGnAdvancedAge);
  } else if (o.age >= 35) {
    dose += 25;
    why.emplace_back(lexicon::why::kGnAge);
  }
  if (o.bmi >= 28) {
    dose += 25;
    why.emplace_back(lexicon::why::kGnBmi);
  }
  if ((cos == CosRegimen::MildDirectGn || cos == CosRegimen::LutealStim) && dose > 150) {
    dose = 150;
    why.emplace_back(lexicon::why::kGnMildCap);
  }
  dose = std::clamp(dose, 75, 300);
  if (why.empty()) why.emplace_back(lexicon::why::kGnStandard);
  return {dose, why};
}

void decide_diagnoses(const Observed& o, InfertilityType type, std::vector<std::string>& dx,
                      std::vector<std::string>& reasons) {
  namespace d = lexicon::dx;
  namespace w = lexicon::why;
  switch (type) {
    case InfertilityType::Other: reasons.emplace_back(w::kPreservationRequest); break;
    case InfertilityType::Secondary: reasons.emplace_back(w::kPriorPregnancy); break;
    case InfertilityType::Primary: reasons.emplace_back(w::kNoConception); break;
  }
  auto add = [&](bool cond, std::string_view diagnosis, std::string_view reason) {
    if (!cond) return;
    dx.emplace_back(diagnosis);
    reasons.emplace_back(reason);
  };
  add(o(Finding::TubalObstruction) || o(Finding::Hydrosalpinx), d::kTubal, w::kTubal);
  add(o(Finding::Pcom) && o.cycle >= 36, d::kPcos, w::kPcos);
  add(o.amh < 1.1, d::kDor, w::kLowAmh);
  add(o(Finding::Endometrioma), d::kEndometriosis, w::kEndometrioma);
  add(o(Finding::Adenomyosis), d::kAdenomyosis, w::kAdenomyosis);
  add(o(Finding::Fibroid), d::kFibroid, w::kFibroid);
  add(o(Finding::ObstructiveAzoospermia) || o(Finding::SevereOligo) ||
          o(Finding::BorderlineSemen) || o(Finding::MildAstheno) || o(Finding::DonorSperm),
      d::kMale, w::kSemen);
  add(o(Finding::Translocation), d::kTranslocation, w::kTranslocation);
  add(o(Finding::Monogenic), d::kMonogenic, w::kMonogenic);
  add(o(Finding::RecurrentLoss), d::kRecurrentLoss, w::kRecurrentLoss);
  add(o(Finding::ImplantationFailure), d::kImplantationFailure, w::kImplantation);
  if (dx.empty()) {
    if (type == InfertilityType::Other) {
      dx.emplace_back(d::kPreservation);
    } else {
      dx.emplace_back(d::kUnexplained);
      reasons.emplace_back(w::kNoCause);
    }
  }
}

DecisionBundle decide(const Observed& o) {
  DecisionBundle b;
  b.infertility_type = decide_type(o);
  std::vector<std::string> dx_reasons;
  decide_diagnoses(o, b.infertility_type, b.initial_diagnosis, dx_reasons);
  b.art = decide_art(o);
  b.cos = decide_cos(o, b.art);
  auto [dose, gn_why] = decide_gn(o, b.cos);
  b.gn_dose = GnDose{dose};
  b.cot.diagnosis_reasoning = lexicon::join_atoms(dx_reasons);
  b.cot.art_decision = std::string(lexicon::art_reason(b.art));
  b.cot.cos_selection = std::string(lexicon::cos_reason(b.cos));
  b.cot.gn_rationale = lexicon::join_atoms(gn_why);
  return b;
}

double round_to(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(v * scale) / scale;
}

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Indication-specific narrative findings.
void indication_findings(ArtStrategy a, Rng& rng, std::vector<Finding>& history) {
  switch (a) {
    case ArtStrategy::PGT_SR: history.push_back(Finding::Translocation); break;
    case ArtStrategy::PGT_M: history.push_back(Finding::Monogenic); break;
    case ArtStrategy::PGT_A:
      history.push_back(bernoulli(rng, 0.6) ? Finding::RecurrentLoss
                                            : Finding::ImplantationFailure);
      break;
    case ArtStrategy::TESA_ICSI: history.push_back(Finding::ObstructiveAzoospermia); break;
    case ArtStrategy::ICSI_DS:
      history.push_back(Finding::DonorSperm);
      history.push_back(Finding::FertilizationFailure);
      break;
    case ArtStrategy::IVF_DS: history.push_back(Finding::DonorSperm); break;
    case ArtStrategy::ICSI_FS: history.push_back(Finding::FrozenSpermOnly); break;
    case ArtStrategy::ICSI: history.push_back(Finding::SevereOligo); break;
    case ArtStrategy::IVF_ICSI: history.push_back(Finding::BorderlineSemen); break;
    case ArtStrategy::IVF_Short: history.push_back(Finding::MildAstheno); break;
    case ArtStrategy::IVF:
      if (bernoulli(rng, 0.5)) history.push_back(Finding::NormalSemen);
      break;
  }
  // Genetic indications can coexist with male-factor findings; rule order
  // resolves them.
  if (is_pgt(a) && bernoulli(rng, 0.2)) {
    history.push_back(bernoulli(rng, 0.5) ? Finding::MildAstheno : Finding::SevereOligo);
  }
}

double male_factor_score(ArtStrategy a) {
  switch (a) {
    case ArtStrategy::TESA_ICSI: return 1.0;
    case ArtStrategy::ICSI: return 0.8;
    case ArtStrategy::IVF_ICSI: return 0.5;
    case ArtStrategy::IVF_Short: return 0.3;
    case ArtStrategy::IVF_DS:
    case ArtStrategy::ICSI_DS: return 1.0;
    default: return 0.0;
  }
}

std::pair<LatentProfile, PatientRecord> sample_patient(ArtStrategy indication, Rng& rng,
                                                        std::size_t index) {
  LatentProfile z;
  z.indication = indication;
  z.ovarian_reserve = normal01(rng);
  z.male_factor = male_factor_score(indication);
  z.genetic_risk = is_pgt(indication);

  PatientRecord r;
  r.id = "case-" + std::to_string(index);
  r.age = std::clamp(std::round(31.8 + 4.6 * normal01(rng)), 21.0, 45.0);
  const double log_amh = std::log(2.6) + 0.75 * z.ovarian_reserve - 0.06 * (r.age - 32.0);
  r.amh = std::clamp(round_to(std::exp(log_amh), 2), 0.05, 15.0);
  r.fsh = std::clamp(round_to(7.5 - 1.2 * z.ovarian_reserve + 0.08 * (r.age - 32.0) +
                                  normal01(rng),
                              1),
                     2.0, 25.0);

  double pcom_p = 0.02;
  if (r.amh >= 4.5) {
    pcom_p = 0.6;
  } else if (r.amh >= 3.0) {
    pcom_p = 0.15;
  }
  const bool pcom = bernoulli(rng, pcom_p);
  z.cycle_regularity = (pcom && bernoulli(rng, 0.75)) ? 0.0 : 1.0;
  if (z.cycle_regularity == 0.0) {
    r.cycle_days = static_cast<double>(uniform_int(rng, 36, 60));
  } else if (bernoulli(rng, 0.03)) {
    r.cycle_days = static_cast<double>(uniform_int(rng, 18, 20));
  } else {
    r.cycle_days = static_cast<double>(uniform_int(rng, 25, 33));
  }
  r.bmi = std::clamp(round_to(22.3 + 3.0 * normal01(rng) + (pcom ? 2.5 : 0.0), 1), 16.0, 40.0);
  const double height = std::clamp(1.60 + 0.05 * normal01(rng), 1.45, 1.80);
  r.weight_kg = round_to(r.bmi * height * height, 1);
  r.infertility_years = static_cast<double>(std::min<std::int64_t>(
      15, 1 + static_cast<std::int64_t>(std::floor(-2.5 * std::log(1.0 - uniform01(rng))))));

  std::vector<Finding> history;
  std::vector<Finding> ultrasound;

  const bool can_preserve =
      indication == ArtStrategy::IVF || indication == ArtStrategy::IVF_DS;
  z.preservation_only = can_preserve && bernoulli(rng, 0.04);
  z.prior_pregnancy = !z.preservation_only && bernoulli(rng, 0.38);
  if (z.preservation_only) {
    history.push_back(Finding::FertilityPreservation);
  } else if (z.prior_pregnancy) {
    static constexpr std::array kPrior{Finding::PreviousLiveBirth, Finding::PreviousMiscarriage,
                                       Finding::PreviousEctopic};
    history.push_back(kPrior[static_cast<std::size_t>(uniform_int(rng, 0, 2))]);
  }
  indication_findings(indication, rng, history);
  if (!z.preservation_only) {
    if (bernoulli(rng, 0.15)) history.push_back(Finding::TubalObstruction);
    if (bernoulli(rng, 0.10)) history.push_back(Finding::LaparoscopicSurgery);
    if (bernoulli(rng, 0.05)) history.push_back(Finding::PoorResponse);
  }

  if (pcom) ultrasound.push_back(Finding::Pcom);
  if (!z.preservation_only) {
    if (bernoulli(rng, 0.07)) ultrasound.push_back(Finding::Endometrioma);
    if (bernoulli(rng, 0.04)) ultrasound.push_back(Finding::Adenomyosis);
    if (bernoulli(rng, 0.05)) ultrasound.push_back(Finding::Fibroid);
    if (bernoulli(rng, 0.08)) ultrasound.push_back(Finding::Hydrosalpinx);
  }
  if (bernoulli(rng, 0.05)) ultrasound.push_back(Finding::ThinEndometrium);
  if (ultrasound.empty()) ultrasound.push_back(Finding::NormalPelvis);

  const int afc = static_cast<int>(std::clamp(std::round(3.0 + 4.5 * r.amh), 1.0, 40.0));
  const double endometrium = round_to(6.0 + 4.0 * uniform01(rng), 1);
  std::ostringstream us;
  us << "Transvaginal ultrasound: endometrium " << format_number(endometrium)
     << " mm, antral follicle count " << afc;
  for (Finding f : ultrasound) us << ", " << lexicon::phrase(f);
  us << '.';
  r.ultrasound_text = us.str();

  std::ostringstream hx;
  hx << "Infertility for " << format_number(r.infertility_years) << " years";
  for (Finding f : history) hx << "; " << lexicon::phrase(f);
  hx << '.';
  r.history_text = hx.str();
  return {z, r};
}

void apply_rule_noise(DecisionBundle& b, const GeneratorConfig& cfg, Rng& rng) {
  switch (uniform_int(rng, 0, 2)) {
    case 0: {
      b.art = kArtStrategies[categorical(rng, cfg.marginals)];
      b.cot.art_decision = std::string(lexicon::art_reason(b.art));
      break;
    }
    case 1: {
      const auto prior = default_cos_noise_prior();
      b.cos = kCosRegimens[categorical(rng, prior)];
      b.cot.cos_selection = std::string(lexicon::cos_reason(b.cos));
      break;
    }
    default: {
      std::vector<int> options;
      for (int delta : {-50, -25, 25, 50}) {
        const int v = b.gn_dose.iu + delta;
        if (v >= 75 && v <= 300) options.push_back(v);
      }
      b.gn_dose = GnDose{options[static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<std::int64_t>(options.size()) - 1))]};
      b.cot.gn_rationale += std::string(lexicon::kAtomSeparator);
      b.cot.gn_rationale += lexicon::why::kGnClinician;
      break;
    }
  }
}

void check_range(const char* name, double v, double lo, double hi) {
  if (!(v >= lo && v <= hi)) {
    std::ostringstream os;
    os << "field '" << name << "' = " << v << " outside generator range [" << lo << ", " << hi
       << "]";
    throw ValidationError(os.str());
  }
}

}  // namespace

std::array<double, 11> default_art_marginals() {
  std::array<double, 11> m{};
  const double total = std::accumulate(kReferenceCounts.begin(), kReferenceCounts.end(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = kReferenceCounts[i] / total;
  return m;
}

std::array<double, 12> default_cos_noise_prior() {
  // Indexed like kCosRegimens; a documented default, antagonist-dominated.
  return {0.40, 0.10, 0.10, 0.04, 0.10, 0.05, 0.04, 0.03, 0.03, 0.04, 0.03, 0.04};
}

GeneratorConfig::GeneratorConfig() : marginals(default_art_marginals()) {}

void GeneratorConfig::validate() const {
  double sum = 0;
  for (double p : marginals) {
    if (!std::isfinite(p) || p < 0) throw ValidationError("marginals must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError("marginals must sum to 1 (got " + format_number(sum) + ")");
  }
  if (!(rule_noise >= 0 && rule_noise <= 1)) {
    throw ValidationError("rule_noise must lie in [0, 1]");
  }
}

std::vector<CaseExample> generate(const GeneratorConfig& cfg) {
  cfg.validate();
  std::vector<CaseExample> out;
  if (cfg.n == 0) return out;

  // Indications are allocated by quota and shuffled, so realized subtype
  // frequencies track the marginals up to rounding.
  const auto counts = largest_remainder(cfg.n, cfg.marginals);
  std::vector<ArtStrategy> indications;
  indications.reserve(cfg.n);
  for (std::size_t k = 0; k < counts.size(); ++k) {
    indications.insert(indications.end(), counts[k], kArtStrategies[k]);
  }
  Rng order_rng(derive_seed(cfg.seed, 0));
  shuffle(std::span(indications), order_rng);

  out.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    Rng rng(derive_seed(cfg.seed, i + 1));
    auto [latent, record] = sample_patient(indications[i], rng, i);
    CaseExample c;
    c.truth = decide(observe(record));
    if (bernoulli(rng, cfg.rule_noise)) apply_rule_noise(c.truth, cfg, rng);
    c.record = std::move(record);
    out.push_back(std::move(c));
  }
  assign_splits(out, derive_seed(cfg.seed, ~0ULL));
  return out;
}

DecisionBundle oracle_decide(const PatientRecord& record) {
  validate(record);
  check_range("age", record.age, 18, 50);
  check_range("cycle_days", record.cycle_days, 15, 90);
  check_range("weight_kg", record.weight_kg, 30, 150);
  check_range("bmi", record.bmi, 14, 50);
  check_range("amh", record.amh, 0, 20);
  check_range("fsh", record.fsh, 0, 40);
  check_range("infertility_years", record.infertility_years, 0, 30);
  return decide(observe(record));
}

void assign_splits(std::vector<CaseExample>& cases, std::uint64_t seed) {
  const std::size_t n = cases.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(std::span(order), rng);
  const std::size_t n_val = n / 10;
  const std::size_t n_test = n / 10;
  for (std::size_t k = 0; k < n; ++k) {
    Split s = Split::Train;
    if (k < n_val) {
      s = Split::Val;
    } else if (k < n_val + n_test) {
      s = Split::Test;
    }
    cases[order[k]].split = s;
  }
}

}  // namespace ivfalign
