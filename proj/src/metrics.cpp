#include "ivfalign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ivfalign/error.hpp"

namespace ivfalign {
namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

// Whole-word substring test on normalized phrases.
bool contains_phrase(const std::string& hay, const std::string& needle) {
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
    const bool left = pos == 0 || hay[pos - 1] == ' ';
    const auto end = pos + needle.size();
    const bool right = end == hay.size() || hay[end] == ' ';
    if (left && right) return true;
  }
  return false;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

const ClassStats* FieldReport::find(std::string_view label) const {
  for (const auto& c : classes) {
    if (c.label == label) return &c;
  }
  return nullptr;
}

FieldReport classification_report(std::span<const std::string> preds,
                                   std::span<const std::string> truths, std::string field,
                                   std::span<const std::string> label_order) {
  if (preds.size() != truths.size()) {
    throw ValidationError("prediction count " + std::to_string(preds.size()) +
                          " differs from truth count " + std::to_string(truths.size()));
  }
  if (truths.empty()) throw ValidationError("classification report needs at least one case");

  std::vector<std::string> labels(label_order.begin(), label_order.end());
  std::set<std::string> known(labels.begin(), labels.end());
  std::set<std::string> extra;
  for (auto side : {preds, truths}) {
    for (const auto& l : side) {
      if (!known.count(l)) extra.insert(l);
    }
  }
  labels.insert(labels.end(), extra.begin(), extra.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) index.emplace(labels[i], i);

  FieldReport r;
  r.field = std::move(field);
  r.n = truths.size();
  r.classes.resize(labels.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    auto& t = r.classes[index.at(truths[i])];
    auto& p = r.classes[index.at(preds[i])];
    ++t.support;
    ++p.predicted;
    if (preds[i] == truths[i]) {
      ++t.true_positive;
      ++correct;
    }
  }
  r.accuracy = ratio(correct, r.n);
  double f1_sum = 0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& c = r.classes[i];
    c.label = labels[i];
    c.precision = ratio(c.true_positive, c.predicted);
    c.recall = ratio(c.true_positive, c.support);
    const double denom = c.precision + c.recall;
    c.f1 = denom > 0 ? 2 * c.precision * c.recall / denom : 0.0;
    if (c.support > 0) {
      f1_sum += c.f1;
      ++present;
    }
  }
  r.macro_f1 = f1_sum / static_cast<double>(present);
  return r;
}

GnError gn_mae(std::span<const std::optional<GnDose>> preds, std::span<const GnDose> truths) {
  if (preds.size() != truths.size()) throw ValidationError("Gn prediction/truth counts differ");
  if (truths.empty()) throw ValidationError("Gn MAE needs at least one case");
  GnError e;
  long long total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i]) {
      ++e.excluded;
      continue;
    }
    total += std::llabs(static_cast<long long>(preds[i]->iu) - truths[i].iu);
    ++e.used;
  }
  if (e.used == 0) throw ValidationError("all Gn predictions are unparseable");
  e.mae = static_cast<double>(total) / static_cast<double>(e.used);
  return e;
}

// ---------------------------------------------------------------- diagnosis

SynonymTable SynonymTable::from_json(const nlohmann::json& j) {
  SynonymTable t;
  if (!j.is_object() || !j.contains("version") || !j.contains("groups") ||
      !j["groups"].is_array()) {
    throw ValidationError("synonym table needs 'version' and 'groups'");
  }
  t.version_ = j["version"].is_string() ? j["version"].get<std::string>() : j["version"].dump();
  std::set<std::string> seen;
  for (const auto& g : j["groups"]) {
    if (!g.is_array() || g.size() < 2) {
      throw ValidationError("synonym group must list at least two phrases");
    }
    std::vector<std::string> group;
    for (const auto& s : g) {
      if (!s.is_string()) throw ValidationError("synonym phrases must be strings");
      std::string norm = normalize_diagnosis(s.get<std::string>());
      if (!seen.insert(norm).second) {
        throw ValidationError("synonym phrase '" + norm + "' appears in more than one place");
      }
      group.push_back(std::move(norm));
    }
    t.groups_.push_back(std::move(group));
  }
  return t;
}

SynonymTable SynonymTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open synonym table '" + path.string() + "'");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("synonym table '" + path.string() + "': " + e.what());
  }
}

const SynonymTable& SynonymTable::builtin() {
  static const SynonymTable table = [] {
    std::filesystem::path dir = IVFALIGN_DATA_DIR;
    if (const char* env = std::getenv("IVFALIGN_DATA_DIR")) dir = env;
    return load(dir / "diagnosis_synonyms.json");
  }();
  return table;
}

std::optional<std::size_t> SynonymTable::group_of(const std::string& normalized) const {
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    if (std::find(groups_[g].begin(), groups_[g].end(), normalized) != groups_[g].end()) return g;
  }
  return std::nullopt;
}

bool diagnosis_entails(const std::string& pred, const std::string& truth,
                       const SynonymTable& table) {
  const std::string p = normalize_diagnosis(pred);
  const std::string t = normalize_diagnosis(truth);
  if (p.empty() || t.empty()) return false;
  if (contains_phrase(p, t) || contains_phrase(t, p)) return true;
  const auto gp = table.group_of(p);
  return gp && gp == table.group_of(t);
}

DiagnosisJudge builtin_judge(const SynonymTable& table) {
  return [table](std::span<const std::string> pred, std::span<const std::string> truth) {
    std::vector<bool> out(truth.size(), false);
    for (std::size_t i = 0; i < truth.size(); ++i) {
      for (const auto& p : pred) {
        if (diagnosis_entails(p, truth[i], table)) {
          out[i] = true;
          break;
        }
      }
    }
    return out;
  };
}

DiagnosisMatch diagnosis_match(std::span<const std::string> pred,
                               std::span<const std::string> truth, const DiagnosisJudge& judge,
                               bool strict) {
  if (truth.empty()) throw ValidationError("truth diagnosis set is empty");
  const auto flags = judge(pred, truth);
  if (flags.size() != truth.size()) throw ValidationError("judge returned wrong flag count");
  DiagnosisMatch m;
  m.partial = std::any_of(flags.begin(), flags.end(), [](bool b) { return b; });
  m.exact = std::all_of(flags.begin(), flags.end(), [](bool b) { return b; });
  if (strict && m.exact) {
    // Every predicted item must itself be backed by the truth set.
    for (const auto& p : pred) {
      const std::string one[] = {p};
      const auto back = judge(truth, one);
      if (!back.front()) {
        m.exact = false;
        break;
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------- confusion

double ConfusionMatrix::off_diagonal_mass(std::size_t i) const {
  if (zero_support.at(i)) return 0.0;
  return 1.0 - row_normalized[i][i];
}

std::optional<std::size_t> ConfusionMatrix::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return i;
  }
  return std::nullopt;
}

ConfusionMatrix confusion(std::span<const std::string> preds, std::span<const std::string> truths,
                          std::span<const std::string> labels) {
  if (preds.size() != truths.size()) throw ValidationError("prediction/truth counts differ");
  ConfusionMatrix m;
  m.labels.assign(labels.begin(), labels.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!index.emplace(labels[i], i).second) {
      throw ValidationError("duplicate confusion label '" + labels[i] + "'");
    }
  }
  const std::size_t k = labels.size();
  m.counts.assign(k, std::vector<std::size_t>(k, 0));
  auto lookup = [&](const std::string& l) {
    auto it = index.find(l);
    if (it == index.end()) throw ValidationError("label '" + l + "' is not in the confusion label set");
    return it->second;
  };
  for (std::size_t i = 0; i < truths.size(); ++i) ++m.counts[lookup(truths[i])][lookup(preds[i])];
  m.row_normalized.assign(k, std::vector<double>(k, 0.0));
  m.zero_support.assign(k, false);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t row = 0;
    for (auto c : m.counts[i]) row += c;
    if (row == 0) {
      m.zero_support[i] = true;
      continue;
    }
    for (std::size_t j = 0; j < k; ++j) m.row_normalized[i][j] = ratio(m.counts[i][j], row);
  }
  return m;
}

nlohmann::ordered_json to_json(const ConfusionMatrix& m) {
  nlohmann::ordered_json j;
  j["labels"] = m.labels;
  j["counts"] = m.counts;
  j["row_normalized"] = m.row_normalized;
  j["zero_support"] = m.zero_support;
  return j;
}

ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
  try {
    const auto labels = j.at("labels").get<std::vector<std::string>>();
    const auto counts = j.at("counts").get<std::vector<std::vector<std::size_t>>>();
    if (counts.size() != labels.size()) throw ValidationError("confusion counts are not square");
    std::vector<std::string> preds, truths;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i].size() != labels.size()) throw ValidationError("confusion counts are not square");
      for (std::size_t jx = 0; jx < counts[i].size(); ++jx) {
        for (std::size_t c = 0; c < counts[i][jx]; ++c) {
          truths.push_back(labels[i]);
          preds.push_back(labels[jx]);
        }
      }
    }
    return confusion(preds, truths, labels);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("confusion matrix JSON: ") + e.what());
  }
}

std::string confusion_csv(const ConfusionMatrix& m) {
  std::ostringstream os;
  os << "truth\\pred";
  for (const auto& l : m.labels) os << ',' << csv_field(l);
  os << ",support\n";
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    os << csv_field(m.labels[i]);
    std::size_t row = 0;
    for (std::size_t j = 0; j < m.labels.size(); ++j) {
      os << ',' << fmt(m.row_normalized[i][j]);
      row += m.counts[i][j];
    }
    os << ',' << row << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------- deltas

DeltaReport subtype_delta_report(const FieldReport& a, const FieldReport& b) {
  auto present = [](const FieldReport& r) {
    std::vector<std::string> out;
    for (const auto& c : r.classes) {
      if (c.support > 0) out.push_back(c.label);
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  if (present(a) != present(b)) {
    throw ValidationError("reports cover different truth label sets");
  }
  DeltaReport d;
  for (const auto& ca : a.classes) {
    if (ca.support == 0) {
      if (ca.label != kUnparseableLabel) {
        d.notes.push_back("class '" + ca.label + "' absent from truths; excluded");
      }
      continue;
    }
    const ClassStats* cb = b.find(ca.label);
    if (cb->support != ca.support) {
      throw ValidationError("class '" + ca.label + "' has different support in the two reports");
    }
    DeltaRow row;
    row.label = ca.label;
    row.f1_a = ca.f1;
    row.f1_b = cb->f1;
    row.delta = cb->f1 - ca.f1;
    row.support = ca.support;
    row.low_n = ca.support < 5;
    d.rows.push_back(std::move(row));
  }
  return d;
}

nlohmann::ordered_json to_json(const FieldReport& r) {
  nlohmann::ordered_json j;
  j["field"] = r.field;
  j["n"] = r.n;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  auto& classes = j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : r.classes) {
    classes.push_back({{"label", c.label},
                       {"support", c.support},
                       {"predicted", c.predicted},
                       {"true_positive", c.true_positive},
                       {"precision", c.precision},
                       {"recall", c.recall},
                       {"f1", c.f1}});
  }
  return j;
}

nlohmann::ordered_json to_json(const DeltaReport& r) {
  nlohmann::ordered_json j;
  auto& rows = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"label", row.label},
                    {"f1_a", row.f1_a},
                    {"f1_b", row.f1_b},
                    {"delta_f1", row.delta},
                    {"support", row.support},
                    {"low_n", row.low_n}});
  }
  j["notes"] = r.notes;
  return j;
}

// ---------------------------------------------------------------- field-level evaluation

namespace {

template <typename E, std::size_t N>
std::vector<std::string> names(const std::array<E, N>& values) {
  std::vector<std::string> out;
  for (auto v : values) out.emplace_back(to_string(v));
  return out;
}

}  // namespace

EvaluationReport evaluate(std::span<const DecisionBundle> truths,
                          std::span<const std::optional<DecisionBundle>> preds,
                          const DiagnosisJudge& judge, bool strict) {
  if (truths.size() != preds.size()) {
    throw ValidationError("prediction count " + std::to_string(preds.size()) +
                          " differs from truth count " + std::to_string(truths.size()));
  }
  if (truths.empty()) throw ValidationError("nothing to evaluate");
  const std::string unparseable(kUnparseableLabel);
  std::vector<std::string> it_p, it_t, art_p, art_t, cos_p, cos_t, gen_p, gen_t;
  std::vector<std::optional<GnDose>> gn_p;
  std::vector<GnDose> gn_t;
  EvaluationReport r;
  r.n = truths.size();
  r.strict_diagnosis = strict;
  std::size_t partial = 0, exact = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const auto& t = truths[i];
    const auto& p = preds[i];
    it_t.emplace_back(to_string(t.infertility_type));
    art_t.emplace_back(to_string(t.art));
    cos_t.emplace_back(to_string(t.cos));
    gen_t.emplace_back(to_string(art_generation(t.art)));
    gn_t.push_back(t.gn_dose);
    if (!p) {
      ++r.unparseable;
      it_p.push_back(unparseable);
      art_p.push_back(unparseable);
      cos_p.push_back(unparseable);
      gen_p.push_back(unparseable);
      gn_p.emplace_back(std::nullopt);
      continue;
    }
    it_p.emplace_back(to_string(p->infertility_type));
    art_p.emplace_back(to_string(p->art));
    cos_p.emplace_back(to_string(p->cos));
    gen_p.emplace_back(to_string(art_generation(p->art)));
    gn_p.emplace_back(p->gn_dose);
    const auto m = diagnosis_match(p->initial_diagnosis, t.initial_diagnosis, judge, strict);
    partial += m.partial;
    exact += m.exact;
  }
  r.infertility_type = classification_report(it_p, it_t, "infertility_type", names(kInfertilityTypes));
  r.art = classification_report(art_p, art_t, "art", names(kArtStrategies));
  r.cos = classification_report(cos_p, cos_t, "cos", names(kCosRegimens));
  r.art_generation = classification_report(gen_p, gen_t, "art_generation", names(kArtGenerations));
  r.average_accuracy = (r.infertility_type.accuracy + r.art.accuracy + r.cos.accuracy) / 3.0;
  r.average_macro_f1 = (r.infertility_type.macro_f1 + r.art.macro_f1 + r.cos.macro_f1) / 3.0;
  r.diagnosis_partial = ratio(partial, r.n);
  r.diagnosis_exact = ratio(exact, r.n);
  if (r.unparseable < r.n) {
    r.gn = gn_mae(gn_p, gn_t);
  } else {
    r.gn = GnError{std::nan(""), 0, r.n};
  }
  return r;
}

nlohmann::ordered_json to_json(const EvaluationReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["unparseable"] = r.unparseable;
  j["infertility_type"] = to_json(r.infertility_type);
  j["art"] = to_json(r.art);
  j["cos"] = to_json(r.cos);
  j["average"] = {{"accuracy", r.average_accuracy}, {"macro_f1", r.average_macro_f1}};
  j["diagnosis"] = {{"partial", r.diagnosis_partial},
                    {"exact", r.diagnosis_exact},
                    {"strict", r.strict_diagnosis}};
  j["gn"] = {{"mae", std::isfinite(r.gn.mae) ? nlohmann::ordered_json(r.gn.mae) : nullptr},
             {"used", r.gn.used},
             {"excluded", r.gn.excluded}};
  j["art_generation"] = to_json(r.art_generation);
  return j;
}

std::string evaluation_csv(const EvaluationReport& r) {
  std::ostringstream os;
  os << "n,unparseable,it_accuracy,it_macro_f1,art_accuracy,art_macro_f1,cos_accuracy,"
        "cos_macro_f1,average_accuracy,average_macro_f1,diagnosis_partial,diagnosis_exact,"
        "gn_mae,gn_excluded,art_generation_accuracy,art_generation_macro_f1\n";
  os << r.n << ',' << r.unparseable << ',' << fmt(r.infertility_type.accuracy) << ','
     << fmt(r.infertility_type.macro_f1) << ',' << fmt(r.art.accuracy) << ','
     << fmt(r.art.macro_f1) << ',' << fmt(r.cos.accuracy) << ',' << fmt(r.cos.macro_f1) << ','
     << fmt(r.average_accuracy) << ',' << fmt(r.average_macro_f1) << ','
     << fmt(r.diagnosis_partial) << ',' << fmt(r.diagnosis_exact) << ','
     << (std::isfinite(r.gn.mae) ? fmt(r.gn.mae) : "") << ',' << r.gn.excluded << ','
     << fmt(r.art_generation.accuracy) << ',' << fmt(r.art_generation.macro_f1) << '\n';
  return os.str();
}

std::string per_class_csv(const EvaluationReport& r) {
  std::ostringstream os;
  os << "field,label,support,predicted,precision,recall,f1\n";
  for (const FieldReport* f : {&r.infertility_type, &r.art, &r.cos, &r.art_generation}) {
    for (const auto& c : f->classes) {
      os << f->field << ',' << csv_field(c.label) << ',' << c.support << ',' << c.predicted << ','
         << fmt(c.precision) << ',' << fmt(c.recall) << ',' << fmt(c.f1) << '\n';
    }
  }
  return os.str();
}

}  // namespace ivfalign
