#pragma once

// Automatic evaluation: per-field accuracy and macro-F1, Gn mean absolute
// error, partial/exact diagnosis matching behind a pluggable judge, confusion
// matrices and per-class F1 deltas between two systems.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivfalign/schema.hpp"

namespace ivfalign {

/// Label used for predictions that could not be parsed.
inline constexpr std::string_view kUnparseableLabel = "<unparseable>";

struct ClassStats {
  std::string label;
  std::size_t support = 0;    // truth count
  std::size_t predicted = 0;  // prediction count
  std::size_t true_positive = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

struct FieldReport {
  std::string field;
  std::size_t n = 0;
  double accuracy = 0;
  double macro_f1 = 0;  // over classes with support > 0
  std::vector<ClassStats> classes;

  const ClassStats* find(std::string_view label) const;
};

/// Empty precision/recall/F1 denominators give 0. Classes are listed in
/// `label_order` first, then any other observed label in sorted order.
FieldReport classification_report(std::span<const std::string> preds,
                                   std::span<const std::string> truths, std::string field = {},
                                   std::span<const std::string> label_order = {});

struct GnError {
  double mae = 0;
  std::size_t used = 0;
  std::size_t excluded = 0;
};

/// Unparseable predictions (nullopt) are excluded and counted. Throws if
/// nothing is left.
GnError gn_mae(std::span<const std::optional<GnDose>> preds, std::span<const GnDose> truths);

// ---------------------------------------------------------------- diagnosis

/// For each truth item, whether some predicted item entails it.
using DiagnosisJudge = std::function<std::vector<bool>(std::span<const std::string> pred,
                                                       std::span<const std::string> truth)>;

/// Versioned groups of interchangeable diagnosis phrases.
class SynonymTable {
 public:
  SynonymTable() = default;
  static SynonymTable load(const std::filesystem::path& path);
  static SynonymTable from_json(const nlohmann::json& j);
  /// The table shipped in the data directory.
  static const SynonymTable& builtin();

  const std::string& version() const { return version_; }
  /// Group index of a normalized phrase, if any.
  std::optional<std::size_t> group_of(const std::string& normalized) const;

 private:
  std::string version_;
  std::vector<std::vector<std::string>> groups_;
};

/// Normalized equality, whole-word containment either way, or a shared
/// synonym group.
bool diagnosis_entails(const std::string& pred, const std::string& truth,
                       const SynonymTable& table);

DiagnosisJudge builtin_judge(const SynonymTable& table = SynonymTable::builtin());

struct DiagnosisMatch {
  bool partial = false;
  bool exact = false;
};

/// partial: at least one truth item entailed; exact: all of them. In strict
/// mode exact additionally requires every predicted item to entail some
/// truth item. Throws on an empty truth set.
DiagnosisMatch diagnosis_match(std::span<const std::string> pred,
                               std::span<const std::string> truth, const DiagnosisJudge& judge,
                               bool strict = false);

// ---------------------------------------------------------------- confusion

struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> counts;  // [truth][pred]
  std::vector<std::vector<double>> row_normalized;
  std::vector<bool> zero_support;

  /// Off-diagonal share of row i (0 for zero-support rows).
  double off_diagonal_mass(std::size_t i) const;
  std::optional<std::size_t> index_of(std::string_view label) const;
};

/// Throws ValidationError on a value outside `labels`.
ConfusionMatrix confusion(std::span<const std::string> preds, std::span<const std::string> truths,
                          std::span<const std::string> labels);

nlohmann::ordered_json to_json(const ConfusionMatrix& m);
ConfusionMatrix confusion_from_json(const nlohmann::json& j);
/// Row-normalized matrix with a header row of prediction labels.
std::string confusion_csv(const ConfusionMatrix& m);

// ---------------------------------------------------------------- deltas

struct DeltaRow {
  std::string label;
  double f1_a = 0;
  double f1_b = 0;
  double delta = 0;  // f1_b - f1_a
  std::size_t support = 0;
  bool low_n = false;  // support < 5
};

struct DeltaReport {
  std::vector<DeltaRow> rows;
  std::vector<std::string> notes;
};

/// Per-class F1 change from `a` to `b`. Classes absent from the truths are
/// excluded with a note; differing truth label sets or supports throw.
DeltaReport subtype_delta_report(const FieldReport& a, const FieldReport& b);

nlohmann::ordered_json to_json(const FieldReport& r);
nlohmann::ordered_json to_json(const DeltaReport& r);

// ---------------------------------------------------------------- field-level evaluation

struct EvaluationReport {
  std::size_t n = 0;
  std::size_t unparseable = 0;
  FieldReport infertility_type;
  FieldReport art;
  FieldReport cos;
  FieldReport art_generation;
  double average_accuracy = 0;  // unweighted over IT, ART, COS
  double average_macro_f1 = 0;
  double diagnosis_partial = 0;
  double diagnosis_exact = 0;
  bool strict_diagnosis = false;
  GnError gn;
};

/// Scores predictions (nullopt = unparseable) against the truth bundles.
EvaluationReport evaluate(std::span<const DecisionBundle> truths,
                          std::span<const std::optional<DecisionBundle>> preds,
                          const DiagnosisJudge& judge = builtin_judge(), bool strict = false);

nlohmann::ordered_json to_json(const EvaluationReport& r);
/// Header plus one row, columns in a fixed order.
std::string evaluation_csv(const EvaluationReport& r);
/// field,label,support,predicted,precision,recall,f1 rows for IT, ART, COS.
std::string per_class_csv(const EvaluationReport& r);

}  // namespace ivfalign
