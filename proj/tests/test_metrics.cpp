#include <doctest.h>

#include "fixtures.hpp"
#include "ivfalign/error.hpp"
#include "ivfalign/metrics.hpp"
#include "ivfalign/random.hpp"
#include "oracles.hpp"

using namespace ivfalign;

namespace {

std::vector<std::string> labels_of(std::initializer_list<const char*> xs) {
  return {xs.begin(), xs.end()};
}

std::vector<std::string> repeat(const std::string& label, std::size_t n) { return std::vector<std::string>(n, label); }

void append(std::vector<std::string>& v, const std::string& label, std::size_t n) {
  v.insert(v.end(), n, label);
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("three-item example") {
    const auto truth = labels_of({"A", "A", "B"});
    const auto pred = labels_of({"A", "B", "B"});
    const auto r = classification_report(pred, truth, "x");
    CHECK(r.accuracy == doctest::Approx(2.0 / 3.0));
    CHECK(r.macro_f1 == doctest::Approx(0.6667).epsilon(1e-4));
    const std::vector<std::string> labels{"A", "B"};
    const auto m = confusion(pred, truth, labels);
    CHECK(m.row_normalized[0] == std::vector<double>{0.5, 0.5});
    CHECK(m.row_normalized[1] == std::vector<double>{0.0, 1.0});
    CHECK(m.off_diagonal_mass(0) == 0.5);
    CHECK(m.off_diagonal_mass(1) == 0.0);
  }

  TEST_CASE("classification report matches the brute-force oracle") {
    Rng rng(99);
    const std::vector<std::string> pool{"a", "b", "c", "d", "e"};
    for (int inst = 0; inst < 1000; ++inst) {
      const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 30));
      const auto k = static_cast<std::size_t>(uniform_int(rng, 1, 5));
      std::vector<std::string> pred, truth;
      for (std::size_t i = 0; i < n; ++i) {
        truth.push_back(pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(k) - 1))]);
        pred.push_back(pool[static_cast<std::size_t>(uniform_int(rng, 0, 4))]);
      }
      const auto r = classification_report(pred, truth);
      REQUIRE(std::abs(r.accuracy - oracle::accuracy(pred, truth)) < 1e-12);
      REQUIRE(std::abs(r.macro_f1 - oracle::macro_f1(pred, truth)) < 1e-12);
      for (const auto& [label, c] : oracle::class_counts(pred, truth)) {
        const auto* s = r.find(label);
        REQUIRE(s != nullptr);
        CHECK(s->support == c.support);
        CHECK(s->true_positive == c.tp);
        CHECK(std::abs(s->f1 - oracle::f1(c)) < 1e-12);
      }
    }
  }

  TEST_CASE("Gn mean absolute error") {
    const std::vector<std::optional<GnDose>> preds{GnDose{150}, GnDose{225}};
    const std::vector<GnDose> truths{GnDose{150}, GnDose{250}};
    const auto e = gn_mae(preds, truths);
    CHECK(e.mae == 12.5);
    CHECK(e.used == 2);
    const std::vector<std::optional<GnDose>> with_gap{GnDose{150}, std::nullopt, GnDose{225}};
    const std::vector<GnDose> truths3{GnDose{150}, GnDose{300}, GnDose{250}};
    const auto g = gn_mae(with_gap, truths3);
    CHECK(g.mae == 12.5);
    CHECK(g.excluded == 1);
    const std::vector<std::optional<GnDose>> none{std::nullopt};
    const std::vector<GnDose> one{GnDose{150}};
    CHECK_THROWS_AS(gn_mae(none, one), ValidationError);
  }

  TEST_CASE("diagnosis synonyms") {
    const auto& table = SynonymTable::builtin();
    CHECK_FALSE(table.version().empty());
    CHECK(diagnosis_entails("tubal factor", "tubal obstruction", table));
    CHECK(diagnosis_entails("Tubal Factor Infertility", "tubal factor infertility", table));
    CHECK(diagnosis_entails("male factor infertility", "male factor", table));
    CHECK_FALSE(diagnosis_entails("endometriosis", "adenomyosis", table));
    CHECK_FALSE(diagnosis_entails("pcos", "tubal factor", table));
  }

  TEST_CASE("partial and exact diagnosis match") {
    const auto judge = builtin_judge();
    const auto truth = labels_of({"tubal factor infertility", "endometriosis"});
    auto m = diagnosis_match(labels_of({"tubal obstruction"}), truth, judge);
    CHECK(m.partial);
    CHECK_FALSE(m.exact);
    m = diagnosis_match(labels_of({"hydrosalpinx", "endometrioma"}), truth, judge);
    CHECK(m.exact);
    m = diagnosis_match(labels_of({"hydrosalpinx", "endometrioma", "pcos"}), truth, judge);
    CHECK(m.exact);
    CHECK_FALSE(diagnosis_match(labels_of({"hydrosalpinx", "endometrioma", "pcos"}), truth, judge, true).exact);
    CHECK_FALSE(diagnosis_match(labels_of({"pcos"}), truth, judge).partial);
    CHECK_THROWS_AS(diagnosis_match(labels_of({"pcos"}), std::vector<std::string>{}, judge), ValidationError);
  }

  TEST_CASE("diagnosis match agrees with pairwise entailment and exact implies partial") {
    const auto& table = SynonymTable::builtin();
    const auto judge = builtin_judge();
    const std::vector<std::string> pool{"tubal factor", "hydrosalpinx", "pcos", "endometriosis",
                                        "endometrioma", "adenomyosis", "dor", "male factor",
                                        "unexplained infertility", "myoma", "rif"};
    Rng rng(5);
    auto draw = [&](std::size_t max) {
      std::vector<std::string> v;
      const auto n = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(max)));
      for (std::size_t i = 0; i < n; ++i) v.push_back(pool[static_cast<std::size_t>(uniform_int(rng, 0, 10))]);
      return v;
    };
    for (int inst = 0; inst < 1000; ++inst) {
      const auto pred = draw(4), truth = draw(3);
      std::size_t covered = 0;
      for (const auto& t : truth) {
        bool hit = false;
        for (const auto& p : pred) hit = hit || diagnosis_entails(p, t, table);
        covered += hit;
      }
      const auto m = diagnosis_match(pred, truth, judge);
      REQUIRE(m.partial == (covered > 0));
      REQUIRE(m.exact == (covered == truth.size()));
      if (m.exact) REQUIRE(m.partial);
      if (diagnosis_match(pred, truth, judge, true).exact) REQUIRE(m.exact);
    }
  }

  TEST_CASE("confusion validation and serialization") {
    const std::vector<std::string> labels{"A", "B", "C"};
    const auto m = confusion(labels_of({"A", "C"}), labels_of({"A", "A"}), labels);
    CHECK(m.zero_support[1]);
    CHECK(m.off_diagonal_mass(1) == 0.0);
    const auto back = confusion_from_json(to_json(m));
    CHECK(back.counts == m.counts);
    CHECK(back.labels == m.labels);
    CHECK(confusion_csv(m).rfind("truth\\pred,A,B,C", 0) == 0);
    CHECK_THROWS_AS(confusion(labels_of({"D"}), labels_of({"A"}), labels), ValidationError);
  }

  TEST_CASE("PGT-M subtype F1 change") {
    // 16 PGT-M cases; the first system recovers 7 with 2 false alarms, the
    // second recovers 10 with none.
    std::vector<std::string> truth, a, b;
    append(truth, "PGT-M", 16);
    append(a, "PGT-M", 7);
    append(a, "PGT-A", 9);
    append(b, "PGT-M", 10);
    append(b, "PGT-A", 6);
    append(truth, "IVF", 20);
    append(a, "PGT-M", 2);
    append(a, "IVF", 18);
    append(b, "IVF", 20);
    const auto ra = classification_report(a, truth, "art");
    const auto rb = classification_report(b, truth, "art");
    const auto* sa = ra.find("PGT-M");
    const auto* sb = rb.find("PGT-M");
    REQUIRE(sa);
    REQUIRE(sb);
    CHECK(sa->precision * 100 == doctest::Approx(77.78).epsilon(1e-4));
    CHECK(sa->recall * 100 == doctest::Approx(43.75).epsilon(1e-4));
    CHECK(sa->f1 * 100 == doctest::Approx(56.00).epsilon(1e-4));
    CHECK(sb->f1 * 100 == doctest::Approx(76.92).epsilon(1e-4));
    const auto delta = subtype_delta_report(ra, rb);
    bool found = false;
    for (const auto& row : delta.rows) {
      if (row.label != "PGT-M") continue;
      found = true;
      CHECK(row.delta * 100 == doctest::Approx(20.92).epsilon(1e-3));
      CHECK(row.support == 16);
      CHECK_FALSE(row.low_n);
    }
    CHECK(found);
    // PGT-A is predicted but never true: excluded with a note.
    for (const auto& row : delta.rows) CHECK(row.label != "PGT-A");
    REQUIRE_FALSE(delta.notes.empty());
    CHECK(delta.notes.front().find("PGT-A") != std::string::npos);
  }

  TEST_CASE("delta report needs matching truths") {
    const auto ra = classification_report(repeat("A", 3), repeat("A", 3));
    const auto rb = classification_report(repeat("A", 4), repeat("A", 4));
    CHECK_THROWS_AS(subtype_delta_report(ra, rb), ValidationError);
  }

  TEST_CASE("evaluate skips unparseable outputs where needed") {
    const std::vector<DecisionBundle> truths{fixture::bundle(ArtStrategy::IVF, CosRegimen::PPOS, 150),
                                             fixture::bundle(ArtStrategy::ICSI, CosRegimen::Short, 250),
                                             fixture::bundle(ArtStrategy::PGT_A, CosRegimen::PPOS, 300)};
    std::vector<std::optional<DecisionBundle>> preds{truths[0], truths[1], std::nullopt};
    preds[1]->gn_dose = GnDose{225};
    const auto r = evaluate(truths, preds);
    CHECK(r.n == 3);
    CHECK(r.unparseable == 1);
    CHECK(r.gn.mae == 12.5);
    CHECK(r.gn.excluded == 1);
    CHECK(r.art.accuracy == doctest::Approx(2.0 / 3.0));
    CHECK(r.art_generation.accuracy == doctest::Approx(2.0 / 3.0));
    CHECK(r.diagnosis_partial == doctest::Approx(2.0 / 3.0));
    CHECK(r.average_accuracy == doctest::Approx((r.infertility_type.accuracy + r.art.accuracy + r.cos.accuracy) / 3));
    const auto csv = evaluation_csv(r);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
    CHECK(per_class_csv(r).find("art,PGT-A,1,") != std::string::npos);
    CHECK(to_json(r).contains("gn"));
  }

  TEST_CASE("identical predictions score perfectly") {
    std::vector<DecisionBundle> truths;
    std::vector<std::optional<DecisionBundle>> preds;
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
      truths.push_back(fixture::random_bundle(rng));
      preds.emplace_back(truths.back());
    }
    const auto r = evaluate(truths, preds);
    CHECK(r.average_accuracy == 1.0);
    CHECK(r.average_macro_f1 == 1.0);
    CHECK(r.diagnosis_exact == 1.0);
    CHECK(r.gn.mae == 0.0);
  }
}
