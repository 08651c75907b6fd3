#include <doctest.h>

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "ivfalign/error.hpp"
#include "ivfalign/pyramid.hpp"
#include "pyramid_fixture.hpp"

using namespace ivfalign;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Off-diagonal share of each truth label, counted directly from the cases.
std::map<std::string, double> row_mass(const std::vector<ScoredCase>& scored, bool art) {
  std::map<std::string, std::pair<double, double>> counts;
  for (const auto& c : scored) {
    const auto t = art ? to_string(c.example.truth.art) : to_string(c.example.truth.cos);
    const auto p = art ? to_string(c.output->art) : to_string(c.output->cos);
    auto& [total, off] = counts[std::string(t)];
    total += 1;
    off += t != p;
  }
  std::map<std::string, double> out;
  for (const auto& [label, c] : counts) out[label] = c.second / c.first;
  return out;
}

std::vector<ScoredCase> small_set(std::size_t n, std::size_t correct) {
  std::vector<ScoredCase> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto ex = fixture::example("s" + std::to_string(i));
    auto o = ex.truth;
    if (i >= correct) o.gn_dose = GnDose{300};
    out.push_back(score_case(ex, o, encode_completion(o)));
  }
  return out;
}

}  // namespace

TEST_SUITE("pyramid") {
  TEST_CASE("field correctness") {
    const auto truth = fixture::bundle(ArtStrategy::ICSI, CosRegimen::PPOS, 200);
    auto o = truth;
    o.gn_dose = GnDose{225};
    CHECK(field_correctness(o, truth).all());
    o.gn_dose = GnDose{226};
    CHECK_FALSE(field_correctness(o, truth).gn);
    CHECK_FALSE(field_correctness(std::nullopt, truth).it);
  }

  TEST_CASE("reference-scale layering") {
    const auto cohort = fixture::scored_cohort();
    const PyramidConfig cfg;
    const auto layered = assign_layers(cohort.scored, cohort.art, cohort.cos, cfg);
    CHECK(layered.count(Layer::Human) == 50);
    CHECK(layered.count(Layer::Confusion) == 628);
    CHECK(layered.count(Layer::General) == 1000);
    CHECK(layered.cases.size() == 1678);
    CHECK(layered.warnings.empty());

    const auto art_mass = row_mass(cohort.scored, true);
    const auto cos_mass = row_mass(cohort.scored, false);
    std::set<std::string> ids;
    std::size_t correct_general = 0;
    for (const auto& c : layered.cases) {
      ids.insert(c.example.record.id);
      const auto& t = c.example.truth;
      if (c.layer == Layer::Human) {
        CHECK((t.art == ArtStrategy::IVF_ICSI || t.art == ArtStrategy::IVF_Short));
      } else if (c.layer == Layer::Confusion) {
        const bool hot = art_mass.at(std::string(to_string(t.art))) > 0.1 ||
                         cos_mass.at(std::string(to_string(t.cos))) > 0.1;
        CHECK(hot);
      } else {
        correct_general += c.correct.all();
      }
    }
    CHECK(ids.size() == 1678);
    CHECK(correct_general == 300);

    const auto split = split_dataset(layered.cases, cfg.split_ratios, 7);
    CHECK(split.train.size() == 1344);
    CHECK(split.val.size() == 167);
    CHECK(split.test.size() == 167);

    fixture::TempDir dir("pyr");
    write_layered_jsonl(split, dir / "a.jsonl");
    const auto again = split_dataset(
        assign_layers(cohort.scored, cohort.art, cohort.cos, cfg).cases, cfg.split_ratios, 7);
    write_layered_jsonl(again, dir / "b.jsonl");
    CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));

    const auto back = read_layered_jsonl(dir / "a.jsonl");
    CHECK(back.train == split.train);
    CHECK(back.test == split.test);
  }

  TEST_CASE("threshold 1.0 leaves the middle layer empty") {
    const auto cohort = fixture::scored_cohort(2000, 4);
    PyramidConfig cfg;
    cfg.confusion_threshold = 1.0;
    const auto layered = assign_layers(cohort.scored, cohort.art, cohort.cos, cfg);
    CHECK(layered.count(Layer::Confusion) == 0);
    CHECK_FALSE(layered.warnings.empty());
  }

  TEST_CASE("forced COS regimens join the middle layer") {
    const auto cohort = fixture::scored_cohort(2000, 4);
    PyramidConfig cfg;
    cfg.confusion_threshold = 1.0;
    cfg.force_include_cos = {CosRegimen::LutealShort};
    const auto layered = assign_layers(cohort.scored, cohort.art, cohort.cos, cfg);
    CHECK(layered.count(Layer::Confusion) > 0);
    for (const auto& c : layered.cases) {
      if (c.layer == Layer::Confusion) CHECK(c.example.truth.cos == CosRegimen::LutealShort);
    }
  }

  TEST_CASE("all-correct outputs fill only the correct bottom quota") {
    auto scored = small_set(40, 40);
    std::vector<std::string> labels{"IVF"}, t(40, "IVF");
    const auto art = confusion(t, t, labels);
    std::vector<std::string> cos_labels{"Antagonist-Flex"}, ct(40, "Antagonist-Flex");
    const auto cos = confusion(ct, ct, cos_labels);
    PyramidConfig cfg;
    cfg.top_categories.clear();
    cfg.mid_quota = 10;
    cfg.bottom_incorrect_quota = 10;
    cfg.bottom_correct_quota = 25;
    const auto layered = assign_layers(scored, art, cos, cfg);
    CHECK(layered.count(Layer::Confusion) == 0);
    CHECK(layered.count(Layer::General) == 25);
    CHECK(layered.warnings.size() == 2);
  }

  TEST_CASE("DPO pairs and GRPO prompts") {
    const auto scored = small_set(12, 5);
    const auto pairs = make_dpo_pairs(scored);
    CHECK(pairs.pairs.size() == 7);
    CHECK(pairs.dropped == 5);
    const auto prompts = make_grpo_prompts(scored);
    CHECK(prompts.prompts.size() == 12);
    for (const auto& p : pairs.pairs) {
      const std::set<TokenId> prompt(p.prompt.begin(), p.prompt.end());
      for (auto t : p.chosen) CHECK(prompt.count(t) == 0);
      for (auto t : p.rejected) CHECK(prompt.count(t) == 0);
      CHECK(p.chosen != p.rejected);
    }
  }

  TEST_CASE("split is a seeded partition") {
    const auto scored = small_set(57, 20);
    const auto s = split_dataset(scored, {0.8, 0.1, 0.1}, 3);
    CHECK(s.val.size() == 5);
    CHECK(s.test.size() == 5);
    CHECK(s.train.size() == 47);
    std::multiset<std::string> ids;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      for (const auto& c : *part) ids.insert(c.example.record.id);
    }
    CHECK(ids.size() == 57);
    CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == 57);
    const auto again = split_dataset(scored, {0.8, 0.1, 0.1}, 3);
    CHECK(again.val == s.val);
    CHECK_THROWS_AS(split_dataset(small_set(9, 9), {0.8, 0.1, 0.1}, 3), ValidationError);
    CHECK_THROWS_AS(split_dataset(scored, {0.8, 0.3, 0.1}, 3), ValidationError);
  }

  TEST_CASE("config round trip and scaling") {
    PyramidConfig cfg;
    cfg.force_include_cos = {CosRegimen::PPOS};
    const auto back = pyramid_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    const auto half = cfg.scaled(0.5);
    CHECK(half.mid_quota == 314);
    CHECK(half.bottom_correct_quota == 150);
    CHECK(half.top_quota_per_category == 13);
    auto bad = to_json(cfg);
    bad["mid_quota"] = -1;
    CHECK_THROWS_AS(pyramid_config_from_json(bad), ValidationError);
    bad = to_json(cfg);
    bad["unknown_key"] = 1;
    CHECK_THROWS_AS(pyramid_config_from_json(bad), ValidationError);
  }
}
