#include "ivfalign/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "ivfalign/allocation.hpp"
#include "ivfalign/error.hpp"
#include "ivfalign/log.hpp"
#include "ivfalign/random.hpp"
#include "ivfalign/rewards.hpp"

namespace ivfalign {

std::string_view to_string(Layer l) {
  switch (l) {
    case Layer::Human: return "human";
    case Layer::Confusion: return "confusion";
    case Layer::General: return "general";
    case Layer::Unassigned: return "unassigned";
  }
  return "unassigned";
}

Layer parse_layer(std::string_view s) {
  for (auto l : {Layer::Human, Layer::Confusion, Layer::General, Layer::Unassigned}) {
    if (to_string(l) == s) return l;
  }
  throw ValidationError("unknown layer '" + std::string(s) +
                        "' (valid: human, confusion, general, unassigned)");
}

FieldCorrectness field_correctness(const std::optional<DecisionBundle>& output,
                                   const DecisionBundle& truth) {
  FieldCorrectness c;
  if (!output) return c;
  const RewardBreakdown r = composite_reward(output, truth);
  c.it = r.r_it == 1.0;
  c.art = r.r_art == 1.0;
  c.cos = r.r_cos == 1.0;
  c.gn = r.r_gn == 1.0;
  return c;
}

ScoredCase score_case(CaseExample example, std::optional<DecisionBundle> output,
                      std::vector<TokenId> output_tokens) {
  ScoredCase s;
  s.correct = field_correctness(output, example.truth);
  s.example = std::move(example);
  s.output = std::move(output);
  s.output_tokens = std::move(output_tokens);
  return s;
}

// ---------------------------------------------------------------- config

void PyramidConfig::validate() const {
  if (!(confusion_threshold > 0 && confusion_threshold <= 1)) {
    throw ValidationError("confusion_threshold must lie in (0, 1]");
  }
  double sum = 0;
  for (double r : split_ratios) {
    if (!(r >= 0)) throw ValidationError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");
  std::set<ArtStrategy> seen(top_categories.begin(), top_categories.end());
  if (seen.size() != top_categories.size()) throw ValidationError("duplicate top category");
}

PyramidConfig PyramidConfig::scaled(double factor) const {
  if (!(factor >= 0)) throw ValidationError("quota scale factor must be non-negative");
  auto scale = [factor](std::size_t q) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(q) * factor));
  };
  PyramidConfig c = *this;
  c.top_quota_per_category = scale(top_quota_per_category);
  c.mid_quota = scale(mid_quota);
  c.bottom_incorrect_quota = scale(bottom_incorrect_quota);
  c.bottom_correct_quota = scale(bottom_correct_quota);
  return c;
}

nlohmann::ordered_json to_json(const PyramidConfig& c) {
  nlohmann::ordered_json j;
  j["top_quota_per_category"] = c.top_quota_per_category;
  auto& cats = j["top_categories"] = nlohmann::ordered_json::array();
  for (auto a : c.top_categories) cats.push_back(std::string(to_string(a)));
  j["confusion_threshold"] = c.confusion_threshold;
  j["mid_quota"] = c.mid_quota;
  j["bottom_incorrect_quota"] = c.bottom_incorrect_quota;
  j["bottom_correct_quota"] = c.bottom_correct_quota;
  j["split_ratios"] = c.split_ratios;
  auto& force = j["force_include_cos"] = nlohmann::ordered_json::array();
  for (auto r : c.force_include_cos) force.push_back(std::string(to_string(r)));
  j["seed"] = c.seed;
  return j;
}

PyramidConfig pyramid_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("pyramid config must be a JSON object");
  PyramidConfig c;
  auto count = [](const std::string& key, const nlohmann::json& v) {
    if (!v.is_number_unsigned()) {
      throw ValidationError("pyramid config '" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
  };
  try {
    for (auto& [key, v] : j.items()) {
      if (key == "top_quota_per_category") c.top_quota_per_category = count(key, v);
      else if (key == "top_categories") {
        c.top_categories.clear();
        for (const auto& s : v) c.top_categories.push_back(parse_art_strategy(s.get<std::string>()));
      } else if (key == "confusion_threshold") c.confusion_threshold = v.get<double>();
      else if (key == "mid_quota") c.mid_quota = count(key, v);
      else if (key == "bottom_incorrect_quota") c.bottom_incorrect_quota = count(key, v);
      else if (key == "bottom_correct_quota") c.bottom_correct_quota = count(key, v);
      else if (key == "split_ratios") c.split_ratios = v.get<std::array<double, 3>>();
      else if (key == "force_include_cos") {
        c.force_include_cos.clear();
        for (const auto& s : v) c.force_include_cos.push_back(parse_cos_regimen(s.get<std::string>()));
      } else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ValidationError("unknown pyramid config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("pyramid config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- layering

std::size_t LayeredDataset::count(Layer l) const {
  return static_cast<std::size_t>(
      std::count_if(cases.begin(), cases.end(), [l](const ScoredCase& c) { return c.layer == l; }));
}

namespace {

// Seeded sample of up to `quota` pool entries, returned in pool order.
std::vector<std::size_t> sample(std::vector<std::size_t> pool, std::size_t quota, Rng& rng) {
  shuffle(std::span(pool), rng);
  if (pool.size() > quota) pool.resize(quota);
  std::sort(pool.begin(), pool.end());
  return pool;
}

bool art_labels_are_generations(const ConfusionMatrix& m) {
  if (m.labels.empty()) return false;
  for (const auto& l : m.labels) {
    bool found = false;
    for (auto g : kArtGenerations) found = found || to_string(g) == l;
    if (!found) return false;
  }
  return true;
}

}  // namespace

LayeredDataset assign_layers(std::span<const ScoredCase> scored,
                             const ConfusionMatrix& art_confusion,
                             const ConfusionMatrix& cos_confusion, const PyramidConfig& cfg) {
  cfg.validate();
  if (scored.empty()) throw ValidationError("no scored cases to layer");
  LayeredDataset out;
  std::vector<Layer> layer(scored.size(), Layer::Unassigned);
  auto fill = [&](std::string name, std::size_t quota, const std::vector<std::size_t>& pool,
                  Layer l, std::uint64_t stream) {
    Rng rng(derive_seed(cfg.seed, stream));
    const auto picked = sample(pool, quota, rng);
    for (auto i : picked) layer[i] = l;
    if (picked.size() < quota) {
      out.warnings.push_back(name + ": quota " + std::to_string(quota) + " but only " +
                             std::to_string(picked.size()) + " eligible cases");
      warn("pyramid " + out.warnings.back());
    }
    out.fills.push_back(LayerFill{std::move(name), quota, pool.size(), picked.size()});
  };
  auto unassigned = [&](auto&& pred) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < scored.size(); ++i) {
      if (layer[i] == Layer::Unassigned && pred(scored[i])) pool.push_back(i);
    }
    return pool;
  };

  for (std::size_t k = 0; k < cfg.top_categories.size(); ++k) {
    const ArtStrategy cat = cfg.top_categories[k];
    fill("top " + std::string(to_string(cat)), cfg.top_quota_per_category,
         unassigned([cat](const ScoredCase& c) { return c.example.truth.art == cat; }),
         Layer::Human, 0x100 + k);
  }

  const bool by_generation = art_labels_are_generations(art_confusion);
  auto high_confusion = [&](const ConfusionMatrix& m, std::string_view label) {
    const auto i = m.index_of(label);
    return i && m.off_diagonal_mass(*i) > cfg.confusion_threshold;
  };
  const std::set<CosRegimen> forced(cfg.force_include_cos.begin(), cfg.force_include_cos.end());
  fill("middle", cfg.mid_quota, unassigned([&](const ScoredCase& c) {
         const auto& t = c.example.truth;
         const std::string_view art =
             by_generation ? to_string(art_generation(t.art)) : to_string(t.art);
         return high_confusion(art_confusion, art) || high_confusion(cos_confusion, to_string(t.cos)) ||
                forced.count(t.cos) > 0;
       }),
       Layer::Confusion, 0x200);

  fill("bottom incorrect", cfg.bottom_incorrect_quota,
       unassigned([](const ScoredCase& c) { return !c.correct.all(); }), Layer::General, 0x300);
  fill("bottom correct", cfg.bottom_correct_quota,
       unassigned([](const ScoredCase& c) { return c.correct.all(); }), Layer::General, 0x301);

  for (auto l : {Layer::Human, Layer::Confusion, Layer::General}) {
    for (std::size_t i = 0; i < scored.size(); ++i) {
      if (layer[i] != l) continue;
      out.cases.push_back(scored[i]);
      out.cases.back().layer = l;
    }
  }
  return out;
}

// ---------------------------------------------------------------- derived sets

DpoPairSet make_dpo_pairs(std::span<const ScoredCase> cases) {
  DpoPairSet out;
  for (const auto& c : cases) {
    std::vector<TokenId> chosen = encode_completion(c.example.truth);
    std::vector<TokenId> rejected = c.output_tokens;
    if (rejected.empty() && c.output) rejected = encode_completion(*c.output);
    if (rejected.empty() || rejected == chosen) {
      ++out.dropped;
      continue;
    }
    out.pairs.push_back(PreferencePair{encode_prompt(c.example.record), std::move(chosen),
                                       std::move(rejected)});
    out.case_ids.push_back(c.example.record.id);
  }
  return out;
}

GrpoPromptSet make_grpo_prompts(std::span<const ScoredCase> cases) {
  GrpoPromptSet out;
  for (const auto& c : cases) {
    out.prompts.push_back(GrpoPrompt{encode_prompt(c.example.record), c.example.truth});
    out.case_ids.push_back(c.example.record.id);
  }
  return out;
}

DatasetSplit split_dataset(std::span<const ScoredCase> cases, const std::array<double, 3>& ratios,
                           std::uint64_t seed) {
  if (cases.size() < 10) {
    throw ValidationError("dataset of " + std::to_string(cases.size()) +
                          " cases is too small to split (need at least 10)");
  }
  double sum = 0;
  for (double r : ratios) {
    if (!(r >= 0)) throw ValidationError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");

  const double n = static_cast<double>(cases.size());
  const auto n_val = static_cast<std::size_t>(std::floor(ratios[1] * n + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(ratios[2] * n + 1e-9));

  constexpr std::array kLayers{Layer::Human, Layer::Confusion, Layer::General, Layer::Unassigned};
  std::array<std::vector<std::size_t>, 4> members;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    members[static_cast<std::size_t>(cases[i].layer)].push_back(i);
  }
  std::vector<double> sizes;
  for (const auto& m : members) sizes.push_back(static_cast<double>(m.size()));
  const auto val_per = largest_remainder(n_val, sizes);
  auto test_per = largest_remainder(n_test, sizes);
  // Tiny layers: move test slots that do not fit to layers with room.
  for (std::size_t l = 0; l < 4; ++l) {
    while (val_per[l] + test_per[l] > members[l].size()) {
      --test_per[l];
      for (std::size_t o = 0; o < 4; ++o) {
        if (val_per[o] + test_per[o] < members[o].size()) {
          ++test_per[o];
          break;
        }
      }
    }
  }

  std::vector<int> assign(cases.size(), 0);  // 0 train, 1 val, 2 test
  for (std::size_t l = 0; l < kLayers.size(); ++l) {
    auto order = members[l];
    Rng rng(derive_seed(seed, 0x5000 + l));
    shuffle(std::span(order), rng);
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (k < val_per[l]) assign[order[k]] = 1;
      else if (k < val_per[l] + test_per[l]) assign[order[k]] = 2;
    }
  }
  DatasetSplit out;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    (assign[i] == 0 ? out.train : assign[i] == 1 ? out.val : out.test).push_back(cases[i]);
  }
  return out;
}

// ---------------------------------------------------------------- serialization

nlohmann::ordered_json to_json(const ScoredCase& c) {
  nlohmann::ordered_json j;
  j["layer"] = std::string(to_string(c.layer));
  j["case"] = to_json(c.example);
  j["output"] = c.output ? to_json(*c.output) : nlohmann::ordered_json(nullptr);
  j["output_tokens"] = c.output_tokens;
  j["completion"] = render_tokens(c.output_tokens);
  j["correct"] = {{"it", c.correct.it}, {"art", c.correct.art}, {"cos", c.correct.cos}, {"gn", c.correct.gn}};
  return j;
}

ScoredCase scored_case_from_json(const nlohmann::json& j, const std::string& where) {
  const std::string pfx = where.empty() ? "" : where + ": ";
  if (!j.is_object() || !j.contains("case") || !j.contains("layer")) {
    throw ValidationError(pfx + "scored case needs 'case' and 'layer'");
  }
  std::optional<DecisionBundle> output;
  if (j.contains("output") && !j["output"].is_null()) output = bundle_from_json(j["output"], where);
  std::vector<TokenId> tokens;
  if (j.contains("output_tokens") && !j["output_tokens"].is_null()) {
    const auto& a = j["output_tokens"];
    const int v = Vocab::standard().size();
    if (!a.is_array()) throw ValidationError(pfx + "field 'output_tokens' must be an array");
    for (const auto& t : a) {
      if (!t.is_number_integer() || t.get<long long>() < 0 || t.get<long long>() >= v) {
        throw ValidationError(pfx + "unknown token in output_tokens");
      }
      tokens.push_back(t.get<TokenId>());
    }
  }
  ScoredCase s = score_case(case_from_json(j["case"], where), std::move(output), std::move(tokens));
  if (!j["layer"].is_string()) throw ValidationError(pfx + "field 'layer' must be a string");
  s.layer = parse_layer(j["layer"].get<std::string>());
  return s;
}

void write_layered_jsonl(const DatasetSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  const std::pair<const char*, const std::vector<ScoredCase>*> parts[] = {
      {"train", &split.train}, {"val", &split.val}, {"test", &split.test}};
  for (const auto& [name, cases] : parts) {
    for (const auto& c : *cases) {
      nlohmann::ordered_json j;
      j["pyramid_split"] = name;
      const auto body = to_json(c);
      for (auto& [k, v] : body.items()) j[k] = v;
      out << j.dump() << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

DatasetSplit read_layered_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  DatasetSplit out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + ": malformed JSON: " + e.what());
    }
    const std::string part = j.value("pyramid_split", "");
    ScoredCase c = scored_case_from_json(j, where);
    if (part == "train") out.train.push_back(std::move(c));
    else if (part == "val") out.val.push_back(std::move(c));
    else if (part == "test") out.test.push_back(std::move(c));
    else throw ValidationError(where + ": field 'pyramid_split' must be train, val or test");
  }
  return out;
}

}  // namespace ivfalign
