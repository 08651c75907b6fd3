#include "ivfalign/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>

#include "ivfalign/align.hpp"
#include "ivfalign/error.hpp"
#include "ivfalign/hash.hpp"
#include "ivfalign/log.hpp"
#include "ivfalign/metrics.hpp"
#include "ivfalign/policy.hpp"
#include "ivfalign/pyramid.hpp"
#include "ivfalign/review_http.hpp"
#include "ivfalign/rewards.hpp"
#include "ivfalign/stats.hpp"
#include "ivfalign/synthgen.hpp"

namespace ivfalign {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Strict view over a command's config object: every key must be consumed,
// and the values actually used are recorded for the manifest.
class Config {
 public:
  Config(const nlohmann::json& j, std::string command) : j_(j), command_(std::move(command)) {
    if (!j_.is_object()) throw ValidationError(command_ + ": config must be a JSON object");
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    T value = fallback;
    if (j_.contains(key) && !j_[key].is_null()) {
      try {
        value = j_[key].get<T>();
      } catch (const nlohmann::json::exception&) {
        throw ValidationError(command_ + ": config key '" + key + "' has the wrong type");
      }
    }
    resolved_[key] = value;
    return value;
  }

  std::optional<std::string> optional_string(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) {
      resolved_[key] = nullptr;
      return std::nullopt;
    }
    if (!j_[key].is_string()) {
      throw ValidationError(command_ + ": config key '" + key + "' must be a string");
    }
    resolved_[key] = j_[key];
    return j_[key].get<std::string>();
  }

  std::string required_string(const std::string& key) {
    auto v = optional_string(key);
    if (!v || v->empty()) throw ValidationError(command_ + ": '" + key + "' is required");
    return *v;
  }

  std::vector<std::string> string_list(const std::string& key) {
    used_.insert(key);
    std::vector<std::string> out;
    if (j_.contains(key) && !j_[key].is_null()) {
      const auto& v = j_[key];
      if (v.is_string()) {
        std::string cur;
        for (char c : v.get<std::string>() + ",") {
          if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
          } else {
            cur += c;
          }
        }
      } else if (v.is_array() && std::all_of(v.begin(), v.end(), [](auto& e) { return e.is_string(); })) {
        out = v.get<std::vector<std::string>>();
      } else {
        throw ValidationError(command_ + ": config key '" + key + "' must be a list of strings");
      }
    }
    resolved_[key] = out;
    return out;
  }

  std::size_t positive(const std::string& key, long long fallback) {
    const auto v = get<long long>(key, fallback);
    if (v <= 0) throw ValidationError(command_ + ": '" + key + "' must be positive");
    return static_cast<std::size_t>(v);
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    const auto v = get<std::uint64_t>(key, fallback);
    seeds_[key] = v;
    return v;
  }

  void finish() {
    for (auto& [key, v] : j_.items()) {
      if (!used_.count(key)) throw ValidationError(command_ + ": unknown config key '" + key + "'");
    }
  }

  const ojson& resolved() const { return resolved_; }
  const ojson& seeds() const { return seeds_; }
  const std::string& command() const { return command_; }

 private:
  const nlohmann::json& j_;
  std::string command_;
  std::set<std::string> used_;
  ojson resolved_ = ojson::object();
  ojson seeds_ = ojson::object();
};

class RunRecorder {
 public:
  explicit RunRecorder(const Config& cfg) : cfg_(cfg), start_(std::chrono::steady_clock::now()) {}

  void input(const fs::path& p) { inputs_.push_back(p); }
  void output(const fs::path& p) { outputs_.push_back(p); }

  /// Writes the manifest beside `main_output` and returns its SHA-256.
  std::string write(const fs::path& main_output) const {
    ojson m;
    m["command"] = cfg_.command();
    m["tool_version"] = std::string(kToolVersion);
    m["config"] = cfg_.resolved();
    m["seeds"] = cfg_.seeds();
    auto files = [](const std::vector<fs::path>& paths) {
      ojson a = ojson::array();
      for (const auto& p : paths) a.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
      return a;
    };
    m["inputs"] = files(inputs_);
    m["outputs"] = files(outputs_);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    m["timings"] = {{"wall_seconds", wall}};
    m["previous_manifest_hash"] = nullptr;
    for (const auto& in : inputs_) {
      const fs::path mp = manifest_path_for(in);
      if (fs::exists(mp)) {
        m["previous_manifest_hash"] = sha256_file(mp);
        break;
      }
    }
    const fs::path path = manifest_path_for(main_output);
    std::ofstream out(path, std::ios::binary);
    out << m.dump(2) << '\n';
    if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
    out.close();
    return sha256_file(path);
  }

 private:
  const Config& cfg_;
  std::chrono::steady_clock::time_point start_;
  std::vector<fs::path> inputs_, outputs_;
};

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write '" + p.string() + "'");
}

void write_json(const fs::path& p, const ojson& j) { write_text(p, j.dump(2) + "\n"); }

std::vector<CaseExample> load_corpus(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("corpus '" + p.string() + "' does not exist");
  return parse_corpus(p);
}

Split parse_split_option(const std::string& s, bool& all) {
  all = s == "all";
  return all ? Split::Train : parse_split(s);
}

std::vector<CaseExample> cases_for_split(const std::vector<CaseExample>& cases, const std::string& split) {
  bool all = false;
  const Split s = parse_split_option(split, all);
  return all ? cases : select_split(cases, s);
}

std::string label_of(const std::optional<DecisionBundle>& b, const std::function<std::string(const DecisionBundle&)>& f) {
  return b ? f(*b) : std::string(kUnparseableLabel);
}

struct Matched {
  std::vector<CaseExample> cases;
  std::vector<Prediction> preds;
};

Matched match_predictions(const std::vector<CaseExample>& corpus, std::vector<Prediction> preds) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.size(); ++i) index[corpus[i].record.id] = i;
  Matched m;
  std::set<std::string> seen;
  for (auto& p : preds) {
    const auto it = index.find(p.id);
    if (it == index.end()) throw ValidationError("prediction for unknown case '" + p.id + "'");
    if (!seen.insert(p.id).second) throw ValidationError("duplicate prediction for case '" + p.id + "'");
    m.cases.push_back(corpus[it->second]);
    m.preds.push_back(std::move(p));
  }
  if (m.preds.empty()) throw ValidationError("prediction file is empty");
  return m;
}

std::vector<std::optional<DecisionBundle>> outputs_of(const std::vector<Prediction>& preds) {
  std::vector<std::optional<DecisionBundle>> out;
  for (const auto& p : preds) out.push_back(p.output);
  return out;
}

std::vector<DecisionBundle> truths_of(const std::vector<CaseExample>& cases) {
  std::vector<DecisionBundle> out;
  for (const auto& c : cases) out.push_back(c.truth);
  return out;
}

std::vector<Prediction> run_inference(const PolicyParams& params, const std::vector<CaseExample>& cases,
                                      std::span<const GuidelineBlock> blocks) {
  std::vector<Prediction> out;
  out.reserve(cases.size());
  for (const auto& c : cases) {
    const auto prompt = blocks.empty() ? encode_prompt(c.record) : assemble_icl_prompt(c.record, blocks);
    Prediction p;
    p.id = c.record.id;
    p.tokens = greedy_decode(params, prompt);
    p.output = decode(p.tokens);
    out.push_back(std::move(p));
  }
  return out;
}

double mean_reward(const std::vector<CaseExample>& cases, const std::vector<Prediction>& preds,
                   const RewardWeights& w) {
  double s = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) s += composite_reward(preds[i].output, cases[i].truth, w).composite;
  return cases.empty() ? 0.0 : s / static_cast<double>(cases.size());
}

ConfusionMatrix field_confusion(const std::vector<CaseExample>& cases, const std::vector<Prediction>& preds,
                                const std::string& field) {
  std::vector<std::string> labels, p, t;
  std::function<std::string(const DecisionBundle&)> f;
  if (field == "art") {
    for (auto a : kArtStrategies) labels.emplace_back(to_string(a));
    f = [](const DecisionBundle& b) { return std::string(to_string(b.art)); };
  } else if (field == "art_generation") {
    for (auto g : kArtGenerations) labels.emplace_back(to_string(g));
    f = [](const DecisionBundle& b) { return std::string(to_string(art_generation(b.art))); };
  } else if (field == "cos") {
    for (auto c : kCosRegimens) labels.emplace_back(to_string(c));
    f = [](const DecisionBundle& b) { return std::string(to_string(b.cos)); };
  } else if (field == "infertility_type") {
    for (auto v : kInfertilityTypes) labels.emplace_back(to_string(v));
    f = [](const DecisionBundle& b) { return std::string(to_string(b.infertility_type)); };
  } else {
    throw ValidationError("confusion: field must be art, art_generation, cos or infertility_type");
  }
  bool unparseable = false;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    t.push_back(f(cases[i].truth));
    p.push_back(label_of(preds[i].output, f));
    unparseable = unparseable || !preds[i].output;
  }
  if (unparseable) labels.emplace_back(kUnparseableLabel);
  return confusion(p, t, labels);
}

std::vector<GuidelineBlock> parse_guidelines(const std::vector<std::string>& names) {
  std::vector<GuidelineBlock> blocks;
  for (const auto& n : names) {
    if (n == "art") {
      blocks.push_back(GuidelineBlock::standard(lexicon::GuidelineTopic::Art));
    } else if (n == "cos") {
      blocks.push_back(GuidelineBlock::standard(lexicon::GuidelineTopic::Cos));
    } else {
      throw ValidationError("icl_guidelines entries must be 'art' or 'cos', got '" + n + "'");
    }
  }
  return blocks;
}

PickAggregation parse_pick_mode(const std::string& s) {
  if (s == "pick") return PickAggregation::PickLevel;
  if (s == "modal") return PickAggregation::ModalPerCase;
  throw ValidationError("pick_mode must be 'pick' or 'modal'");
}

PolicyParams load_model(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("checkpoint '" + p.string() + "' does not exist");
  return load_checkpoint(p);
}

// ---------------------------------------------------------------- commands

ojson cmd_gen_data(Config& c) {
  GeneratorConfig g;
  g.n = c.positive("n", 2000);
  g.seed = c.seed("seed", 7);
  g.rule_noise = c.get<double>("rule_noise", g.rule_noise);
  const fs::path out = c.required_string("out");
  c.finish();
  RunRecorder rec(c);
  g.validate();
  const auto cases = generate(g);
  ensure_parent(out);
  serialize_corpus(cases, out);
  rec.output(out);
  rec.write(out);

  std::array<std::size_t, 3> gen{}, split{};
  for (const auto& e : cases) {
    ++gen[static_cast<std::size_t>(art_generation(e.truth.art))];
    ++split[static_cast<std::size_t>(e.split)];
  }
  ojson s;
  s["n"] = cases.size();
  for (std::size_t i = 0; i < 3; ++i) {
    s["generation_share"][std::string(to_string(kArtGenerations[i]))] =
        static_cast<double>(gen[i]) / static_cast<double>(cases.size());
  }
  s["splits"] = {{"train", split[0]}, {"val", split[1]}, {"test", split[2]}};
  s["out"] = out.string();
  return s;
}

ojson cmd_train_sft(Config& c) {
  const fs::path data = c.required_string("data");
  const fs::path out = c.required_string("out");
  SftConfig cfg;
  cfg.epochs = static_cast<int>(c.positive("epochs", 20));
  cfg.batch_size = static_cast<int>(c.positive("batch_size", cfg.batch_size));
  cfg.learning_rate = c.get<double>("learning_rate", cfg.learning_rate);
  cfg.seed = c.seed("seed", 7);
  const auto init_seed = c.seed("init_seed", cfg.seed);
  c.finish();
  RunRecorder rec(c);
  cfg.validate();
  const auto train = select_split(load_corpus(data), Split::Train);
  if (train.empty()) throw ValidationError("train-sft: corpus has no train cases");
  std::vector<TokenSeq> seqs;
  for (const auto& e : train) seqs.push_back(encode(e.record, &e.truth));
  const auto r = train_sft(random_params(init_seed), seqs, cfg);
  ensure_parent(out);
  save_checkpoint(r.params, out);
  rec.input(data);
  rec.output(out);
  rec.write(out);
  return {{"cases", train.size()}, {"epoch_loss", r.epoch_loss}, {"out", out.string()}};
}

ojson cmd_infer(Config& c) {
  const fs::path model = c.required_string("model");
  const fs::path data = c.required_string("data");
  const fs::path out = c.required_string("out");
  const std::string split = c.get<std::string>("split", "test");
  const auto blocks = parse_guidelines(c.string_list("icl_guidelines"));
  c.finish();
  RunRecorder rec(c);
  const auto params = load_model(model);
  const auto cases = cases_for_split(load_corpus(data), split);
  if (cases.empty()) throw ValidationError("infer: no cases in split '" + split + "'");
  const auto preds = run_inference(params, cases, blocks);
  ensure_parent(out);
  write_predictions(preds, out);
  rec.input(model);
  rec.input(data);
  rec.output(out);
  rec.write(out);
  const auto unparseable = std::count_if(preds.begin(), preds.end(), [](auto& p) { return !p.output; });
  return {{"cases", preds.size()}, {"unparseable", unparseable}, {"out", out.string()}};
}

ojson cmd_eval(Config& c) {
  const fs::path truth = c.required_string("truth");
  const fs::path pred = c.required_string("pred");
  const auto out = c.optional_string("out");
  const auto csv = c.optional_string("csv");
  const auto per_class = c.optional_string("per_class_csv");
  const bool strict = c.get<bool>("strict", false);
  const auto synonyms = c.optional_string("synonyms");
  c.finish();
  RunRecorder rec(c);
  const auto m = match_predictions(load_corpus(truth), read_predictions(pred));
  const SynonymTable table = synonyms ? SynonymTable::load(*synonyms) : SynonymTable::builtin();
  const auto report = evaluate(truths_of(m.cases), outputs_of(m.preds), builtin_judge(table), strict);
  const ojson j = to_json(report);
  if (csv) write_text(*csv, evaluation_csv(report));
  if (per_class) write_text(*per_class, per_class_csv(report));
  if (out) {
    write_json(*out, j);
    rec.input(truth);
    rec.input(pred);
    rec.output(*out);
    if (csv) rec.output(*csv);
    if (per_class) rec.output(*per_class);
    rec.write(*out);
  }
  return j;
}

ojson cmd_confusion(Config& c) {
  const fs::path truth = c.required_string("truth");
  const fs::path pred = c.required_string("pred");
  const std::string field = c.get<std::string>("field", "art");
  const auto out = c.optional_string("out");
  const auto csv = c.optional_string("csv");
  c.finish();
  RunRecorder rec(c);
  const auto m = match_predictions(load_corpus(truth), read_predictions(pred));
  const auto cm = field_confusion(m.cases, m.preds, field);
  ojson j = to_json(cm);
  if (csv) write_text(*csv, confusion_csv(cm));
  if (out) {
    write_json(*out, j);
    rec.input(truth);
    rec.input(pred);
    rec.output(*out);
    if (csv) rec.output(*csv);
    rec.write(*out);
  }
  return j;
}

ConfusionMatrix load_confusion(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open confusion matrix '" + p.string() + "'");
  try {
    return confusion_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("confusion matrix '" + p.string() + "': " + e.what());
  }
}

ojson cmd_build_pyramid(Config& c) {
  const fs::path data = c.required_string("data");
  const fs::path pred = c.required_string("pred");
  const fs::path out = c.required_string("out");
  const auto config_path = c.optional_string("pyramid_config");
  const auto art_cm_path = c.optional_string("art_confusion");
  const auto cos_cm_path = c.optional_string("cos_confusion");
  const double scale = c.get<double>("scale", 1.0);
  const auto seed = c.seed("seed", 7);
  c.finish();
  RunRecorder rec(c);

  PyramidConfig cfg;
  if (config_path) {
    std::ifstream in(*config_path);
    if (!in) throw IoError("cannot open pyramid config '" + *config_path + "'");
    try {
      cfg = pyramid_config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("pyramid config: " + std::string(e.what()));
    }
  }
  cfg.seed = seed;
  const auto m = match_predictions(load_corpus(data), read_predictions(pred));
  if (scale <= 0) throw ValidationError("build-pyramid: scale must be positive");
  if (scale != 1.0) cfg = cfg.scaled(scale);
  cfg.seed = seed;
  cfg.validate();

  std::vector<ScoredCase> scored;
  for (std::size_t i = 0; i < m.cases.size(); ++i) {
    scored.push_back(score_case(m.cases[i], m.preds[i].output, m.preds[i].tokens));
  }
  const auto art_cm = art_cm_path ? load_confusion(*art_cm_path) : field_confusion(m.cases, m.preds, "art");
  const auto cos_cm = cos_cm_path ? load_confusion(*cos_cm_path) : field_confusion(m.cases, m.preds, "cos");
  const auto layered = assign_layers(scored, art_cm, cos_cm, cfg);
  const auto split = split_dataset(layered.cases, cfg.split_ratios, cfg.seed);
  ensure_parent(out);
  write_layered_jsonl(split, out);

  rec.input(data);
  rec.input(pred);
  if (art_cm_path) rec.input(*art_cm_path);
  if (cos_cm_path) rec.input(*cos_cm_path);
  rec.output(out);
  rec.write(out);

  ojson s;
  s["pyramid_config"] = to_json(cfg);
  s["fills"] = ojson::array();
  for (const auto& f : layered.fills) {
    s["fills"].push_back({{"layer", f.name}, {"quota", f.quota}, {"eligible", f.eligible}, {"selected", f.selected}});
  }
  s["layers"] = {{"human", layered.count(Layer::Human)},
                 {"confusion", layered.count(Layer::Confusion)},
                 {"general", layered.count(Layer::General)}};
  s["total"] = layered.cases.size();
  s["splits"] = {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}};
  s["warnings"] = layered.warnings;
  s["out"] = out.string();
  return s;
}

DatasetSplit load_layered(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("layered dataset '" + p.string() + "' does not exist");
  return read_layered_jsonl(p);
}

ojson cmd_train_dpo(Config& c) {
  const fs::path model = c.required_string("model");
  const fs::path data = c.required_string("data");
  const fs::path out = c.required_string("out");
  DpoConfig cfg;
  cfg.beta = c.get<double>("beta", cfg.beta);
  cfg.learning_rate = c.get<double>("learning_rate", cfg.learning_rate);
  cfg.epochs = static_cast<int>(c.positive("epochs", cfg.epochs));
  cfg.batch_size = static_cast<int>(c.positive("batch_size", cfg.batch_size));
  cfg.seed = c.seed("seed", 7);
  c.finish();
  RunRecorder rec(c);
  cfg.validate();
  const auto ref = load_model(model);
  const auto layered = load_layered(data);
  const auto pairs = make_dpo_pairs(layered.train);
  if (pairs.pairs.empty()) throw ValidationError("train-dpo: no preference pairs in the train split");
  const auto r = train_dpo(ref, ref, pairs.pairs, cfg);
  ensure_parent(out);
  save_checkpoint(r.params, out);
  rec.input(model);
  rec.input(data);
  rec.output(out);
  rec.write(out);
  return {{"pairs", pairs.pairs.size()},
          {"dropped", pairs.dropped},
          {"epoch_loss", r.epoch_loss},
          {"max_abs_param_shift", max_abs_diff(r.params, ref)},
          {"out", out.string()}};
}

ojson cmd_train_grpo(Config& c) {
  const fs::path model = c.required_string("model");
  const auto ref_path = c.optional_string("ref");
  const fs::path data = c.required_string("data");
  const fs::path out = c.required_string("out");
  const auto weights_path = c.optional_string("weights");
  GrpoConfig cfg;
  cfg.group_size = static_cast<int>(c.positive("group_size", cfg.group_size));
  cfg.clip_eps = c.get<double>("clip_eps", cfg.clip_eps);
  cfg.beta_kl = c.get<double>("beta_kl", cfg.beta_kl);
  cfg.temperature = c.get<double>("temperature", cfg.temperature);
  cfg.steps = static_cast<int>(c.positive("steps", cfg.steps));
  cfg.prompts_per_step = static_cast<int>(c.positive("prompts_per_step", cfg.prompts_per_step));
  cfg.policy_iterations = static_cast<int>(c.positive("policy_iterations", cfg.policy_iterations));
  cfg.learning_rate = c.get<double>("learning_rate", cfg.learning_rate);
  cfg.advantage = parse_advantage_mode(c.get<std::string>("advantage", std::string(to_string(cfg.advantage))));
  cfg.kl = parse_kl_mode(c.get<std::string>("kl", std::string(to_string(cfg.kl))));
  cfg.seed = c.seed("seed", 7);
  c.finish();
  RunRecorder rec(c);
  cfg.validate();
  const RewardWeights w = weights_path ? load_weights(*weights_path) : RewardWeights{};
  const auto init = load_model(model);
  const auto ref = ref_path ? load_model(*ref_path) : init;
  const auto layered = load_layered(data);
  const auto prompts = make_grpo_prompts(layered.train);
  if (prompts.prompts.empty()) throw ValidationError("train-grpo: no prompts in the train split");
  const auto r = train_grpo(init, ref, prompts.prompts, composite_reward_fn(w), cfg);
  ensure_parent(out);
  save_checkpoint(r.params, out);
  rec.input(model);
  if (ref_path) rec.input(*ref_path);
  rec.input(data);
  if (weights_path) rec.input(*weights_path);
  rec.output(out);
  rec.write(out);
  return {{"prompts", prompts.prompts.size()},
          {"weights", to_json(w)},
          {"reward_trace", r.reward_trace},
          {"objective_trace", r.objective_trace},
          {"kl_trace", r.kl_trace},
          {"max_abs_param_shift", max_abs_diff(r.params, ref)},
          {"out", out.string()}};
}

ojson cmd_stats_report(Config& c) {
  const fs::path log = c.required_string("log");
  const std::string arm_a = c.get<std::string>("arm_a", "SFT");
  const std::string arm_b = c.get<std::string>("arm_b", "GRPO");
  const auto mode = parse_pick_mode(c.get<std::string>("pick_mode", "pick"));
  const auto out = c.optional_string("out");
  const auto text = c.optional_string("text");
  c.finish();
  RunRecorder rec(c);
  const auto report = build_stats_report(unblind_and_export(log), arm_a, arm_b, mode);
  const ojson j = to_json(report);
  if (text) write_text(*text, to_text(report));
  if (out) {
    write_json(*out, j);
    rec.input(log);
    rec.output(*out);
    if (text) rec.output(*text);
    rec.write(*out);
  }
  return j;
}

std::vector<ReviewItem> review_items(const std::vector<CaseExample>& cases,
                                     const std::vector<std::string>& arm_names,
                                     const std::vector<std::map<std::string, std::optional<DecisionBundle>>>& outputs) {
  std::vector<ReviewItem> items;
  for (const auto& e : cases) {
    ReviewItem it;
    it.case_id = e.record.id;
    it.patient = render_record(e.record);
    for (std::size_t a = 0; a < arm_names.size(); ++a) {
      const auto found = outputs[a].find(e.record.id);
      if (found == outputs[a].end()) {
        throw ValidationError("arm '" + arm_names[a] + "' has no output for case '" + e.record.id + "'");
      }
      it.arms.push_back({arm_names[a], found->second ? render_bundle(*found->second)
                                                     : std::string(kUnparseableResponse)});
    }
    items.push_back(std::move(it));
  }
  return items;
}

void write_schemas(const fs::path& dir) {
  fs::create_directories(dir);
  write_json(dir / "blind_case.schema.json", blind_case_schema());
  write_json(dir / "review_submission.schema.json", review_submission_schema());
  write_json(dir / "review_event.schema.json", review_event_schema());
}

ojson cmd_review_serve(Config& c) {
  const auto schema_dir = c.optional_string("schema_dir");
  const std::string host = c.get<std::string>("host", "127.0.0.1");
  const auto port = c.get<int>("port", 8080);
  const auto eval_set = c.optional_string("eval_set");
  const auto arm_specs = c.string_list("arms");
  const auto tokens = c.string_list("reviewer_tokens");
  const auto operator_token = c.optional_string("operator_token");
  const auto log = c.optional_string("log");
  const auto static_dir = c.optional_string("static_dir");
  const auto seed = c.seed("seed", 7);
  const auto mode = parse_pick_mode(c.get<std::string>("pick_mode", "pick"));
  c.finish();
  if (schema_dir) {
    write_schemas(*schema_dir);
    return {{"schemas", *schema_dir}};
  }
  if (!eval_set) throw ValidationError("review-serve: 'eval_set' is required");
  if (!log) throw ValidationError("review-serve: 'log' is required");
  if (arm_specs.size() != 3) {
    throw ValidationError("review-serve: 'arms' needs three NAME=PREDICTIONS entries (PREDICTIONS may be 'truth')");
  }
  if (port < 0 || port > 65535) throw ValidationError("review-serve: port out of range");
  const auto cases = load_corpus(*eval_set);
  std::vector<std::string> names;
  std::vector<std::map<std::string, std::optional<DecisionBundle>>> outputs;
  for (const auto& spec : arm_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
      throw ValidationError("review-serve: arm '" + spec + "' must look like NAME=PREDICTIONS");
    }
    names.push_back(spec.substr(0, eq));
    const std::string src = spec.substr(eq + 1);
    std::map<std::string, std::optional<DecisionBundle>> m;
    if (src == "truth") {
      for (const auto& e : cases) m[e.record.id] = e.truth;
    } else {
      for (auto& p : read_predictions(src)) m[p.id] = p.output;
    }
    outputs.push_back(std::move(m));
  }
  ReviewServiceConfig scfg;
  scfg.arms = names;
  scfg.reviewer_tokens = tokens;
  scfg.operator_token = operator_token.value_or("");
  scfg.log_path = *log;
  scfg.seed = seed;
  ReviewService service(review_items(cases, names, outputs), scfg);
  ReviewHttpOptions hopts;
  hopts.host = host;
  hopts.port = port;
  if (static_dir) hopts.static_dir = *static_dir;
  hopts.pick_mode = mode;
  ReviewHttpServer server(service, hopts);
  const int bound = server.bind();
  std::cerr << ojson({{"status", "listening"}, {"host", host}, {"port", bound}}).dump() << std::endl;
  server.run();
  return {{"status", "stopped"}};
}

ojson cmd_weight_sweep(Config& c) {
  const fs::path truth = c.required_string("truth");
  const fs::path pred = c.required_string("pred");
  const double step = c.get<double>("step", 0.1);
  const auto out = c.optional_string("out");
  c.finish();
  RunRecorder rec(c);
  const int k = static_cast<int>(std::lround(1.0 / step));
  if (step <= 0 || step > 1 || std::abs(k * step - 1.0) > 1e-9) {
    throw ValidationError("weight-sweep: step must divide 1 evenly");
  }
  const auto m = match_predictions(load_corpus(truth), read_predictions(pred));
  std::vector<RewardBreakdown> parts;
  for (std::size_t i = 0; i < m.cases.size(); ++i) parts.push_back(composite_reward(m.preds[i].output, m.cases[i].truth));
  auto mean_under = [&](const RewardWeights& w) {
    double s = 0;
    for (const auto& r : parts) s += w.it * r.r_it + w.cos * r.r_cos + w.gn * r.r_gn + w.art * r.r_art;
    return s / static_cast<double>(parts.size());
  };
  ojson grid = ojson::array();
  double lo = 2, hi = -1;
  for (int a = 0; a <= k; ++a) {
    for (int b = 0; a + b <= k; ++b) {
      for (int g = 0; a + b + g <= k; ++g) {
        RewardWeights w;
        w.it = a * step;
        w.cos = b * step;
        w.gn = g * step;
        w.art = (k - a - b - g) * step;
        const double r = mean_under(w);
        lo = std::min(lo, r);
        hi = std::max(hi, r);
        grid.push_back({{"weights", to_json(w)}, {"mean_reward", r}});
      }
    }
  }
  const RewardWeights def;
  ojson j;
  j["cases"] = parts.size();
  j["default"] = {{"weights", to_json(def)}, {"mean_reward", mean_under(def)}};
  j["min_mean_reward"] = lo;
  j["max_mean_reward"] = hi;
  j["grid"] = grid;
  if (out) {
    write_json(*out, j);
    rec.input(truth);
    rec.input(pred);
    rec.output(*out);
    rec.write(*out);
  }
  return j;
}

// ---------------------------------------------------------------- e2e

Clock logical_clock() {
  auto counter = std::make_shared<long long>(0);
  return [counter] {
    const std::time_t t = 1767225600 + (*counter)++;  // 2026-01-01T00:00:00Z
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S.000Z", &tm);
    return std::string(buf);
  };
}

ojson cmd_e2e(Config& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto seed = c.seed("seed", 7);
  const auto n = c.positive("n", 2000);
  const fs::path dir = c.get<std::string>("out_dir", "e2e_out");
  const auto sft_epochs = c.positive("sft_epochs", 20);
  const auto grpo_steps = c.positive("grpo_steps", 200);
  const double anchor_beta = c.get<double>("anchor_beta_kl", 1000.0);
  const auto eval_cases = c.positive("eval_cases", 100);
  const auto reviewers = c.positive("reviewers", 3);
  c.finish();
  RunRecorder rec(c);
  fs::create_directories(dir);
  auto p = [&](const char* name) { return (dir / name).string(); };
  auto run = [](const std::string& cmd, const nlohmann::json& cfg) { return run_command(cmd, cfg); };
  ojson stages = ojson::object();
  auto timed = [&](const std::string& name, const std::function<ojson()>& f) {
    const auto s = std::chrono::steady_clock::now();
    ojson r = f();
    stages[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - s).count();
    return r;
  };

  const ojson gen = timed("gen-data", [&] {
    return run("gen-data", {{"n", n}, {"seed", seed}, {"out", p("corpus.jsonl")}});
  });
  const ojson sft = timed("train-sft", [&] {
    return run("train-sft", {{"data", p("corpus.jsonl")}, {"out", p("sft.ckpt")}, {"epochs", sft_epochs}, {"seed", seed}});
  });
  timed("infer-sft", [&] {
    for (const char* split : {"train", "val", "test"}) {
      run("infer", {{"model", p("sft.ckpt")}, {"data", p("corpus.jsonl")}, {"split", split},
                    {"out", (dir / ("sft_" + std::string(split) + ".preds.jsonl")).string()}});
    }
    return ojson();
  });
  timed("confusion", [&] {
    run("confusion", {{"truth", p("corpus.jsonl")}, {"pred", p("sft_train.preds.jsonl")}, {"field", "art"},
                      {"out", p("confusion_art.json")}, {"csv", p("confusion_art.csv")}});
    return run("confusion", {{"truth", p("corpus.jsonl")}, {"pred", p("sft_train.preds.jsonl")}, {"field", "cos"},
                             {"out", p("confusion_cos.json")}, {"csv", p("confusion_cos.csv")}});
  });
  const auto corpus = load_corpus(p("corpus.jsonl"));
  const auto train_n = select_split(corpus, Split::Train).size();
  const double scale = static_cast<double>(train_n) / 8201.0;
  const ojson pyramid = timed("build-pyramid", [&] {
    return run("build-pyramid", {{"data", p("corpus.jsonl")}, {"pred", p("sft_train.preds.jsonl")},
                                 {"art_confusion", p("confusion_art.json")}, {"cos_confusion", p("confusion_cos.json")},
                                 {"scale", scale}, {"seed", seed}, {"out", p("pyramid.jsonl")}});
  });
  const ojson grpo = timed("train-grpo", [&] {
    return run("train-grpo", {{"model", p("sft.ckpt")}, {"data", p("pyramid.jsonl")}, {"steps", grpo_steps},
                              {"seed", seed}, {"out", p("grpo.ckpt")}});
  });
  const ojson anchor = timed("train-grpo-anchor", [&] {
    return run("train-grpo", {{"model", p("sft.ckpt")}, {"data", p("pyramid.jsonl")}, {"steps", grpo_steps},
                              {"beta_kl", anchor_beta}, {"seed", seed}, {"out", p("grpo_anchor.ckpt")}});
  });
  const ojson dpo = timed("train-dpo", [&] {
    return run("train-dpo", {{"model", p("sft.ckpt")}, {"data", p("pyramid.jsonl")}, {"seed", seed}, {"out", p("dpo.ckpt")}});
  });
  timed("infer-aligned", [&] {
    for (const char* m : {"grpo", "dpo"}) {
      for (const char* split : {"val", "test"}) {
        run("infer", {{"model", (dir / (std::string(m) + ".ckpt")).string()}, {"data", p("corpus.jsonl")},
                      {"split", split}, {"out", (dir / (std::string(m) + "_" + split + ".preds.jsonl")).string()}});
      }
    }
    return ojson();
  });
  ojson evals = ojson::object();
  timed("eval", [&] {
    for (const char* m : {"sft", "grpo", "dpo"}) {
      evals[m] = run("eval", {{"truth", p("corpus.jsonl")},
                              {"pred", (dir / (std::string(m) + "_test.preds.jsonl")).string()},
                              {"out", (dir / ("eval_" + std::string(m) + ".json")).string()},
                              {"csv", (dir / ("eval_" + std::string(m) + ".csv")).string()},
                              {"per_class_csv", (dir / ("eval_" + std::string(m) + "_classes.csv")).string()}});
    }
    return ojson();
  });

  // Validation reward of greedy outputs before and after GRPO.
  const auto val = select_split(corpus, Split::Val);
  auto val_reward = [&](const char* file) {
    const auto m = match_predictions(corpus, read_predictions(dir / file));
    return mean_reward(m.cases, m.preds, RewardWeights{});
  };
  const double reward_before = val_reward("sft_val.preds.jsonl");
  const double reward_after = val_reward("grpo_val.preds.jsonl");
  const double reward_dpo = val_reward("dpo_val.preds.jsonl");
  const double anchor_shift = max_abs_diff(load_checkpoint(p("grpo_anchor.ckpt")), load_checkpoint(p("sft.ckpt")));

  // Per-class ART F1 change on the test split.
  const auto test = select_split(corpus, Split::Test);
  const auto delta = timed("delta", [&] {
    auto art_report = [&](const char* file) {
      const auto m = match_predictions(corpus, read_predictions(dir / file));
      return evaluate(truths_of(m.cases), outputs_of(m.preds)).art;
    };
    const auto d = subtype_delta_report(art_report("sft_test.preds.jsonl"), art_report("grpo_test.preds.jsonl"));
    const ojson j = to_json(d);
    write_json(dir / "delta_art_sft_grpo.json", j);
    return j;
  });

  // Blinded review with a scripted panel.
  const ojson review = timed("review", [&] {
    const auto es = build_evaluation_set(test, std::min<std::size_t>(eval_cases, test.size()), seed);
    serialize_corpus(es.cases, dir / "eval_set.jsonl");
    write_schemas(dir / "schemas");
    const std::vector<std::string> arms{"SFT", "GRPO", "GroundTruth"};
    std::vector<std::map<std::string, std::optional<DecisionBundle>>> outputs(3);
    for (auto& pr : read_predictions(dir / "sft_test.preds.jsonl")) outputs[0][pr.id] = pr.output;
    for (auto& pr : read_predictions(dir / "grpo_test.preds.jsonl")) outputs[1][pr.id] = pr.output;
    for (const auto& e : es.cases) outputs[2][e.record.id] = e.truth;
    const auto items = review_items(es.cases, arms, outputs);

    std::map<std::string, DecisionBundle> answers;
    std::map<std::string, std::optional<DecisionBundle>> rendered;
    for (const auto& e : es.cases) answers[e.record.id] = e.truth;
    for (const auto& o : outputs) {
      for (const auto& [id, b] : o) {
        rendered[b ? render_bundle(*b) : std::string(kUnparseableResponse)] = b;
      }
    }
    ReviewServiceConfig scfg;
    scfg.arms = arms;
    std::vector<ScriptedReviewer> panel;
    for (std::size_t r = 0; r < reviewers; ++r) {
      const std::string token = "reviewer-" + std::to_string(r + 1);
      scfg.reviewer_tokens.push_back(token);
      panel.emplace_back(token, derive_seed(seed, 0xBEEF + r), answers, rendered);
    }
    scfg.operator_token = "operator";
    scfg.log_path = dir / "review_events.jsonl";
    scfg.seed = seed;
    scfg.clock = logical_clock();
    fs::remove(scfg.log_path);
    ojson live;
    std::size_t submitted = 0;
    {
      ReviewService service(items, scfg);
      submitted = run_scripted_panel(service, panel);
      live = to_json(build_stats_report(service.ratings(), "SFT", "GRPO"));
    }
    const ojson replayed = run("stats-report", {{"log", scfg.log_path.string()}, {"out", p("stats_report.json")},
                                                {"text", p("stats_report.txt")}});
    return ojson{{"eval_set", es.cases.size()},
                 {"eval_set_warnings", es.warnings},
                 {"reviews", submitted},
                 {"replay_bit_exact", live.dump() == replayed.dump()},
                 {"report", replayed}};
  });

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ojson s;
  s["seed"] = seed;
  s["n"] = n;
  s["generation_share"] = gen["generation_share"];
  s["sft"] = {{"final_loss", sft["epoch_loss"].back()},
              {"test_infertility_type_accuracy", evals["sft"]["infertility_type"]["accuracy"]}};
  s["validation_reward"] = {{"sft", reward_before}, {"grpo", reward_after}, {"dpo", reward_dpo},
                            {"grpo_change", reward_after - reward_before}};
  s["grpo"] = {{"steps", grpo_steps}, {"max_abs_param_shift", grpo["max_abs_param_shift"]},
               {"final_kl", grpo["kl_trace"].back()}};
  s["anchor"] = {{"beta_kl", anchor_beta}, {"max_abs_param_shift", anchor_shift}};
  s["dpo"] = {{"pairs", dpo["pairs"]}, {"dropped", dpo["dropped"]}};
  s["pyramid"] = {{"layers", pyramid["layers"]}, {"total", pyramid["total"]}, {"splits", pyramid["splits"]},
                  {"warnings", pyramid["warnings"]}};
  s["test_eval"] = ojson::object();
  for (const char* m : {"sft", "grpo", "dpo"}) {
    s["test_eval"][m] = {{"infertility_type", evals[m]["infertility_type"]["accuracy"]},
                         {"art", evals[m]["art"]["accuracy"]},
                         {"cos", evals[m]["cos"]["accuracy"]},
                         {"gn_mae", evals[m]["gn"]["mae"]},
                         {"diagnosis_partial", evals[m]["diagnosis"]["partial"]}};
  }
  s["art_delta_rows"] = delta["rows"].size();
  s["review"] = {{"eval_set", review["eval_set"]}, {"reviews", review["reviews"]},
                 {"replay_bit_exact", review["replay_bit_exact"]}};
  s["stage_seconds"] = stages;
  s["wall_seconds"] = wall;
  write_json(dir / "summary.json", s);
  rec.input(dir / "stats_report.json");
  rec.output(dir / "summary.json");
  rec.write(dir / "summary.json");
  return s;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-data",  "train-sft",     "infer",        "eval",
                                              "confusion", "build-pyramid", "train-dpo",    "train-grpo",
                                              "stats-report", "review-serve", "e2e",        "weight-sweep"};
  return names;
}

nlohmann::ordered_json run_command(const std::string& command, const nlohmann::json& config) {
  Config c(config, command);
  if (command == "gen-data") return cmd_gen_data(c);
  if (command == "train-sft") return cmd_train_sft(c);
  if (command == "infer") return cmd_infer(c);
  if (command == "eval") return cmd_eval(c);
  if (command == "confusion") return cmd_confusion(c);
  if (command == "build-pyramid") return cmd_build_pyramid(c);
  if (command == "train-dpo") return cmd_train_dpo(c);
  if (command == "train-grpo") return cmd_train_grpo(c);
  if (command == "stats-report") return cmd_stats_report(c);
  if (command == "review-serve") return cmd_review_serve(c);
  if (command == "e2e") return cmd_e2e(c);
  if (command == "weight-sweep") return cmd_weight_sweep(c);
  throw ValidationError("unknown command '" + command + "'");
}

// ---------------------------------------------------------------- artifacts

std::string manifest_path_for(const fs::path& output) { return output.string() + ".manifest.json"; }

void write_predictions(std::span<const Prediction> preds, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write predictions '" + path.string() + "'");
  for (const auto& p : preds) {
    ojson j;
    j["id"] = p.id;
    j["output"] = p.output ? to_json(*p.output) : ojson(nullptr);
    j["completion"] = render_tokens(p.tokens);
    j["tokens"] = p.tokens;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<Prediction> read_predictions(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open predictions '" + path.string() + "'");
  std::vector<Prediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.filename().string() + " line " + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(where + ": malformed JSON");
    }
    Prediction p;
    if (j.contains("truth")) {
      const auto c = case_from_json(j, where);
      p.id = c.record.id;
      p.output = c.truth;
      p.tokens = encode_completion(c.truth);
    } else {
      if (!j.contains("id") || !j["id"].is_string()) throw ValidationError(where + ": missing id");
      p.id = j["id"].get<std::string>();
      if (j.contains("output") && !j["output"].is_null()) p.output = bundle_from_json(j["output"], where);
      if (j.contains("tokens")) {
        try {
          p.tokens = j["tokens"].get<std::vector<int>>();
        } catch (const nlohmann::json::exception&) {
          throw ValidationError(where + ": tokens must be an integer array");
        }
        const int v = Vocab::standard().size();
        for (int t : p.tokens) {
          if (t < 0 || t >= v) throw ValidationError(where + ": token id out of range");
        }
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------- scripted panel

ScriptedReviewer::ScriptedReviewer(std::string token, std::uint64_t seed,
                                   std::map<std::string, DecisionBundle> answers,
                                   std::map<std::string, std::optional<DecisionBundle>> responses)
    : token_(std::move(token)), rng_(seed), answers_(std::move(answers)), responses_(std::move(responses)),
      judge_(builtin_judge()) {}

ReviewSubmission ScriptedReviewer::review(const BlindCase& c) {
  const auto answer = answers_.find(c.case_id);
  if (answer == answers_.end()) throw ValidationError("scripted reviewer has no answer for '" + c.case_id + "'");
  const auto& truth = answer->second;
  ReviewSubmission s;
  s.case_id = c.case_id;
  std::array<int, 3> total{};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto r = responses_.find(c.responses[i]);
    const std::optional<DecisionBundle> b = r == responses_.end() ? std::nullopt : r->second;
    const auto reward = composite_reward(b, truth);
    const auto jitter = [&] { return static_cast<int>(uniform_int(rng_, 0, 2)) - 1; };
    const auto likert = [&](double x) { return std::clamp(1 + static_cast<int>(std::lround(4 * x)) + jitter(), 1, 5); };
    s.scores[i].accuracy = likert(reward.composite);
    s.scores[i].reasoning = likert(b ? 0.5 * reward.r_art + 0.5 * reward.r_cos : 0.0);
    s.scores[i].feasibility = likert(b ? 0.5 * reward.r_gn + 0.5 * reward.r_cos : 0.0);
    bool unsupported = !b;
    if (b) {
      const auto m = diagnosis_match(b->initial_diagnosis, truth.initial_diagnosis, judge_, true);
      unsupported = !m.exact;
    }
    s.scores[i].hallucination = unsupported || bernoulli(rng_, 0.05);
    total[i] = s.scores[i].accuracy + s.scores[i].reasoning + s.scores[i].feasibility;
  }
  s.best_pick = static_cast<int>(std::max_element(total.begin(), total.end()) - total.begin());
  return s;
}

std::size_t run_scripted_panel(ReviewService& service, std::span<ScriptedReviewer> panel) {
  std::size_t submitted = 0;
  for (auto& reviewer : panel) {
    while (auto c = service.next_case(reviewer.token())) {
      service.submit(reviewer.token(), reviewer.review(*c));
      ++submitted;
    }
  }
  return submitted;
}

}  // namespace ivfalign
