// Command-line entry point. Each subcommand reads an optional JSON config
// (--config) and applies its flags on top; the summary goes to stdout and
// errors go to stderr as one JSON object.
//
// Exit codes: 0 ok, 1 internal, 2 usage, 3 validation or I/O, 4 divergence.

#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ivfalign/error.hpp"
#include "ivfalign/pipeline.hpp"
#include "ivfalign/review.hpp"

namespace {

enum class Kind { Int, Real, Text, Flag, List };

struct Option {
  std::string key;
  Kind kind;
  std::string help;
};

const std::map<std::string, std::vector<Option>>& option_table() {
  static const std::map<std::string, std::vector<Option>> table{
      {"gen-data",
       {{"n", Kind::Int, "number of cases"},
        {"seed", Kind::Int, "generator seed"},
        {"rule_noise", Kind::Real, "probability of perturbing each treatment field"},
        {"out", Kind::Text, "output corpus (JSONL)"}}},
      {"train-sft",
       {{"data", Kind::Text, "corpus (JSONL); the train split is used"},
        {"out", Kind::Text, "output checkpoint"},
        {"epochs", Kind::Int, "training epochs"},
        {"batch_size", Kind::Int, "minibatch size"},
        {"learning_rate", Kind::Real, "Adam learning rate"},
        {"seed", Kind::Int, "shuffle seed"},
        {"init_seed", Kind::Int, "parameter initialization seed"}}},
      {"infer",
       {{"model", Kind::Text, "checkpoint"},
        {"data", Kind::Text, "corpus (JSONL)"},
        {"split", Kind::Text, "train, val, test or all"},
        {"icl_guidelines", Kind::List, "guideline blocks to prepend: art, cos"},
        {"out", Kind::Text, "output predictions (JSONL)"}}},
      {"eval",
       {{"truth", Kind::Text, "corpus with reference answers"},
        {"pred", Kind::Text, "predictions or a corpus"},
        {"out", Kind::Text, "report JSON"},
        {"csv", Kind::Text, "one-row summary CSV"},
        {"per_class_csv", Kind::Text, "per-class CSV"},
        {"strict", Kind::Flag, "strict diagnosis matching"},
        {"synonyms", Kind::Text, "diagnosis synonym table"}}},
      {"confusion",
       {{"truth", Kind::Text, "corpus with reference answers"},
        {"pred", Kind::Text, "predictions or a corpus"},
        {"field", Kind::Text, "art, art_generation, cos or infertility_type"},
        {"out", Kind::Text, "matrix JSON"},
        {"csv", Kind::Text, "row-normalized CSV"}}},
      {"build-pyramid",
       {{"data", Kind::Text, "corpus (JSONL)"},
        {"pred", Kind::Text, "model predictions for the cases to layer"},
        {"pyramid_config", Kind::Text, "pyramid config JSON"},
        {"art_confusion", Kind::Text, "ART confusion matrix JSON"},
        {"cos_confusion", Kind::Text, "COS confusion matrix JSON"},
        {"scale", Kind::Real, "multiply every quota by this factor"},
        {"seed", Kind::Int, "sampling seed"},
        {"out", Kind::Text, "layered dataset (JSONL)"}}},
      {"train-dpo",
       {{"model", Kind::Text, "starting and reference checkpoint"},
        {"data", Kind::Text, "layered dataset"},
        {"out", Kind::Text, "output checkpoint"},
        {"beta", Kind::Real, "DPO temperature"},
        {"learning_rate", Kind::Real, "Adam learning rate"},
        {"epochs", Kind::Int, "epochs"},
        {"batch_size", Kind::Int, "pairs per step"},
        {"seed", Kind::Int, "shuffle seed"}}},
      {"train-grpo",
       {{"model", Kind::Text, "starting checkpoint"},
        {"ref", Kind::Text, "reference checkpoint (default: --model)"},
        {"data", Kind::Text, "layered dataset"},
        {"out", Kind::Text, "output checkpoint"},
        {"weights", Kind::Text, "reward weights JSON"},
        {"group_size", Kind::Int, "completions per prompt"},
        {"clip_eps", Kind::Real, "ratio clip range"},
        {"beta_kl", Kind::Real, "KL penalty"},
        {"temperature", Kind::Real, "sampling temperature"},
        {"steps", Kind::Int, "optimization steps"},
        {"prompts_per_step", Kind::Int, "prompts per step"},
        {"policy_iterations", Kind::Int, "updates per sampled batch"},
        {"learning_rate", Kind::Real, "Adam learning rate"},
        {"advantage", Kind::Text, "standardized or mean-baseline"},
        {"kl", Kind::Text, "estimator or exact"},
        {"seed", Kind::Int, "sampling seed"}}},
      {"stats-report",
       {{"log", Kind::Text, "review event log"},
        {"arm_a", Kind::Text, "first arm"},
        {"arm_b", Kind::Text, "second arm"},
        {"pick_mode", Kind::Text, "pick or modal"},
        {"out", Kind::Text, "report JSON"},
        {"text", Kind::Text, "report text"}}},
      {"review-serve",
       {{"host", Kind::Text, "bind address"},
        {"port", Kind::Int, "port"},
        {"eval_set", Kind::Text, "cases to review (JSONL corpus)"},
        {"arms", Kind::List, "three NAME=PREDICTIONS entries; PREDICTIONS may be 'truth'"},
        {"reviewer_tokens", Kind::List, "reviewer tokens"},
        {"operator_token", Kind::Text, "operator token for /api/report"},
        {"log", Kind::Text, "event log (created or resumed)"},
        {"static_dir", Kind::Text, "static assets served at /"},
        {"seed", Kind::Int, "permutation seed"},
        {"pick_mode", Kind::Text, "pick or modal"},
        {"schema_dir", Kind::Text, "write the JSON schemas here and exit"}}},
      {"e2e",
       {{"seed", Kind::Int, "seed for every stage"},
        {"n", Kind::Int, "corpus size"},
        {"out_dir", Kind::Text, "artifact directory"},
        {"sft_epochs", Kind::Int, "SFT epochs"},
        {"grpo_steps", Kind::Int, "GRPO steps"},
        {"anchor_beta_kl", Kind::Real, "KL penalty for the anchored GRPO run"},
        {"eval_cases", Kind::Int, "blinded review cases"},
        {"reviewers", Kind::Int, "scripted reviewers"}}},
      {"weight-sweep",
       {{"truth", Kind::Text, "corpus with reference answers"},
        {"pred", Kind::Text, "predictions or a corpus"},
        {"step", Kind::Real, "grid step on the weight simplex"},
        {"out", Kind::Text, "sweep JSON"}}},
  };
  return table;
}

std::string flag_name(const std::string& key) {
  std::string f = key;
  for (char& c : f) {
    if (c == '_') c = '-';
  }
  if (key == "rule_noise") return "--rule-noise,--noise";
  return "--" + f;
}

struct Bound {
  Option opt;
  CLI::Option* handle = nullptr;
  long long i = 0;
  double r = 0;
  std::string s;
  bool flag = false;
  std::vector<std::string> list;
};

int fail(const std::string& category, const std::string& message, int code) {
  nlohmann::ordered_json j{{"error", category}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic IVF decision-support alignment pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ivfalign::kToolVersion));

  struct Sub {
    CLI::App* app;
    std::string config;
    std::vector<Bound> bound;
  };
  std::map<std::string, Sub> subs;
  for (const auto& name : ivfalign::command_names()) {
    const auto& opts = option_table().at(name);
    Sub& sub = subs[name];
    sub.app = app.add_subcommand(name);
    sub.app->add_option("--config", sub.config, "JSON config; flags override its values");
    sub.bound.reserve(opts.size());
    for (const auto& o : opts) {
      sub.bound.push_back(Bound{o});
      Bound& b = sub.bound.back();
      const std::string f = flag_name(o.key);
      switch (o.kind) {
        case Kind::Int: b.handle = sub.app->add_option(f, b.i, o.help); break;
        case Kind::Real: b.handle = sub.app->add_option(f, b.r, o.help); break;
        case Kind::Text: b.handle = sub.app->add_option(f, b.s, o.help); break;
        case Kind::Flag: b.handle = sub.app->add_flag(f, b.flag, o.help); break;
        case Kind::List: b.handle = sub.app->add_option(f, b.list, o.help)->delimiter(','); break;
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  for (auto& [name, sub] : subs) {
    if (!sub.app->parsed()) continue;
    try {
      nlohmann::json config = nlohmann::json::object();
      if (!sub.config.empty()) {
        std::ifstream in(sub.config);
        if (!in) throw ivfalign::IoError("cannot open config '" + sub.config + "'");
        try {
          config = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
          throw ivfalign::ValidationError("config '" + sub.config + "' is not valid JSON");
        }
        if (!config.is_object()) throw ivfalign::ValidationError("config must be a JSON object");
      }
      for (const auto& b : sub.bound) {
        if (b.handle->count() == 0) continue;
        switch (b.opt.kind) {
          case Kind::Int: config[b.opt.key] = b.i; break;
          case Kind::Real: config[b.opt.key] = b.r; break;
          case Kind::Text: config[b.opt.key] = b.s; break;
          case Kind::Flag: config[b.opt.key] = b.flag; break;
          case Kind::List: config[b.opt.key] = b.list; break;
        }
      }
      const auto summary = ivfalign::run_command(name, config);
      std::cout << summary.dump(2) << std::endl;
      return 0;
    } catch (const ivfalign::DivergenceError& e) {
      return fail("divergence", e.what(), 4);
    } catch (const ivfalign::ValidationError& e) {
      return fail("validation", e.what(), 3);
    } catch (const ivfalign::IoError& e) {
      return fail("io", e.what(), 3);
    } catch (const ivfalign::ConflictError& e) {
      return fail("conflict", e.what(), 3);
    } catch (const ivfalign::AuthError& e) {
      return fail("auth", e.what(), 3);
    } catch (const std::exception& e) {
      return fail("internal", e.what(), 1);
    }
  }
  return fail("usage", "no subcommand given", 2);
}
