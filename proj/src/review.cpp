#include "ivfalign/review.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <sstream>

#include "ivfalign/allocation.hpp"
#include "ivfalign/error.hpp"
#include "ivfalign/hash.hpp"
#include "ivfalign/log.hpp"

namespace ivfalign {

// ---------------------------------------------------------------- evaluation set

EvaluationSet build_evaluation_set(std::span<const CaseExample> test_split, std::size_t n,
                                   std::uint64_t seed) {
  if (n == 0) throw ValidationError("evaluation set size must be positive");
  if (test_split.size() < n) {
    throw ValidationError("test split has " + std::to_string(test_split.size()) +
                          " cases, fewer than the requested " + std::to_string(n));
  }
  std::array<std::vector<std::size_t>, 3> strata;
  for (std::size_t i = 0; i < test_split.size(); ++i) {
    strata[static_cast<std::size_t>(art_generation(test_split[i].truth.art))].push_back(i);
  }
  std::vector<double> weights;
  for (const auto& s : strata) weights.push_back(static_cast<double>(s.size()));
  const auto quota = largest_remainder(n, weights);

  EvaluationSet out;
  std::vector<std::size_t> chosen;
  for (std::size_t g = 0; g < strata.size(); ++g) {
    auto pool = strata[g];
    Rng rng(derive_seed(seed, 0xE5A + g));
    shuffle(std::span(pool), rng);
    if (pool.size() < quota[g]) {
      out.warnings.push_back("stratum " + std::string(to_string(kArtGenerations[g])) + " has " +
                             std::to_string(pool.size()) + " cases for a quota of " +
                             std::to_string(quota[g]));
      warn("evaluation set " + out.warnings.back());
    }
    pool.resize(std::min(pool.size(), quota[g]));
    chosen.insert(chosen.end(), pool.begin(), pool.end());
  }
  std::sort(chosen.begin(), chosen.end());
  for (auto i : chosen) out.cases.push_back(test_split[i]);
  return out;
}

namespace {

std::string num(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string render_record(const PatientRecord& r) {
  std::ostringstream os;
  os << "Age: " << num(r.age, 0) << " years\n"
     << "Cycle length: " << num(r.cycle_days, 0) << " days\n"
     << "Weight: " << num(r.weight_kg, 1) << " kg\n"
     << "BMI: " << num(r.bmi, 1) << " kg/m2\n"
     << "AMH: " << num(r.amh, 2) << " ng/mL\n"
     << "FSH: " << num(r.fsh, 1) << " IU/L\n"
     << "Infertility duration: " << num(r.infertility_years, 0) << " years\n"
     << "Ultrasound: " << r.ultrasound_text << '\n'
     << "History: " << r.history_text << '\n';
  return os.str();
}

std::string render_bundle(const DecisionBundle& b) {
  std::ostringstream os;
  os << "Diagnosis reasoning: " << b.cot.diagnosis_reasoning << '\n'
     << "ART decision: " << b.cot.art_decision << '\n'
     << "COS selection: " << b.cot.cos_selection << '\n'
     << "Gn rationale: " << b.cot.gn_rationale << "\n\n"
     << "Infertility type: " << to_string(b.infertility_type) << '\n'
     << "Initial diagnosis: ";
  for (std::size_t i = 0; i < b.initial_diagnosis.size(); ++i) {
    os << (i ? "; " : "") << b.initial_diagnosis[i];
  }
  os << '\n'
     << "ART strategy: " << to_string(b.art) << '\n'
     << "COS regimen: " << to_string(b.cos) << '\n'
     << "Gn starting dose: " << b.gn_dose.iu << " IU\n";
  return os.str();
}

nlohmann::ordered_json BlindCase::to_json() const {
  nlohmann::ordered_json j;
  j["case_id"] = case_id;
  j["patient"] = patient;
  auto& arms = j["arms"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < responses.size(); ++i) {
    arms.push_back({{"label", std::string(kArmLabels[i])}, {"response", responses[i]}});
  }
  return j;
}

// ---------------------------------------------------------------- schemas

namespace {

nlohmann::ordered_json likert() {
  return {{"type", "integer"}, {"minimum", 1}, {"maximum", 5}};
}

nlohmann::ordered_json arm_scores_schema() {
  nlohmann::ordered_json s;
  s["type"] = "object";
  s["additionalProperties"] = false;
  s["required"] = {"accuracy", "reasoning", "feasibility", "hallucination"};
  s["properties"] = {{"accuracy", likert()},
                     {"reasoning", likert()},
                     {"feasibility", likert()},
                     {"hallucination", {{"type", "boolean"}}}};
  return s;
}

nlohmann::ordered_json scores_schema() {
  nlohmann::ordered_json s;
  s["type"] = "object";
  s["additionalProperties"] = false;
  s["required"] = {"A", "B", "C"};
  s["properties"] = {{"A", arm_scores_schema()}, {"B", arm_scores_schema()}, {"C", arm_scores_schema()}};
  return s;
}

nlohmann::ordered_json label_schema() { return {{"type", "string"}, {"enum", {"A", "B", "C"}}}; }

}  // namespace

nlohmann::ordered_json blind_case_schema() {
  nlohmann::ordered_json arm;
  arm["type"] = "object";
  arm["additionalProperties"] = false;
  arm["required"] = {"label", "response"};
  arm["properties"] = {{"label", label_schema()}, {"response", {{"type", "string"}}}};

  nlohmann::ordered_json s;
  s["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  s["title"] = "BlindCase";
  s["type"] = "object";
  s["additionalProperties"] = false;
  s["required"] = {"case_id", "patient", "arms"};
  s["properties"] = {{"case_id", {{"type", "string"}}},
                     {"patient", {{"type", "string"}}},
                     {"arms", {{"type", "array"}, {"minItems", 3}, {"maxItems", 3}, {"items", arm}}}};
  return s;
}

nlohmann::ordered_json review_submission_schema() {
  nlohmann::ordered_json s;
  s["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  s["title"] = "ReviewSubmission";
  s["type"] = "object";
  s["additionalProperties"] = false;
  s["required"] = {"case_id", "scores", "best_pick"};
  s["properties"] = {{"case_id", {{"type", "string"}}},
                     {"scores", scores_schema()},
                     {"best_pick", label_schema()},
                     {"idempotency_key", {{"type", "string"}, {"minLength", 1}}}};
  return s;
}

nlohmann::ordered_json review_event_schema() {
  nlohmann::ordered_json hex;
  hex["type"] = "string";
  hex["pattern"] = "^[0-9a-f]{64}$";
  nlohmann::ordered_json s;
  s["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  s["title"] = "ReviewEvent";
  s["type"] = "object";
  s["additionalProperties"] = false;
  s["required"] = {"seq", "type", "timestamp", "reviewer", "case_id", "permutation", "scores",
                   "best_pick", "idempotency_key", "prev_hash", "hash"};
  s["properties"] = {{"seq", {{"type", "integer"}, {"minimum", 0}}},
                     {"type", {{"const", "review"}}},
                     {"timestamp", {{"type", "string"}}},
                     {"reviewer", {{"type", "string"}}},
                     {"case_id", {{"type", "string"}}},
                     {"permutation", {{"type", "integer"}, {"minimum", 0}, {"maximum", 5}}},
                     {"scores", scores_schema()},
                     {"best_pick", label_schema()},
                     {"idempotency_key", {{"type", {"string", "null"}}}},
                     {"prev_hash", hex},
                     {"hash", hex}};
  return s;
}

// ---------------------------------------------------------------- submissions

ReviewSubmission parse_submission(const nlohmann::json& body) {
  if (!body.is_object()) throw ValidationError("review body must be a JSON object");
  std::vector<std::string> errors;
  ReviewSubmission s;
  for (auto& [key, v] : body.items()) {
    if (key != "case_id" && key != "scores" && key != "best_pick" && key != "idempotency_key") {
      errors.push_back(key + ": unexpected field");
    }
  }
  if (!body.contains("case_id") || !body["case_id"].is_string() ||
      body["case_id"].get<std::string>().empty()) {
    errors.push_back("case_id: required non-empty string");
  } else {
    s.case_id = body["case_id"].get<std::string>();
  }
  auto label_index = [](const nlohmann::json& v) -> std::optional<int> {
    if (!v.is_string()) return std::nullopt;
    for (std::size_t i = 0; i < kArmLabels.size(); ++i) {
      if (v.get<std::string>() == kArmLabels[i]) return static_cast<int>(i);
    }
    return std::nullopt;
  };
  if (!body.contains("best_pick") || !label_index(body["best_pick"])) {
    errors.push_back("best_pick: must be one of A, B, C");
  } else {
    s.best_pick = *label_index(body["best_pick"]);
  }
  if (!body.contains("scores") || !body["scores"].is_object()) {
    errors.push_back("scores: required object with keys A, B, C");
  } else {
    const auto& scores = body["scores"];
    for (auto& [key, v] : scores.items()) {
      if (key != "A" && key != "B" && key != "C") errors.push_back("scores." + key + ": unexpected label");
    }
    for (std::size_t i = 0; i < kArmLabels.size(); ++i) {
      const std::string label(kArmLabels[i]);
      const std::string pfx = "scores." + label;
      if (!scores.contains(label) || !scores[label].is_object()) {
        errors.push_back(pfx + ": required object");
        continue;
      }
      const auto& a = scores[label];
      for (auto& [key, v] : a.items()) {
        if (key != "accuracy" && key != "reasoning" && key != "feasibility" && key != "hallucination") {
          errors.push_back(pfx + "." + key + ": unexpected field");
        }
      }
      auto likert_field = [&](const char* name, int& out) {
        if (!a.contains(name) || !a[name].is_number_integer() || a[name].get<long long>() < 1 ||
            a[name].get<long long>() > 5) {
          errors.push_back(pfx + "." + name + ": must be an integer from 1 to 5");
          return;
        }
        out = a[name].get<int>();
      };
      likert_field("accuracy", s.scores[i].accuracy);
      likert_field("reasoning", s.scores[i].reasoning);
      likert_field("feasibility", s.scores[i].feasibility);
      if (!a.contains("hallucination") || !a["hallucination"].is_boolean()) {
        errors.push_back(pfx + ".hallucination: must be a boolean");
      } else {
        s.scores[i].hallucination = a["hallucination"].get<bool>();
      }
    }
  }
  if (body.contains("idempotency_key")) {
    const auto& k = body["idempotency_key"];
    if (k.is_string() && !k.get<std::string>().empty()) {
      s.idempotency_key = k.get<std::string>();
    } else if (!k.is_null()) {
      errors.push_back("idempotency_key: must be a non-empty string");
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid review: ";
    for (std::size_t i = 0; i < errors.size(); ++i) msg += (i ? "; " : "") + errors[i];
    throw ValidationError(msg);
  }
  return s;
}

namespace {

nlohmann::ordered_json scores_json(const std::array<ArmScores, 3>& scores) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    j[std::string(kArmLabels[i])] = {{"accuracy", scores[i].accuracy},
                                     {"reasoning", scores[i].reasoning},
                                     {"feasibility", scores[i].feasibility},
                                     {"hallucination", scores[i].hallucination}};
  }
  return j;
}

std::string chain_hash(const std::string& prev, const nlohmann::ordered_json& event_without_hash) {
  return sha256_hex(prev + "\n" + event_without_hash.dump());
}

}  // namespace

nlohmann::ordered_json to_json(const ReviewSubmission& s) {
  nlohmann::ordered_json j;
  j["case_id"] = s.case_id;
  j["scores"] = scores_json(s.scores);
  j["best_pick"] = std::string(kArmLabels[static_cast<std::size_t>(s.best_pick)]);
  if (s.idempotency_key) j["idempotency_key"] = *s.idempotency_key;
  return j;
}

// ---------------------------------------------------------------- log replay

std::vector<LogEvent> read_event_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open event log '" + path.string() + "'");
  std::vector<LogEvent> events;
  std::string prev(kGenesisHash);
  std::string line;
  std::uint64_t expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw ValidationError("event log broken at sequence " + std::to_string(expected) + ": " + why);
    };
    nlohmann::ordered_json ev;
    try {
      ev = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception&) {
      fail("malformed JSON");
    }
    if (!ev.is_object() || !ev.contains("seq") || !ev["seq"].is_number_unsigned() ||
        ev["seq"].get<std::uint64_t>() != expected) {
      fail("sequence number out of order");
    }
    if (!ev.contains("hash") || !ev["hash"].is_string() || !ev.contains("prev_hash") ||
        ev["prev_hash"] != prev) {
      fail("previous-hash link does not match");
    }
    const std::string stored = ev["hash"].get<std::string>();
    nlohmann::ordered_json bare = ev;
    bare.erase("hash");
    if (chain_hash(prev, bare) != stored) fail("hash mismatch");
    if (!ev.contains("type") || !ev["type"].is_string()) fail("missing type");
    const std::string type = ev["type"].get<std::string>();
    if ((expected == 0) != (type == "open")) fail("log must start with exactly one open event");
    if (type != "open" && type != "serve" && type != "review") fail("unknown event type");
    events.push_back(LogEvent{expected, type, ev});
    prev = stored;
    ++expected;
  }
  if (events.empty()) throw ValidationError("event log '" + path.string() + "' is empty");
  return events;
}

void RatingsAccumulator::open(std::vector<std::string> arms, std::vector<std::string> cases) {
  arms_ = std::move(arms);
  cases_ = std::move(cases);
  sums_.clear();
  reviewers_.clear();
  events_ = 0;
}

void RatingsAccumulator::add_review(const nlohmann::json& ev) {
  const int perm = ev.at("permutation").get<int>();
  if (perm < 0 || perm >= static_cast<int>(kPermutations.size())) {
    throw ValidationError("review event has invalid permutation");
  }
  const auto& order = kPermutations[static_cast<std::size_t>(perm)];
  Sums& s = sums_[ev.at("case_id").get<std::string>()];
  const auto& scores = ev.at("scores");
  for (std::size_t label = 0; label < 3; ++label) {
    const auto arm = static_cast<std::size_t>(order[label]);
    const auto& a = scores.at(std::string(kArmLabels[label]));
    s.score[arm][0] += a.at("accuracy").get<int>();
    s.score[arm][1] += a.at("reasoning").get<int>();
    s.score[arm][2] += a.at("feasibility").get<int>();
    s.hallucination[arm] += a.at("hallucination").get<bool>() ? 1 : 0;
  }
  const std::string pick = ev.at("best_pick").get<std::string>();
  const auto it = std::find(kArmLabels.begin(), kArmLabels.end(), pick);
  if (it == kArmLabels.end()) throw ValidationError("review event has invalid best_pick");
  s.picks.push_back(arms_.at(static_cast<std::size_t>(order[static_cast<std::size_t>(it - kArmLabels.begin())])));
  ++s.reviews;
  reviewers_.insert(ev.at("reviewer").get<std::string>());
  ++events_;
}

RatingsTable RatingsAccumulator::table() const {
  RatingsTable t;
  t.arms = arms_;
  t.events = events_;
  t.reviewers = reviewers_.size();
  t.planned_cases = cases_.size();
  t.hallucination_flags.assign(arms_.size(), 0);
  t.hallucination_total.assign(arms_.size(), 0);
  for (const auto& [id, s] : sums_) {
    CaseRatings c;
    c.case_id = id;
    c.picks = s.picks;
    const double n = static_cast<double>(s.reviews);
    for (std::size_t a = 0; a < arms_.size(); ++a) {
      ArmRatings r;
      for (std::size_t d = 0; d < 3; ++d) r.mean[d] = static_cast<double>(s.score[a][d]) / n;
      r.hallucination = static_cast<double>(s.hallucination[a]) / n;
      r.reviewers = s.reviews;
      c.arms.push_back(r);
      t.hallucination_flags[a] += static_cast<std::size_t>(s.hallucination[a]);
      t.hallucination_total[a] += s.reviews;
    }
    t.cases.push_back(std::move(c));
  }
  return t;
}

RatingsTable unblind_and_export(const std::filesystem::path& log_path) {
  const auto events = read_event_log(log_path);
  RatingsAccumulator acc;
  const auto& open = events.front().body;
  acc.open(open.at("arms").get<std::vector<std::string>>(),
           open.at("cases").get<std::vector<std::string>>());
  for (const auto& e : events) {
    if (e.type == "review") acc.add_review(e.body);
  }
  return acc.table();
}

// ---------------------------------------------------------------- service

std::string system_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

ReviewService::ReviewService(std::vector<ReviewItem> items, ReviewServiceConfig cfg)
    : items_(std::move(items)), cfg_(std::move(cfg)), rng_(cfg_.seed) {
  if (cfg_.arms.size() != 3) throw ValidationError("exactly three arms are required");
  if (items_.empty()) throw ValidationError("review service needs at least one case");
  if (cfg_.reviewer_tokens.empty()) throw ValidationError("at least one reviewer token is required");
  if (cfg_.log_path.empty()) throw ValidationError("an event log path is required");
  if (!cfg_.clock) cfg_.clock = system_timestamp;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& it = items_[i];
    if (it.arms.size() != 3) throw ValidationError("case '" + it.case_id + "' needs three arm responses");
    for (std::size_t a = 0; a < 3; ++a) {
      if (it.arms[a].arm != cfg_.arms[a]) {
        throw ValidationError("case '" + it.case_id + "' arms do not follow the configured order");
      }
    }
    if (!index_.emplace(it.case_id, i).second) {
      throw ValidationError("duplicate case id '" + it.case_id + "'");
    }
  }
  for (const auto& token : cfg_.reviewer_tokens) {
    if (token.empty()) throw ValidationError("reviewer tokens must be non-empty");
    if (token == cfg_.operator_token) throw ValidationError("operator token must differ from reviewer tokens");
    token_to_id_[token] = "rv-" + sha256_hex(token).substr(0, 16);
  }

  std::vector<std::string> ids;
  for (const auto& it : items_) ids.push_back(it.case_id);
  acc_.open(cfg_.arms, ids);
  last_hash_ = std::string(kGenesisHash);
  const bool resume = std::filesystem::exists(cfg_.log_path) &&
                      std::filesystem::file_size(cfg_.log_path) > 0;
  if (resume) replay_existing();
  log_.open(cfg_.log_path, std::ios::binary | std::ios::app);
  if (!log_) throw IoError("cannot open event log '" + cfg_.log_path.string() + "'");
  if (!resume) {
    nlohmann::ordered_json ev;
    ev["seq"] = next_seq_;
    ev["type"] = "open";
    ev["timestamp"] = cfg_.clock();
    ev["arms"] = cfg_.arms;
    ev["cases"] = ids;
    append(std::move(ev));
  }
}

void ReviewService::replay_existing() {
  const auto events = read_event_log(cfg_.log_path);
  const auto& open = events.front().body;
  std::vector<std::string> ids;
  for (const auto& it : items_) ids.push_back(it.case_id);
  if (open.at("arms").get<std::vector<std::string>>() != cfg_.arms ||
      open.at("cases").get<std::vector<std::string>>() != ids) {
    throw ValidationError("existing event log describes a different evaluation");
  }
  for (const auto& e : events) {
    if (e.type == "open") continue;
    const auto& b = e.body;
    ReviewerState& st = state_[b.at("reviewer").get<std::string>()];
    const std::size_t idx = index_.at(b.at("case_id").get<std::string>());
    const int perm = b.at("permutation").get<int>();
    if (e.type == "serve") {
      uniform_int(rng_, 0, 5);  // keep the permutation stream aligned with an uninterrupted run
      st.pending = std::make_pair(idx, perm);
    } else {
      acc_.add_review(b);
      st.reviewed.insert(idx);
      st.pending.reset();
      if (b.contains("idempotency_key") && b["idempotency_key"].is_string()) {
        st.idempotent[b["idempotency_key"].get<std::string>()] =
            SubmitAck{e.seq, b.at("case_id").get<std::string>(), false};
      }
    }
  }
  next_seq_ = events.size();
  last_hash_ = events.back().body.at("hash").get<std::string>();
}

std::uint64_t ReviewService::append(nlohmann::ordered_json event) {
  event["prev_hash"] = last_hash_;
  const std::string h = chain_hash(last_hash_, event);
  event["hash"] = h;
  log_ << event.dump() << '\n';
  log_.flush();
  if (!log_) throw IoError("write failed for event log '" + cfg_.log_path.string() + "'");
  last_hash_ = h;
  return next_seq_++;
}

std::string ReviewService::reviewer_id(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  if (it == token_to_id_.end()) throw AuthError("unknown reviewer token");
  return it->second;
}

bool ReviewService::is_operator(const std::string& token) const {
  return !cfg_.operator_token.empty() && token == cfg_.operator_token;
}

BlindCase ReviewService::blind(std::size_t index, int permutation) const {
  const auto& item = items_[index];
  BlindCase c;
  c.case_id = item.case_id;
  c.patient = item.patient;
  const auto& order = kPermutations[static_cast<std::size_t>(permutation)];
  for (std::size_t label = 0; label < 3; ++label) {
    c.responses[label] = item.arms[static_cast<std::size_t>(order[label])].response;
  }
  return c;
}

std::optional<BlindCase> ReviewService::next_case(const std::string& token) {
  const std::string id = reviewer_id(token);
  std::lock_guard lock(mutex_);
  ReviewerState& st = state_[id];
  if (st.pending) return blind(st.pending->first, st.pending->second);
  std::size_t idx = 0;
  while (idx < items_.size() && st.reviewed.count(idx)) ++idx;
  if (idx == items_.size()) return std::nullopt;
  const int perm = static_cast<int>(uniform_int(rng_, 0, 5));
  nlohmann::ordered_json ev;
  ev["seq"] = next_seq_;
  ev["type"] = "serve";
  ev["timestamp"] = cfg_.clock();
  ev["reviewer"] = id;
  ev["case_id"] = items_[idx].case_id;
  ev["permutation"] = perm;
  append(std::move(ev));
  st.pending = std::make_pair(idx, perm);
  return blind(idx, perm);
}

SubmitAck ReviewService::submit(const std::string& token, const ReviewSubmission& s) {
  const std::string id = reviewer_id(token);
  std::lock_guard lock(mutex_);
  ReviewerState& st = state_[id];
  if (s.idempotency_key) {
    const auto it = st.idempotent.find(*s.idempotency_key);
    if (it != st.idempotent.end()) {
      if (it->second.case_id != s.case_id) {
        throw ConflictError("idempotency key already used for case '" + it->second.case_id + "'");
      }
      SubmitAck ack = it->second;
      ack.replayed = true;
      return ack;
    }
  }
  const auto found = index_.find(s.case_id);
  if (found == index_.end()) throw ValidationError("case_id: unknown case '" + s.case_id + "'");
  const std::size_t idx = found->second;
  if (st.reviewed.count(idx)) {
    throw ConflictError("case '" + s.case_id + "' was already reviewed by this reviewer");
  }
  if (!st.pending || st.pending->first != idx) {
    throw ValidationError("case_id: case '" + s.case_id + "' was not served to this reviewer");
  }
  nlohmann::ordered_json ev;
  ev["seq"] = next_seq_;
  ev["type"] = "review";
  ev["timestamp"] = cfg_.clock();
  ev["reviewer"] = id;
  ev["case_id"] = s.case_id;
  ev["permutation"] = st.pending->second;
  ev["scores"] = scores_json(s.scores);
  ev["best_pick"] = std::string(kArmLabels[static_cast<std::size_t>(s.best_pick)]);
  ev["idempotency_key"] = s.idempotency_key ? nlohmann::ordered_json(*s.idempotency_key) : nullptr;
  const nlohmann::ordered_json copy = ev;
  const std::uint64_t seq = append(std::move(ev));
  acc_.add_review(copy);
  st.reviewed.insert(idx);
  st.pending.reset();
  SubmitAck ack{seq, s.case_id, false};
  if (s.idempotency_key) st.idempotent[*s.idempotency_key] = ack;
  return ack;
}

Progress ReviewService::progress(const std::string& token) const {
  const std::string id = reviewer_id(token);
  std::lock_guard lock(mutex_);
  Progress p;
  p.total = items_.size();
  const auto it = state_.find(id);
  if (it != state_.end()) p.reviewed = it->second.reviewed.size();
  return p;
}

RatingsTable ReviewService::ratings() const {
  std::lock_guard lock(mutex_);
  return acc_.table();
}

}  // namespace ivfalign
