#include <doctest.h>

#include <httplib.h>

#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "ivfalign/error.hpp"
#include "ivfalign/review.hpp"
#include "ivfalign/review_http.hpp"

using namespace ivfalign;

namespace {

const std::vector<std::string> kArms{"SFT", "GRPO", "GroundTruth"};

// Response text encodes the arm index so a test reviewer can unblind it.
std::vector<ReviewItem> make_items(std::size_t n) {
  std::vector<ReviewItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    ReviewItem it;
    it.case_id = "case-" + std::to_string(1000 + i);
    it.patient = "Age: 33";
    for (std::size_t a = 0; a < 3; ++a) it.arms.push_back({kArms[a], "response " + std::to_string(a)});
    items.push_back(it);
  }
  return items;
}

int arm_of(const std::string& response) { return response.back() - '0'; }

std::string logical_clock_start() { return "2026-01-01T00:00:00.000Z"; }

ReviewServiceConfig config(const std::filesystem::path& log, std::vector<std::string> tokens) {
  ReviewServiceConfig cfg;
  cfg.arms = kArms;
  cfg.reviewer_tokens = std::move(tokens);
  cfg.operator_token = "op-secret";
  cfg.log_path = log;
  cfg.seed = 11;
  cfg.clock = logical_clock_start;
  return cfg;
}

ReviewSubmission uniform_submission(const BlindCase& c, int score, int best = 0) {
  ReviewSubmission s;
  s.case_id = c.case_id;
  for (auto& a : s.scores) a = ArmScores{score, score, score, false};
  s.best_pick = best;
  return s;
}

nlohmann::json valid_body() {
  nlohmann::json scores;
  for (const char* l : {"A", "B", "C"}) {
    scores[l] = {{"accuracy", 4}, {"reasoning", 3}, {"feasibility", 5}, {"hallucination", false}};
  }
  return {{"case_id", "case-1000"}, {"scores", scores}, {"best_pick", "B"}};
}

void collect_keys(const nlohmann::json& j, std::set<std::string>& keys) {
  if (j.is_object()) {
    for (auto& [k, v] : j.items()) {
      keys.insert(k);
      collect_keys(v, keys);
    }
  } else if (j.is_array()) {
    for (const auto& v : j) collect_keys(v, keys);
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_SUITE("review") {
  TEST_CASE("evaluation set keeps the generation mix") {
    std::vector<CaseExample> test;
    auto add = [&](ArtStrategy a, int n) {
      for (int i = 0; i < n; ++i) test.push_back(fixture::example("t" + std::to_string(test.size()), a));
    };
    add(ArtStrategy::IVF, 500);
    add(ArtStrategy::IVF_Short, 210);
    add(ArtStrategy::ICSI, 180);
    add(ArtStrategy::PGT_A, 60);
    add(ArtStrategy::PGT_SR, 50);
    const auto set = build_evaluation_set(test, 100, 5);
    std::map<ArtGeneration, int> strata;
    for (const auto& c : set.cases) ++strata[art_generation(c.truth.art)];
    CHECK(std::abs(strata[ArtGeneration::IVF] - 71) <= 1);
    CHECK(std::abs(strata[ArtGeneration::ICSI] - 18) <= 1);
    CHECK(std::abs(strata[ArtGeneration::PGT] - 11) <= 1);
    CHECK(set.cases.size() == 100);
    CHECK(set.warnings.empty());
    CHECK(build_evaluation_set(test, 100, 5).cases == set.cases);
    CHECK_THROWS_AS(build_evaluation_set(test, 2000, 5), ValidationError);
  }

  TEST_CASE("submission validation names every bad field") {
    CHECK_NOTHROW(parse_submission(valid_body()));
    const auto s = parse_submission(valid_body());
    CHECK(s.best_pick == 1);
    CHECK(s.scores[2].feasibility == 5);
    CHECK_FALSE(s.idempotency_key);

    auto body = valid_body();
    body["scores"]["B"]["accuracy"] = 6;
    try {
      parse_submission(body);
      FAIL("expected an error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("scores.B.accuracy") != std::string::npos);
    }
    body = valid_body();
    body["model"] = "GRPO";
    body["best_pick"] = "D";
    body["scores"]["A"].erase("hallucination");
    try {
      parse_submission(body);
      FAIL("expected an error");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("model") != std::string::npos);
      CHECK(msg.find("best_pick") != std::string::npos);
      CHECK(msg.find("scores.A.hallucination") != std::string::npos);
    }
    body = valid_body();
    body["scores"]["C"]["reasoning"] = 3.5;
    CHECK_THROWS_AS(parse_submission(body), ValidationError);
    CHECK_THROWS_AS(parse_submission(nlohmann::json::array()), ValidationError);
  }

  TEST_CASE("served cases carry no arm identity") {
    fixture::TempDir dir("blind");
    auto items = make_items(3);
    items[0].arms[0].response = "plain text";
    ReviewService svc(items, config(dir / "log.jsonl", {"r1"}));
    const auto c = svc.next_case("r1");
    REQUIRE(c);
    const auto j = c->to_json();
    std::set<std::string> keys;
    collect_keys(j, keys);
    const std::set<std::string> allowed{"case_id", "patient", "arms", "label", "response"};
    for (const auto& k : keys) CHECK(allowed.count(k) == 1);
    const std::string text = j.dump();
    for (const auto& arm : kArms) CHECK(text.find(arm) == std::string::npos);
    for (const char* banned : {"model", "arm_source", "permutation"}) CHECK(keys.count(banned) == 0);
    const auto schema = blind_case_schema();
    CHECK(schema["additionalProperties"] == false);
  }

  TEST_CASE("pending case is stable until submitted") {
    fixture::TempDir dir("pending");
    ReviewService svc(make_items(4), config(dir / "log.jsonl", {"r1", "r2"}));
    const auto a = svc.next_case("r1");
    const auto b = svc.next_case("r1");
    REQUIRE(a);
    CHECK(a->to_json() == b->to_json());
    CHECK_THROWS_AS(svc.next_case("intruder"), AuthError);
    CHECK(svc.progress("r1").reviewed == 0);
    CHECK(svc.progress("r1").total == 4);
    svc.submit("r1", uniform_submission(*a, 4));
    CHECK(svc.progress("r1").reviewed == 1);
    CHECK(svc.next_case("r1")->case_id != a->case_id);
  }

  TEST_CASE("duplicates, idempotency and unknown cases") {
    fixture::TempDir dir("dup");
    ReviewService svc(make_items(3), config(dir / "log.jsonl", {"r1"}));
    const auto c = svc.next_case("r1");
    auto sub = uniform_submission(*c, 4);
    sub.idempotency_key = "k-1";
    const auto first = svc.submit("r1", sub);
    CHECK_FALSE(first.replayed);
    const auto again = svc.submit("r1", sub);
    CHECK(again.replayed);
    CHECK(again.seq == first.seq);
    sub.idempotency_key.reset();
    CHECK_THROWS_AS(svc.submit("r1", sub), ConflictError);
    sub.case_id = "case-9999";
    CHECK_THROWS_AS(svc.submit("r1", sub), ValidationError);
    const auto next = svc.next_case("r1");
    auto other = uniform_submission(*next, 3);
    other.idempotency_key = "k-1";
    CHECK_THROWS_AS(svc.submit("r1", other), ConflictError);
    // Reviews logged: exactly one.
    std::size_t reviews = 0;
    for (const auto& e : read_event_log(dir / "log.jsonl")) reviews += e.type == "review";
    CHECK(reviews == 1);
  }

  TEST_CASE("a case not served to the reviewer is rejected") {
    fixture::TempDir dir("unserved");
    ReviewService svc(make_items(3), config(dir / "log.jsonl", {"r1"}));
    BlindCase fake;
    fake.case_id = "case-1002";
    CHECK_THROWS_AS(svc.submit("r1", uniform_submission(fake, 4)), ValidationError);
  }

  TEST_CASE("ratings average reviewers per case") {
    fixture::TempDir dir("avg");
    ReviewService svc(make_items(1), config(dir / "log.jsonl", {"r1", "r2"}));
    int score = 4;
    for (const char* tok : {"r1", "r2"}) {
      const auto c = svc.next_case(tok);
      svc.submit(tok, uniform_submission(*c, score++));
    }
    const auto table = svc.ratings();
    REQUIRE(table.cases.size() == 1);
    for (const auto& arm : table.cases[0].arms) {
      CHECK(arm.mean[0] == 4.5);
      CHECK(arm.reviewers == 2);
    }
    CHECK(table.reviewers == 2);
    CHECK_FALSE(svc.next_case("r1"));
  }

  TEST_CASE("replayed log reproduces the reported panel means") {
    // 100 cases x 5 reviewers; the score totals reproduce SFT 4.04/4.17/4.21
    // with 18.6% hallucination and GRPO 3.99/4.08/4.09 with 15.0%.
    fixture::TempDir dir("fig");
    const std::vector<std::string> tokens{"r1", "r2", "r3", "r4", "r5"};
    ReviewService svc(make_items(100), config(dir / "log.jsonl", tokens));
    const std::array<std::array<int, 3>, 2> bumps{{{20, 85, 105}, {-5, 40, 45}}};
    const std::array<int, 2> flags{93, 75};
    int r = 0;
    for (const auto& tok : tokens) {
      while (const auto c = svc.next_case(tok)) {
        ReviewSubmission s;
        s.case_id = c->case_id;
        for (int label = 0; label < 3; ++label) {
          const int arm = arm_of(c->responses[static_cast<std::size_t>(label)]);
          ArmScores& a = s.scores[static_cast<std::size_t>(label)];
          a = ArmScores{5, 5, 5, false};
          if (arm < 2) {
            const auto& b = bumps[static_cast<std::size_t>(arm)];
            auto dim = [&](int bump) { return bump >= 0 ? 4 + (r < bump) : 4 - (r < -bump); };
            a = ArmScores{dim(b[0]), dim(b[1]), dim(b[2]), r < flags[static_cast<std::size_t>(arm)]};
          }
        }
        s.best_pick = 0;
        svc.submit(tok, s);
        ++r;
      }
    }
    REQUIRE(r == 500);
    const auto live = build_stats_report(svc.ratings(), "SFT", "GRPO");
    const auto replay = build_stats_report(unblind_and_export(dir / "log.jsonl"), "SFT", "GRPO");
    CHECK(to_json(live).dump() == to_json(replay).dump());
    REQUIRE(live.tests.size() == 3);
    CHECK(live.tests[0].mean_a == doctest::Approx(4.04).epsilon(1e-12));
    CHECK(live.tests[1].mean_a == doctest::Approx(4.17).epsilon(1e-12));
    CHECK(live.tests[2].mean_a == doctest::Approx(4.21).epsilon(1e-12));
    CHECK(live.tests[0].mean_b == doctest::Approx(3.99).epsilon(1e-12));
    CHECK(live.tests[1].mean_b == doctest::Approx(4.08).epsilon(1e-12));
    CHECK(live.tests[2].mean_b == doctest::Approx(4.09).epsilon(1e-12));
    CHECK(live.hallucination_rate[0] == doctest::Approx(0.186));
    CHECK(live.hallucination_rate[1] == doctest::Approx(0.150));
  }

  TEST_CASE("permutations are uniform") {
    fixture::TempDir dir("perm");
    ReviewService svc(make_items(3000), config(dir / "log.jsonl", {"r1"}));
    while (const auto c = svc.next_case("r1")) svc.submit("r1", uniform_submission(*c, 3));
    std::vector<std::size_t> counts(6, 0);
    for (const auto& e : read_event_log(dir / "log.jsonl")) {
      if (e.type == "serve") ++counts[e.body["permutation"].get<std::size_t>()];
    }
    CHECK(std::accumulate(counts.begin(), counts.end(), std::size_t{0}) == 3000);
    CHECK(chi_square_uniform_p(counts) > 0.001);
  }

  TEST_CASE("log chain verification") {
    fixture::TempDir dir("chain");
    {
      ReviewService svc(make_items(3), config(dir / "log.jsonl", {"r1"}));
      while (const auto c = svc.next_case("r1")) svc.submit("r1", uniform_submission(*c, 4));
    }
    const auto lines = read_lines(dir / "log.jsonl");
    REQUIRE(lines.size() == 7);
    const auto events = read_event_log(dir / "log.jsonl");
    CHECK(events.front().type == "open");
    CHECK(events.front().body["prev_hash"] == std::string(kGenesisHash));
    CHECK(events[1].body["prev_hash"] == events[0].body["hash"]);
    const auto review = nlohmann::ordered_json::parse(lines[2]);
    std::vector<std::string> keys;
    for (auto& [k, v] : review.items()) keys.push_back(k);
    CHECK(keys == std::vector<std::string>{"seq", "type", "timestamp", "reviewer", "case_id", "permutation",
                                           "scores", "best_pick", "idempotency_key", "prev_hash", "hash"});

    auto tampered = lines;
    const auto pos = tampered[4].find("\"accuracy\":4");
    REQUIRE(pos != std::string::npos);
    tampered[4].replace(pos, 12, "\"accuracy\":5");
    {
      std::ofstream out(dir / "bad.jsonl");
      for (const auto& l : tampered) out << l << '\n';
    }
    CHECK_THROWS_WITH_AS(read_event_log(dir / "bad.jsonl"), doctest::Contains("sequence 4"), ValidationError);

    auto dropped = lines;
    dropped.erase(dropped.begin() + 3);
    {
      std::ofstream out(dir / "gap.jsonl");
      for (const auto& l : dropped) out << l << '\n';
    }
    CHECK_THROWS_WITH_AS(read_event_log(dir / "gap.jsonl"), doctest::Contains("sequence"), ValidationError);
  }

  TEST_CASE("a resumed service continues the same stream") {
    fixture::TempDir dir("resume");
    std::vector<std::string> straight, resumed;
    {
      ReviewService svc(make_items(6), config(dir / "a.jsonl", {"r1"}));
      while (const auto c = svc.next_case("r1")) {
        straight.push_back(c->to_json().dump());
        svc.submit("r1", uniform_submission(*c, 4));
      }
    }
    {
      ReviewService svc(make_items(6), config(dir / "b.jsonl", {"r1"}));
      for (int i = 0; i < 3; ++i) {
        const auto c = svc.next_case("r1");
        resumed.push_back(c->to_json().dump());
        svc.submit("r1", uniform_submission(*c, 4));
      }
    }
    {
      ReviewService svc(make_items(6), config(dir / "b.jsonl", {"r1"}));
      CHECK(svc.progress("r1").reviewed == 3);
      while (const auto c = svc.next_case("r1")) {
        resumed.push_back(c->to_json().dump());
        svc.submit("r1", uniform_submission(*c, 4));
      }
    }
    CHECK(straight == resumed);
    std::ifstream a(dir / "a.jsonl"), b(dir / "b.jsonl");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK_THROWS_AS(ReviewService(make_items(5), config(dir / "b.jsonl", {"r1"})), ValidationError);
  }

  TEST_CASE("HTTP round trip") {
    fixture::TempDir dir("http");
    ReviewService svc(make_items(2), config(dir / "log.jsonl", {"r1"}));
    ReviewHttpServer server(svc, ReviewHttpOptions{});
    server.start();
    httplib::Client cli("127.0.0.1", server.port());
    const httplib::Headers reviewer{{"X-Reviewer-Token", "r1"}};

    auto res = cli.Get("/api/session/next", httplib::Headers{{"X-Reviewer-Token", "nope"}});
    REQUIRE(res);
    CHECK(res->status == 401);

    res = cli.Get("/api/session/next", reviewer);
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto served = nlohmann::json::parse(res->body);
    CHECK(served["arms"].size() == 3);
    const std::string case_id = served["case_id"];

    auto body = valid_body();
    body["case_id"] = case_id;
    httplib::Headers with_key = reviewer;
    with_key.emplace("Idempotency-Key", "abc");
    res = cli.Post("/api/review", with_key, body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    auto ack = nlohmann::json::parse(res->body);
    CHECK(ack["status"] == "recorded");
    CHECK(ack["replayed"] == false);
    CHECK_FALSE(ack.contains("permutation"));
    res = cli.Post("/api/review", with_key, body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(nlohmann::json::parse(res->body)["replayed"] == true);
    res = cli.Post("/api/review", reviewer, body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 409);
    body["scores"]["A"]["accuracy"] = 0;
    res = cli.Post("/api/review", reviewer, body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(nlohmann::json::parse(res->body)["message"].get<std::string>().find("scores.A.accuracy") !=
          std::string::npos);
    res = cli.Post("/api/review", reviewer, "{not json", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    res = cli.Get("/api/progress", reviewer);
    REQUIRE(res);
    CHECK(nlohmann::json::parse(res->body) == nlohmann::json{{"reviewed", 1}, {"total", 2}});

    res = cli.Get("/api/report", reviewer);
    REQUIRE(res);
    CHECK(res->status == 403);
    res = cli.Get("/api/report", httplib::Headers{{"X-Operator-Token", "op-secret"}});
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(nlohmann::json::parse(res->body).contains("tests"));

    res = cli.Get("/api/schema/review_event");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(nlohmann::json::parse(res->body) == nlohmann::json(review_event_schema()));
    res = cli.Get("/api/schema/other");
    REQUIRE(res);
    CHECK(res->status == 404);
    server.stop();
  }
}
