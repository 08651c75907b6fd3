#include "ivfalign/review_http.hpp"

#include <thread>

#include <httplib.h>

#include "ivfalign/error.hpp"

namespace ivfalign {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& category,
                const std::string& message) {
  send_json(res, status, {{"error", category}, {"message", message}});
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const AuthError& e) {
    send_error(res, 401, "auth", e.what());
  } catch (const ValidationError& e) {
    send_error(res, 400, "validation", e.what());
  } catch (const ConflictError& e) {
    send_error(res, 409, "conflict", e.what());
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, "validation", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

}  // namespace

struct ReviewHttpServer::Impl {
  httplib::Server server;
  std::thread thread;
};

ReviewHttpServer::ReviewHttpServer(ReviewService& service, ReviewHttpOptions opts)
    : impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  const auto token = [](const httplib::Request& req, const char* header) {
    return req.get_header_value(header);
  };

  srv.Get("/api/session/next", [&service, token](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto c = service.next_case(token(req, "X-Reviewer-Token"));
      if (!c) {
        send_json(res, 200, {{"status", "complete"}});
      } else {
        send_json(res, 200, c->to_json());
      }
    });
  });

  srv.Post("/api/review", [&service, token](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string t = token(req, "X-Reviewer-Token");
      service.reviewer_id(t);
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception&) {
        throw ValidationError("review body is not valid JSON");
      }
      if (body.is_object() && req.has_header("Idempotency-Key") && !body.contains("idempotency_key")) {
        body["idempotency_key"] = req.get_header_value("Idempotency-Key");
      }
      const auto ack = service.submit(t, parse_submission(body));
      send_json(res, 200,
                {{"status", "recorded"}, {"seq", ack.seq}, {"case_id", ack.case_id}, {"replayed", ack.replayed}});
    });
  });

  srv.Get("/api/progress", [&service, token](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto p = service.progress(token(req, "X-Reviewer-Token"));
      send_json(res, 200, {{"reviewed", p.reviewed}, {"total", p.total}});
    });
  });

  const auto mode = opts.pick_mode;
  srv.Get("/api/report", [&service, token, mode](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!service.is_operator(token(req, "X-Operator-Token"))) {
        send_error(res, 403, "forbidden", "operator token required");
        return;
      }
      const auto& arms = service.arms();
      send_json(res, 200, to_json(build_stats_report(service.ratings(), arms[0], arms[1], mode)));
    });
  });

  srv.Get(R"(/api/schema/([a-z_]+))", [](const httplib::Request& req, httplib::Response& res) {
    const std::string name = req.matches[1];
    if (name == "blind_case") {
      send_json(res, 200, blind_case_schema());
    } else if (name == "review_submission") {
      send_json(res, 200, review_submission_schema());
    } else if (name == "review_event") {
      send_json(res, 200, review_event_schema());
    } else {
      send_error(res, 404, "not_found", "unknown schema '" + name + "'");
    }
  });

  if (opts.static_dir && !srv.set_mount_point("/", opts.static_dir->string())) {
    throw IoError("static directory '" + opts.static_dir->string() + "' does not exist");
  }
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, "http", "status " + std::to_string(res.status));
  });
  host_ = std::move(opts.host);
  port_ = opts.port;
}

ReviewHttpServer::~ReviewHttpServer() { stop(); }

int ReviewHttpServer::bind() {
  auto& srv = impl_->server;
  if (port_ == 0) {
    port_ = srv.bind_to_any_port(host_);
  } else if (!srv.bind_to_port(host_, port_)) {
    port_ = -1;
  }
  if (port_ < 0) throw IoError("cannot bind " + host_);
  return port_;
}

void ReviewHttpServer::run() { impl_->server.listen_after_bind(); }

void ReviewHttpServer::start() {
  bind();
  impl_->thread = std::thread([this] { run(); });
  impl_->server.wait_until_ready();
}

void ReviewHttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace ivfalign
