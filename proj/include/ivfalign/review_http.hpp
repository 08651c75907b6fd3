#pragma once

// HTTP front end for ReviewService.
//
//   GET  /api/session/next   X-Reviewer-Token   -> BlindCase | {"status":"complete"}
//   POST /api/review         X-Reviewer-Token   -> {"status","seq","case_id","replayed"}
//        body: ReviewSubmission; an Idempotency-Key header fills idempotency_key
//   GET  /api/progress       X-Reviewer-Token   -> {"reviewed","total"}
//   GET  /api/report         X-Operator-Token   -> stats report of the first two arms
//   GET  /api/schema/<name>  blind_case | review_submission | review_event
//
// Errors are {"error": category, "message": ...} with 400 validation,
// 401 auth, 403 forbidden, 404 unknown route, 409 conflict.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "ivfalign/review.hpp"

namespace ivfalign {

struct ReviewHttpOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  std::optional<std::filesystem::path> static_dir;
  PickAggregation pick_mode = PickAggregation::PickLevel;
};

class ReviewHttpServer {
 public:
  ReviewHttpServer(ReviewService& service, ReviewHttpOptions opts);
  ~ReviewHttpServer();
  ReviewHttpServer(const ReviewHttpServer&) = delete;
  ReviewHttpServer& operator=(const ReviewHttpServer&) = delete;

  /// Binds the socket; returns the bound port.
  int bind();
  /// Serves until stop(); call bind() first.
  void run();
  /// Binds and serves on a background thread.
  void start();
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string host_;
  int port_ = 0;
};

}  // namespace ivfalign
