#pragma once

// HTTP front end for TriageEngine.
//
//   POST /sessions                     {model_id?}                -> 201 session
//   POST /sessions/{id}/stages/{k}     {features, request_token?} -> decision + status
//   GET  /sessions/{id}                                           -> session snapshot
//   GET  /model                                                   -> model description
//
// Errors are {code, message, detail}: 404 unknown session or model, 409
// out-of-order or closed, 422 invalid input.

#include <memory>
#include <string>

#include "seqtriage/errors.hpp"
#include "seqtriage/triage.hpp"

namespace seqtriage {

int http_status(ErrorCode code);

class TriageServer {
 public:
  explicit TriageServer(TriageEngine& engine);
  ~TriageServer();
  TriageServer(const TriageServer&) = delete;
  TriageServer& operator=(const TriageServer&) = delete;

  // Binds `host`; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called.
  bool listen();
  void wait_until_ready() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace seqtriage
