#include "seqtriage/server.hpp"

#include <spdlog/spdlog.h>

#include "httplib.h"
#include "seqtriage/errors.hpp"

namespace seqtriage {

using ordered_json = nlohmann::ordered_json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found:
      return 404;
    case ErrorCode::conflict:
      return 409;
    case ErrorCode::validation:
    case ErrorCode::dimension_mismatch:
    case ErrorCode::consistency:
    case ErrorCode::degenerate_data:
    case ErrorCode::schema:
      return 422;
    case ErrorCode::io:
      break;
  }
  return 500;
}

namespace {

void send_json(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  send_json(res, http_status(e.code()),
            {{"code", std::string(to_string(e.code()))}, {"message", e.what()}, {"detail", e.detail()}});
}

ordered_json parse_body(const httplib::Request& req, bool allow_empty) {
  if (req.body.empty() && allow_empty) return ordered_json::object();
  ordered_json j = ordered_json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(ErrorCode::validation, "request body must be a JSON object");
  }
  return j;
}

// Wraps a handler so library errors become structured responses.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      spdlog::debug("{} {} -> {}: {}", req.method, req.path, to_string(e.code()), e.what());
      send_error(res, e);
    } catch (const std::exception& e) {
      spdlog::error("{} {} failed: {}", req.method, req.path, e.what());
      send_json(res, 500, {{"code", "internal"}, {"message", e.what()}, {"detail", ""}});
    }
  };
}

}  // namespace

struct TriageServer::Impl {
  TriageEngine& engine;
  httplib::Server http;
  explicit Impl(TriageEngine& e) : engine(e) {}
};

TriageServer::TriageServer(TriageEngine& engine) : impl_(std::make_unique<Impl>(engine)) {
  auto& http = impl_->http;
  TriageEngine& eng = engine;

  http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                            {"Access-Control-Allow-Headers", "Content-Type"},
                            {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  http.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  http.Post("/sessions", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
              const ordered_json body = parse_body(req, true);
              std::optional<std::string> model_id;
              if (body.contains("model_id") && !body["model_id"].is_null()) {
                if (!body["model_id"].is_string()) {
                  throw Error(ErrorCode::validation, "model_id must be a string");
                }
                model_id = body["model_id"].get<std::string>();
              }
              const TriageSession s = eng.create_session(model_id);
              send_json(res, 201,
                        {{"session_id", s.id},
                         {"model_id", s.model_id},
                         {"current_stage", s.current_stage},
                         {"status", s.status}});
            }));

  http.Post(R"(/sessions/([^/]+)/stages/(\d+))",
            guarded([&eng](const httplib::Request& req, httplib::Response& res) {
              const std::string id = req.matches[1];
              int stage = 0;
              try {
                stage = std::stoi(req.matches[2]);
              } catch (const std::exception&) {
                throw Error(ErrorCode::validation, "stage is not an integer", req.matches[2]);
              }
              const ordered_json body = parse_body(req, false);
              if (!body.contains("features") || !body["features"].is_object()) {
                throw Error(ErrorCode::validation, "features must be an object of name: number");
              }
              std::map<std::string, double> features;
              for (const auto& [name, v] : body["features"].items()) {
                if (!v.is_number()) throw Error(ErrorCode::validation, "feature is not numeric", name);
                features[name] = v.get<double>();
              }
              std::optional<std::string> token;
              if (body.contains("request_token") && !body["request_token"].is_null()) {
                if (!body["request_token"].is_string()) {
                  throw Error(ErrorCode::validation, "request_token must be a string");
                }
                token = body["request_token"].get<std::string>();
              }
              const SubmitOutcome out = eng.submit_stage(id, stage, features, token);
              ordered_json j = decision_to_json(out.decision);
              j["status"] = out.status;
              j["session_id"] = id;
              j["replayed"] = out.replayed;
              send_json(res, 200, j);
            }));

  http.Get(R"(/sessions/([^/]+))",
           guarded([&eng](const httplib::Request& req, httplib::Response& res) {
             send_json(res, 200, session_to_json(eng.get_session(req.matches[1])));
           }));

  http.Get("/model", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
             std::optional<std::string> model_id;
             if (req.has_param("model_id")) model_id = req.get_param_value("model_id");
             send_json(res, 200, describe_model(eng.model(model_id)));
           }));

  http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.status == 404 && res.body.empty()) {
      send_json(res, 404, {{"code", "not_found"}, {"message", "no such route"}, {"detail", ""}});
    }
  });
}

TriageServer::~TriageServer() { stop(); }

int TriageServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->http.bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorCode::io, "cannot bind", host);
    return bound;
  }
  if (!impl_->http.bind_to_port(host, port)) {
    throw Error(ErrorCode::io, "cannot bind", host + ":" + std::to_string(port));
  }
  return port;
}

bool TriageServer::listen() { return impl_->http.listen_after_bind(); }

void TriageServer::wait_until_ready() const { impl_->http.wait_until_ready(); }

void TriageServer::stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

}  // namespace seqtriage
