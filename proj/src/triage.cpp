#include "seqtriage/triage.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <random>

#include "seqtriage/errors.hpp"
#include "seqtriage/random.hpp"

namespace seqtriage {

using ordered_json = nlohmann::ordered_json;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

StageDecision predict_stage(const ModelDocument& doc, int stage,
                            const std::map<std::string, double>& features) {
  const auto pstage = doc.parameter_stage(stage);
  if (!pstage) {
    throw Error(ErrorCode::validation, "model does not cover this stage",
                "stage " + std::to_string(stage));
  }
  Eigen::VectorXd x = assemble_features(doc.layout, stage, features);
  if (doc.standardization) x = doc.standardization->apply(x);
  StageDecision d = evaluate_stage(doc.params, *pstage, x);
  d.stage = stage;
  return d;
}

ordered_json decision_to_json(const StageDecision& d) {
  ordered_json probs = ordered_json::array();
  for (double p : d.category_probabilities) probs.push_back(p);
  return {{"stage", d.stage},
          {"linear_predictor", d.linear_predictor},
          {"pi", d.pi},
          {"category_probabilities", probs},
          {"prob_lower", d.prob_lower},
          {"prob_upper", d.prob_upper},
          {"label", label_value(d.label)},
          {"action", std::string(action_text(d.action))}};
}

namespace {

StageDecision decision_from_json(const ordered_json& j) {
  StageDecision d;
  d.stage = j.at("stage").get<int>();
  d.linear_predictor = j.at("linear_predictor").get<double>();
  d.pi = j.at("pi").get<double>();
  d.category_probabilities = j.at("category_probabilities").get<std::vector<double>>();
  d.prob_lower = j.at("prob_lower").get<double>();
  d.prob_upper = j.at("prob_upper").get<double>();
  d.label = label_from_value(j.at("label").get<double>());
  const std::string a = j.at("action").get<std::string>();
  if (a == action_text(Action::stop_healthy)) {
    d.action = Action::stop_healthy;
  } else if (a == action_text(Action::stop_sick)) {
    d.action = Action::stop_sick;
  } else if (a == action_text(Action::advance)) {
    d.action = Action::advance;
  } else {
    throw Error(ErrorCode::schema, "unknown action", a);
  }
  return d;
}

std::string awaiting(int stage) { return "awaiting_stage_" + std::to_string(stage); }

}  // namespace

ordered_json describe_model(const ModelDocument& doc) {
  ordered_json stages = ordered_json::array();
  for (int k = 1; k <= doc.layout.stages(); ++k) {
    const auto pstage = doc.parameter_stage(k);
    ordered_json s;
    s["stage"] = k;
    s["terminal"] = k == doc.layout.stages();
    s["features"] = doc.layout.input_feature_names(k);
    s["available"] = pstage.has_value();
    if (pstage) {
      const Band c = doc.params.cutoffs(*pstage);
      if (doc.params.is_terminal(*pstage)) {
        s["latent_cutoffs"] = {{"cut", c.lower}};
        s["probability_cutoffs"] = {{"cut", logistic_cdf(c.lower)}};
      } else {
        s["latent_cutoffs"] = {{"lower", c.lower}, {"upper", c.upper}};
        s["probability_cutoffs"] = {{"lower", logistic_cdf(c.lower)},
                                    {"upper", logistic_cdf(c.upper)}};
      }
    }
    stages.push_back(s);
  }
  return {{"model_id", doc.model_id},
          {"schema", kModelSchema},
          {"method", std::string(to_string(doc.fit.method))},
          {"baseline_stage", doc.fit.baseline_stage},
          {"stage_count", doc.layout.stages()},
          {"standardized", doc.standardization.has_value()},
          {"stages", stages}};
}

ordered_json session_to_json(const TriageSession& s) {
  ordered_json subs = ordered_json::array();
  for (const StageSubmission& sub : s.submissions) {
    ordered_json features = ordered_json::object();
    for (const auto& [name, v] : sub.features) features[name] = v;
    subs.push_back({{"stage", sub.stage},
                    {"features", features},
                    {"decision", decision_to_json(sub.decision)},
                    {"request_token", sub.request_token ? ordered_json(*sub.request_token)
                                                        : ordered_json(nullptr)}});
  }
  ordered_json audit = ordered_json::array();
  for (const AuditEvent& e : s.audit) {
    audit.push_back(
        {{"timestamp", e.timestamp}, {"event", e.event}, {"stage", e.stage}, {"detail", e.detail}});
  }
  return {{"session_id", s.id},
          {"model_id", s.model_id},
          {"current_stage", s.current_stage},
          {"status", s.status},
          {"submissions", subs},
          {"audit", audit}};
}

TriageSession session_from_json(const ordered_json& j) {
  try {
    TriageSession s;
    s.id = j.at("session_id").get<std::string>();
    s.model_id = j.at("model_id").get<std::string>();
    s.current_stage = j.at("current_stage").get<int>();
    s.status = j.at("status").get<std::string>();
    for (const auto& sub : j.at("submissions")) {
      StageSubmission out;
      out.stage = sub.at("stage").get<int>();
      for (const auto& [name, v] : sub.at("features").items()) out.features[name] = v.get<double>();
      out.decision = decision_from_json(sub.at("decision"));
      if (!sub.at("request_token").is_null()) {
        out.request_token = sub.at("request_token").get<std::string>();
      }
      s.submissions.push_back(std::move(out));
    }
    for (const auto& e : j.at("audit")) {
      s.audit.push_back({e.at("timestamp").get<std::string>(), e.at("event").get<std::string>(),
                         e.at("stage").get<int>(), e.at("detail").get<std::string>()});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema, "malformed session snapshot", e.what());
  }
}

TriageEngine::TriageEngine(std::vector<ModelDocument> models, Clock clock)
    : clock_(clock ? std::move(clock) : Clock(utc_timestamp)) {
  if (models.empty()) throw Error(ErrorCode::validation, "triage engine needs at least one model");
  for (ModelDocument& m : models) {
    m.validate();
    if (m.fit.method != FitMethod::joint) {
      throw Error(ErrorCode::validation, "sessions need a joint model covering every stage",
                  m.model_id);
    }
    if (default_model_.empty()) default_model_ = m.model_id;
    const std::string id = m.model_id;
    if (!models_.emplace(id, std::move(m)).second) {
      throw Error(ErrorCode::validation, "duplicate model id", id);
    }
  }
  std::random_device rd;
  id_state_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

const ModelDocument& TriageEngine::model(const std::optional<std::string>& model_id) const {
  const auto it = models_.find(model_id.value_or(default_model_));
  if (it == models_.end()) throw Error(ErrorCode::not_found, "unknown model", model_id.value_or(default_model_));
  return it->second;
}

std::string TriageEngine::new_session_id() {
  std::lock_guard lock(id_mu_);
  // splitmix64 over a randomly seeded counter
  const std::uint64_t z = mix64(id_state_ += 0x9e3779b97f4a7c15ULL);
  char buf[24];
  std::snprintf(buf, sizeof buf, "s-%016llx", static_cast<unsigned long long>(z));
  return buf;
}

TriageSession TriageEngine::create_session(const std::optional<std::string>& model_id) {
  const ModelDocument& doc = model(model_id);
  auto s = std::make_shared<Slot>();
  s->session.model_id = doc.model_id;
  s->session.current_stage = 1;
  s->session.status = awaiting(1);
  std::unique_lock lock(mu_);
  do {
    s->session.id = new_session_id();
  } while (sessions_.count(s->session.id));
  s->session.audit.push_back({clock_(), "created", 0, "model " + doc.model_id});
  sessions_.emplace(s->session.id, s);
  return s->session;
}

std::shared_ptr<TriageEngine::Slot> TriageEngine::slot(const std::string& session_id) const {
  std::shared_lock lock(mu_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorCode::not_found, "unknown session", session_id);
  return it->second;
}

SubmitOutcome TriageEngine::submit_stage(const std::string& session_id, int stage,
                                         const std::map<std::string, double>& features,
                                         const std::optional<std::string>& request_token) {
  const auto s = slot(session_id);
  std::lock_guard lock(s->mu);
  TriageSession& sess = s->session;

  if (request_token) {
    for (const StageSubmission& sub : sess.submissions) {
      if (sub.request_token != request_token) continue;
      if (sub.stage != stage) {
        throw Error(ErrorCode::conflict, "request token already used for another stage",
                    *request_token);
      }
      sess.audit.push_back({clock_(), "replayed", stage, *request_token});
      return {sub.decision, sess.status, true};
    }
  }

  auto reject = [&](ErrorCode code, const std::string& message, const std::string& detail) {
    sess.audit.push_back({clock_(), "rejected", stage, message + ": " + detail});
    throw Error(code, message, detail);
  };

  if (sess.closed()) reject(ErrorCode::conflict, "session is closed", sess.status);
  if (stage != sess.current_stage) {
    reject(ErrorCode::conflict, "out-of-order stage submission",
           "expected stage " + std::to_string(sess.current_stage) + ", got " +
               std::to_string(stage));
  }

  const ModelDocument& doc = model(sess.model_id);
  const std::vector<std::string> expected = doc.layout.input_feature_names(stage);
  for (const std::string& name : expected) {
    if (!features.count(name)) reject(ErrorCode::validation, "missing feature", name);
  }
  for (const auto& [name, v] : features) {
    if (std::find(expected.begin(), expected.end(), name) == expected.end()) {
      reject(ErrorCode::validation, "unexpected feature for this stage", name);
    }
  }

  std::map<std::string, double> cumulative;
  for (const StageSubmission& sub : sess.submissions) {
    cumulative.insert(sub.features.begin(), sub.features.end());
  }
  cumulative.insert(features.begin(), features.end());

  StageDecision d;
  try {
    d = predict_stage(doc, stage, cumulative);
  } catch (const Error& e) {
    reject(e.code(), e.what(), e.detail());
  }

  // Every check has passed; commit all state changes together.
  sess.submissions.push_back({stage, features, d, request_token});
  switch (d.action) {
    case Action::advance:
      sess.current_stage = stage + 1;
      sess.status = awaiting(stage + 1);
      break;
    case Action::stop_healthy:
      sess.status = "closed_healthy";
      break;
    case Action::stop_sick:
      sess.status = "closed_sick";
      break;
  }
  sess.audit.push_back({clock_(), "stage_submitted", stage,
                        "label " + std::string(label_text(d.label)) + ", action " +
                            std::string(action_text(d.action))});
  return {d, sess.status, false};
}

TriageSession TriageEngine::get_session(const std::string& session_id) const {
  const auto s = slot(session_id);
  std::lock_guard lock(s->mu);
  return s->session;
}

std::size_t TriageEngine::session_count() const {
  std::shared_lock lock(mu_);
  return sessions_.size();
}

void TriageEngine::save_snapshot(const std::filesystem::path& path) const {
  std::vector<std::shared_ptr<Slot>> slots;
  {
    std::shared_lock lock(mu_);
    for (const auto& [id, s] : sessions_) slots.push_back(s);
  }
  ordered_json arr = ordered_json::array();
  for (const auto& s : slots) {
    std::lock_guard lock(s->mu);
    arr.push_back(session_to_json(s->session));
  }
  ordered_json doc = {{"schema", "seqtriage-sessions/1"}, {"sessions", arr}};
  write_file_atomic(path, doc.dump(2) + "\n");
}

void TriageEngine::load_snapshot(const std::filesystem::path& path) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema, "session snapshot is not valid JSON", e.what());
  }
  if (!doc.is_object() || doc.value("schema", "") != "seqtriage-sessions/1" ||
      !doc.contains("sessions")) {
    throw Error(ErrorCode::schema, "not a session snapshot", path.string());
  }
  std::map<std::string, std::shared_ptr<Slot>> loaded;
  for (const auto& j : doc["sessions"]) {
    auto s = std::make_shared<Slot>();
    s->session = session_from_json(j);
    model(s->session.model_id);
    loaded.emplace(s->session.id, std::move(s));
  }
  std::unique_lock lock(mu_);
  sessions_ = std::move(loaded);
}

}  // namespace seqtriage
