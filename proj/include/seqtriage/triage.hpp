#pragma once

// Stateful sequential evaluation of one patient at a time. Sessions are a
// thin view over evaluate_stage: every verdict is computed by
// predict_stage(), the same function the CLI uses.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqtriage/dataio.hpp"
#include "seqtriage/model.hpp"

namespace seqtriage {

// Verdict for `stage` given raw named features of stages 1..stage. Applies
// the document's standardization and maps layout stage to parameter stage.
StageDecision predict_stage(const ModelDocument& doc, int stage,
                            const std::map<std::string, double>& features);

nlohmann::ordered_json decision_to_json(const StageDecision& d);
nlohmann::ordered_json describe_model(const ModelDocument& doc);

struct AuditEvent {
  std::string timestamp;  // UTC, ISO 8601
  std::string event;      // created, stage_submitted, replayed, rejected
  int stage = 0;
  std::string detail;
};

struct StageSubmission {
  int stage = 0;
  std::map<std::string, double> features;  // new features of this stage only
  StageDecision decision;
  std::optional<std::string> request_token;
};

struct TriageSession {
  std::string id;
  std::string model_id;
  int current_stage = 1;  // next stage awaited; last decided stage once closed
  std::string status;     // awaiting_stage_<k>, closed_healthy, closed_sick
  std::vector<StageSubmission> submissions;
  std::vector<AuditEvent> audit;

  bool closed() const { return status.rfind("closed_", 0) == 0; }
};

nlohmann::ordered_json session_to_json(const TriageSession& s);
TriageSession session_from_json(const nlohmann::ordered_json& j);

struct SubmitOutcome {
  StageDecision decision;
  std::string status;
  bool replayed = false;  // request_token matched an earlier submission
};

class TriageEngine {
 public:
  using Clock = std::function<std::string()>;

  // The first model becomes the default for create_session without an id.
  explicit TriageEngine(std::vector<ModelDocument> models, Clock clock = {});

  const ModelDocument& model(const std::optional<std::string>& model_id = {}) const;

  TriageSession create_session(const std::optional<std::string>& model_id = {});
  SubmitOutcome submit_stage(const std::string& session_id, int stage,
                             const std::map<std::string, double>& features,
                             const std::optional<std::string>& request_token = {});
  TriageSession get_session(const std::string& session_id) const;
  std::size_t session_count() const;

  void save_snapshot(const std::filesystem::path& path) const;
  // Replaces all sessions with the file's contents.
  void load_snapshot(const std::filesystem::path& path);

 private:
  struct Slot {
    mutable std::mutex mu;
    TriageSession session;
  };
  std::shared_ptr<Slot> slot(const std::string& session_id) const;
  std::string new_session_id();

  std::map<std::string, ModelDocument> models_;
  std::string default_model_;
  Clock clock_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::mutex id_mu_;
  std::uint64_t id_state_;
};

std::string utc_timestamp();

}  // namespace seqtriage
