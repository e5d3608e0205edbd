#pragma once

// Latent-variable model for a K-stage triage cascade.
//
// Each stage k observes the cumulative feature vector x (features of stages
// 1..k) and a latent score y* = beta_k' x + eps, eps ~ Logistic(0, 1). The
// coefficient vector of stage k is the first p_1 + ... + p_k entries of one
// shared vector, so later stages extend, never re-weight, earlier features.
//
// Non-final stages cut y* into three ordered labels with a band [L, U):
//   0 (healthy) if y* < L,  0.5 (indeterminate) if L <= y* < U,  1 if y* >= U.
// The final stage uses one cut C: 0 if y* < C, 1 otherwise.
//
// Stages are numbered from 1 throughout the public API.

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace seqtriage {

enum class Label : std::uint8_t { healthy = 0, indeterminate = 1, sick = 2 };

double label_value(Label label);          // 0, 0.5, 1
std::string_view label_text(Label label);  // "0", "0.5", "1"
int label_index(Label label);              // 0, 1, 2
Label label_from_value(double value);      // throws on anything but 0, 0.5, 1
std::optional<Label> parse_label(std::string_view text);

enum class Action : std::uint8_t { stop_healthy, stop_sick, advance };
std::string_view action_text(Action action);

inline constexpr std::string_view kInterceptName = "intercept";

class StageLayout {
 public:
  StageLayout() = default;
  // When intercept_included is true the first stage-1 feature must be named
  // "intercept"; it is a constant 1 injected at ingestion, never read from
  // input files. Free thresholds already absorb a constant, so enabling it
  // leaves one direction of the likelihood flat.
  StageLayout(std::vector<int> new_feature_counts,
              std::vector<std::string> feature_names,
              bool intercept_included = false);

  // Same layout with a leading constant feature prepended to stage 1.
  StageLayout with_intercept() const;

  int stages() const { return static_cast<int>(new_counts_.size()); }
  int new_features(int stage) const;
  int cumulative_features(int stage) const;
  int total_features() const { return cumulative_features(stages()); }
  int categories(int stage) const { return stage < stages() ? 3 : 2; }
  bool intercept_included() const { return intercept_; }

  const std::vector<int>& new_feature_counts() const { return new_counts_; }
  const std::vector<std::string>& feature_names() const { return names_; }
  // Names of the features newly collected at this stage.
  std::vector<std::string> stage_feature_names(int stage) const;
  // As above, minus the injected intercept.
  std::vector<std::string> input_feature_names(int stage) const;
  std::vector<Eigen::Index> stage_widths() const;

  bool operator==(const StageLayout&) const = default;

 private:
  void check_stage(int stage) const;

  std::vector<int> new_counts_;
  std::vector<std::string> names_;
  bool intercept_ = false;
};

struct Band {
  double lower = 0.0;
  double upper = 0.0;
  bool operator==(const Band&) const = default;
};

// Shared coefficients plus per-stage cutoffs on the latent scale.
//
// stage_widths[k-1] is the number of cumulative features at stage k; the
// stage-k coefficients are beta.head(stage_widths[k-1]). bands hold (L, U)
// for the ordinal stages, in order; final_cut is C for a terminal binary
// stage. A full K-stage model has K-1 bands and a final cut. A standalone
// single-stage model (used by the stagewise baseline) has either one band
// or only a final cut.
struct Parameters {
  std::vector<Eigen::Index> stage_widths;
  Eigen::VectorXd beta;
  std::vector<Band> bands;
  std::optional<double> final_cut;

  static Parameters for_layout(const StageLayout& layout, Eigen::VectorXd beta,
                               std::vector<Band> bands, double final_cut);

  int stage_count() const { return static_cast<int>(stage_widths.size()); }
  bool is_terminal(int stage) const;
  Eigen::Index width(int stage) const;
  // (L, U) for ordinal stages, (C, C) for the terminal stage.
  Band cutoffs(int stage) const;
  std::size_t free_parameter_count() const;

  // Throws Error(validation) unless the shape is coherent and every band has
  // lower < upper strictly.
  void validate() const;

  bool operator==(const Parameters& other) const;
};

struct PatientRecord {
  std::string id;
  // New features of each reached stage; features.size() is the deepest stage.
  std::vector<Eigen::VectorXd> features;
  // One entry per reached stage; absent at prediction time.
  std::vector<std::optional<Label>> labels;

  int deepest_stage() const { return static_cast<int>(features.size()); }
};

class StageDataset {
 public:
  StageDataset() = default;
  // Validates shapes only; label rules are checked by validate_training().
  StageDataset(StageLayout layout, std::vector<PatientRecord> records);

  const StageLayout& layout() const { return layout_; }
  const std::vector<PatientRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  // N_k and the indices of records reaching stage k, in record order.
  std::size_t stage_size(int stage) const;
  std::vector<std::size_t> stage_members(int stage) const;

  Eigen::VectorXd cumulative_features(std::size_t record, int stage) const;

  // Every reached stage is labelled, stage k+1 data is present exactly when
  // the stage-k label is 0.5, and final-stage labels are binary. Throws
  // Error(consistency) naming the first offending record.
  void validate_training() const;

 private:
  StageLayout layout_;
  std::vector<PatientRecord> records_;
};

double logistic_cdf(double t);
double logistic_pdf(double t);
double logistic_quantile(double p);
// log F(t) and log(1 - F(t)) without cancellation.
double log_logistic_cdf(double t);
double log_logistic_survival(double t);

double linear_predictor(const Parameters& params, int stage,
                        const Eigen::Ref<const Eigen::VectorXd>& x);

// (P(0), P(0.5), P(1)) for ordinal stages, (P(0), P(1)) for the terminal one.
std::vector<double> category_probabilities(const Parameters& params, int stage,
                                           const Eigen::Ref<const Eigen::VectorXd>& x);

Label classify_latent(double y_star, int stage, const Parameters& params);

// Decision for one patient at one stage. pi = F(beta' x) is the estimated
// probability of disease; prob_lower/prob_upper are the probability-scale
// cutoffs F(L), F(U) (both F(C) at the terminal stage).
struct StageDecision {
  int stage = 0;
  double linear_predictor = 0.0;
  double pi = 0.0;
  std::vector<double> category_probabilities;
  double prob_lower = 0.0;
  double prob_upper = 0.0;
  Label label = Label::healthy;
  Action action = Action::stop_healthy;
};

StageDecision evaluate_stage(const Parameters& params, int stage,
                             const Eigen::Ref<const Eigen::VectorXd>& x);

}  // namespace seqtriage
