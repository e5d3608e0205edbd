#include "seqtriage/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "seqtriage/errors.hpp"

namespace seqtriage {

double label_value(Label label) {
  switch (label) {
    case Label::healthy: return 0.0;
    case Label::indeterminate: return 0.5;
    case Label::sick: return 1.0;
  }
  return 0.0;
}

std::string_view label_text(Label label) {
  switch (label) {
    case Label::healthy: return "0";
    case Label::indeterminate: return "0.5";
    case Label::sick: return "1";
  }
  return "0";
}

int label_index(Label label) { return static_cast<int>(label); }

Label label_from_value(double value) {
  if (value == 0.0) return Label::healthy;
  if (value == 0.5) return Label::indeterminate;
  if (value == 1.0) return Label::sick;
  throw Error(ErrorCode::validation, "label must be 0, 0.5 or 1", std::to_string(value));
}

std::optional<Label> parse_label(std::string_view text) {
  if (text == "0" || text == "0.0") return Label::healthy;
  if (text == "0.5" || text == ".5") return Label::indeterminate;
  if (text == "1" || text == "1.0") return Label::sick;
  return std::nullopt;
}

std::string_view action_text(Action action) {
  switch (action) {
    case Action::stop_healthy: return "stop_healthy";
    case Action::stop_sick: return "stop_sick";
    case Action::advance: return "advance";
  }
  return "advance";
}

// ---------------------------------------------------------------------------
// StageLayout

StageLayout::StageLayout(std::vector<int> new_feature_counts,
                         std::vector<std::string> feature_names, bool intercept_included)
    : new_counts_(std::move(new_feature_counts)),
      names_(std::move(feature_names)),
      intercept_(intercept_included) {
  if (new_counts_.size() < 2) {
    throw Error(ErrorCode::validation, "a layout needs at least two stages");
  }
  for (std::size_t k = 0; k < new_counts_.size(); ++k) {
    if (new_counts_[k] < 1) {
      throw Error(ErrorCode::validation, "every stage must add at least one feature",
                  "stage " + std::to_string(k + 1));
    }
  }
  const int total = std::accumulate(new_counts_.begin(), new_counts_.end(), 0);
  if (static_cast<int>(names_.size()) != total) {
    throw Error(ErrorCode::validation, "feature name count does not match stage feature counts",
                std::to_string(names_.size()) + " names for " + std::to_string(total) +
                    " features");
  }
  if (intercept_ && names_.front() != kInterceptName) {
    throw Error(ErrorCode::validation, "intercept layout must start with the intercept feature");
  }
  std::vector<std::string> sorted = names_;
  std::sort(sorted.begin(), sorted.end());
  if (auto dup = std::adjacent_find(sorted.begin(), sorted.end()); dup != sorted.end()) {
    throw Error(ErrorCode::validation, "duplicate feature name", *dup);
  }
}

StageLayout StageLayout::with_intercept() const {
  if (intercept_) return *this;
  std::vector<int> counts = new_counts_;
  counts.front() += 1;
  std::vector<std::string> names;
  names.reserve(names_.size() + 1);
  names.emplace_back(kInterceptName);
  names.insert(names.end(), names_.begin(), names_.end());
  return StageLayout(std::move(counts), std::move(names), true);
}

void StageLayout::check_stage(int stage) const {
  if (stage < 1 || stage > stages()) {
    throw Error(ErrorCode::validation, "stage out of range",
                "stage " + std::to_string(stage) + " of " + std::to_string(stages()));
  }
}

int StageLayout::new_features(int stage) const {
  check_stage(stage);
  return new_counts_[stage - 1];
}

int StageLayout::cumulative_features(int stage) const {
  check_stage(stage);
  return std::accumulate(new_counts_.begin(), new_counts_.begin() + stage, 0);
}

std::vector<std::string> StageLayout::stage_feature_names(int stage) const {
  const int end = cumulative_features(stage);
  const int begin = end - new_features(stage);
  return {names_.begin() + begin, names_.begin() + end};
}

std::vector<std::string> StageLayout::input_feature_names(int stage) const {
  auto names = stage_feature_names(stage);
  if (intercept_ && stage == 1) names.erase(names.begin());
  return names;
}

std::vector<Eigen::Index> StageLayout::stage_widths() const {
  std::vector<Eigen::Index> widths;
  for (int k = 1; k <= stages(); ++k) widths.push_back(cumulative_features(k));
  return widths;
}

// ---------------------------------------------------------------------------
// Parameters

Parameters Parameters::for_layout(const StageLayout& layout, Eigen::VectorXd beta,
                                  std::vector<Band> bands, double final_cut) {
  Parameters p{layout.stage_widths(), std::move(beta), std::move(bands), final_cut};
  p.validate();
  return p;
}

bool Parameters::is_terminal(int stage) const {
  return final_cut.has_value() && stage == stage_count();
}

Eigen::Index Parameters::width(int stage) const {
  if (stage < 1 || stage > stage_count()) {
    throw Error(ErrorCode::validation, "stage out of range for parameters",
                "stage " + std::to_string(stage));
  }
  return stage_widths[stage - 1];
}

Band Parameters::cutoffs(int stage) const {
  width(stage);
  if (is_terminal(stage)) return {*final_cut, *final_cut};
  return bands[stage - 1];
}

std::size_t Parameters::free_parameter_count() const {
  return static_cast<std::size_t>(beta.size()) + 2 * bands.size() + (final_cut ? 1 : 0);
}

void Parameters::validate() const {
  if (stage_widths.empty()) {
    throw Error(ErrorCode::validation, "parameters have no stages");
  }
  Eigen::Index prev = 0;
  for (Eigen::Index w : stage_widths) {
    if (w <= prev) throw Error(ErrorCode::validation, "stage widths must strictly increase");
    prev = w;
  }
  if (beta.size() != stage_widths.back()) {
    throw Error(ErrorCode::validation, "coefficient vector length does not match layout",
                std::to_string(beta.size()) + " vs " + std::to_string(stage_widths.back()));
  }
  const std::size_t expected_bands = stage_widths.size() - (final_cut ? 1 : 0);
  if (bands.size() != expected_bands) {
    throw Error(ErrorCode::validation, "number of cutoff bands does not match stage count");
  }
  for (std::size_t k = 0; k < bands.size(); ++k) {
    const Band& b = bands[k];
    if (!std::isfinite(b.lower) || !std::isfinite(b.upper) || !(b.lower < b.upper)) {
      throw Error(ErrorCode::validation, "cutoffs must satisfy lower < upper",
                  "stage " + std::to_string(k + 1));
    }
  }
  if (final_cut && !std::isfinite(*final_cut)) {
    throw Error(ErrorCode::validation, "final cutoff must be finite");
  }
  if (!beta.allFinite()) throw Error(ErrorCode::validation, "coefficients must be finite");
}

bool Parameters::operator==(const Parameters& other) const {
  return stage_widths == other.stage_widths && beta.size() == other.beta.size() &&
         beta == other.beta && bands == other.bands && final_cut == other.final_cut;
}

// ---------------------------------------------------------------------------
// StageDataset

StageDataset::StageDataset(StageLayout layout, std::vector<PatientRecord> records)
    : layout_(std::move(layout)), records_(std::move(records)) {
  for (const PatientRecord& r : records_) {
    if (r.deepest_stage() < 1 || r.deepest_stage() > layout_.stages()) {
      throw Error(ErrorCode::validation, "record must reach between 1 and K stages", r.id);
    }
    for (int k = 1; k <= r.deepest_stage(); ++k) {
      if (r.features[k - 1].size() != layout_.new_features(k)) {
        throw Error(ErrorCode::dimension_mismatch,
                    "stage " + std::to_string(k) + " expects " +
                        std::to_string(layout_.new_features(k)) + " features",
                    r.id);
      }
      if (!r.features[k - 1].allFinite()) {
        throw Error(ErrorCode::validation, "non-finite feature value", r.id);
      }
    }
    if (!r.labels.empty() && static_cast<int>(r.labels.size()) != r.deepest_stage()) {
      throw Error(ErrorCode::validation, "one label slot per reached stage is required", r.id);
    }
  }
}

std::size_t StageDataset::stage_size(int stage) const {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(),
                    [stage](const PatientRecord& r) { return r.deepest_stage() >= stage; }));
}

std::vector<std::size_t> StageDataset::stage_members(int stage) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].deepest_stage() >= stage) out.push_back(i);
  }
  return out;
}

Eigen::VectorXd StageDataset::cumulative_features(std::size_t record, int stage) const {
  const PatientRecord& r = records_.at(record);
  if (stage > r.deepest_stage()) {
    throw Error(ErrorCode::validation, "record did not reach stage " + std::to_string(stage),
                r.id);
  }
  Eigen::VectorXd x(layout_.cumulative_features(stage));
  Eigen::Index offset = 0;
  for (int k = 1; k <= stage; ++k) {
    x.segment(offset, r.features[k - 1].size()) = r.features[k - 1];
    offset += r.features[k - 1].size();
  }
  return x;
}

void StageDataset::validate_training() const {
  const int last = layout_.stages();
  for (const PatientRecord& r : records_) {
    if (static_cast<int>(r.labels.size()) != r.deepest_stage()) {
      throw Error(ErrorCode::consistency, "training record is missing labels", r.id);
    }
    for (int k = 1; k <= r.deepest_stage(); ++k) {
      const auto& label = r.labels[k - 1];
      if (!label) {
        throw Error(ErrorCode::consistency,
                    "training record has no label at stage " + std::to_string(k), r.id);
      }
      const bool advanced = k < r.deepest_stage();
      if (k == last && *label == Label::indeterminate) {
        throw Error(ErrorCode::consistency, "final-stage label must be 0 or 1", r.id);
      }
      if (advanced && *label != Label::indeterminate) {
        throw Error(ErrorCode::consistency,
                    "record has stage " + std::to_string(k + 1) + " data but stage " +
                        std::to_string(k) + " label is not 0.5",
                    r.id);
      }
      if (!advanced && k < last && *label == Label::indeterminate) {
        throw Error(ErrorCode::consistency,
                    "record labelled 0.5 at stage " + std::to_string(k) + " has no stage " +
                        std::to_string(k + 1) + " data",
                    r.id);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Link function

double logistic_cdf(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double logistic_pdf(double t) {
  const double e = std::exp(-std::abs(t));
  const double d = 1.0 + e;
  return e / (d * d);
}

double logistic_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorCode::validation, "logistic quantile needs p in (0, 1)");
  }
  return std::log(p) - std::log1p(-p);
}

namespace {
// log(1 + e^x)
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
}  // namespace

double log_logistic_cdf(double t) { return -softplus(-t); }
double log_logistic_survival(double t) { return -softplus(t); }

// ---------------------------------------------------------------------------
// Stage evaluation

double linear_predictor(const Parameters& params, int stage,
                        const Eigen::Ref<const Eigen::VectorXd>& x) {
  const Eigen::Index w = params.width(stage);
  if (x.size() != w) {
    throw Error(ErrorCode::dimension_mismatch,
                "stage " + std::to_string(stage) + " expects a cumulative feature vector of length " +
                    std::to_string(w),
                "got " + std::to_string(x.size()));
  }
  return params.beta.head(w).dot(x);
}

std::vector<double> category_probabilities(const Parameters& params, int stage,
                                           const Eigen::Ref<const Eigen::VectorXd>& x) {
  const double eta = linear_predictor(params, stage, x);
  const Band c = params.cutoffs(stage);
  if (params.is_terminal(stage)) {
    const double p0 = logistic_cdf(c.lower - eta);
    return {p0, logistic_cdf(eta - c.lower)};
  }
  const double p0 = logistic_cdf(c.lower - eta);
  const double p1 = logistic_cdf(eta - c.upper);
  // Middle band from the stable factorisation F(a) - F(b) = F(a)(1 - F(b))(1 - e^(b - a)).
  const double a = c.upper - eta;
  const double b = c.lower - eta;
  const double mid = std::exp(log_logistic_cdf(a) + log_logistic_survival(b) +
                              std::log(-std::expm1(b - a)));
  return {p0, mid, p1};
}

Label classify_latent(double y_star, int stage, const Parameters& params) {
  const Band c = params.cutoffs(stage);
  if (params.is_terminal(stage)) return y_star < c.lower ? Label::healthy : Label::sick;
  if (y_star < c.lower) return Label::healthy;
  if (y_star < c.upper) return Label::indeterminate;
  return Label::sick;
}

StageDecision evaluate_stage(const Parameters& params, int stage,
                             const Eigen::Ref<const Eigen::VectorXd>& x) {
  StageDecision d;
  d.stage = stage;
  d.linear_predictor = linear_predictor(params, stage, x);
  d.pi = logistic_cdf(d.linear_predictor);
  d.category_probabilities = category_probabilities(params, stage, x);
  const Band c = params.cutoffs(stage);
  d.prob_lower = logistic_cdf(c.lower);
  d.prob_upper = logistic_cdf(c.upper);
  // The noise has median 0, so thresholding the predictor itself is the
  // deterministic decision; pi < F(L) is the same comparison on the
  // probability scale.
  d.label = classify_latent(d.linear_predictor, stage, params);
  switch (d.label) {
    case Label::healthy: d.action = Action::stop_healthy; break;
    case Label::sick: d.action = Action::stop_sick; break;
    case Label::indeterminate: d.action = Action::advance; break;
  }
  return d;
}

}  // namespace seqtriage
