#include "seqtriage/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "seqtriage/errors.hpp"

namespace seqtriage {

std::vector<std::size_t> GroupPartition::members(int stage, Label label) const {
  const StageGroups& g = stages.at(static_cast<std::size_t>(stage - 1));
  std::vector<std::size_t> out;
  for (Eigen::Index row : g.rows[label_index(label)]) out.push_back(g.records[row]);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Eigen::Index> GroupPartition::widths() const {
  std::vector<Eigen::Index> w;
  for (const StageGroups& g : stages) w.push_back(g.design.cols());
  return w;
}

namespace {

StageGroups build_stage(const StageDataset& data, int stage, bool terminal) {
  StageGroups g;
  g.stage = stage;
  g.terminal = terminal;
  g.records = data.stage_members(stage);
  const auto& recs = data.records();
  std::stable_sort(g.records.begin(), g.records.end(),
                   [&](std::size_t a, std::size_t b) { return recs[a].id < recs[b].id; });
  g.design.resize(static_cast<Eigen::Index>(g.records.size()),
                  data.layout().cumulative_features(stage));
  for (std::size_t row = 0; row < g.records.size(); ++row) {
    const auto r = static_cast<Eigen::Index>(row);
    g.design.row(r) = data.cumulative_features(g.records[row], stage).transpose();
    const Label label = *recs[g.records[row]].labels[stage - 1];
    g.rows[label_index(label)].push_back(r);
  }
  return g;
}

void check_compatible(const Parameters& params, const GroupPartition& part) {
  if (params.stage_widths != part.widths()) {
    throw Error(ErrorCode::dimension_mismatch,
                "parameters and partition disagree on stage structure");
  }
  for (std::size_t i = 0; i < part.stages.size(); ++i) {
    if (params.is_terminal(static_cast<int>(i + 1)) != part.stages[i].terminal) {
      throw Error(ErrorCode::dimension_mismatch,
                  "parameters and partition disagree on which stage is terminal",
                  "stage " + std::to_string(i + 1));
    }
  }
  params.validate();
}

// Contribution of one record: log-probability of its label and the partials
// with respect to the predictor and the two cutoffs bracketing the label.
struct RecordTerm {
  double log_p = 0.0;
  double d_eta = 0.0;
  double d_lower = 0.0;
  double d_upper = 0.0;
};

const double kLogFloor = std::log(kProbabilityFloor);

RecordTerm record_term(double eta, const Band& cut, int label) {
  RecordTerm t;
  if (label == 0) {
    // log F(L - eta)
    const double a = cut.lower - eta;
    t.log_p = log_logistic_cdf(a);
    t.d_lower = logistic_cdf(-a);
    t.d_eta = -t.d_lower;
  } else if (label == 2) {
    // log(1 - F(U - eta))
    const double b = cut.upper - eta;
    t.log_p = log_logistic_survival(b);
    t.d_upper = -logistic_cdf(b);
    t.d_eta = -t.d_upper;
  } else {
    // log(F(U - eta) - F(L - eta)); with a = U - eta, b = L - eta:
    //   d/dU = f(a)/p = (1 - F(a)) / ((1 - F(b)) (1 - e^(b-a)))
    //   d/dL = -f(b)/p = -F(b) / (F(a) (1 - e^(b-a)))
    const double a = cut.upper - eta;
    const double b = cut.lower - eta;
    const double log_gap = std::log(-std::expm1(b - a));
    t.log_p = log_logistic_cdf(a) + log_logistic_survival(b) + log_gap;
    t.d_upper = std::exp(log_logistic_survival(a) - log_logistic_survival(b) - log_gap);
    t.d_lower = -std::exp(log_logistic_cdf(b) - log_logistic_cdf(a) - log_gap);
    t.d_eta = -(t.d_upper + t.d_lower);
  }
  t.log_p = std::max(t.log_p, kLogFloor);
  return t;
}

LikelihoodEvaluation evaluate(const Parameters& params, const GroupPartition& part,
                              bool with_gradient) {
  check_compatible(params, part);
  LikelihoodEvaluation out;
  if (with_gradient) {
    out.gradient.d_beta = Eigen::VectorXd::Zero(params.beta.size());
    out.gradient.d_bands.assign(params.bands.size(), BandGradient{});
    if (params.final_cut) out.gradient.d_final_cut = 0.0;
  }

  for (std::size_t s = 0; s < part.stages.size(); ++s) {
    const StageGroups& g = part.stages[s];
    const int stage = static_cast<int>(s + 1);
    if (g.size() == 0) continue;
    const Eigen::Index w = g.design.cols();
    const Band cut = params.cutoffs(stage);
    const Eigen::VectorXd eta = g.design * params.beta.head(w);
    Eigen::VectorXd d_eta = Eigen::VectorXd::Zero(g.size());
    double d_lower = 0.0;
    double d_upper = 0.0;

    for (int label = 0; label < 3; ++label) {
      for (Eigen::Index row : g.rows[label]) {
        const RecordTerm t = record_term(eta[row], cut, label);
        out.value += t.log_p;
        d_eta[row] = t.d_eta;
        d_lower += t.d_lower;
        d_upper += t.d_upper;
      }
    }
    if (!with_gradient) continue;

    // Stage gradient occupies the first w slots; the rest is implicit zero
    // padding, so summing over stages front-aligns them.
    out.gradient.d_beta.head(w).noalias() += g.design.transpose() * d_eta;
    if (g.terminal) {
      *out.gradient.d_final_cut += d_lower + d_upper;
    } else {
      out.gradient.d_bands[s].d_lower += d_lower;
      out.gradient.d_bands[s].d_upper += d_upper;
    }
  }
  return out;
}

}  // namespace

GroupPartition group_partition(const StageDataset& data) {
  data.validate_training();
  GroupPartition part;
  const int k_stages = data.layout().stages();
  for (int k = 1; k <= k_stages; ++k) {
    part.stages.push_back(build_stage(data, k, k == k_stages));
  }
  return part;
}

GroupPartition stage_partition(const StageDataset& data, int stage) {
  data.validate_training();
  if (stage < 1 || stage > data.layout().stages()) {
    throw Error(ErrorCode::validation, "stage out of range", "stage " + std::to_string(stage));
  }
  GroupPartition part;
  part.stages.push_back(build_stage(data, stage, stage == data.layout().stages()));
  return part;
}

GroupPartition single_stage_partition(Eigen::MatrixXd design, std::span<const Label> labels,
                                      bool terminal) {
  if (static_cast<std::size_t>(design.rows()) != labels.size()) {
    throw Error(ErrorCode::dimension_mismatch, "one label per design row is required");
  }
  StageGroups g;
  g.terminal = terminal;
  g.design = std::move(design);
  g.records.resize(labels.size());
  std::iota(g.records.begin(), g.records.end(), std::size_t{0});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (terminal && labels[i] == Label::indeterminate) {
      throw Error(ErrorCode::consistency, "terminal stage labels must be 0 or 1",
                  "row " + std::to_string(i));
    }
    g.rows[label_index(labels[i])].push_back(static_cast<Eigen::Index>(i));
  }
  GroupPartition part;
  part.stages.push_back(std::move(g));
  return part;
}

Eigen::VectorXd GradientVector::flatten() const {
  const Eigen::Index n = d_beta.size() + 2 * static_cast<Eigen::Index>(d_bands.size()) +
                         (d_final_cut ? 1 : 0);
  Eigen::VectorXd out(n);
  out.head(d_beta.size()) = d_beta;
  Eigen::Index i = d_beta.size();
  for (const BandGradient& b : d_bands) {
    out[i++] = b.d_lower;
    out[i++] = b.d_upper;
  }
  if (d_final_cut) out[i] = *d_final_cut;
  return out;
}

double GradientVector::max_abs() const {
  const Eigen::VectorXd v = flatten();
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

double log_cdf_difference(double upper, double lower) {
  if (!(lower < upper)) {
    throw Error(ErrorCode::validation, "log_cdf_difference needs lower < upper");
  }
  return log_logistic_cdf(upper) + log_logistic_survival(lower) + std::log(-std::expm1(lower - upper));
}

double joint_log_likelihood(const Parameters& params, const GroupPartition& part) {
  return evaluate(params, part, false).value;
}

GradientVector analytic_gradient(const Parameters& params, const GroupPartition& part) {
  return evaluate(params, part, true).gradient;
}

LikelihoodEvaluation evaluate_likelihood(const Parameters& params, const GroupPartition& part) {
  return evaluate(params, part, true);
}

GradientVector finite_difference_gradient(const Parameters& params, const GroupPartition& part,
                                          double h) {
  if (!(h > 0.0 && h <= 1e-3)) {
    throw Error(ErrorCode::validation, "finite-difference step must lie in (0, 1e-3]");
  }
  auto central = [&](auto&& perturb) {
    Parameters plus = params;
    Parameters minus = params;
    perturb(plus, h);
    perturb(minus, -h);
    return (joint_log_likelihood(plus, part) - joint_log_likelihood(minus, part)) / (2.0 * h);
  };

  GradientVector g;
  g.d_beta.resize(params.beta.size());
  for (Eigen::Index j = 0; j < params.beta.size(); ++j) {
    g.d_beta[j] = central([j](Parameters& p, double step) { p.beta[j] += step; });
  }
  for (std::size_t k = 0; k < params.bands.size(); ++k) {
    BandGradient b;
    b.d_lower = central([k](Parameters& p, double step) { p.bands[k].lower += step; });
    b.d_upper = central([k](Parameters& p, double step) { p.bands[k].upper += step; });
    g.d_bands.push_back(b);
  }
  if (params.final_cut) {
    g.d_final_cut = central([](Parameters& p, double step) { *p.final_cut += step; });
  }
  return g;
}

}  // namespace seqtriage
