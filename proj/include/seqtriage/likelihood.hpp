#pragma once

// Joint log-likelihood of the cascade and its analytic gradient.
//
//   l = sum_k sum_i log[ F(theta_hi - beta_k' x_i) - F(theta_lo - beta_k' x_i) ]
//
// where (theta_lo, theta_hi) bracket the observed label: (-inf, L) for 0,
// [L, U) for 0.5, [U, inf) for 1, and (-inf, C) / [C, inf) at the terminal
// stage. Infinite ends are dropped rather than evaluated.

#include <Eigen/Core>

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "seqtriage/model.hpp"

namespace seqtriage {

// One stage's records bucketed by label.
struct StageGroups {
  int stage = 1;          // stage number in the source layout
  bool terminal = false;  // binary final stage
  Eigen::MatrixXd design; // cumulative features, one row per record
  std::vector<std::size_t> records;               // dataset index of each row
  std::array<std::vector<Eigen::Index>, 3> rows;  // rows per label index

  Eigen::Index size() const { return design.rows(); }
};

struct GroupPartition {
  std::vector<StageGroups> stages;

  // Dataset indices labelled `label` at the i-th partition stage (1-based),
  // in ascending order.
  std::vector<std::size_t> members(int stage, Label label) const;
  std::vector<Eigen::Index> widths() const;
};

// Partition for the joint model: one entry per layout stage. Rows are ordered
// by record id so sums do not depend on input order. Throws
// Error(consistency) when a record breaks the 0.5-means-advance rule.
GroupPartition group_partition(const StageDataset& data);

// A standalone one-stage problem on the records reaching `stage`, with that
// stage's cumulative features. Used by the stagewise baseline.
GroupPartition stage_partition(const StageDataset& data, int stage);

// One-stage partition from a raw design matrix; rows keep their order.
GroupPartition single_stage_partition(Eigen::MatrixXd design, std::span<const Label> labels,
                                      bool terminal);

struct BandGradient {
  double d_lower = 0.0;
  double d_upper = 0.0;
};

// Same layout as Parameters.
struct GradientVector {
  Eigen::VectorXd d_beta;
  std::vector<BandGradient> d_bands;
  std::optional<double> d_final_cut;

  // [d_beta, (d_lower, d_upper) per band, d_final_cut]
  Eigen::VectorXd flatten() const;
  double max_abs() const;
};

struct LikelihoodEvaluation {
  double value = 0.0;
  GradientVector gradient;
};

// Category probabilities below this are clamped before taking logs.
inline constexpr double kProbabilityFloor = 1e-300;

// log(F(upper) - F(lower)) for lower < upper, computed without subtracting
// nearly equal CDF values.
double log_cdf_difference(double upper, double lower);

double joint_log_likelihood(const Parameters& params, const GroupPartition& part);
GradientVector analytic_gradient(const Parameters& params, const GroupPartition& part);
LikelihoodEvaluation evaluate_likelihood(const Parameters& params, const GroupPartition& part);

// Central differences in the natural parameters; h in (0, 1e-3].
GradientVector finite_difference_gradient(const Parameters& params, const GroupPartition& part,
                                          double h);

}  // namespace seqtriage
