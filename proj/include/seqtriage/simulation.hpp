#pragma once

// Synthetic cascade cohorts and the Monte Carlo comparison of the joint
// estimator against independent per-stage fits.

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seqtriage/estimation.hpp"
#include "seqtriage/metrics.hpp"
#include "seqtriage/model.hpp"

namespace seqtriage {

struct FeatureSpec {
  enum class Kind { bernoulli, normal };
  Kind kind = Kind::normal;
  double a = 0.0;  // bernoulli: p; normal: mean
  double b = 1.0;  // normal: variance (not standard deviation)

  static FeatureSpec bernoulli(double p) { return {Kind::bernoulli, p, 0.0}; }
  static FeatureSpec normal(double mean, double variance) { return {Kind::normal, mean, variance}; }
  std::string describe() const;
  bool operator==(const FeatureSpec&) const = default;
};

struct SimConfig {
  int n_stage1 = 10000;
  std::vector<int> stage_feature_counts;
  std::vector<FeatureSpec> feature_specs;
  Eigen::VectorXd true_beta;
  std::vector<Band> true_bands;    // one per non-final stage
  double true_final_cut = 0.0;
  std::vector<double> noise_scale;  // logistic scale per stage
  int replications = 100;
  std::uint64_t seed = 20211028;

  // N1 = 10,000; X1 ~ Bern(0.3), X2 ~ N(-1,1), X3 ~ N(1,1), X4 ~ N(0,2),
  // X5 ~ Bern(0.4), X6 ~ N(-1,1), X7 ~ N(0,1); beta = [2,2,2,2,4,4,4];
  // cutoffs (-2.2, 2.2) and 0.5; 100 replications.
  static SimConfig paper();
  // Same design at N1 = 2,000 with 30 replications.
  static SimConfig desk();

  StageLayout layout() const;   // features named X1..Xp
  Parameters truth() const;
  void validate() const;
};

// Records are drawn from per-patient Philox substreams keyed by
// mix64(seed) ^ replication_index, so a cohort is a pure function of its inputs.
StageDataset generate_cohort(const SimConfig& config, int replication_index);

struct ParameterStatistics {
  double mean = 0.0;
  std::optional<double> std;  // n - 1 denominator; absent for one replication
  double mse = 0.0;           // mean squared deviation from truth
};

// One row per replication, one column per parameter.
std::vector<ParameterStatistics> estimator_statistics(const Eigen::MatrixXd& estimates,
                                                      const Eigen::VectorXd& truth);

// var(baseline) / var(joint); above 1 means the joint estimator is tighter.
double relative_efficiency(double var_baseline, double var_joint);

struct MethodEstimates {
  std::string method;  // "joint", "baseline_stage1", ...
  int stage = 0;       // baseline stage; 0 for joint
  std::vector<std::string> parameters;
  Eigen::VectorXd truth;
  Eigen::MatrixXd estimates;  // included replications only
  std::vector<ParameterStatistics> stats;
};

struct EfficiencyEntry {
  std::string parameter;
  int baseline_stage = 0;
  bool headline = false;  // pairing against the last stage re-estimating it
  std::optional<double> value;
};

// Squared distance of the mean estimates from the truth, averaged over the
// cumulative coefficients of one stage.
struct StageMse {
  int stage = 0;
  double joint = 0.0;
  double baseline = 0.0;
};

struct MetricAggregate {
  std::string method;  // "joint" or "baseline"
  int stage = 0;
  std::string positive_class;
  std::string metric;
  std::optional<double> mean;  // over replications where the metric is defined
  std::size_t coverage = 0;
};

inline constexpr double kMaxExcludedFraction = 0.05;

struct MonteCarloReport {
  SimConfig config;
  int replications_used = 0;
  std::vector<int> excluded;  // replication indices dropped for non-convergence
  bool exclusion_limit_exceeded = false;
  std::vector<std::vector<std::size_t>> stage_sizes;  // per replication: N_1..N_K
  std::vector<MethodEstimates> methods;               // joint, then baseline stages
  std::vector<EfficiencyEntry> efficiency;
  std::vector<StageMse> stage_mse;
  std::vector<MetricAggregate> metrics;

  const MethodEstimates& method(const std::string& name) const;
};

MonteCarloReport run_monte_carlo(const SimConfig& config, const FitOptions& opts = {},
                                 int jobs = 1);

}  // namespace seqtriage
