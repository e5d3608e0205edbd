#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seqtriage/likelihood.hpp"
#include "seqtriage/model.hpp"

namespace seqtriage {

enum class Initialization { zeros_and_quantiles, user_supplied };
enum class FitMethod { joint, baseline_stagewise };

std::string_view to_string(FitMethod method);
FitMethod parse_fit_method(std::string_view text);

struct FitOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  double relative_objective_tolerance = 1e-10;
  Initialization initialization = Initialization::zeros_and_quantiles;
  // Optimise (L, log(U - L)) instead of (L, U) so the band stays ordered.
  bool threshold_reparameterization = true;
  // Required when initialization == user_supplied; shaped like the joint model.
  std::optional<Parameters> initial_parameters;

  void validate() const;
};

struct FitResult {
  Parameters params;
  double final_log_likelihood = 0.0;
  int iterations_used = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // log-likelihood, non-decreasing
  FitMethod method_tag = FitMethod::joint;
  int stage = 0;                        // baseline stage, 0 for a joint fit
  double gradient_norm = 0.0;           // infinity norm at the returned point
  std::vector<std::string> warnings;
};

// Coefficient norm above which a fit is flagged as likely separated.
inline constexpr double kDivergenceNorm = 1e3;
inline constexpr double kMinimumBandGap = 1e-3;

// beta = 0; cutoffs at the logistic quantiles of the empirical cumulative
// label fractions of each stage, with bands widened to at least
// kMinimumBandGap. Throws Error(degenerate_data) for a stage whose records
// fall in fewer than two label groups.
Parameters initialize_parameters(const StageDataset& data);
Parameters initialize_parameters(const GroupPartition& part);

FitResult fit_joint(const StageDataset& data, const FitOptions& opts = {});

// One independent fit per stage on that stage's records and cumulative
// features, with no coefficient sharing.
std::vector<FitResult> fit_baseline_stagewise(const StageDataset& data,
                                              const FitOptions& opts = {});

// Maximises the likelihood of an arbitrary partition starting from `start`.
FitResult fit_partition(const GroupPartition& part, const Parameters& start,
                        const FitOptions& opts);

// Unconstrained optimiser coordinates: [beta, (L, U or log(U - L)) per band, C].
Eigen::VectorXd to_unconstrained(const Parameters& params, bool reparameterize);
Parameters from_unconstrained(const Eigen::VectorXd& z, const Parameters& shape,
                              bool reparameterize);
// Gradient of the log-likelihood in unconstrained coordinates.
Eigen::VectorXd unconstrained_gradient(const GradientVector& g, const Parameters& params,
                                       bool reparameterize);

}  // namespace seqtriage
