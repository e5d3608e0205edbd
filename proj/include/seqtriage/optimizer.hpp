#pragma once

#include <Eigen/Core>

#include <functional>
#include <vector>

namespace seqtriage::optim {

// Objective value at x; writes the gradient into *grad when grad is non-null.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct BfgsOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;           // on the infinity norm
  double relative_objective_tolerance = 1e-10;
  double armijo_c1 = 1e-4;
  double max_step = 10.0;                     // Euclidean cap on a trial step
};

enum class StopReason { gradient, objective, iterations, line_search };

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  bool converged = false;
  StopReason reason = StopReason::iterations;
  std::vector<double> trace;  // objective at the start and after each accepted step
};

// Quasi-Newton minimisation with an inverse-Hessian BFGS update and a
// backtracking line search enforcing sufficient decrease, so the trace is
// non-increasing.
BfgsResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& opts);

}  // namespace seqtriage::optim
