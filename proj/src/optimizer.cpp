#include "seqtriage/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace seqtriage::optim {

namespace {

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

BfgsResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& opts) {
  const Eigen::Index n = x0.size();
  BfgsResult res;
  res.x = std::move(x0);
  res.gradient.resize(n);
  res.value = f(res.x, &res.gradient);
  res.trace.push_back(res.value);

  if (inf_norm(res.gradient) < opts.gradient_tolerance) {
    res.converged = true;
    res.reason = StopReason::gradient;
    return res;
  }

  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  Eigen::VectorXd x_new(n);
  Eigen::VectorXd g_new(n);

  for (int it = 1; it <= opts.max_iterations; ++it) {
    res.iterations = it;
    Eigen::VectorXd dir = -h_inv * res.gradient;
    double slope = res.gradient.dot(dir);
    if (!(slope < 0.0) || !dir.allFinite()) {
      h_inv.setIdentity();
      scaled = false;
      dir = -res.gradient;
      slope = res.gradient.dot(dir);
    }
    const double dir_norm = dir.norm();
    double step = dir_norm > opts.max_step ? opts.max_step / dir_norm : 1.0;

    bool accepted = false;
    double f_new = res.value;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * dir;
      f_new = f(x_new, &g_new);
      if (std::isfinite(f_new) && g_new.allFinite() &&
          f_new <= res.value + opts.armijo_c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!h_inv.isIdentity()) {
        // Curvature model went stale; retry from steepest descent.
        h_inv.setIdentity();
        scaled = false;
        continue;
      }
      res.reason = StopReason::line_search;
      res.converged = inf_norm(res.gradient) < opts.gradient_tolerance;
      return res;
    }

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - res.gradient;
    const double f_old = res.value;
    res.x = x_new;
    res.value = f_new;
    res.gradient = g_new;
    res.trace.push_back(f_new);

    if (inf_norm(res.gradient) < opts.gradient_tolerance) {
      res.converged = true;
      res.reason = StopReason::gradient;
      return res;
    }
    if (std::abs(f_old - f_new) <=
        opts.relative_objective_tolerance * std::max({std::abs(f_old), std::abs(f_new), 1.0})) {
      res.converged = true;
      res.reason = StopReason::objective;
      return res;
    }

    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      if (!scaled) {
        h_inv *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = h_inv * y;
      // H <- (I - rho s y') H (I - rho y s') + rho s s'
      h_inv += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) -
               rho * (hy * s.transpose() + s * hy.transpose());
    }
  }
  res.reason = StopReason::iterations;
  return res;
}

}  // namespace seqtriage::optim
