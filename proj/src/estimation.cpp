#include "seqtriage/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "seqtriage/errors.hpp"
#include "seqtriage/optimizer.hpp"

namespace seqtriage {

std::string_view to_string(FitMethod method) {
  return method == FitMethod::joint ? "joint" : "baseline_stagewise";
}

FitMethod parse_fit_method(std::string_view text) {
  if (text == "joint") return FitMethod::joint;
  if (text == "baseline" || text == "baseline_stagewise") return FitMethod::baseline_stagewise;
  throw Error(ErrorCode::validation, "unknown fit method", std::string(text));
}

void FitOptions::validate() const {
  if (max_iterations < 1) throw Error(ErrorCode::validation, "max_iterations must be >= 1");
  if (!(gradient_tolerance > 0.0) || !(relative_objective_tolerance > 0.0)) {
    throw Error(ErrorCode::validation, "tolerances must be positive");
  }
  if (initialization == Initialization::user_supplied && !initial_parameters) {
    throw Error(ErrorCode::validation, "user_supplied initialisation needs initial_parameters");
  }
}

// ---------------------------------------------------------------------------
// Initialisation

namespace {

double quantile_clamped(double fraction, double n) {
  const double lo = 0.5 / n;
  return logistic_quantile(std::clamp(fraction, lo, 1.0 - lo));
}

}  // namespace

Parameters initialize_parameters(const GroupPartition& part) {
  Parameters p;
  p.stage_widths = part.widths();
  if (p.stage_widths.empty()) throw Error(ErrorCode::degenerate_data, "no stages to fit");
  p.beta = Eigen::VectorXd::Zero(p.stage_widths.back());

  for (const StageGroups& g : part.stages) {
    const std::string stage_name = "stage " + std::to_string(g.stage);
    const double n = static_cast<double>(g.size());
    const auto occupied = std::count_if(g.rows.begin(), g.rows.end(),
                                        [](const auto& rows) { return !rows.empty(); });
    if (occupied < 2) {
      throw Error(ErrorCode::degenerate_data,
                  "records at " + stage_name + " fall in fewer than two label groups",
                  stage_name);
    }
    const double frac0 = static_cast<double>(g.rows[0].size()) / n;
    if (g.terminal) {
      p.final_cut = quantile_clamped(frac0, n);
      continue;
    }
    const double frac_mid = static_cast<double>(g.rows[1].size()) / n;
    Band b{quantile_clamped(frac0, n), quantile_clamped(frac0 + frac_mid, n)};
    if (b.upper - b.lower < kMinimumBandGap) {
      const double centre = 0.5 * (b.lower + b.upper);
      b = {centre - 0.5 * kMinimumBandGap, centre + 0.5 * kMinimumBandGap};
    }
    p.bands.push_back(b);
  }
  p.validate();
  return p;
}

Parameters initialize_parameters(const StageDataset& data) {
  return initialize_parameters(group_partition(data));
}

// ---------------------------------------------------------------------------
// Coordinates

Eigen::VectorXd to_unconstrained(const Parameters& params, bool reparameterize) {
  params.validate();
  Eigen::VectorXd z(static_cast<Eigen::Index>(params.free_parameter_count()));
  z.head(params.beta.size()) = params.beta;
  Eigen::Index i = params.beta.size();
  for (const Band& b : params.bands) {
    z[i++] = b.lower;
    z[i++] = reparameterize ? std::log(b.upper - b.lower) : b.upper;
  }
  if (params.final_cut) z[i] = *params.final_cut;
  return z;
}

Parameters from_unconstrained(const Eigen::VectorXd& z, const Parameters& shape,
                              bool reparameterize) {
  Parameters p = shape;
  p.beta = z.head(shape.beta.size());
  Eigen::Index i = shape.beta.size();
  for (Band& b : p.bands) {
    b.lower = z[i++];
    b.upper = reparameterize ? b.lower + std::exp(z[i]) : z[i];
    ++i;
  }
  if (p.final_cut) p.final_cut = z[i];
  return p;
}

Eigen::VectorXd unconstrained_gradient(const GradientVector& g, const Parameters& params,
                                       bool reparameterize) {
  Eigen::VectorXd out = g.flatten();
  if (!reparameterize) return out;
  Eigen::Index i = g.d_beta.size();
  for (std::size_t k = 0; k < g.d_bands.size(); ++k) {
    // U = L + e^delta: dl/dL|delta = dl/dL + dl/dU, dl/ddelta = dl/dU * e^delta
    const double gap = params.bands[k].upper - params.bands[k].lower;
    out[i] = g.d_bands[k].d_lower + g.d_bands[k].d_upper;
    out[i + 1] = g.d_bands[k].d_upper * gap;
    i += 2;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fitting

FitResult fit_partition(const GroupPartition& part, const Parameters& start,
                        const FitOptions& opts) {
  opts.validate();
  const bool reparam = opts.threshold_reparameterization;

  // The band can still collapse numerically in plain coordinates; such
  // trial points are reported as infinite so the line search backs off.
  optim::Objective objective = [&](const Eigen::VectorXd& z, Eigen::VectorXd* grad) {
    Parameters p = from_unconstrained(z, start, reparam);
    const bool ordered = std::all_of(p.bands.begin(), p.bands.end(),
                                     [](const Band& b) {
                                       return std::isfinite(b.upper) && b.lower < b.upper;
                                     });
    if (!ordered || !z.allFinite()) {
      if (grad) grad->setConstant(z.size(), std::numeric_limits<double>::quiet_NaN());
      return std::numeric_limits<double>::infinity();
    }
    if (!grad) return -joint_log_likelihood(p, part);
    LikelihoodEvaluation e = evaluate_likelihood(p, part);
    *grad = -unconstrained_gradient(e.gradient, p, reparam);
    return -e.value;
  };

  optim::BfgsOptions bopts;
  bopts.max_iterations = opts.max_iterations;
  bopts.gradient_tolerance = opts.gradient_tolerance;
  bopts.relative_objective_tolerance = opts.relative_objective_tolerance;

  optim::BfgsResult r = optim::minimize_bfgs(objective, to_unconstrained(start, reparam), bopts);

  FitResult out;
  out.params = from_unconstrained(r.x, start, reparam);
  out.final_log_likelihood = -r.value;
  out.iterations_used = r.iterations;
  out.converged = r.converged;
  out.gradient_norm = r.gradient.size() ? r.gradient.cwiseAbs().maxCoeff() : 0.0;
  out.objective_trace.reserve(r.trace.size());
  for (double v : r.trace) out.objective_trace.push_back(-v);
  if (out.params.beta.norm() > kDivergenceNorm) {
    out.warnings.push_back("coefficient norm exceeds " + std::to_string(kDivergenceNorm) +
                           "; data may be separated");
  }
  if (r.reason == optim::StopReason::line_search && !r.converged) {
    out.warnings.push_back("line search failed before convergence");
  }
  return out;
}

namespace {

// Restriction of a joint-shaped parameter set to one standalone stage.
Parameters restrict_to_stage(const Parameters& joint, int stage) {
  Parameters p;
  p.stage_widths = {joint.width(stage)};
  p.beta = joint.beta.head(joint.width(stage));
  if (joint.is_terminal(stage)) {
    p.final_cut = joint.final_cut;
  } else {
    p.bands = {joint.bands[stage - 1]};
  }
  return p;
}

}  // namespace

FitResult fit_joint(const StageDataset& data, const FitOptions& opts) {
  opts.validate();
  const GroupPartition part = group_partition(data);
  Parameters start;
  if (opts.initialization == Initialization::user_supplied) {
    start = *opts.initial_parameters;
    start.validate();
  } else {
    start = initialize_parameters(part);
  }
  FitResult r = fit_partition(part, start, opts);
  r.method_tag = FitMethod::joint;
  r.stage = 0;
  return r;
}

std::vector<FitResult> fit_baseline_stagewise(const StageDataset& data, const FitOptions& opts) {
  opts.validate();
  std::vector<FitResult> out;
  for (int k = 1; k <= data.layout().stages(); ++k) {
    const GroupPartition part = stage_partition(data, k);
    const Parameters start = opts.initialization == Initialization::user_supplied
                                 ? restrict_to_stage(*opts.initial_parameters, k)
                                 : initialize_parameters(part);
    FitResult r = fit_partition(part, start, opts);
    r.method_tag = FitMethod::baseline_stagewise;
    r.stage = k;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace seqtriage
