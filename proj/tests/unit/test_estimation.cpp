#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "seqtriage/errors.hpp"
#include "seqtriage/estimation.hpp"
#include "seqtriage/optimizer.hpp"
#include "seqtriage/simulation.hpp"
#include "support.hpp"

using namespace seqtriage;
using Catch::Approx;

namespace {

FitOptions tight() {
  FitOptions o;
  o.gradient_tolerance = 1e-10;
  o.relative_objective_tolerance = 1e-15;
  o.max_iterations = 2000;
  return o;
}

}  // namespace

TEST_CASE("BFGS minimises smooth test functions", "[optimizer]") {
  optim::BfgsOptions opts;
  opts.gradient_tolerance = 1e-9;
  opts.relative_objective_tolerance = 1e-16;
  opts.max_iterations = 2000;

  SECTION("ill-conditioned quadratic") {
    Eigen::VectorXd c(3);
    c << 1.0, -2.0, 3.0;
    Eigen::VectorXd scale(3);
    scale << 1.0, 100.0, 0.01;
    auto f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
      const Eigen::VectorXd d = x - c;
      if (g) *g = 2.0 * scale.cwiseProduct(d);
      return d.dot(scale.cwiseProduct(d));
    };
    const auto r = optim::minimize_bfgs(f, Eigen::VectorXd::Zero(3), opts);
    CHECK(r.converged);
    CHECK((r.x - c).cwiseAbs().maxCoeff() < 1e-6);
  }
  SECTION("Rosenbrock") {
    auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
      const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
      if (g) {
        g->resize(2);
        (*g)[0] = -2.0 * a - 400.0 * x[0] * b;
        (*g)[1] = 200.0 * b;
      }
      return a * a + 100.0 * b * b;
    };
    Eigen::VectorXd x0(2);
    x0 << -1.2, 1.0;
    const auto r = optim::minimize_bfgs(f, x0, opts);
    CHECK(r.x[0] == Approx(1.0).margin(1e-5));
    CHECK(r.x[1] == Approx(1.0).margin(1e-5));
    for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1]);
  }
}

TEST_CASE("initial parameters follow the label fractions", "[estimation]") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const StageLayout l = testsupport::random_layout(rng);
    const Parameters truth = testsupport::random_parameters(l, rng);
    const StageDataset d = testsupport::simulate(l, truth, 60, rng);
    Parameters p;
    try {
      p = initialize_parameters(d);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::degenerate_data);
      continue;
    }
    CHECK(p.beta.isZero());
    CHECK(p.bands[0].upper - p.bands[0].lower >= kMinimumBandGap * (1 - 1e-12));
    const double n1 = static_cast<double>(d.stage_size(1));
    const auto part = group_partition(d);
    const double frac0 = part.members(1, Label::healthy).size() / n1;
    if (frac0 > 0.0 && frac0 < 1.0 && p.bands[0].upper - p.bands[0].lower > kMinimumBandGap) {
      CHECK(logistic_cdf(p.bands[0].lower) == Approx(frac0).epsilon(1e-12));
    }
  }
}

TEST_CASE("degenerate stages are reported by name", "[estimation]") {
  const StageLayout l({1, 1}, {"a", "b"});
  std::vector<PatientRecord> recs;
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd x = Eigen::VectorXd::Constant(1, i);
    recs.push_back({"r" + std::to_string(i), {x, x}, {Label::indeterminate, Label::sick}});
  }
  const StageDataset d(l, recs);
  try {
    initialize_parameters(d);
    FAIL("expected degenerate_data");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::degenerate_data);
    CHECK(e.detail() == "stage 1");
  }
}

TEST_CASE("threshold reparameterisation round-trips", "[estimation][property]") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    const StageLayout l = testsupport::random_layout(rng, 2 + trial % 3);
    const Parameters p = testsupport::random_parameters(l, rng);
    for (bool rep : {true, false}) {
      const Eigen::VectorXd z = to_unconstrained(p, rep);
      CHECK(static_cast<std::size_t>(z.size()) == p.free_parameter_count());
      const Parameters back = from_unconstrained(z, p, rep);
      CHECK((back.beta - p.beta).cwiseAbs().maxCoeff() <= 1e-12);
      for (std::size_t k = 0; k < p.bands.size(); ++k) {
        CHECK(back.bands[k].lower == Approx(p.bands[k].lower).margin(1e-12));
        CHECK(back.bands[k].upper == Approx(p.bands[k].upper).margin(1e-12));
      }
      CHECK(*back.final_cut == *p.final_cut);
    }
    // Any unconstrained point maps to an ordered band.
    std::normal_distribution<double> zd(0.0, 3.0);
    Eigen::VectorXd z = to_unconstrained(p, true);
    for (auto& v : z) v = zd(rng);
    CHECK_NOTHROW(from_unconstrained(z, p, true).validate());
  }
}

TEST_CASE("unconstrained gradient obeys the chain rule", "[estimation][property]") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 30; ++trial) {
    const StageLayout l = testsupport::random_layout(rng, 2 + trial % 2);
    const Parameters p = testsupport::random_parameters(l, rng);
    const GroupPartition part = group_partition(testsupport::simulate(l, p, 40, rng));
    for (bool rep : {true, false}) {
      const Eigen::VectorXd z = to_unconstrained(p, rep);
      const Eigen::VectorXd g = unconstrained_gradient(analytic_gradient(p, part), p, rep);
      const double h = 1e-6;
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        Eigen::VectorXd zp = z, zm = z;
        zp[i] += h;
        zm[i] -= h;
        const double fd = (joint_log_likelihood(from_unconstrained(zp, p, rep), part) -
                           joint_log_likelihood(from_unconstrained(zm, p, rep), part)) /
                          (2 * h);
        CHECK(std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i])) < 1e-5);
      }
    }
  }
}

TEST_CASE("terminal-stage fit equals Newton logistic regression", "[estimation][oracle]") {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 10; ++trial) {
    const int p = 1 + trial % 3;
    const auto inst = testsupport::random_binary_instance(rng, 200, p);
    Eigen::MatrixXd with_intercept(inst.features.rows(), p + 1);
    with_intercept.col(0).setOnes();
    with_intercept.rightCols(p) = inst.features;
    Eigen::VectorXd y(inst.labels.size());
    for (std::size_t i = 0; i < inst.labels.size(); ++i) y[i] = inst.labels[i] == Label::sick;
    const Eigen::VectorXd w = testsupport::newton_logistic(with_intercept, y);

    const GroupPartition part = single_stage_partition(inst.features, inst.labels, true);
    const FitResult r = fit_partition(part, initialize_parameters(part), tight());
    REQUIRE(r.converged);
    for (int j = 0; j < p; ++j) CHECK(std::abs(r.params.beta[j] - w[j + 1]) < 1e-6);
    CHECK(std::abs(*r.params.final_cut + w[0]) < 1e-6);
  }
}

TEST_CASE("single-stage ordinal fit equals exhaustive grid search", "[estimation][oracle]") {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 2; ++trial) {
    const auto inst = testsupport::random_ordinal_instance(rng, 80);
    const auto grid = testsupport::grid_search_ordinal(inst);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(inst.x.size()), 1);
    for (std::size_t i = 0; i < inst.x.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = inst.x[i];
    const GroupPartition part = single_stage_partition(x, inst.labels, false);
    const FitResult r = fit_partition(part, initialize_parameters(part), tight());
    REQUIRE(r.converged);
    CHECK(std::abs(r.params.beta[0] - grid[0]) < 2e-3);
    CHECK(std::abs(r.params.bands[0].lower - grid[1]) < 2e-3);
    CHECK(std::abs(r.params.bands[0].upper - grid[2]) < 2e-3);
  }
}

TEST_CASE("joint fit trace is monotone and the fit is a stationary point", "[estimation][property]") {
  std::mt19937_64 rng(59);
  int fitted = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const StageLayout l = testsupport::random_layout(rng);
    const Parameters truth = testsupport::random_parameters(l, rng);
    const StageDataset d = testsupport::simulate(l, truth, 150, rng);
    FitResult r;
    try {
      r = fit_joint(d);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::degenerate_data);
      continue;
    }
    ++fitted;
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
      CHECK(r.objective_trace[i] >= r.objective_trace[i - 1]);
    }
    CHECK(r.final_log_likelihood == Approx(joint_log_likelihood(r.params, group_partition(d))));
    CHECK(r.final_log_likelihood >= joint_log_likelihood(initialize_parameters(d), group_partition(d)));
    if (r.converged && r.params.beta.norm() < 50) CHECK(r.gradient_norm < 1e-2);
  }
  CHECK(fitted > 20);
}

TEST_CASE("fits do not depend on record order", "[estimation][property]") {
  std::mt19937_64 rng(61);
  const StageLayout l = testsupport::random_layout(rng);
  const Parameters truth = testsupport::random_parameters(l, rng);
  const StageDataset d = testsupport::simulate(l, truth, 200, rng);
  const FitResult a = fit_joint(d);
  std::vector<PatientRecord> shuffled = d.records();
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const FitResult b = fit_joint(StageDataset(l, shuffled));
  CHECK(a.params == b.params);
  CHECK(a.final_log_likelihood == b.final_log_likelihood);
}

TEST_CASE("stagewise baseline fits each stage on its own records", "[estimation]") {
  const SimConfig c = [] {
    SimConfig s = SimConfig::paper();
    s.n_stage1 = 3000;
    return s;
  }();
  const StageDataset d = generate_cohort(c, 0);
  const auto rs = fit_baseline_stagewise(d);
  REQUIRE(rs.size() == 2);
  CHECK(rs[0].stage == 1);
  CHECK(rs[0].params.beta.size() == 4);
  CHECK(rs[0].params.bands.size() == 1);
  CHECK_FALSE(rs[0].params.final_cut.has_value());
  CHECK(rs[1].params.beta.size() == 7);
  CHECK(rs[1].params.final_cut.has_value());
  CHECK(rs[0].params.free_parameter_count() + rs[1].params.free_parameter_count() == 14);

  const FitResult j = fit_joint(d);
  CHECK(j.params.free_parameter_count() == 10);
  // Each baseline stage maximises its own term, so it cannot lose to the
  // joint coefficients restricted to that stage.
  for (const FitResult& r : rs) {
    Parameters restricted;
    restricted.stage_widths = {j.params.width(r.stage)};
    restricted.beta = j.params.beta.head(j.params.width(r.stage));
    if (r.stage == 1) {
      restricted.bands = {j.params.bands[0]};
    } else {
      restricted.final_cut = j.params.final_cut;
    }
    CHECK(r.final_log_likelihood >=
          joint_log_likelihood(restricted, stage_partition(d, r.stage)) - 1e-6);
  }
}

TEST_CASE("fit options are validated", "[estimation]") {
  FitOptions o;
  o.max_iterations = 0;
  CHECK_THROWS_AS(o.validate(), Error);
  o = {};
  o.initialization = Initialization::user_supplied;
  CHECK_THROWS_AS(o.validate(), Error);
  CHECK(parse_fit_method("baseline") == FitMethod::baseline_stagewise);
  CHECK_THROWS_AS(parse_fit_method("bogus"), Error);
}

TEST_CASE("user-supplied start at the optimum converges immediately", "[estimation]") {
  std::mt19937_64 rng(67);
  const StageLayout l = testsupport::random_layout(rng);
  const Parameters truth = testsupport::random_parameters(l, rng);
  const StageDataset d = testsupport::simulate(l, truth, 300, rng);
  const FitResult first = fit_joint(d, tight());
  FitOptions o = tight();
  o.initialization = Initialization::user_supplied;
  o.initial_parameters = first.params;
  const FitResult again = fit_joint(d, o);
  CHECK(again.iterations_used <= 2);
  CHECK(again.final_log_likelihood == Approx(first.final_log_likelihood).epsilon(1e-12));
}

TEST_CASE("the likelihood has no better point near the fit", "[estimation][property]") {
  std::mt19937_64 rng(71);
  const StageLayout l = testsupport::random_layout(rng);
  const Parameters truth = testsupport::random_parameters(l, rng);
  const StageDataset d = testsupport::simulate(l, truth, 200, rng);
  const GroupPartition part = group_partition(d);
  const FitResult r = fit_joint(d, tight());
  const Eigen::VectorXd z = to_unconstrained(r.params, false);
  std::normal_distribution<double> zd(0.0, 1e-3);
  for (int i = 0; i < 200; ++i) {
    Eigen::VectorXd zz = z;
    for (auto& v : zz) v += zd(rng);
    const double ll = joint_log_likelihood(from_unconstrained(zz, r.params, false), part);
    CHECK(ll <= r.final_log_likelihood + 1e-9);
  }
}
