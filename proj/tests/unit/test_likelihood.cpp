#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "seqtriage/errors.hpp"
#include "seqtriage/likelihood.hpp"
#include "support.hpp"

using namespace seqtriage;
using Catch::Approx;

namespace {

// Central differences of the test-side likelihood.
Eigen::VectorXd naive_fd(const Parameters& p, const StageDataset& d, double h) {
  const Eigen::Index nb = p.beta.size();
  Eigen::VectorXd g(nb + 2 * static_cast<Eigen::Index>(p.bands.size()) + 1);
  auto shift = [&](Eigen::Index i, double s) {
    Parameters q = p;
    if (i < nb) {
      q.beta[i] += s;
    } else if (i < nb + 2 * static_cast<Eigen::Index>(p.bands.size())) {
      const auto k = static_cast<std::size_t>((i - nb) / 2);
      ((i - nb) % 2 == 0 ? q.bands[k].lower : q.bands[k].upper) += s;
    } else {
      *q.final_cut += s;
    }
    return testsupport::naive_log_likelihood(q, d);
  };
  for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = (shift(i, h) - shift(i, -h)) / (2 * h);
  return g;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0}); }

}  // namespace

TEST_CASE("log-likelihood agrees with a direct evaluation", "[likelihood][property]") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const StageLayout l = testsupport::random_layout(rng, 2 + trial % 3);
    const Parameters p = testsupport::random_parameters(l, rng);
    const StageDataset d = testsupport::simulate(l, p, 10 + trial % 41, rng);
    const GroupPartition part = group_partition(d);
    const double ll = joint_log_likelihood(p, part);
    CHECK(ll <= 0.0);
    CHECK(std::isfinite(ll));
    CHECK(ll == Approx(testsupport::naive_log_likelihood(p, d)).epsilon(1e-10));
  }
}

TEST_CASE("analytic gradient matches finite differences", "[likelihood][property]") {
  std::mt19937_64 rng(202);
  for (int trial = 0; trial < 60; ++trial) {
    const StageLayout l = testsupport::random_layout(rng, 2 + trial % 3);
    const Parameters p = testsupport::random_parameters(l, rng);
    const StageDataset d = testsupport::simulate(l, p, 5 + trial % 46, rng);
    const GroupPartition part = group_partition(d);
    const Eigen::VectorXd analytic = analytic_gradient(p, part).flatten();
    const Eigen::VectorXd lib_fd = finite_difference_gradient(p, part, 1e-5).flatten();
    const Eigen::VectorXd ref_fd = naive_fd(p, d, 1e-5);
    REQUIRE(analytic.size() == ref_fd.size());
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
      CHECK(rel_err(analytic[i], lib_fd[i]) < 1e-6);
      CHECK(rel_err(analytic[i], ref_fd[i]) < 1e-6);
    }
  }
}

TEST_CASE("evaluate_likelihood bundles value and gradient", "[likelihood]") {
  std::mt19937_64 rng(5);
  const StageLayout l = testsupport::random_layout(rng);
  const Parameters p = testsupport::random_parameters(l, rng);
  const GroupPartition part = group_partition(testsupport::simulate(l, p, 30, rng));
  const LikelihoodEvaluation e = evaluate_likelihood(p, part);
  CHECK(e.value == joint_log_likelihood(p, part));
  CHECK((e.gradient.flatten() - analytic_gradient(p, part).flatten()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("coefficients unseen by any record get zero gradient", "[likelihood]") {
  const StageLayout l({2, 2}, {"a", "b", "c", "d"});
  Eigen::VectorXd beta(4);
  beta << 0.5, -0.2, 1.0, 1.0;
  const Parameters p = Parameters::for_layout(l, beta, {{-1.0, 1.0}}, 0.0);
  std::vector<PatientRecord> recs;
  for (int i = 0; i < 6; ++i) {
    Eigen::VectorXd x(2);
    x << i - 3.0, 0.5 * i;
    recs.push_back({"r" + std::to_string(i), {x}, {i % 2 ? Label::sick : Label::healthy}});
  }
  const GradientVector g = analytic_gradient(p, group_partition(StageDataset(l, recs)));
  CHECK(g.d_beta[2] == 0.0);
  CHECK(g.d_beta[3] == 0.0);
  CHECK(*g.d_final_cut == 0.0);
  CHECK(g.d_beta[0] != 0.0);
}

TEST_CASE("log of a CDF difference stays finite in the tails", "[likelihood]") {
  CHECK(log_cdf_difference(1.0, -1.0) ==
        Approx(std::log(testsupport::plain_cdf(1.0) - testsupport::plain_cdf(-1.0))).epsilon(1e-14));
  // Both ends deep in the lower tail: F(t) ~ e^t.
  CHECK(log_cdf_difference(-800.0, -801.0) == Approx(-800.0 + std::log1p(-std::exp(-1.0))).epsilon(1e-12));
  // Both ends deep in the upper tail: 1 - F(t) ~ e^-t.
  CHECK(log_cdf_difference(801.0, 800.0) == Approx(-800.0 + std::log1p(-std::exp(-1.0))).epsilon(1e-12));
  // A tiny band.
  CHECK(log_cdf_difference(1e-9, 0.0) == Approx(std::log(0.25e-9)).epsilon(1e-6));
}

TEST_CASE("extreme predictors keep value and gradient finite", "[likelihood]") {
  const StageLayout l({1, 1}, {"a", "b"});
  Eigen::VectorXd beta(2);
  beta << 50.0, -50.0;
  const Parameters p = Parameters::for_layout(l, beta, {{-1.0, 1.0}}, 0.0);
  std::vector<PatientRecord> recs;
  // Labels that are nearly impossible under p.
  recs.push_back({"a", {Eigen::VectorXd::Constant(1, 30.0)}, {Label::healthy}});
  recs.push_back({"b", {Eigen::VectorXd::Constant(1, -30.0)}, {Label::sick}});
  recs.push_back({"c", {Eigen::VectorXd::Constant(1, 0.0), Eigen::VectorXd::Constant(1, -30.0)},
                  {Label::indeterminate, Label::healthy}});
  const GroupPartition part = group_partition(StageDataset(l, recs));
  const LikelihoodEvaluation e = evaluate_likelihood(p, part);
  CHECK(std::isfinite(e.value));
  CHECK(e.value < -1000.0);
  const Eigen::VectorXd g = e.gradient.flatten();
  CHECK(g.allFinite());
}

TEST_CASE("partition construction", "[likelihood]") {
  std::mt19937_64 rng(9);
  const StageLayout l = testsupport::random_layout(rng);
  const Parameters p = testsupport::random_parameters(l, rng);
  const StageDataset d = testsupport::simulate(l, p, 40, rng);
  const GroupPartition part = group_partition(d);
  REQUIRE(part.stages.size() == 2);
  CHECK(part.stages[1].terminal);
  CHECK(static_cast<std::size_t>(part.stages[0].size()) == d.stage_size(1));
  CHECK(part.members(1, Label::indeterminate).size() == d.stage_size(2));
  std::size_t total = 0;
  for (Label y : {Label::healthy, Label::indeterminate, Label::sick}) total += part.members(1, y).size();
  CHECK(total == d.size());

  const GroupPartition s2 = stage_partition(d, 2);
  REQUIRE(s2.stages.size() == 1);
  CHECK(s2.stages[0].terminal);
  CHECK(s2.widths().front() == l.total_features());

  Parameters wrong = p;
  wrong.stage_widths = {p.stage_widths[1]};
  CHECK_THROWS_AS(joint_log_likelihood(wrong, part), Error);
  CHECK_THROWS_AS(finite_difference_gradient(p, part, 0.01), Error);

  const std::vector<Label> bad{Label::healthy, Label::indeterminate};
  CHECK_THROWS_AS(single_stage_partition(Eigen::MatrixXd::Zero(2, 1), bad, true), Error);
}
