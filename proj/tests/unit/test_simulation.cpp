#include <catch_amalgamated.hpp>

#include <cmath>

#include "seqtriage/errors.hpp"
#include "seqtriage/simulation.hpp"

using namespace seqtriage;
using Catch::Approx;

namespace {

SimConfig small(int n = 1500, int reps = 6) {
  SimConfig c = SimConfig::paper();
  c.n_stage1 = n;
  c.replications = reps;
  return c;
}

}  // namespace

TEST_CASE("presets carry the designed values", "[simulation]") {
  const SimConfig p = SimConfig::paper();
  CHECK(p.n_stage1 == 10000);
  CHECK(p.replications == 100);
  CHECK(p.stage_feature_counts == std::vector<int>{4, 3});
  Eigen::VectorXd beta(7);
  beta << 2, 2, 2, 2, 4, 4, 4;
  CHECK(p.true_beta == beta);
  CHECK(p.true_bands == std::vector<Band>{{-2.2, 2.2}});
  CHECK(p.true_final_cut == 0.5);
  CHECK(p.feature_specs[0] == FeatureSpec::bernoulli(0.3));
  CHECK(p.feature_specs[3] == FeatureSpec::normal(0.0, 2.0));
  CHECK(p.truth().free_parameter_count() == 10);

  const SimConfig d = SimConfig::desk();
  CHECK(d.n_stage1 == 2000);
  CHECK(d.replications == 30);

  SimConfig bad = p;
  bad.n_stage1 = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = p;
  bad.feature_specs.pop_back();
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("cohorts are pure functions of seed and replication", "[simulation]") {
  const SimConfig c = small();
  const StageDataset a = generate_cohort(c, 3);
  const StageDataset b = generate_cohort(c, 3);
  const StageDataset other = generate_cohort(c, 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.records()[i].id == b.records()[i].id);
    CHECK(a.records()[i].labels == b.records()[i].labels);
    for (std::size_t k = 0; k < a.records()[i].features.size(); ++k) {
      CHECK(a.records()[i].features[k] == b.records()[i].features[k]);
    }
  }
  CHECK(a.records()[0].features[0] != other.records()[0].features[0]);
}

TEST_CASE("generated cohorts follow the cascade design", "[simulation]") {
  const SimConfig c = small(5000);
  const StageDataset d = generate_cohort(c, 0);
  CHECK(d.size() == 5000);
  CHECK_NOTHROW(d.validate_training());
  const double n2 = static_cast<double>(d.stage_size(2));
  CHECK(n2 > 0.0);
  CHECK(n2 < 5000.0);
  // Feature moments of the stage-1 block.
  double bern = 0.0, x4 = 0.0, x4sq = 0.0;
  for (const PatientRecord& r : d.records()) {
    bern += r.features[0][0];
    x4 += r.features[0][3];
    x4sq += r.features[0][3] * r.features[0][3];
  }
  CHECK(bern / 5000 == Approx(0.3).margin(0.03));
  CHECK(x4 / 5000 == Approx(0.0).margin(0.08));
  CHECK(x4sq / 5000 == Approx(2.0).margin(0.15));  // variance 2, not sd 2
  for (const PatientRecord& r : d.records()) {
    if (r.deepest_stage() == 2) CHECK(r.labels[1] != Label::indeterminate);
  }
}

TEST_CASE("estimator statistics", "[simulation]") {
  Eigen::MatrixXd est(4, 2);
  est << 1, 10, 2, 10, 3, 10, 4, 10;
  Eigen::VectorXd truth(2);
  truth << 2, 9;
  const auto s = estimator_statistics(est, truth);
  REQUIRE(s.size() == 2);
  CHECK(s[0].mean == 2.5);
  CHECK(*s[0].std == Approx(std::sqrt(5.0 / 3.0)));
  CHECK(s[0].mse == Approx((1 + 0 + 1 + 4) / 4.0));
  CHECK(*s[1].std == 0.0);
  CHECK(s[1].mse == 1.0);

  const auto one = estimator_statistics(est.topRows(1), truth);
  CHECK_FALSE(one[0].std.has_value());
  CHECK_THROWS_AS(estimator_statistics(est, Eigen::VectorXd::Zero(3)), Error);

  CHECK(relative_efficiency(4.0, 2.0) == 2.0);
  CHECK_THROWS_AS(relative_efficiency(0.0, 1.0), Error);
}

TEST_CASE("Monte Carlo report structure", "[simulation]") {
  const SimConfig c = small();
  const MonteCarloReport r = run_monte_carlo(c);
  CHECK(r.replications_used + static_cast<int>(r.excluded.size()) == c.replications);
  CHECK_FALSE(r.exclusion_limit_exceeded);
  CHECK(r.stage_sizes.size() == static_cast<std::size_t>(c.replications));
  REQUIRE(r.methods.size() == 3);
  CHECK(r.method("joint").parameters.size() == 10);
  CHECK(r.method("baseline_stage1").parameters ==
        std::vector<std::string>{"beta1", "beta2", "beta3", "beta4", "L1", "U1"});
  CHECK(r.method("baseline_stage2").parameters.size() == 8);
  CHECK(r.method("joint").estimates.rows() == r.replications_used);
  CHECK_THROWS_AS(r.method("nope"), Error);

  // beta1..4 against both baseline stages, beta5..7 and C2 against stage 2,
  // L1 and U1 against stage 1.
  CHECK(r.efficiency.size() == 4 * 2 + 3 + 2 + 1);
  int headline = 0;
  for (const EfficiencyEntry& e : r.efficiency) headline += e.headline;
  CHECK(headline == 10);
  REQUIRE(r.stage_mse.size() == 2);
  CHECK(r.stage_mse[0].joint >= 0.0);
  CHECK_FALSE(r.metrics.empty());
  for (const MetricAggregate& m : r.metrics) {
    CHECK(m.coverage <= static_cast<std::size_t>(r.replications_used));
    if (m.mean) {
      CHECK(*m.mean >= 0.0);
      CHECK(*m.mean <= 1.0);
    }
  }
}

TEST_CASE("parallel and serial runs agree exactly", "[simulation]") {
  const SimConfig c = small(800, 5);
  const MonteCarloReport a = run_monte_carlo(c, {}, 1);
  const MonteCarloReport b = run_monte_carlo(c, {}, 3);
  CHECK(a.method("joint").estimates == b.method("joint").estimates);
  CHECK(a.method("baseline_stage2").estimates == b.method("baseline_stage2").estimates);
  CHECK(a.stage_sizes == b.stage_sizes);
}
