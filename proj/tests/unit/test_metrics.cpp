#include <catch_amalgamated.hpp>

#include <random>

#include "metric_fixtures.hpp"
#include "seqtriage/errors.hpp"
#include "seqtriage/metrics.hpp"

using namespace seqtriage;
using Catch::Approx;

TEST_CASE("classification report matches hand-computed values", "[metrics]") {
  for (const auto& fx : testsupport::metric_fixtures()) {
    INFO(fx.name);
    const auto entries = classification_report(fx.counts).entries();
    REQUIRE(entries.size() == fx.expected.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      INFO(entries[i].first);
      REQUIRE(entries[i].second.has_value() == fx.expected[i].has_value());
      if (fx.expected[i]) CHECK(*entries[i].second == *fx.expected[i]);
    }
  }
}

TEST_CASE("perfect predictor", "[metrics]") {
  const MetricReport r = classification_report({12, 0, 30, 0});
  for (auto v : {r.sensitivity, r.specificity, r.ppv, r.npv, r.f1, r.balanced_accuracy}) {
    REQUIRE(v.has_value());
    CHECK(*v == 1.0);
  }
}

TEST_CASE("empty confusion reports every ratio as absent", "[metrics]") {
  const MetricReport r = classification_report({0, 0, 0, 0});
  for (const auto& [name, v] : r.entries()) {
    INFO(name);
    CHECK_FALSE(v.has_value());
  }
}

TEST_CASE("counting from labels", "[metrics]") {
  const std::vector<Label> t{Label::healthy, Label::indeterminate, Label::sick, Label::sick,
                             Label::healthy, Label::indeterminate};
  const std::vector<Label> p{Label::healthy, Label::sick, Label::sick, Label::indeterminate,
                             Label::indeterminate, Label::indeterminate};
  const MulticlassConfusion m = multiclass_confusion(t, p);
  CHECK(m.total() == 6);
  CHECK(m.counts[1][2] == 1);
  CHECK(confusion(t, p, Label::sick) == ConfusionCounts{1, 1, 3, 1});
  CHECK(confusion(t, p, Label::indeterminate) == ConfusionCounts{1, 2, 2, 1});
  CHECK(confusion(t, p, Label::healthy) == ConfusionCounts{1, 0, 4, 1});

  const std::vector<double> tn{0, 0.5, 1, 1, 0, 0.5};
  const std::vector<double> pn{0, 1, 1, 0.5, 0.5, 0.5};
  CHECK(confusion(tn, pn, 1.0) == confusion(t, p, Label::sick));
  const std::vector<double> bad{0, 0.7, 1, 1, 0, 0.5};
  CHECK_THROWS_AS(confusion(bad, pn, 1.0), Error);
  CHECK_THROWS_AS(confusion(std::vector<Label>{}, std::vector<Label>{}, Label::sick), Error);
  CHECK_THROWS_AS(confusion(t, std::vector<Label>(3, Label::sick), Label::sick), Error);
}

TEST_CASE("one-vs-rest counts partition the sample", "[metrics][property]") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> lab(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Label> t, p;
    for (int i = 0; i < 1 + trial; ++i) {
      t.push_back(static_cast<Label>(lab(rng)));
      p.push_back(static_cast<Label>(lab(rng)));
    }
    for (Label pos : {Label::healthy, Label::indeterminate, Label::sick}) {
      const ConfusionCounts c = confusion(t, p, pos);
      CHECK(c.total() == t.size());
      const MetricReport r = classification_report(c);
      // Swapping classes exchanges sensitivity/specificity and PPV/NPV.
      const MetricReport s = classification_report(c.swapped());
      CHECK(r.sensitivity == s.specificity);
      CHECK(r.ppv == s.npv);
      if (r.balanced_accuracy) CHECK(*r.balanced_accuracy == Approx(*s.balanced_accuracy));
    }
  }
}
