#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "seqtriage/model.hpp"

namespace seqtriage {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  // Same counts with the roles of the two classes exchanged.
  ConfusionCounts swapped() const { return {tn, fn, tp, fp}; }
  bool operator==(const ConfusionCounts&) const = default;
};

// Rows are the true class, columns the predicted class, order (0, 0.5, 1).
struct MulticlassConfusion {
  std::array<std::array<std::size_t, 3>, 3> counts{};

  std::size_t total() const;
  ConfusionCounts one_vs_rest(Label positive) const;
};

// Absent values mark 0/0 ratios.
struct MetricReport {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> ppv;
  std::optional<double> npv;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::optional<double> prevalence;
  std::optional<double> detection_rate;
  std::optional<double> detection_prevalence;
  std::optional<double> balanced_accuracy;

  // (name, value) pairs in a fixed order, for tabulation.
  std::vector<std::pair<std::string_view, std::optional<double>>> entries() const;
};

MulticlassConfusion multiclass_confusion(std::span<const Label> y_true,
                                         std::span<const Label> y_pred);

// One-vs-rest counts against `positive`. Throws on length mismatch or empty
// input.
ConfusionCounts confusion(std::span<const Label> y_true, std::span<const Label> y_pred,
                          Label positive);
// Numeric labels; anything but 0, 0.5 or 1 is rejected.
ConfusionCounts confusion(std::span<const double> y_true, std::span<const double> y_pred,
                          double positive);

MetricReport classification_report(const ConfusionCounts& counts);

}  // namespace seqtriage
