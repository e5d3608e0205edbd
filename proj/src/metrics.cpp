#include "seqtriage/metrics.hpp"

#include <string>

#include "seqtriage/errors.hpp"

namespace seqtriage {

namespace {

std::optional<double> ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::validation, "label lists differ in length",
                std::to_string(a) + " vs " + std::to_string(b));
  }
  if (a == 0) throw Error(ErrorCode::validation, "label lists are empty");
}

}  // namespace

std::size_t MulticlassConfusion::total() const {
  std::size_t n = 0;
  for (const auto& row : counts) {
    for (std::size_t c : row) n += c;
  }
  return n;
}

ConfusionCounts MulticlassConfusion::one_vs_rest(Label positive) const {
  const int p = label_index(positive);
  ConfusionCounts out;
  for (int t = 0; t < 3; ++t) {
    for (int q = 0; q < 3; ++q) {
      const std::size_t c = counts[t][q];
      if (t == p && q == p) {
        out.tp += c;
      } else if (t == p) {
        out.fn += c;
      } else if (q == p) {
        out.fp += c;
      } else {
        out.tn += c;
      }
    }
  }
  return out;
}

MulticlassConfusion multiclass_confusion(std::span<const Label> y_true,
                                         std::span<const Label> y_pred) {
  check_lengths(y_true.size(), y_pred.size());
  MulticlassConfusion m;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    ++m.counts[label_index(y_true[i])][label_index(y_pred[i])];
  }
  return m;
}

ConfusionCounts confusion(std::span<const Label> y_true, std::span<const Label> y_pred,
                          Label positive) {
  return multiclass_confusion(y_true, y_pred).one_vs_rest(positive);
}

ConfusionCounts confusion(std::span<const double> y_true, std::span<const double> y_pred,
                          double positive) {
  check_lengths(y_true.size(), y_pred.size());
  std::vector<Label> t;
  std::vector<Label> p;
  t.reserve(y_true.size());
  p.reserve(y_pred.size());
  for (double v : y_true) t.push_back(label_from_value(v));
  for (double v : y_pred) p.push_back(label_from_value(v));
  return confusion(t, p, label_from_value(positive));
}

MetricReport classification_report(const ConfusionCounts& c) {
  const double tp = static_cast<double>(c.tp);
  const double fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn);
  const double fn = static_cast<double>(c.fn);
  const double n = static_cast<double>(c.total());

  MetricReport r;
  r.sensitivity = ratio(tp, tp + fn);
  r.specificity = ratio(tn, tn + fp);
  r.ppv = ratio(tp, tp + fp);
  r.npv = ratio(tn, tn + fn);
  r.precision = r.ppv;
  r.recall = r.sensitivity;
  // Harmonic mean of precision and recall, taken from the counts so it is
  // correctly rounded. Absent when either input is, or both are zero.
  if (r.ppv && r.sensitivity && tp > 0) r.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);
  r.prevalence = ratio(tp + fn, n);
  r.detection_rate = ratio(tp, n);
  r.detection_prevalence = ratio(tp + fp, n);
  if (r.sensitivity && r.specificity) r.balanced_accuracy = 0.5 * (*r.sensitivity + *r.specificity);
  return r;
}

std::vector<std::pair<std::string_view, std::optional<double>>> MetricReport::entries() const {
  return {{"sensitivity", sensitivity},
          {"specificity", specificity},
          {"ppv", ppv},
          {"npv", npv},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1},
          {"prevalence", prevalence},
          {"detection_rate", detection_rate},
          {"detection_prevalence", detection_prevalence},
          {"balanced_accuracy", balanced_accuracy}};
}

}  // namespace seqtriage
