#pragma once

// Test-side generators and reference implementations. Nothing here calls the
// library's likelihood code, so it can serve as an independent check on it.

#include <Eigen/Core>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "seqtriage/model.hpp"

namespace testsupport {

using seqtriage::Band;
using seqtriage::Label;
using seqtriage::Parameters;
using seqtriage::PatientRecord;
using seqtriage::StageDataset;
using seqtriage::StageLayout;

inline double plain_cdf(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Direct sum of log category probabilities, no log-space tricks. Only valid
// where the probabilities are not tiny.
inline double naive_log_likelihood(const Parameters& p, const StageDataset& d) {
  double total = 0.0;
  const int k_stages = d.layout().stages();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const PatientRecord& r = d.records()[i];
    for (int k = 1; k <= r.deepest_stage(); ++k) {
      const Eigen::VectorXd x = d.cumulative_features(i, k);
      double eta = 0.0;
      for (Eigen::Index j = 0; j < x.size(); ++j) eta += p.beta[j] * x[j];
      const Label y = *r.labels[k - 1];
      double prob = 0.0;
      if (k == k_stages) {
        const double c = *p.final_cut;
        prob = y == Label::healthy ? plain_cdf(c - eta) : 1.0 - plain_cdf(c - eta);
      } else {
        const Band b = p.bands[k - 1];
        if (y == Label::healthy) {
          prob = plain_cdf(b.lower - eta);
        } else if (y == Label::indeterminate) {
          prob = plain_cdf(b.upper - eta) - plain_cdf(b.lower - eta);
        } else {
          prob = 1.0 - plain_cdf(b.upper - eta);
        }
      }
      total += std::log(prob);
    }
  }
  return total;
}

inline double logistic_draw(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(1e-12, 1.0 - 1e-12);
  const double v = u(rng);
  return std::log(v / (1.0 - v));
}

// Cascade data drawn from `truth` with N(0, 1) features.
inline StageDataset simulate(const StageLayout& layout, const Parameters& truth, int n,
                             std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<PatientRecord> records;
  const int k_stages = layout.stages();
  for (int i = 0; i < n; ++i) {
    PatientRecord r;
    r.id = "R" + std::to_string(100000 + i);
    double eta = 0.0;
    int offset = 0;
    for (int k = 1; k <= k_stages; ++k) {
      Eigen::VectorXd x(layout.new_features(k));
      for (Eigen::Index j = 0; j < x.size(); ++j) {
        x[j] = z(rng);
        eta += truth.beta[offset + j] * x[j];
      }
      offset += layout.new_features(k);
      r.features.push_back(x);
      const double y = eta + logistic_draw(rng);
      Label lab;
      if (k == k_stages) {
        lab = y >= *truth.final_cut ? Label::sick : Label::healthy;
      } else {
        const Band b = truth.bands[k - 1];
        lab = y < b.lower ? Label::healthy : (y < b.upper ? Label::indeterminate : Label::sick);
      }
      r.labels.push_back(lab);
      if (lab != Label::indeterminate) break;
    }
    records.push_back(std::move(r));
  }
  return StageDataset(layout, std::move(records));
}

inline StageLayout random_layout(std::mt19937_64& rng, int k_stages = 2) {
  std::uniform_int_distribution<int> p(1, 3);
  std::vector<int> counts;
  std::vector<std::string> names;
  for (int k = 0; k < k_stages; ++k) {
    counts.push_back(p(rng));
    for (int j = 0; j < counts.back(); ++j) names.push_back("f" + std::to_string(names.size() + 1));
  }
  return StageLayout(counts, names);
}

inline Parameters random_parameters(const StageLayout& layout, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> lo(-2.0, 0.0);
  std::uniform_real_distribution<double> gap(0.3, 3.0);
  std::uniform_real_distribution<double> cut(-1.5, 1.5);
  Eigen::VectorXd beta(layout.total_features());
  for (Eigen::Index j = 0; j < beta.size(); ++j) beta[j] = z(rng);
  std::vector<Band> bands;
  for (int k = 1; k < layout.stages(); ++k) {
    const double l = lo(rng);
    bands.push_back({l, l + gap(rng)});
  }
  return Parameters::for_layout(layout, beta, bands, cut(rng));
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("seqtriage_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testsupport
