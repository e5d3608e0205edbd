#include "seqtriage/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <thread>

#include "seqtriage/errors.hpp"
#include "seqtriage/likelihood.hpp"
#include "seqtriage/random.hpp"

namespace seqtriage {

std::string FeatureSpec::describe() const {
  char buf[96];
  if (kind == Kind::bernoulli) {
    std::snprintf(buf, sizeof buf, "Bernoulli(%g)", a);
  } else {
    std::snprintf(buf, sizeof buf, "Normal(%g, %g)", a, b);
  }
  return buf;
}

SimConfig SimConfig::paper() {
  SimConfig c;
  c.n_stage1 = 10000;
  c.stage_feature_counts = {4, 3};
  c.feature_specs = {FeatureSpec::bernoulli(0.3), FeatureSpec::normal(-1, 1),
                     FeatureSpec::normal(1, 1),    FeatureSpec::normal(0, 2),
                     FeatureSpec::bernoulli(0.4), FeatureSpec::normal(-1, 1),
                     FeatureSpec::normal(0, 1)};
  c.true_beta.resize(7);
  c.true_beta << 2, 2, 2, 2, 4, 4, 4;
  c.true_bands = {{-2.2, 2.2}};
  c.true_final_cut = 0.5;
  c.noise_scale = {1.0, 1.0};
  c.replications = 100;
  return c;
}

SimConfig SimConfig::desk() {
  SimConfig c = paper();
  c.n_stage1 = 2000;
  c.replications = 30;
  return c;
}

StageLayout SimConfig::layout() const {
  const int total = std::accumulate(stage_feature_counts.begin(), stage_feature_counts.end(), 0);
  std::vector<std::string> names;
  for (int j = 1; j <= total; ++j) names.push_back("X" + std::to_string(j));
  return StageLayout(stage_feature_counts, std::move(names));
}

Parameters SimConfig::truth() const {
  return Parameters::for_layout(layout(), true_beta, true_bands, true_final_cut);
}

void SimConfig::validate() const {
  if (n_stage1 < 1) throw Error(ErrorCode::validation, "n_stage1 must be at least 1");
  if (replications < 1) throw Error(ErrorCode::validation, "replications must be at least 1");
  const StageLayout l = layout();
  if (static_cast<int>(feature_specs.size()) != l.total_features()) {
    throw Error(ErrorCode::validation, "one feature distribution per feature is required");
  }
  for (const FeatureSpec& f : feature_specs) {
    if (f.kind == FeatureSpec::Kind::bernoulli && !(f.a >= 0.0 && f.a <= 1.0)) {
      throw Error(ErrorCode::validation, "Bernoulli probability outside [0, 1]", f.describe());
    }
    if (f.kind == FeatureSpec::Kind::normal && !(f.b > 0.0)) {
      throw Error(ErrorCode::validation, "normal variance must be positive", f.describe());
    }
  }
  if (static_cast<int>(noise_scale.size()) != l.stages()) {
    throw Error(ErrorCode::validation, "one noise scale per stage is required");
  }
  for (double s : noise_scale) {
    if (!(s > 0.0)) throw Error(ErrorCode::validation, "noise scale must be positive");
  }
  truth();
}

// ---------------------------------------------------------------------------
// Cohort generation

namespace {

double draw_feature(const FeatureSpec& spec, CounterRng& rng) {
  if (spec.kind == FeatureSpec::Kind::bernoulli) return rng.uniform() < spec.a ? 1.0 : 0.0;
  std::normal_distribution<double> normal(spec.a, std::sqrt(spec.b));
  return normal(rng);
}

std::string patient_id(int index, int n) {
  const int width = std::max(6, static_cast<int>(std::to_string(n).size()));
  std::string digits = std::to_string(index + 1);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, width - digits.size(), '0');
  return "P" + digits;
}

}  // namespace

StageDataset generate_cohort(const SimConfig& config, int replication_index) {
  config.validate();
  const StageLayout layout = config.layout();
  const Parameters truth = config.truth();
  // Scrambling the seed first keeps nearby seeds from sharing replication
  // keys (with a plain xor, seeds 2 and 3 cover the same keys over 30 runs).
  const std::uint64_t key = mix64(config.seed) ^ static_cast<std::uint64_t>(replication_index);
  const int k_stages = layout.stages();

  std::vector<PatientRecord> records;
  records.reserve(static_cast<std::size_t>(config.n_stage1));
  for (int i = 0; i < config.n_stage1; ++i) {
    PatientRecord rec;
    rec.id = patient_id(i, config.n_stage1);
    double eta = 0.0;
    int offset = 0;
    for (int k = 1; k <= k_stages; ++k) {
      CounterRng rng(key, (static_cast<std::uint64_t>(i) << 8) | static_cast<std::uint64_t>(k));
      const int p = layout.new_features(k);
      Eigen::VectorXd x(p);
      for (int j = 0; j < p; ++j) {
        x[j] = draw_feature(config.feature_specs[offset + j], rng);
        eta += truth.beta[offset + j] * x[j];
      }
      offset += p;
      const double u = rng.uniform();
      const double noise = config.noise_scale[k - 1] * (std::log(u) - std::log1p(-u));
      const Label label = classify_latent(eta + noise, k, truth);
      rec.features.push_back(std::move(x));
      rec.labels.emplace_back(label);
      if (label != Label::indeterminate) break;
    }
    records.push_back(std::move(rec));
  }
  return StageDataset(layout, std::move(records));
}

// ---------------------------------------------------------------------------
// Aggregates

std::vector<ParameterStatistics> estimator_statistics(const Eigen::MatrixXd& estimates,
                                                      const Eigen::VectorXd& truth) {
  if (estimates.rows() < 1) {
    throw Error(ErrorCode::validation, "estimator statistics need at least one replication");
  }
  if (estimates.cols() != truth.size()) {
    throw Error(ErrorCode::dimension_mismatch, "truth length does not match estimate columns");
  }
  const double n = static_cast<double>(estimates.rows());
  std::vector<ParameterStatistics> out;
  for (Eigen::Index j = 0; j < estimates.cols(); ++j) {
    const auto col = estimates.col(j);
    ParameterStatistics s;
    s.mean = col.mean();
    s.mse = (col.array() - truth[j]).square().sum() / n;
    if (estimates.rows() > 1) {
      s.std = std::sqrt((col.array() - s.mean).square().sum() / (n - 1.0));
    }
    out.push_back(s);
  }
  return out;
}

double relative_efficiency(double var_baseline, double var_joint) {
  if (!(var_baseline > 0.0) || !(var_joint > 0.0)) {
    throw Error(ErrorCode::degenerate_data, "relative efficiency needs positive variances");
  }
  return var_baseline / var_joint;
}

const MethodEstimates& MonteCarloReport::method(const std::string& name) const {
  for (const MethodEstimates& m : methods) {
    if (m.method == name) return m;
  }
  throw Error(ErrorCode::not_found, "no such method in report", name);
}

namespace {

std::vector<std::string> parameter_names(const Parameters& p, int first_stage) {
  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < p.beta.size(); ++j) names.push_back("beta" + std::to_string(j + 1));
  for (std::size_t k = 0; k < p.bands.size(); ++k) {
    const std::string s = std::to_string(first_stage + static_cast<int>(k));
    names.push_back("L" + s);
    names.push_back("U" + s);
  }
  if (p.final_cut) names.push_back("C" + std::to_string(first_stage + p.stage_count() - 1));
  return names;
}

Eigen::VectorXd natural_vector(const Parameters& p) { return to_unconstrained(p, false); }

Parameters stage_truth(const Parameters& truth, int stage) {
  Parameters p;
  p.stage_widths = {truth.width(stage)};
  p.beta = truth.beta.head(truth.width(stage));
  if (truth.is_terminal(stage)) {
    p.final_cut = truth.final_cut;
  } else {
    p.bands = {truth.bands[stage - 1]};
  }
  return p;
}

struct StageMetrics {
  // [method][stage-1] -> one report per positive class
  std::vector<std::vector<std::vector<MetricReport>>> reports;
};

struct ReplicationOutcome {
  bool included = false;
  std::vector<std::size_t> stage_sizes;
  FitResult joint;
  std::vector<FitResult> baseline;
  StageMetrics metrics;
};

std::vector<Label> positive_classes(int stage, int k_stages) {
  if (stage < k_stages) return {Label::healthy, Label::indeterminate, Label::sick};
  return {Label::sick};
}

// In-sample predictions of each stage's view: the label the fitted model
// assigns to the predictor against the true label.
std::vector<MetricReport> stage_reports(const StageDataset& data, int stage,
                                        const Parameters& params, int param_stage) {
  std::vector<Label> truth_labels;
  std::vector<Label> predicted;
  for (std::size_t idx : data.stage_members(stage)) {
    truth_labels.push_back(*data.records()[idx].labels[stage - 1]);
    const double eta = linear_predictor(params, param_stage, data.cumulative_features(idx, stage));
    predicted.push_back(classify_latent(eta, param_stage, params));
  }
  std::vector<MetricReport> out;
  if (truth_labels.empty()) return out;
  const MulticlassConfusion m = multiclass_confusion(truth_labels, predicted);
  for (Label pos : positive_classes(stage, data.layout().stages())) {
    out.push_back(classification_report(m.one_vs_rest(pos)));
  }
  return out;
}

ReplicationOutcome run_replication(const SimConfig& config, const FitOptions& opts, int index) {
  ReplicationOutcome out;
  const StageDataset data = generate_cohort(config, index);
  const int k_stages = data.layout().stages();
  for (int k = 1; k <= k_stages; ++k) out.stage_sizes.push_back(data.stage_size(k));
  try {
    out.joint = fit_joint(data, opts);
    out.baseline = fit_baseline_stagewise(data, opts);
  } catch (const Error&) {
    // Degenerate cohort (e.g. an empty stage); counted as an exclusion.
    return out;
  }
  out.included = out.joint.converged &&
                 std::all_of(out.baseline.begin(), out.baseline.end(),
                             [](const FitResult& r) { return r.converged; });
  if (!out.included) return out;

  out.metrics.reports.resize(2);
  for (int k = 1; k <= k_stages; ++k) {
    out.metrics.reports[0].push_back(stage_reports(data, k, out.joint.params, k));
    out.metrics.reports[1].push_back(stage_reports(data, k, out.baseline[k - 1].params, 1));
  }
  return out;
}

std::string class_name(Label l) { return std::string(label_text(l)); }

}  // namespace

MonteCarloReport run_monte_carlo(const SimConfig& config, const FitOptions& opts, int jobs) {
  config.validate();
  opts.validate();
  const int reps = config.replications;
  std::vector<ReplicationOutcome> outcomes(static_cast<std::size_t>(reps));

  const int workers = std::clamp(jobs, 1, reps);
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next++; i < reps; i = next++) {
      outcomes[static_cast<std::size_t>(i)] = run_replication(config, opts, i);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  MonteCarloReport report;
  report.config = config;
  const Parameters truth = config.truth();
  const int k_stages = truth.stage_count();

  std::vector<int> included;
  for (int i = 0; i < reps; ++i) {
    const ReplicationOutcome& o = outcomes[static_cast<std::size_t>(i)];
    report.stage_sizes.push_back(o.stage_sizes);
    if (o.included) {
      included.push_back(i);
    } else {
      report.excluded.push_back(i);
    }
  }
  report.replications_used = static_cast<int>(included.size());
  report.exclusion_limit_exceeded =
      static_cast<double>(report.excluded.size()) > kMaxExcludedFraction * reps;
  if (included.empty()) return report;

  // Estimates per method.
  auto collect = [&](const std::string& name, int stage, const Parameters& truth_params,
                     int first_stage, auto&& pick) {
    MethodEstimates m;
    m.method = name;
    m.stage = stage;
    m.parameters = parameter_names(truth_params, first_stage);
    m.truth = natural_vector(truth_params);
    m.estimates.resize(static_cast<Eigen::Index>(included.size()), m.truth.size());
    for (std::size_t r = 0; r < included.size(); ++r) {
      m.estimates.row(static_cast<Eigen::Index>(r)) =
          natural_vector(pick(outcomes[static_cast<std::size_t>(included[r])])).transpose();
    }
    m.stats = estimator_statistics(m.estimates, m.truth);
    return m;
  };
  report.methods.push_back(
      collect("joint", 0, truth, 1, [](const ReplicationOutcome& o) -> const Parameters& {
        return o.joint.params;
      }));
  for (int k = 1; k <= k_stages; ++k) {
    report.methods.push_back(collect(
        "baseline_stage" + std::to_string(k), k, stage_truth(truth, k), k,
        [k](const ReplicationOutcome& o) -> const Parameters& { return o.baseline[k - 1].params; }));
  }

  // Relative efficiency of each joint parameter against the baseline stages
  // that also estimate it.
  const MethodEstimates& joint = report.methods.front();
  auto variance_of = [](const MethodEstimates& m, const std::string& name) -> std::optional<double> {
    for (std::size_t j = 0; j < m.parameters.size(); ++j) {
      if (m.parameters[j] == name && m.stats[j].std) return *m.stats[j].std * *m.stats[j].std;
    }
    return std::nullopt;
  };
  for (std::size_t j = 0; j < joint.parameters.size(); ++j) {
    const std::string& name = joint.parameters[j];
    std::vector<int> stages;
    for (int k = 1; k <= k_stages; ++k) {
      const auto& names = report.methods[static_cast<std::size_t>(k)].parameters;
      if (std::find(names.begin(), names.end(), name) != names.end()) stages.push_back(k);
    }
    for (int k : stages) {
      EfficiencyEntry e;
      e.parameter = name;
      e.baseline_stage = k;
      e.headline = (k == stages.back());
      const auto vb = variance_of(report.methods[static_cast<std::size_t>(k)], name);
      const auto vj = variance_of(joint, name);
      if (vb && vj && *vb > 0.0 && *vj > 0.0) e.value = relative_efficiency(*vb, *vj);
      report.efficiency.push_back(e);
    }
  }

  for (int k = 1; k <= k_stages; ++k) {
    const MethodEstimates& base = report.methods[static_cast<std::size_t>(k)];
    const Eigen::Index w = truth.width(k);
    StageMse s;
    s.stage = k;
    for (Eigen::Index j = 0; j < w; ++j) {
      s.joint += std::pow(joint.stats[j].mean - joint.truth[j], 2);
      s.baseline += std::pow(base.stats[j].mean - base.truth[j], 2);
    }
    s.joint /= static_cast<double>(w);
    s.baseline /= static_cast<double>(w);
    report.stage_mse.push_back(s);
  }

  // Prediction metrics averaged over replications.
  const char* method_names[2] = {"joint", "baseline"};
  for (int m = 0; m < 2; ++m) {
    for (int k = 1; k <= k_stages; ++k) {
      const auto classes = positive_classes(k, k_stages);
      for (std::size_t c = 0; c < classes.size(); ++c) {
        const auto names = MetricReport{}.entries();
        for (std::size_t e = 0; e < names.size(); ++e) {
          MetricAggregate agg;
          agg.method = method_names[m];
          agg.stage = k;
          agg.positive_class = class_name(classes[c]);
          agg.metric = std::string(names[e].first);
          double sum = 0.0;
          for (int i : included) {
            const auto& reps_k = outcomes[static_cast<std::size_t>(i)].metrics.reports[m][k - 1];
            if (reps_k.empty()) continue;
            const auto value = reps_k[c].entries()[e].second;
            if (value) {
              sum += *value;
              ++agg.coverage;
            }
          }
          if (agg.coverage > 0) agg.mean = sum / static_cast<double>(agg.coverage);
          report.metrics.push_back(agg);
        }
      }
    }
  }
  return report;
}

}  // namespace seqtriage
