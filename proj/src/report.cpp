#include "seqtriage/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "seqtriage/dataio.hpp"

namespace seqtriage {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

ordered_json optional_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::string optional_csv(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

// ---------------------------------------------------------------------------
// Minimal SVG line/point chart over categorical x positions.

struct Series {
  std::string name;
  std::string colour;
  std::vector<std::optional<double>> values;
};

std::string svg_chart(const std::string& title, const std::vector<std::string>& categories,
                      const std::vector<Series>& series, bool log_scale) {
  const double width = 760, height = 420, left = 70, right = 160, top = 40, bottom = 50;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  auto tr = [log_scale](double v) { return log_scale ? std::log10(v) : v; };
  for (const Series& s : series) {
    for (const auto& v : s.values) {
      if (!v || (log_scale && *v <= 0.0)) continue;
      lo = std::min(lo, tr(*v));
      hi = std::max(hi, tr(*v));
    }
  }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const std::size_t n = categories.size();
  auto x_of = [&](std::size_t i) { return left + plot_w * (static_cast<double>(i) + 0.5) / static_cast<double>(std::max<std::size_t>(n, 1)); };
  auto y_of = [&](double v) { return top + plot_h * (1.0 - (tr(v) - lo) / (hi - lo)); };

  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "font-family=\"sans-serif\" font-size=\"12\">\n",
                width, height);
  out += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"22\" font-size=\"15\">%s</text>\n", left,
                title.c_str());
  out += buf;
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" "
                "stroke=\"#444\"/>\n",
                left, top, plot_w, plot_h);
  out += buf;
  for (int t = 0; t <= 4; ++t) {
    const double tv = lo + (hi - lo) * t / 4.0;
    const double y = top + plot_h * (1.0 - t / 4.0);
    const double label = log_scale ? std::pow(10.0, tv) : tv;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.4g</text>\n",
                  left, y, left + plot_w, y, left - 6, y + 4, label);
    out += buf;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%s</text>\n",
                  x_of(i), top + plot_h + 20, categories[i].c_str());
    out += buf;
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const Series& ser = series[s];
    std::string path;
    for (std::size_t i = 0; i < ser.values.size() && i < n; ++i) {
      const auto& v = ser.values[i];
      if (!v || (log_scale && *v <= 0.0)) continue;
      std::snprintf(buf, sizeof buf, "%s%.1f,%.1f", path.empty() ? "" : " ", x_of(i), y_of(*v));
      path += buf;
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3.5\" fill=\"%s\"/>\n",
                    x_of(i), y_of(*v), ser.colour.c_str());
      out += buf;
    }
    if (!path.empty()) {
      out += "<polyline fill=\"none\" stroke=\"" + ser.colour + "\" points=\"" + path + "\"/>\n";
    }
    const double ly = top + 14.0 + 18.0 * static_cast<double>(s);
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"12\" height=\"12\" fill=\"%s\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\">%s</text>\n",
                  left + plot_w + 12, ly - 10, ser.colour.c_str(), left + plot_w + 30, ly,
                  ser.name.c_str());
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

const char* kColours[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};

std::optional<double> stat_for(const MethodEstimates& m, const std::string& name, bool std_dev) {
  for (std::size_t j = 0; j < m.parameters.size(); ++j) {
    if (m.parameters[j] == name) return std_dev ? m.stats[j].std : std::optional(m.stats[j].mean);
  }
  return std::nullopt;
}

}  // namespace

ordered_json sim_config_to_json(const SimConfig& c) {
  ordered_json features = ordered_json::array();
  for (const FeatureSpec& f : c.feature_specs) {
    if (f.kind == FeatureSpec::Kind::bernoulli) {
      features.push_back({{"distribution", "bernoulli"}, {"p", f.a}});
    } else {
      features.push_back({{"distribution", "normal"}, {"mean", f.a}, {"variance", f.b}});
    }
  }
  ordered_json bands = ordered_json::array();
  for (const Band& b : c.true_bands) bands.push_back({{"lower", b.lower}, {"upper", b.upper}});
  ordered_json beta = ordered_json::array();
  for (double v : c.true_beta) beta.push_back(v);
  return {{"n_stage1", c.n_stage1},
          {"stage_feature_counts", c.stage_feature_counts},
          {"features", features},
          {"true_beta", beta},
          {"true_bands", bands},
          {"true_final_cut", c.true_final_cut},
          {"noise_scale", c.noise_scale},
          {"replications", c.replications},
          {"seed", c.seed}};
}

ordered_json report_to_json(const MonteCarloReport& r, const ordered_json& run_config) {
  ordered_json j;
  j["schema"] = kReportSchema;
  j["run_config"] = run_config;
  j["simulation"] = sim_config_to_json(r.config);

  const std::size_t k_stages = r.config.stage_feature_counts.size();
  ordered_json mean_sizes = ordered_json::array();
  for (std::size_t k = 0; k < k_stages; ++k) {
    double sum = 0.0;
    for (const auto& s : r.stage_sizes) sum += static_cast<double>(s.at(k));
    mean_sizes.push_back(r.stage_sizes.empty() ? 0.0 : sum / static_cast<double>(r.stage_sizes.size()));
  }
  j["replications"] = {{"requested", r.config.replications},
                       {"used", r.replications_used},
                       {"excluded", r.excluded},
                       {"exclusion_limit_exceeded", r.exclusion_limit_exceeded},
                       {"mean_stage_sizes", mean_sizes}};

  ordered_json methods = ordered_json::array();
  for (const MethodEstimates& m : r.methods) {
    ordered_json params = ordered_json::array();
    for (std::size_t p = 0; p < m.parameters.size(); ++p) {
      params.push_back({{"name", m.parameters[p]},
                        {"truth", m.truth[static_cast<Eigen::Index>(p)]},
                        {"mean", m.stats[p].mean},
                        {"std", optional_json(m.stats[p].std)},
                        {"mse", m.stats[p].mse}});
    }
    methods.push_back({{"method", m.method}, {"stage", m.stage}, {"parameters", params}});
  }
  j["methods"] = methods;

  ordered_json eff = ordered_json::array();
  for (const EfficiencyEntry& e : r.efficiency) {
    eff.push_back({{"parameter", e.parameter},
                   {"baseline_stage", e.baseline_stage},
                   {"headline", e.headline},
                   {"value", optional_json(e.value)}});
  }
  j["relative_efficiency"] = eff;

  ordered_json mse = ordered_json::array();
  for (const StageMse& s : r.stage_mse) {
    mse.push_back({{"stage", s.stage}, {"joint", s.joint}, {"baseline", s.baseline}});
  }
  j["stage_mean_estimate_mse"] = mse;

  ordered_json metrics = ordered_json::array();
  for (const MetricAggregate& m : r.metrics) {
    metrics.push_back({{"method", m.method},
                       {"stage", m.stage},
                       {"positive_class", m.positive_class},
                       {"metric", m.metric},
                       {"mean", optional_json(m.mean)},
                       {"coverage", m.coverage}});
  }
  j["prediction_metrics"] = metrics;
  return j;
}

void write_report(const MonteCarloReport& r, const ordered_json& run_config, const fs::path& dir) {
  write_file_atomic(dir / "report.json", report_to_json(r, run_config).dump(2) + "\n");

  std::string params = "method,stage,parameter,truth,mean,std,mse\n";
  for (const MethodEstimates& m : r.methods) {
    for (std::size_t p = 0; p < m.parameters.size(); ++p) {
      params += m.method + "," + std::to_string(m.stage) + "," + m.parameters[p] + "," +
                format_double(m.truth[static_cast<Eigen::Index>(p)]) + "," +
                format_double(m.stats[p].mean) + "," + optional_csv(m.stats[p].std) + "," +
                format_double(m.stats[p].mse) + "\n";
    }
  }
  write_file_atomic(dir / "parameters.csv", params);

  std::string eff = "parameter,baseline_stage,headline,relative_efficiency\n";
  for (const EfficiencyEntry& e : r.efficiency) {
    eff += e.parameter + "," + std::to_string(e.baseline_stage) + "," +
           (e.headline ? "true" : "false") + "," + optional_csv(e.value) + "\n";
  }
  write_file_atomic(dir / "efficiency.csv", eff);

  std::string mse = "stage,joint,baseline\n";
  for (const StageMse& s : r.stage_mse) {
    mse += std::to_string(s.stage) + "," + format_double(s.joint) + "," +
           format_double(s.baseline) + "\n";
  }
  write_file_atomic(dir / "stage_mse.csv", mse);

  std::string metrics = "method,stage,positive_class,metric,mean,coverage\n";
  for (const MetricAggregate& m : r.metrics) {
    metrics += m.method + "," + std::to_string(m.stage) + "," + m.positive_class + "," + m.metric +
               "," + optional_csv(m.mean) + "," + std::to_string(m.coverage) + "\n";
  }
  write_file_atomic(dir / "metrics.csv", metrics);

  std::string reps = "replication,included";
  const std::size_t k_stages = r.config.stage_feature_counts.size();
  for (std::size_t k = 1; k <= k_stages; ++k) reps += ",n_stage" + std::to_string(k);
  reps += "\n";
  for (std::size_t i = 0; i < r.stage_sizes.size(); ++i) {
    const bool excluded =
        std::find(r.excluded.begin(), r.excluded.end(), static_cast<int>(i)) != r.excluded.end();
    reps += std::to_string(i) + "," + (excluded ? "false" : "true");
    for (std::size_t n : r.stage_sizes[i]) reps += "," + std::to_string(n);
    reps += "\n";
  }
  write_file_atomic(dir / "replications.csv", reps);

  for (const MethodEstimates& m : r.methods) {
    std::string est;
    for (std::size_t p = 0; p < m.parameters.size(); ++p) est += (p ? "," : "") + m.parameters[p];
    est += "\n";
    for (Eigen::Index row = 0; row < m.estimates.rows(); ++row) {
      for (Eigen::Index c = 0; c < m.estimates.cols(); ++c) {
        est += (c ? "," : "") + format_double(m.estimates(row, c));
      }
      est += "\n";
    }
    write_file_atomic(dir / ("estimates_" + m.method + ".csv"), est);
  }

  if (r.methods.empty()) return;
  const MethodEstimates& joint = r.methods.front();
  const std::vector<std::string>& names = joint.parameters;

  std::vector<Series> means{{"truth", "#000000", {}}, {"joint", kColours[0], {}}};
  std::vector<Series> stds{{"joint", kColours[0], {}}};
  for (std::size_t p = 0; p < names.size(); ++p) {
    means[0].values.push_back(joint.truth[static_cast<Eigen::Index>(p)]);
    means[1].values.push_back(joint.stats[p].mean);
    stds[0].values.push_back(joint.stats[p].std);
  }
  for (std::size_t mi = 1; mi < r.methods.size(); ++mi) {
    const MethodEstimates& m = r.methods[mi];
    Series sm{m.method, kColours[mi % 6], {}};
    Series ss{m.method, kColours[mi % 6], {}};
    for (const std::string& name : names) {
      sm.values.push_back(stat_for(m, name, false));
      ss.values.push_back(stat_for(m, name, true));
    }
    means.push_back(std::move(sm));
    stds.push_back(std::move(ss));
  }
  Series eff_series{"headline", kColours[0], {}};
  Series eff_first{"first stage", kColours[1], {}};
  for (const std::string& name : names) {
    std::optional<double> head;
    std::optional<double> first;
    for (const EfficiencyEntry& e : r.efficiency) {
      if (e.parameter != name) continue;
      if (e.headline) head = e.value;
      if (!first) first = e.value;
    }
    eff_series.values.push_back(head);
    eff_first.values.push_back(first);
  }
  write_file_atomic(dir / "plots" / "means.svg",
                    svg_chart("Mean estimate per parameter", names, means, false));
  write_file_atomic(dir / "plots" / "std.svg",
                    svg_chart("Standard deviation of estimates", names, stds, false));
  write_file_atomic(dir / "plots" / "efficiency.svg",
                    svg_chart("Relative efficiency var(baseline)/var(joint)", names,
                              {eff_series, eff_first}, true));
}

}  // namespace seqtriage
