#include "seqtriage/cli.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <iterator>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "seqtriage/dataio.hpp"
#include "seqtriage/errors.hpp"
#include "seqtriage/estimation.hpp"
#include "seqtriage/report.hpp"
#include "seqtriage/server.hpp"
#include "seqtriage/simulation.hpp"
#include "seqtriage/triage.hpp"

namespace seqtriage::cli {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

void configure_logging() {
  static std::once_flag once;
  std::call_once(once, [] {
    auto logger = spdlog::stderr_color_mt("seqtriage");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
  });
  if (const char* lvl = std::getenv("SEQTRIAGE_LOG")) {
    spdlog::set_level(spdlog::level::from_str(lvl));
  }
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::io:
      return kExitIo;
    default:
      return kExitValidation;
  }
}

struct SimFlags {
  std::string profile = "paper";
  std::optional<std::uint64_t> seed;
  std::optional<int> n_stage1;
  std::optional<int> replications;
};

void add_sim_flags(CLI::App* cmd, SimFlags& f) {
  cmd->add_option("--profile", f.profile, "Simulation preset")
      ->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--n-stage1", f.n_stage1, "Patients entering stage 1");
  cmd->add_option("--replications", f.replications, "Number of replications");
}

SimConfig resolve_sim(const SimFlags& f, std::optional<int> default_replications = {}) {
  SimConfig c = f.profile == "desk" ? SimConfig::desk() : SimConfig::paper();
  if (f.seed) c.seed = *f.seed;
  if (f.n_stage1) c.n_stage1 = *f.n_stage1;
  if (default_replications) c.replications = *default_replications;
  if (f.replications) c.replications = *f.replications;
  c.validate();
  return c;
}

struct FitFlags {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  double relative_tolerance = 1e-10;
  bool no_reparam = false;
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--max-iterations", f.max_iterations, "BFGS iteration limit");
  cmd->add_option("--gradient-tolerance", f.gradient_tolerance, "Gradient infinity-norm tolerance");
  cmd->add_option("--relative-tolerance", f.relative_tolerance,
                  "Relative objective change tolerance");
  cmd->add_flag("--no-reparameterization", f.no_reparam,
                "Optimise (L, U) directly instead of (L, log(U - L))");
}

FitOptions resolve_fit(const FitFlags& f) {
  FitOptions o;
  o.max_iterations = f.max_iterations;
  o.gradient_tolerance = f.gradient_tolerance;
  o.relative_objective_tolerance = f.relative_tolerance;
  o.threshold_reparameterization = !f.no_reparam;
  o.validate();
  return o;
}

ordered_json fit_options_json(const FitOptions& o) {
  return {{"max_iterations", o.max_iterations},
          {"gradient_tolerance", o.gradient_tolerance},
          {"relative_objective_tolerance", o.relative_objective_tolerance},
          {"threshold_reparameterization", o.threshold_reparameterization}};
}

ModelDocument make_document(const StageLayout& layout, const FitResult& r, const std::string& id,
                            const std::optional<Standardization>& z) {
  ModelDocument doc;
  doc.model_id = id;
  doc.layout = layout;
  doc.params = r.params;
  doc.fit.method = r.method_tag;
  doc.fit.baseline_stage = r.stage;
  doc.fit.log_likelihood = r.final_log_likelihood;
  doc.fit.converged = r.converged;
  doc.fit.iterations = r.iterations_used;
  doc.fit.tool_version = SEQTRIAGE_VERSION;
  doc.fit.fit_timestamp = utc_timestamp();
  doc.standardization = z;
  return doc;
}

std::string truth_json(const SimConfig& c, const ordered_json& run_config,
                       const std::vector<std::vector<std::size_t>>& sizes) {
  const Parameters t = c.truth();
  ordered_json bands = ordered_json::array();
  for (const Band& b : t.bands) bands.push_back({{"lower", b.lower}, {"upper", b.upper}});
  ordered_json beta = ordered_json::array();
  for (double v : t.beta) beta.push_back(v);
  ordered_json j = {{"schema", "seqtriage-truth/1"},
                    {"run_config", run_config},
                    {"feature_names", c.layout().feature_names()},
                    {"stage_feature_counts", c.stage_feature_counts},
                    {"beta", beta},
                    {"bands", bands},
                    {"final_cut", *t.final_cut},
                    {"stage_sizes", sizes}};
  return j.dump(2) + "\n";
}

int cmd_simulate(const SimFlags& sf, const std::string& out_dir, std::ostream& out) {
  const SimConfig c = resolve_sim(sf, 1);
  const ordered_json rc = {{"command", "simulate"},
                           {"profile", sf.profile},
                           {"out", out_dir},
                           {"simulation", sim_config_to_json(c)}};
  out << rc.dump() << "\n";
  std::vector<std::vector<std::size_t>> sizes;
  for (int r = 0; r < c.replications; ++r) {
    const StageDataset d = generate_cohort(c, r);
    char name[32];
    if (c.replications == 1) {
      std::snprintf(name, sizeof name, "cohort.csv");
    } else {
      std::snprintf(name, sizeof name, "cohort_%04d.csv", r);
    }
    write_cohort(d, fs::path(out_dir) / name);
    std::vector<std::size_t> s;
    for (int k = 1; k <= d.layout().stages(); ++k) s.push_back(d.stage_size(k));
    sizes.push_back(std::move(s));
  }
  write_file_atomic(fs::path(out_dir) / "truth.json", truth_json(c, rc, sizes));
  out << "wrote " << c.replications << " cohort(s) and truth.json to " << out_dir << "\n";
  return kExitOk;
}

struct FitCommand {
  std::string cohort;
  std::string method = "joint";
  std::string out_dir = ".";
  std::string model_id = "default";
  bool standardize = false;
  bool intercept = false;
};

int cmd_fit(const FitCommand& fc, const FitFlags& ff, std::ostream& out) {
  const FitOptions opts = resolve_fit(ff);
  const FitMethod method = parse_fit_method(fc.method);
  const ordered_json rc = {{"command", "fit"},
                           {"cohort", fc.cohort},
                           {"method", std::string(to_string(method))},
                           {"out", fc.out_dir},
                           {"model_id", fc.model_id},
                           {"standardize", fc.standardize},
                           {"intercept", fc.intercept},
                           {"fit_options", fit_options_json(opts)}};
  out << rc.dump() << "\n";

  StageLayout layout = layout_from_header(fc.cohort);
  if (fc.intercept) layout = layout.with_intercept();
  StageDataset data = read_cohort(fc.cohort, layout);
  std::optional<Standardization> z;
  if (fc.standardize) {
    z = fit_standardization(data);
    data = apply_standardization(data, *z);
  }

  std::vector<std::pair<fs::path, ModelDocument>> docs;
  bool all_converged = true;
  auto summarize = [&](const FitResult& r, const std::string& what) {
    char line[256];
    std::snprintf(line, sizeof line,
                  "%s: converged=%s iterations=%d log_likelihood=%.10g gradient_norm=%.3g\n",
                  what.c_str(), r.converged ? "true" : "false", r.iterations_used,
                  r.final_log_likelihood, r.gradient_norm);
    out << line;
    for (const std::string& w : r.warnings) out << "  warning: " << w << "\n";
    all_converged = all_converged && r.converged;
  };
  if (method == FitMethod::joint) {
    const FitResult r = fit_joint(data, opts);
    summarize(r, "joint");
    docs.emplace_back(fs::path(fc.out_dir) / "model.json", make_document(layout, r, fc.model_id, z));
  } else {
    const std::vector<FitResult> rs = fit_baseline_stagewise(data, opts);
    for (const FitResult& r : rs) {
      const std::string tag = "stage" + std::to_string(r.stage);
      summarize(r, "baseline " + tag);
      docs.emplace_back(fs::path(fc.out_dir) / ("model_" + tag + ".json"),
                        make_document(layout, r, fc.model_id + "_" + tag, z));
    }
  }
  for (const auto& [path, doc] : docs) {
    write_model(doc, path);
    out << "wrote " << path.string() << "\n";
  }
  return all_converged ? kExitOk : kExitNotConverged;
}

int cmd_study(const SimFlags& sf, const FitFlags& ff, int jobs, const std::string& out_dir,
              std::ostream& out) {
  const SimConfig c = resolve_sim(sf);
  const FitOptions opts = resolve_fit(ff);
  if (jobs < 1) throw Error(ErrorCode::validation, "--jobs must be at least 1");
  // Only settings that influence the results go into the report, so reruns
  // with a different --out or --jobs stay byte-identical.
  const ordered_json rc = {{"command", "study"},
                           {"profile", sf.profile},
                           {"simulation", sim_config_to_json(c)},
                           {"fit_options", fit_options_json(opts)}};
  ordered_json echo = rc;
  echo["jobs"] = jobs;
  echo["out"] = out_dir;
  out << echo.dump() << "\n";

  const MonteCarloReport r = run_monte_carlo(c, opts, jobs);
  write_report(r, rc, out_dir);

  char line[256];
  std::snprintf(line, sizeof line, "replications used %d of %d (excluded %zu)\n",
                r.replications_used, c.replications, r.excluded.size());
  out << line;
  out << "parameter  truth      joint_mean  joint_std   headline_RE\n";
  const MethodEstimates& joint = r.method("joint");
  for (std::size_t p = 0; p < joint.parameters.size(); ++p) {
    std::optional<double> re;
    for (const EfficiencyEntry& e : r.efficiency) {
      if (e.parameter == joint.parameters[p] && e.headline) re = e.value;
    }
    char re_text[32] = "-";
    if (re) std::snprintf(re_text, sizeof re_text, "%.4g", *re);
    std::snprintf(line, sizeof line, "%-10s %-10.4g %-11.6g %-11.4g %s\n",
                  joint.parameters[p].c_str(), joint.truth[static_cast<Eigen::Index>(p)],
                  joint.stats[p].mean, joint.stats[p].std.value_or(0.0), re_text);
    out << line;
  }
  out << "report written to " << out_dir << "\n";
  if (r.exclusion_limit_exceeded) {
    out << "more than " << kMaxExcludedFraction * 100 << "% of replications failed to converge\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

struct PredictCommand {
  std::string model;
  int stage = 1;
  std::vector<std::string> features;
  std::string input;
};

std::map<std::string, double> parse_feature_args(const PredictCommand& pc) {
  std::map<std::string, double> values;
  if (!pc.input.empty()) {
    ordered_json j;
    try {
      j = ordered_json::parse(pc.input == "-" ? std::string(std::istreambuf_iterator<char>(std::cin), {})
                                              : read_text_file(pc.input));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::validation, "feature input is not valid JSON", e.what());
    }
    if (j.is_object() && j.contains("features")) j = j["features"];
    if (!j.is_object()) throw Error(ErrorCode::validation, "feature input must be a JSON object");
    for (const auto& [name, v] : j.items()) {
      if (!v.is_number()) throw Error(ErrorCode::validation, "feature is not numeric", name);
      values[name] = v.get<double>();
    }
  }
  for (const std::string& kv : pc.features) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::validation, "expected name=value", kv);
    }
    const std::string name = kv.substr(0, eq);
    const std::string text = kv.substr(eq + 1);
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
      throw Error(ErrorCode::validation, "feature value is not a number", kv);
    }
    values[name] = v;
  }
  return values;
}

int cmd_predict(const PredictCommand& pc, std::ostream& out) {
  const ModelDocument doc = read_model(pc.model);
  const StageDecision d = predict_stage(doc, pc.stage, parse_feature_args(pc));
  ordered_json j = decision_to_json(d);
  j["model_id"] = doc.model_id;
  out << j.dump(2) << "\n";
  return kExitOk;
}

struct ServeCommand {
  std::vector<std::string> models;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string snapshot;
};

int cmd_serve(const ServeCommand& sc, std::ostream& out) {
  std::vector<ModelDocument> docs;
  for (const std::string& m : sc.models) docs.push_back(read_model(m));
  TriageEngine engine(std::move(docs));
  if (!sc.snapshot.empty() && fs::exists(sc.snapshot)) engine.load_snapshot(sc.snapshot);
  TriageServer server(engine);
  const int port = server.bind(sc.host, sc.port);
  out << ordered_json{{"command", "serve"}, {"models", sc.models}, {"host", sc.host},
                      {"port", port}, {"snapshot", sc.snapshot}}
             .dump()
      << "\n"
      << "listening on http://" << sc.host << ":" << port << std::endl;

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::jthread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.listen();
  if (!sc.snapshot.empty()) engine.save_snapshot(sc.snapshot);
  // If listen() returned on its own, release the waiter.
  pthread_kill(waiter.native_handle(), SIGTERM);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  configure_logging();
  CLI::App app{"Sequential multistage triage: simulation, fitting, prediction and service"};
  app.set_config("--config", "", "TOML file whose keys mirror the command-line flags");
  app.set_version_flag("--version", SEQTRIAGE_VERSION);
  app.require_subcommand(1);
  app.fallthrough();  // so --config may follow the subcommand

  SimFlags sim_flags;
  FitFlags fit_flags;
  std::string out_dir;

  auto* simulate = app.add_subcommand("simulate", "Generate synthetic cohorts and the truth file");
  add_sim_flags(simulate, sim_flags);
  simulate->add_option("--out", out_dir, "Output directory")->required();

  FitCommand fit_cmd;
  auto* fit = app.add_subcommand("fit", "Fit a model to a cohort file");
  fit->add_option("cohort", fit_cmd.cohort, "Cohort CSV")->required();
  fit->add_option("--method", fit_cmd.method, "joint or baseline")
      ->check(CLI::IsMember({"joint", "baseline", "baseline_stagewise"}));
  fit->add_option("--out", fit_cmd.out_dir, "Output directory");
  fit->add_option("--model-id", fit_cmd.model_id, "Identifier stored in the model file");
  fit->add_flag("--standardize", fit_cmd.standardize, "z-scale features before fitting");
  fit->add_flag("--intercept", fit_cmd.intercept, "Add a constant feature to stage 1");
  add_fit_flags(fit, fit_flags);

  int jobs = 1;
  std::string study_out = "study";
  auto* study = app.add_subcommand("study", "Monte Carlo comparison of joint and stagewise fits");
  add_sim_flags(study, sim_flags);
  add_fit_flags(study, fit_flags);
  study->add_option("--jobs", jobs, "Replications fitted in parallel");
  study->add_option("--out", study_out, "Report directory");

  PredictCommand predict_cmd;
  auto* predict = app.add_subcommand("predict", "Verdict for one patient at one stage");
  predict->add_option("--model", predict_cmd.model, "Model file")->required();
  predict->add_option("--stage", predict_cmd.stage, "Stage to evaluate")->required();
  predict->add_option("--feature", predict_cmd.features, "name=value, repeatable");
  predict->add_option("--input", predict_cmd.input, "JSON object of name: value ('-' for stdin)");

  ServeCommand serve_cmd;
  auto* serve = app.add_subcommand("serve", "Run the triage HTTP service");
  serve->add_option("--model", serve_cmd.models, "Model file(s); the first is the default")
      ->required();
  serve->add_option("--host", serve_cmd.host, "Bind address");
  serve->add_option("--port", serve_cmd.port, "Port (0 picks a free one)");
  serve->add_option("--snapshot", serve_cmd.snapshot, "Session snapshot file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*simulate) return cmd_simulate(sim_flags, out_dir, out);
    if (*fit) return cmd_fit(fit_cmd, fit_flags, out);
    if (*study) return cmd_study(sim_flags, fit_flags, jobs, study_out, out);
    if (*predict) return cmd_predict(predict_cmd, out);
    if (*serve) return cmd_serve(serve_cmd, out);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what();
    if (!e.detail().empty()) err << " (" << e.detail() << ")";
    err << "\n";
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error [io]: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitValidation;
}

int run(int argc, const char* const* argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace seqtriage::cli
