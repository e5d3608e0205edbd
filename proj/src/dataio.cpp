#include "seqtriage/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

#include "json.hpp"
#include "seqtriage/errors.hpp"

namespace seqtriage {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Small helpers

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open file for reading", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot open file for writing", tmp.string());
    out << contents;
    out.flush();
    if (!out) throw Error(ErrorCode::io, "write failed", tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::io, "cannot move file into place", path.string());
  }
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos
                                                                               : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

bool is_missing(std::string_view cell) { return cell.empty() || cell == "NA"; }

std::optional<double> parse_number(std::string_view cell) {
  double v = 0.0;
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open cohort file", path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lines.empty() && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    lines.push_back(line);
  }
  if (lines.empty()) throw Error(ErrorCode::schema, "cohort file is empty", path.string());
  return lines;
}

std::string label_column(int stage) { return "label" + std::to_string(stage); }

std::vector<std::string> expected_header(const StageLayout& layout) {
  std::vector<std::string> h{"id"};
  for (int k = 1; k <= layout.stages(); ++k) {
    for (auto& n : layout.input_feature_names(k)) h.push_back(n);
    h.push_back(label_column(k));
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Standardization

Standardization Standardization::identity(Eigen::Index n) {
  return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)};
}

Eigen::VectorXd Standardization::apply(const Eigen::Ref<const Eigen::VectorXd>& raw) const {
  if (raw.size() > mean.size()) {
    throw Error(ErrorCode::dimension_mismatch, "feature vector longer than standardization");
  }
  return ((raw - mean.head(raw.size())).array() / scale.head(raw.size()).array()).matrix();
}

bool Standardization::operator==(const Standardization& other) const {
  return mean.size() == other.mean.size() && mean == other.mean && scale == other.scale;
}

Standardization fit_standardization(const StageDataset& data) {
  const StageLayout& layout = data.layout();
  Standardization z = Standardization::identity(layout.total_features());
  int offset = 0;
  for (int k = 1; k <= layout.stages(); ++k) {
    const int p = layout.new_features(k);
    const auto members = data.stage_members(k);
    if (members.size() >= 2) {
      Eigen::MatrixXd block(static_cast<Eigen::Index>(members.size()), p);
      for (std::size_t i = 0; i < members.size(); ++i) {
        block.row(static_cast<Eigen::Index>(i)) = data.records()[members[i]].features[k - 1].transpose();
      }
      for (int j = 0; j < p; ++j) {
        if (k == 1 && j == 0 && layout.intercept_included()) continue;
        const auto col = block.col(j);
        const double m = col.mean();
        const double sd = std::sqrt((col.array() - m).square().sum() /
                                    static_cast<double>(members.size() - 1));
        if (sd > 0.0) {
          z.mean[offset + j] = m;
          z.scale[offset + j] = sd;
        }
      }
    }
    offset += p;
  }
  return z;
}

StageDataset apply_standardization(const StageDataset& data, const Standardization& z) {
  std::vector<PatientRecord> records = data.records();
  for (PatientRecord& r : records) {
    Eigen::Index offset = 0;
    for (auto& block : r.features) {
      block = ((block - z.mean.segment(offset, block.size())).array() /
               z.scale.segment(offset, block.size()).array())
                  .matrix();
      offset += block.size();
    }
  }
  return StageDataset(data.layout(), std::move(records));
}

// ---------------------------------------------------------------------------
// Cohort files

StageLayout layout_from_header(const fs::path& path) {
  const auto header = split_csv_line(read_lines(path).front());
  if (header.empty() || header.front() != "id") {
    throw Error(ErrorCode::schema, "cohort header must start with an id column", path.string());
  }
  std::vector<int> counts;
  std::vector<std::string> names;
  int current = 0;
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (header[c] == label_column(static_cast<int>(counts.size()) + 1)) {
      counts.push_back(current);
      current = 0;
    } else {
      names.push_back(header[c]);
      ++current;
    }
  }
  if (current != 0) {
    throw Error(ErrorCode::schema, "cohort header must end with a label column", path.string());
  }
  try {
    return StageLayout(counts, names);
  } catch (const Error& e) {
    throw Error(ErrorCode::schema, std::string("invalid cohort header: ") + e.what(), path.string());
  }
}

StageDataset read_cohort(const fs::path& path, const StageLayout& layout,
                         const CohortReadOptions& opts) {
  const auto lines = read_lines(path);
  const auto header = split_csv_line(lines.front());
  const auto expected = expected_header(layout);
  if (header != expected) {
    std::string want;
    for (const auto& h : expected) want += (want.empty() ? "" : ",") + h;
    throw Error(ErrorCode::schema, "cohort header does not match layout", "expected " + want);
  }

  std::vector<PatientRecord> records;
  std::set<std::string> seen;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto cells = split_csv_line(lines[li]);
    const std::string row_name = "line " + std::to_string(li + 1);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::schema, "row has " + std::to_string(cells.size()) +
                                         " cells, header has " + std::to_string(header.size()),
                  row_name);
    }
    PatientRecord rec;
    rec.id = cells[0];
    if (rec.id.empty()) throw Error(ErrorCode::schema, "row without id", row_name);
    if (!seen.insert(rec.id).second) throw Error(ErrorCode::schema, "duplicate id", rec.id);

    std::size_t col = 1;
    bool stopped = false;
    for (int k = 1; k <= layout.stages(); ++k) {
      const int n_in = static_cast<int>(layout.input_feature_names(k).size());
      int missing = 0;
      for (int j = 0; j < n_in; ++j) missing += is_missing(cells[col + j]) ? 1 : 0;
      const std::string& label_cell = cells[col + n_in];

      if (missing == n_in) {
        if (!is_missing(label_cell)) {
          throw Error(ErrorCode::schema,
                      "label present for stage " + std::to_string(k) + " without its features",
                      rec.id);
        }
        stopped = true;
      } else {
        if (missing != 0) {
          throw Error(ErrorCode::schema,
                      "stage " + std::to_string(k) + " block has missing cells", rec.id);
        }
        if (stopped) {
          throw Error(ErrorCode::consistency,
                      "stage " + std::to_string(k) + " data present after a skipped stage",
                      rec.id);
        }
        Eigen::VectorXd x(layout.new_features(k));
        int offset = 0;
        if (k == 1 && layout.intercept_included()) x[offset++] = 1.0;
        for (int j = 0; j < n_in; ++j) {
          const auto v = parse_number(cells[col + j]);
          if (!v) {
            throw Error(ErrorCode::schema,
                        "non-numeric value '" + cells[col + j] + "' in column " + header[col + j],
                        rec.id);
          }
          x[offset++] = *v;
        }
        rec.features.push_back(std::move(x));
        if (is_missing(label_cell)) {
          if (opts.require_labels) {
            throw Error(ErrorCode::schema, "missing " + label_column(k), rec.id);
          }
          rec.labels.emplace_back(std::nullopt);
        } else {
          const auto label = parse_label(label_cell);
          if (!label) {
            throw Error(ErrorCode::schema, "label must be 0, 0.5 or 1, got '" + label_cell + "'",
                        rec.id);
          }
          rec.labels.emplace_back(label);
        }
      }
      col += static_cast<std::size_t>(n_in) + 1;
    }
    if (rec.features.empty()) throw Error(ErrorCode::schema, "row has no stage-1 data", rec.id);
    if (std::all_of(rec.labels.begin(), rec.labels.end(), [](auto& l) { return !l; })) {
      rec.labels.clear();
    }
    records.push_back(std::move(rec));
  }

  StageDataset data(layout, std::move(records));
  if (opts.require_labels) data.validate_training();
  return data;
}

void write_cohort(const StageDataset& data, const fs::path& path) {
  const StageLayout& layout = data.layout();
  std::string out;
  const auto header = expected_header(layout);
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  out += '\n';
  for (const PatientRecord& r : data.records()) {
    out += r.id;
    for (int k = 1; k <= layout.stages(); ++k) {
      const int n_in = static_cast<int>(layout.input_feature_names(k).size());
      if (k <= r.deepest_stage()) {
        const auto& x = r.features[k - 1];
        const int skip = (k == 1 && layout.intercept_included()) ? 1 : 0;
        for (Eigen::Index j = skip; j < x.size(); ++j) out += "," + format_double(x[j]);
        out += ",";
        if (!r.labels.empty() && r.labels[k - 1]) out += label_text(*r.labels[k - 1]);
      } else {
        out += std::string(static_cast<std::size_t>(n_in) + 1, ',');
      }
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

Eigen::VectorXd assemble_features(const StageLayout& layout, int stage,
                                  const std::map<std::string, double>& values) {
  if (stage < 1 || stage > layout.stages()) {
    throw Error(ErrorCode::validation, "stage out of range", "stage " + std::to_string(stage));
  }
  Eigen::VectorXd x(layout.cumulative_features(stage));
  std::set<std::string> allowed;
  Eigen::Index i = 0;
  for (int k = 1; k <= stage; ++k) {
    for (const auto& name : layout.stage_feature_names(k)) {
      if (k == 1 && layout.intercept_included() && name == kInterceptName) {
        x[i++] = 1.0;
        continue;
      }
      allowed.insert(name);
      const auto it = values.find(name);
      if (it == values.end()) throw Error(ErrorCode::validation, "missing feature", name);
      if (!std::isfinite(it->second)) throw Error(ErrorCode::validation, "non-finite feature", name);
      x[i++] = it->second;
    }
  }
  for (const auto& [name, v] : values) {
    if (!allowed.count(name)) {
      throw Error(ErrorCode::validation,
                  "feature not part of stages 1.." + std::to_string(stage), name);
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Model documents

std::optional<int> ModelDocument::parameter_stage(int stage) const {
  if (stage < 1 || stage > layout.stages()) return std::nullopt;
  if (fit.method == FitMethod::joint) return stage;
  if (stage == fit.baseline_stage) return 1;
  return std::nullopt;
}

void ModelDocument::validate() const {
  params.validate();
  if (fit.method == FitMethod::joint) {
    if (params.stage_widths != layout.stage_widths() || !params.final_cut ||
        static_cast<int>(params.bands.size()) != layout.stages() - 1) {
      throw Error(ErrorCode::schema, "joint parameters do not match the layout");
    }
  } else {
    const int s = fit.baseline_stage;
    if (s < 1 || s > layout.stages() || params.stage_count() != 1 ||
        params.stage_widths.front() != layout.cumulative_features(s) ||
        params.is_terminal(1) != (s == layout.stages())) {
      throw Error(ErrorCode::schema, "baseline parameters do not match their stage");
    }
  }
  if (standardization) {
    const Eigen::Index n = layout.total_features();
    if (standardization->mean.size() != n || standardization->scale.size() != n ||
        !(standardization->scale.array() > 0.0).all()) {
      throw Error(ErrorCode::schema, "standardization block does not match the layout");
    }
  }
}

bool ModelDocument::operator==(const ModelDocument& other) const {
  return model_id == other.model_id && layout == other.layout && params == other.params &&
         fit == other.fit && standardization == other.standardization;
}

namespace {

ordered_json vector_json(const Eigen::VectorXd& v) {
  ordered_json a = ordered_json::array();
  for (double x : v) a.push_back(x);
  return a;
}

Eigen::VectorXd json_vector(const ordered_json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

int schema_major(const std::string& tag) {
  const std::string prefix = "seqtriage-model/";
  if (tag.rfind(prefix, 0) != 0) throw Error(ErrorCode::schema, "not a seqtriage model", tag);
  const std::string ver = tag.substr(prefix.size());
  int major = 0;
  const auto res = std::from_chars(ver.data(), ver.data() + ver.size(), major);
  if (res.ec != std::errc{} || (res.ptr != ver.data() + ver.size() && *res.ptr != '.')) {
    throw Error(ErrorCode::schema, "malformed schema version", tag);
  }
  return major;
}

}  // namespace

std::string model_to_json(const ModelDocument& doc) {
  doc.validate();
  ordered_json j;
  j["schema"] = kModelSchema;
  j["model_id"] = doc.model_id;
  j["layout"] = {{"new_feature_counts", doc.layout.new_feature_counts()},
                 {"feature_names", doc.layout.feature_names()},
                 {"intercept_included", doc.layout.intercept_included()}};
  ordered_json bands = ordered_json::array();
  for (const Band& b : doc.params.bands) bands.push_back({{"lower", b.lower}, {"upper", b.upper}});
  ordered_json widths = ordered_json::array();
  for (Eigen::Index w : doc.params.stage_widths) widths.push_back(w);
  j["parameters"] = {{"stage_widths", widths},
                     {"beta", vector_json(doc.params.beta)},
                     {"bands", bands},
                     {"final_cut", doc.params.final_cut ? ordered_json(*doc.params.final_cut)
                                                        : ordered_json(nullptr)}};
  j["fit"] = {{"method", std::string(to_string(doc.fit.method))},
              {"baseline_stage", doc.fit.baseline_stage},
              {"log_likelihood", doc.fit.log_likelihood},
              {"converged", doc.fit.converged},
              {"iterations", doc.fit.iterations},
              {"tool_version", doc.fit.tool_version},
              {"fit_timestamp", doc.fit.fit_timestamp}};
  if (doc.standardization) {
    j["standardization"] = {{"mean", vector_json(doc.standardization->mean)},
                            {"scale", vector_json(doc.standardization->scale)}};
  }
  return j.dump(2) + "\n";
}

ModelDocument model_from_json(const std::string& text) {
  ModelDocument doc;
  try {
    const ordered_json j = ordered_json::parse(text);
    const int major = schema_major(j.at("schema").get<std::string>());
    if (major != kModelSchemaMajor) {
      throw Error(ErrorCode::schema, "unsupported model schema major version",
                  std::to_string(major));
    }
    doc.model_id = j.value("model_id", std::string("default"));
    const auto& l = j.at("layout");
    doc.layout = StageLayout(l.at("new_feature_counts").get<std::vector<int>>(),
                             l.at("feature_names").get<std::vector<std::string>>(),
                             l.value("intercept_included", false));
    const auto& p = j.at("parameters");
    for (const auto& w : p.at("stage_widths")) doc.params.stage_widths.push_back(w.get<Eigen::Index>());
    doc.params.beta = json_vector(p.at("beta"));
    for (const auto& b : p.at("bands")) {
      doc.params.bands.push_back({b.at("lower").get<double>(), b.at("upper").get<double>()});
    }
    if (p.contains("final_cut") && !p.at("final_cut").is_null()) {
      doc.params.final_cut = p.at("final_cut").get<double>();
    }
    const auto& f = j.at("fit");
    doc.fit.method = parse_fit_method(f.at("method").get<std::string>());
    doc.fit.baseline_stage = f.value("baseline_stage", 0);
    doc.fit.log_likelihood = f.value("log_likelihood", 0.0);
    doc.fit.converged = f.value("converged", false);
    doc.fit.iterations = f.value("iterations", 0);
    doc.fit.tool_version = f.value("tool_version", std::string());
    doc.fit.fit_timestamp = f.value("fit_timestamp", std::string());
    if (j.contains("standardization")) {
      const auto& z = j.at("standardization");
      doc.standardization = Standardization{json_vector(z.at("mean")), json_vector(z.at("scale"))};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema, std::string("malformed model document: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::schema) throw;
    throw Error(ErrorCode::schema, std::string("invalid model document: ") + e.what(), e.detail());
  }
  try {
    doc.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::schema, std::string("invalid model document: ") + e.what(), e.detail());
  }
  return doc;
}

void write_model(const ModelDocument& doc, const fs::path& path) {
  write_file_atomic(path, model_to_json(doc));
}

ModelDocument read_model(const fs::path& path) { return model_from_json(read_text_file(path)); }

}  // namespace seqtriage
