#pragma once

// Cohort files, model documents and their on-disk formats.
//
// Cohort CSV: header `id, <stage-1 features>, label1, <stage-2 features>,
// label2, ...`. A stage block (its features and label) is either fully
// present or fully empty ("" or "NA"); an empty block means the patient
// stopped earlier. Labels are written 0, 0.5 and 1.
//
// Model JSON: schema tag "seqtriage-model/1".

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seqtriage/estimation.hpp"
#include "seqtriage/model.hpp"

namespace seqtriage {

inline constexpr const char* kModelSchema = "seqtriage-model/1";
inline constexpr int kModelSchemaMajor = 1;

// Per-feature z-scaling applied before the model sees a feature vector.
struct Standardization {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardization identity(Eigen::Index n);
  // Maps raw cumulative features of one stage to the model scale.
  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& raw) const;
  bool operator==(const Standardization& other) const;
};

// Mean/sd of each feature over the records that observed it. The intercept,
// if any, and zero-variance features are left unscaled.
Standardization fit_standardization(const StageDataset& data);
StageDataset apply_standardization(const StageDataset& data, const Standardization& z);

struct FitMetadata {
  FitMethod method = FitMethod::joint;
  int baseline_stage = 0;  // stage a baseline model covers; 0 for joint
  double log_likelihood = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string tool_version;
  std::string fit_timestamp;
  bool operator==(const FitMetadata&) const = default;
};

struct ModelDocument {
  std::string model_id = "default";
  StageLayout layout;
  Parameters params;
  FitMetadata fit;
  std::optional<Standardization> standardization;

  // Parameters stage serving layout stage `stage`, or nullopt if the
  // document does not cover it (baseline models cover one stage).
  std::optional<int> parameter_stage(int stage) const;
  void validate() const;
  bool operator==(const ModelDocument& other) const;
};

// Layout implied by a cohort header: features between consecutive label
// columns form a stage.
StageLayout layout_from_header(const std::filesystem::path& path);

struct CohortReadOptions {
  bool require_labels = true;  // training data; enforces the 0.5 rule
};

StageDataset read_cohort(const std::filesystem::path& path, const StageLayout& layout,
                         const CohortReadOptions& opts = {});
void write_cohort(const StageDataset& data, const std::filesystem::path& path);

std::string model_to_json(const ModelDocument& doc);
ModelDocument model_from_json(const std::string& text);
void write_model(const ModelDocument& doc, const std::filesystem::path& path);
ModelDocument read_model(const std::filesystem::path& path);

// Writes `contents` to a temporary sibling then renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// Cumulative raw feature vector for `stage` assembled from named values.
// Every input feature of stages 1..stage must be present; names outside
// them are rejected.
Eigen::VectorXd assemble_features(const StageLayout& layout, int stage,
                                  const std::map<std::string, double>& values);

}  // namespace seqtriage
