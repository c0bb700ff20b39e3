#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "fhlr/acquisition.hpp"
#include "fhlr/datasets.hpp"
#include "fhlr/merging.hpp"
#include "fhlr/network.hpp"
#include "fhlr/noise_model.hpp"
#include "fhlr/oracle.hpp"
#include "fhlr/training.hpp"

namespace fhlr {

/// "fhlr" or a baseline: ce, ls, mixup, poly, bi_tempered, logit_clip, focal, cl.
struct MethodSpec {
  std::string name = "fhlr";
  LossSpec loss;     // baselines only
  int cl_folds = 5;  // cl only
  /// cl only: correct this many suspected labels with clean ones instead of pruning (0 = prune).
  Index cl_correct_budget = 0;

  bool is_fhlr() const { return name == "fhlr"; }
  bool is_cl() const { return name == "cl"; }
};

struct DatasetSource {
  std::optional<SyntheticSpec> synthetic;
  std::filesystem::path canonical_dir;
  std::string train_split = "train";
  std::string test_split = "test";
};

enum class OracleMode { oracle, panel, live };

struct OracleConfig {
  OracleMode mode = OracleMode::oracle;
  AnnotatorPanel panel;
  std::filesystem::path expert_set_file;  // live mode: finalized ExpertSet JSON
};

struct RefineConfig {
  double eta = 5e-4;
  Index epochs = 30;
  Index batch_size = 32;
};

struct MergeConfig {
  MergeMethod method = MergeMethod::weighted_average;
  std::optional<double> seed_weight;  // default rule by noise level when absent
  bool grid_search = false;           // pick w_seed on a clean validation carve-out
  double validation_fraction = 0.1;
  Index fisher_samples = 256;
  /// Also evaluate every merge method, the seed, and a model trained from scratch on the expert set.
  bool compare_all = false;
};

struct ComponentToggles {
  bool ls = true;
  bool ema = true;
  bool ft = true;
  bool merge = true;

  void validate() const;
};

struct ExperimentConfig {
  DatasetSource dataset;
  NoiseSpec noise;
  ArchitectureSpec arch;  // input shape and class count are taken from the dataset
  TrainConfig seed_training;
  MethodSpec method;
  AcquisitionSpec acquisition;
  OracleConfig oracle;
  RefineConfig refine;
  MergeConfig merge;
  ComponentToggles toggles;
  int trials = 3;
  std::uint64_t base_seed = 0;
  std::filesystem::path output_dir;  // empty = no artifacts written
  bool save_checkpoints = true;

  void validate() const;
};

struct TrialError {
  int trial = 0;
  std::string code;
  std::string detail;
};

struct TrialResult {
  int trial = 0;
  double accuracy = 0.0;
  std::map<std::string, double> stages;  // stage name -> test accuracy
  std::map<std::string, double> extras;  // e.g. kappa, corruption level, pruning precision
  std::map<std::string, std::string> checkpoints;
};

struct RunReport {
  std::string label;
  std::string method;
  std::vector<TrialResult> trials;
  std::vector<TrialError> errors;
  double mean = 0.0;
  double std = 0.0;
  std::string config_checksum;
  double wall_clock_seconds = 0.0;

  std::vector<double> accuracies() const;
  /// Mean and population std over trials of a named stage (or the headline accuracy for "").
  std::pair<double, double> stage_summary(const std::string& stage = "") const;
  void summarize();
};

/// Train/test pair with mean normalization fitted on the training split.
std::pair<WindowedDataset, WindowedDataset> load_experiment_data(const DatasetSource& source);

/// Fraction of argmax-correct predictions using EMA parameters.
double evaluate(const ModelState& state, const WindowedDataset& test);
double accuracy_from_probs(const MatrixXd& probs, const Labels& labels);

RunReport run_pipeline(const ExperimentConfig& cfg);
/// Same as run_pipeline but reuses already loaded data.
RunReport run_pipeline(const ExperimentConfig& cfg, const WindowedDataset& train, const WindowedDataset& test);

enum class PresetName {
  noise_sweep,
  asymmetric,
  acquisition_ablation,
  merge_comparison,
  shot_scaling,
  component_ablation,
  annotator_panel
};

struct ComparisonTable {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::string> rows;
  /// cells[row][col] = (mean, std) in accuracy percent; NaN when the cell failed.
  std::vector<std::vector<std::pair<double, double>>> cells;
  /// Optional extra per-row annotation columns (e.g. Fleiss kappa).
  std::vector<std::string> extra_columns;
  std::vector<std::vector<double>> extra_values;

  std::string to_csv() const;
  std::string to_text() const;
};

struct PresetBundle {
  PresetName name;
  ComparisonTable table;
  std::vector<RunReport> reports;
};

struct PresetOptions {
  std::vector<std::string> methods{"ce", "ls", "mixup", "poly", "bi_tempered", "logit_clip", "cl", "focal", "fhlr"};
  std::vector<Index> shot_grid{25, 50, 100, 200, 400};
};

PresetBundle run_preset(PresetName name, const ExperimentConfig& base, const PresetOptions& options = {});

std::string_view to_string(PresetName p);
PresetName preset_from_string(const std::string& s);

/// Component-ablation rows (LS / EMA / FT / Merge) and the run stage that realizes each.
struct AblationRow {
  ComponentToggles toggles;
  std::string stage;
};
std::vector<AblationRow> ablation_rows();

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
void to_json(nlohmann::json& j, const RunReport& r);
void from_json(const nlohmann::json& j, RunReport& r);
void to_json(nlohmann::json& j, const ComparisonTable& t);
void from_json(const nlohmann::json& j, ComparisonTable& t);

/// Writes report.json/table.csv/table.txt for a bundle under dir.
void write_bundle(const std::filesystem::path& dir, const PresetBundle& bundle);
/// Collects every report.json below dir into a method x label table.
ComparisonTable collect_reports(const std::filesystem::path& dir);

std::string config_checksum(const nlohmann::json& config);

}  // namespace fhlr
