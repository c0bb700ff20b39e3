#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "fhlr/core.hpp"

namespace fhlr {

/// Dense row-major [count, channels, length] float tensor.
struct WindowTensor {
  Index count = 0;
  Index channels = 0;
  Index length = 0;
  std::vector<float> data;

  WindowTensor() = default;
  WindowTensor(Index n, Index c, Index l)
      : count(n), channels(c), length(l), data(static_cast<std::size_t>(n * c * l), 0.0f) {}

  Index window_size() const { return channels * length; }

  using WindowMap = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstWindowMap =
      Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  /// [channels, length] view of window i.
  WindowMap window(Index i) { return {data.data() + i * window_size(), channels, length}; }
  ConstWindowMap window(Index i) const { return {data.data() + i * window_size(), channels, length}; }
};

struct WindowedDataset {
  WindowTensor X;
  Labels y;
  int num_classes = 0;
  std::optional<std::vector<int>> subject_ids;
  double sample_rate_hz = 1.0;
  std::vector<std::string> channel_names;

  Index size() const { return X.count; }
  Index channels() const { return X.channels; }
  Index window_length() const { return X.length; }

  /// Throws unless labels are in range, X is finite and shapes agree.
  void validate() const;
  /// Subset in the given order (duplicates allowed).
  WindowedDataset subset(std::span<const std::size_t> indices) const;
  WindowedDataset with_labels(Labels labels) const;
};

struct SplitEntry {
  Index count = 0;
  std::string data_file;
  std::string labels_file;
  std::string subjects_file;  // optional, empty when absent
};

struct DatasetManifest {
  std::string name;
  int num_classes = 0;
  Index channels = 0;
  Index window_length = 0;
  double sample_rate_hz = 1.0;
  std::vector<std::string> channel_names;
  std::map<std::string, SplitEntry> splits;
  nlohmann::json converter;  // free-form provenance of the producing converter
};

struct SyntheticSpec {
  int num_classes = 5;
  Index channels = 1;
  Index window_length = 128;
  Index train_count = 3000;
  Index test_count = 1000;
  double class_separability = 1.0;
  double noise_floor = 1.0;
  int components_per_class = 3;
  int num_subjects = 10;
  double sample_rate_hz = 50.0;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

enum class SplitMode { by_subject, random };

DatasetManifest read_manifest(const std::filesystem::path& dir);
/// Loads one split of a canonical dataset directory.
WindowedDataset load_canonical(const std::filesystem::path& dir, const std::string& split = "train");
std::map<std::string, WindowedDataset> load_canonical_splits(const std::filesystem::path& dir);
/// Writes a canonical dataset directory (manifest.json + raw little-endian payloads).
void write_canonical(const std::filesystem::path& dir, const std::string& name,
                     const std::map<std::string, WindowedDataset>& splits);

WindowTensor window_signal(const MatrixXf& signal, Index length, double overlap_fraction, bool pad);

/// Per-channel means over every window and time step.
VectorXd fit_channel_means(const WindowTensor& X);
void subtract_channel_means(WindowTensor& X, const VectorXd& means);
/// Fits per-channel means on X and subtracts them.
WindowTensor normalize_mean(const WindowTensor& X);

std::pair<WindowedDataset, WindowedDataset> split_dataset(const WindowedDataset& ds, SplitMode mode,
                                                          double train_fraction, std::uint64_t seed);

std::pair<WindowedDataset, WindowedDataset> make_synthetic(const SyntheticSpec& spec);

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);
void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

}  // namespace fhlr
