#include "fhlr/datasets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

namespace fhlr {

namespace fs = std::filesystem;

void WindowedDataset::validate() const {
  require(static_cast<Index>(y.size()) == X.count, ErrorCode::shape_mismatch,
          "label count does not match window count");
  require(X.data.size() == static_cast<std::size_t>(X.count * X.window_size()), ErrorCode::shape_mismatch,
          "tensor payload does not match its shape");
  for (int label : y)
    require(label >= 0 && label < num_classes, ErrorCode::invalid_label,
            "label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
  for (float v : X.data) require(std::isfinite(v), ErrorCode::invalid_input, "non-finite sample value");
  if (subject_ids)
    require(static_cast<Index>(subject_ids->size()) == X.count, ErrorCode::shape_mismatch,
            "subject id count does not match window count");
}

WindowedDataset WindowedDataset::subset(std::span<const std::size_t> indices) const {
  WindowedDataset out;
  out.num_classes = num_classes;
  out.sample_rate_hz = sample_rate_hz;
  out.channel_names = channel_names;
  out.X = WindowTensor(static_cast<Index>(indices.size()), X.channels, X.length);
  out.y.reserve(indices.size());
  if (subject_ids) out.subject_ids.emplace();
  const auto w = static_cast<std::size_t>(X.window_size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    require(i < static_cast<std::size_t>(X.count), ErrorCode::invalid_input, "subset index out of range");
    std::copy_n(X.data.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                out.X.data.begin() + static_cast<std::ptrdiff_t>(k * w));
    out.y.push_back(y[i]);
    if (subject_ids) out.subject_ids->push_back((*subject_ids)[i]);
  }
  return out;
}

WindowedDataset WindowedDataset::with_labels(Labels labels) const {
  require(static_cast<Index>(labels.size()) == X.count, ErrorCode::shape_mismatch, "label count mismatch");
  WindowedDataset out = *this;
  out.y = std::move(labels);
  return out;
}

void SyntheticSpec::validate() const {
  require(num_classes >= 2, ErrorCode::invalid_spec, "num_classes must be >= 2");
  require(channels >= 1 && window_length >= 1, ErrorCode::invalid_spec, "empty window shape");
  require(train_count >= num_classes && test_count >= num_classes, ErrorCode::invalid_spec,
          "counts must be at least num_classes");
  require(class_separability > 0.0, ErrorCode::invalid_spec, "class_separability must be > 0");
  require(noise_floor >= 0.0, ErrorCode::invalid_spec, "noise_floor must be >= 0");
  require(components_per_class >= 1, ErrorCode::invalid_spec, "components_per_class must be >= 1");
}

// ---------------------------------------------------------------------------
// Canonical on-disk format
// ---------------------------------------------------------------------------

namespace {

template <typename T>
T byteswap_value(T v) {
  static_assert(sizeof(T) == 4);
  auto bits = std::bit_cast<std::uint32_t>(v);
  bits = ((bits & 0x000000FFu) << 24) | ((bits & 0x0000FF00u) << 8) | ((bits & 0x00FF0000u) >> 8) |
         ((bits & 0xFF000000u) >> 24);
  return std::bit_cast<T>(bits);
}

template <typename T>
std::vector<T> read_raw(const fs::path& path, std::size_t expected_count) {
  require(fs::exists(path), ErrorCode::io, "missing file " + path.string());
  const auto bytes = fs::file_size(path);
  require(bytes == expected_count * sizeof(T), ErrorCode::shape_mismatch,
          path.filename().string() + " holds " + std::to_string(bytes) + " bytes, expected " +
              std::to_string(expected_count * sizeof(T)));
  std::vector<T> out(expected_count);
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  require(static_cast<bool>(in) || expected_count == 0, ErrorCode::io, "short read on " + path.string());
  if constexpr (std::endian::native == std::endian::big)
    for (auto& v : out) v = byteswap_value(v);
  return out;
}

template <typename T>
void write_raw(const fs::path& path, const std::vector<T>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (T v : values) {
      const T le = byteswap_value(v);
      out.write(reinterpret_cast<const char*>(&le), sizeof(T));
    }
  } else {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(T)));
  }
  require(static_cast<bool>(out), ErrorCode::io, "write failed on " + path.string());
}

}  // namespace

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [name, e] : m.splits) {
    splits[name] = {{"count", e.count}, {"data_file", e.data_file}, {"labels_file", e.labels_file}};
    if (!e.subjects_file.empty()) splits[name]["subjects_file"] = e.subjects_file;
  }
  j = {{"name", m.name},
       {"num_classes", m.num_classes},
       {"channels", m.channels},
       {"window_length", m.window_length},
       {"sample_rate_hz", m.sample_rate_hz},
       {"splits", splits}};
  if (!m.channel_names.empty()) j["channel_names"] = m.channel_names;
  if (!m.converter.is_null()) j["converter"] = m.converter;
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m.name = j.value("name", std::string{});
  m.num_classes = j.at("num_classes").get<int>();
  m.channels = j.at("channels").get<Index>();
  m.window_length = j.at("window_length").get<Index>();
  m.sample_rate_hz = j.value("sample_rate_hz", 1.0);
  m.channel_names = j.value("channel_names", std::vector<std::string>{});
  m.converter = j.value("converter", nlohmann::json{});
  m.splits.clear();
  for (const auto& [name, e] : j.at("splits").items()) {
    SplitEntry entry;
    entry.count = e.at("count").get<Index>();
    entry.data_file = e.at("data_file").get<std::string>();
    entry.labels_file = e.at("labels_file").get<std::string>();
    entry.subjects_file = e.value("subjects_file", std::string{});
    m.splits[name] = entry;
  }
}

DatasetManifest read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  require(fs::exists(path), ErrorCode::io, "missing manifest " + path.string());
  std::ifstream in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, "malformed manifest: " + std::string(e.what()));
  }
  auto m = j.get<DatasetManifest>();
  require(m.num_classes >= 1 && m.channels >= 1 && m.window_length >= 1, ErrorCode::shape_mismatch,
          "manifest declares an empty shape");
  return m;
}

namespace {

WindowedDataset load_split(const fs::path& dir, const DatasetManifest& m, const SplitEntry& e) {
  require(e.count >= 0, ErrorCode::shape_mismatch, "negative split count");
  const auto n = static_cast<std::size_t>(e.count);
  WindowedDataset ds;
  ds.num_classes = m.num_classes;
  ds.sample_rate_hz = m.sample_rate_hz;
  ds.channel_names = m.channel_names;
  ds.X.count = e.count;
  ds.X.channels = m.channels;
  ds.X.length = m.window_length;
  ds.X.data = read_raw<float>(dir / e.data_file, n * static_cast<std::size_t>(m.channels * m.window_length));
  ds.y = read_raw<std::int32_t>(dir / e.labels_file, n);
  if (!e.subjects_file.empty()) ds.subject_ids = read_raw<std::int32_t>(dir / e.subjects_file, n);
  ds.validate();
  return ds;
}

}  // namespace

WindowedDataset load_canonical(const fs::path& dir, const std::string& split) {
  const auto m = read_manifest(dir);
  const auto it = m.splits.find(split);
  require(it != m.splits.end(), ErrorCode::not_found, "manifest has no split '" + split + "'");
  return load_split(dir, m, it->second);
}

std::map<std::string, WindowedDataset> load_canonical_splits(const fs::path& dir) {
  const auto m = read_manifest(dir);
  std::map<std::string, WindowedDataset> out;
  for (const auto& [name, e] : m.splits) out.emplace(name, load_split(dir, m, e));
  return out;
}

void write_canonical(const fs::path& dir, const std::string& name,
                     const std::map<std::string, WindowedDataset>& splits) {
  require(!splits.empty(), ErrorCode::invalid_input, "no splits to write");
  fs::create_directories(dir);
  const auto& first = splits.begin()->second;
  DatasetManifest m;
  m.name = name;
  m.num_classes = first.num_classes;
  m.channels = first.channels();
  m.window_length = first.window_length();
  m.sample_rate_hz = first.sample_rate_hz;
  for (const auto& [split, ds] : splits) {
    require(ds.channels() == m.channels && ds.window_length() == m.window_length &&
                ds.num_classes == m.num_classes,
            ErrorCode::shape_mismatch, "splits disagree on shape");
    // Unnamed splits inherit the names of the others.
    if (!ds.channel_names.empty()) {
      if (m.channel_names.empty()) m.channel_names = ds.channel_names;
      require(ds.channel_names == m.channel_names, ErrorCode::shape_mismatch, "splits disagree on channel names");
    }
    SplitEntry e{ds.size(), split + "_X.f32", split + "_y.i32", ""};
    write_raw(dir / e.data_file, ds.X.data);
    write_raw(dir / e.labels_file, ds.y);
    if (ds.subject_ids) {
      e.subjects_file = split + "_subjects.i32";
      write_raw(dir / e.subjects_file, *ds.subject_ids);
    }
    m.splits[split] = e;
  }
  std::ofstream out(dir / "manifest.json");
  out << nlohmann::json(m).dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::io, "cannot write manifest");
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

WindowTensor window_signal(const MatrixXf& signal, Index length, double overlap_fraction, bool pad) {
  require(length >= 1, ErrorCode::invalid_input, "window length must be >= 1");
  require(overlap_fraction >= 0.0 && overlap_fraction < 1.0, ErrorCode::invalid_input,
          "overlap_fraction must lie in [0, 1)");
  const Index channels = signal.rows();
  const Index total = signal.cols();
  const Index stride = std::max<Index>(1, std::lround(static_cast<double>(length) * (1.0 - overlap_fraction)));

  std::vector<Index> starts;
  Index next = 0;
  for (; next + length <= total; next += stride) starts.push_back(next);
  if (pad && next < total) starts.push_back(next);

  WindowTensor out(static_cast<Index>(starts.size()), channels, length);
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const Index start = starts[k];
    const Index avail = std::min(length, total - start);
    out.window(static_cast<Index>(k)).leftCols(avail) = signal.middleCols(start, avail);
  }
  return out;
}

VectorXd fit_channel_means(const WindowTensor& X) {
  VectorXd sums = VectorXd::Zero(X.channels);
  if (X.count == 0 || X.length == 0) return sums;
  for (Index i = 0; i < X.count; ++i) sums += X.window(i).cast<double>().rowwise().sum();
  return sums / static_cast<double>(X.count * X.length);
}

void subtract_channel_means(WindowTensor& X, const VectorXd& means) {
  require(means.size() == X.channels, ErrorCode::shape_mismatch, "channel count mismatch");
  const VectorXf m = means.cast<float>();
  for (Index i = 0; i < X.count; ++i) X.window(i).colwise() -= m;
}

WindowTensor normalize_mean(const WindowTensor& X) {
  WindowTensor out = X;
  subtract_channel_means(out, fit_channel_means(X));
  return out;
}

std::pair<WindowedDataset, WindowedDataset> split_dataset(const WindowedDataset& ds, SplitMode mode,
                                                          double train_fraction, std::uint64_t seed) {
  require(train_fraction >= 0.0 && train_fraction <= 1.0, ErrorCode::invalid_input,
          "train_fraction must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  IndexList train_idx, test_idx;

  if (mode == SplitMode::by_subject) {
    require(ds.subject_ids.has_value(), ErrorCode::invalid_input, "by_subject split requires subject_ids");
    const std::set<int> unique(ds.subject_ids->begin(), ds.subject_ids->end());
    std::vector<int> subjects(unique.begin(), unique.end());
    std::shuffle(subjects.begin(), subjects.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(subjects.size())));
    const std::set<int> train_subjects(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_train));
    for (std::size_t i = 0; i < ds.y.size(); ++i)
      (train_subjects.count((*ds.subject_ids)[i]) ? train_idx : test_idx).push_back(i);
  } else {
    IndexList order(ds.y.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(order.size())));
    train_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  }
  return {ds.subset(train_idx), ds.subset(test_idx)};
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

struct Component {
  double frequency;  // cycles per window
  double amplitude;
  double phase;
};

WindowedDataset generate_split(const SyntheticSpec& spec, const std::vector<std::vector<std::vector<Component>>>& bank,
                               Index count, std::mt19937_64& rng) {
  const double two_pi = 2.0 * std::numbers::pi;
  std::uniform_real_distribution<double> shift_dist(0.0, static_cast<double>(spec.window_length));
  std::uniform_real_distribution<double> gain_dist(0.8, 1.2);
  std::normal_distribution<double> noise(0.0, 1.0);

  Labels labels(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i % spec.num_classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  WindowedDataset ds;
  ds.num_classes = spec.num_classes;
  ds.sample_rate_hz = spec.sample_rate_hz;
  for (Index c = 0; c < spec.channels; ++c) ds.channel_names.push_back("ch" + std::to_string(c));
  ds.X = WindowTensor(count, spec.channels, spec.window_length);
  ds.y = labels;
  if (spec.num_subjects > 0) ds.subject_ids.emplace();

  const auto length = static_cast<double>(spec.window_length);
  for (Index i = 0; i < count; ++i) {
    const int cls = labels[static_cast<std::size_t>(i)];
    const double shift = shift_dist(rng);
    const double gain = gain_dist(rng) * spec.class_separability;
    auto w = ds.X.window(i);
    for (Index ch = 0; ch < spec.channels; ++ch) {
      const auto& comps = bank[static_cast<std::size_t>(cls)][static_cast<std::size_t>(ch)];
      for (Index t = 0; t < spec.window_length; ++t) {
        double v = 0.0;
        for (const auto& comp : comps)
          v += comp.amplitude * std::sin(two_pi * comp.frequency * (static_cast<double>(t) + shift) / length + comp.phase);
        w(ch, t) = static_cast<float>(gain * v + spec.noise_floor * noise(rng));
      }
    }
    if (ds.subject_ids) ds.subject_ids->push_back(static_cast<int>(i % spec.num_subjects));
  }
  return ds;
}

}  // namespace

std::pair<WindowedDataset, WindowedDataset> make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.rng_seed);
  const double max_freq = std::max(2.0, static_cast<double>(spec.window_length) / 6.0);
  std::uniform_real_distribution<double> freq(1.0, max_freq);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  std::vector<std::vector<std::vector<Component>>> bank(static_cast<std::size_t>(spec.num_classes));
  for (auto& per_class : bank) {
    per_class.resize(static_cast<std::size_t>(spec.channels));
    for (auto& comps : per_class)
      for (int k = 0; k < spec.components_per_class; ++k) comps.push_back({freq(rng), amp(rng), phase(rng)});
  }
  auto train = generate_split(spec, bank, spec.train_count, rng);
  auto test = generate_split(spec, bank, spec.test_count, rng);
  return {std::move(train), std::move(test)};
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = {{"num_classes", s.num_classes},
       {"channels", s.channels},
       {"window_length", s.window_length},
       {"train_count", s.train_count},
       {"test_count", s.test_count},
       {"class_separability", s.class_separability},
       {"noise_floor", s.noise_floor},
       {"components_per_class", s.components_per_class},
       {"num_subjects", s.num_subjects},
       {"sample_rate_hz", s.sample_rate_hz},
       {"rng_seed", s.rng_seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s.num_classes = j.value("num_classes", s.num_classes);
  s.channels = j.value("channels", s.channels);
  s.window_length = j.value("window_length", s.window_length);
  s.train_count = j.value("train_count", s.train_count);
  s.test_count = j.value("test_count", s.test_count);
  s.class_separability = j.value("class_separability", s.class_separability);
  s.noise_floor = j.value("noise_floor", s.noise_floor);
  s.components_per_class = j.value("components_per_class", s.components_per_class);
  s.num_subjects = j.value("num_subjects", s.num_subjects);
  s.sample_rate_hz = j.value("sample_rate_hz", s.sample_rate_hz);
  s.rng_seed = j.value("rng_seed", s.rng_seed);
}

}  // namespace fhlr
