#include "fhlr/noise_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fhlr {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_spec: return "invalid-spec";
    case ErrorCode::invalid_matrix: return "invalid-matrix";
    case ErrorCode::invalid_label: return "invalid-label";
    case ErrorCode::invalid_input: return "invalid-input";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::layout_mismatch: return "layout-mismatch";
    case ErrorCode::io: return "io";
    case ErrorCode::config: return "config";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::not_found: return "not-found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::closed: return "closed";
    case ErrorCode::incomplete: return "incomplete";
  }
  return "unknown";
}

void NoiseSpec::validate() const {
  require(num_classes >= 2, ErrorCode::invalid_spec, "num_classes must be >= 2");
  require(level >= 0.0 && level <= 1.0, ErrorCode::invalid_spec, "level must lie in [0, 1]");
  require(sparsity >= 0.0 && sparsity <= 1.0, ErrorCode::invalid_spec,
          "sparsity must lie in [0, 1]");
}

std::size_t CorruptionRecord::flipped_count() const {
  return static_cast<std::size_t>(std::count(flipped_mask.begin(), flipped_mask.end(), true));
}

double CorruptionRecord::empirical_level() const {
  if (flipped_mask.empty()) return 0.0;
  return static_cast<double>(flipped_count()) / static_cast<double>(flipped_mask.size());
}

int off_diagonal_support(int num_classes, double sparsity) {
  const int k = static_cast<int>(std::lround((1.0 - sparsity) * (num_classes - 1)));
  return std::max(1, k);
}

namespace {

// Random fixed-point-free pairing: 2-cycles, with one 3-cycle when C is odd.
std::vector<int> draw_pairing(int c, std::mt19937_64& rng) {
  std::vector<int> order(static_cast<std::size_t>(c));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> target(static_cast<std::size_t>(c), -1);
  const int paired = (c % 2 == 0) ? c : c - 3;
  for (int i = 0; i < paired; i += 2) {
    target[order[i]] = order[i + 1];
    target[order[i + 1]] = order[i];
  }
  if (c % 2 == 1) {
    const int a = order[c - 3], b = order[c - 2], d = order[c - 1];
    target[a] = b;
    target[b] = d;
    target[d] = a;
  }
  return target;
}

}  // namespace

NoiseMatrix build_noise_matrix(const NoiseSpec& spec) {
  spec.validate();
  const int c = spec.num_classes;
  NoiseMatrix out{MatrixXd::Identity(c, c), spec};
  if (spec.level == 0.0) return out;

  std::mt19937_64 rng(spec.rng_seed);
  out.entries.diagonal().setConstant(1.0 - spec.level);

  if (spec.mode == NoiseMode::asymmetric) {
    const auto target = draw_pairing(c, rng);
    for (int j = 0; j < c; ++j) out.entries(target[j], j) = spec.level;
    return out;
  }

  const int k = off_diagonal_support(c, spec.sparsity);
  std::vector<int> others;
  for (int j = 0; j < c; ++j) {
    others.clear();
    for (int i = 0; i < c; ++i)
      if (i != j) others.push_back(i);
    std::shuffle(others.begin(), others.end(), rng);
    for (int t = 0; t < k; ++t) out.entries(others[t], j) = spec.level / k;
  }
  return out;
}

void validate_column_stochastic(const MatrixXd& q) {
  require(q.rows() == q.cols() && q.rows() >= 2, ErrorCode::invalid_matrix,
          "noise matrix must be square with C >= 2");
  require(q.allFinite(), ErrorCode::invalid_matrix, "non-finite entry");
  require((q.array() >= 0.0).all(), ErrorCode::invalid_matrix, "negative entry");
  for (Index j = 0; j < q.cols(); ++j)
    require(std::abs(q.col(j).sum() - 1.0) <= 1e-9, ErrorCode::invalid_matrix,
            "column " + std::to_string(j) + " does not sum to 1");
}

double measured_level(const NoiseMatrix& q) {
  validate_column_stochastic(q.entries);
  return 1.0 - q.entries.diagonal().mean();
}

double measured_sparsity(const NoiseMatrix& q) {
  validate_column_stochastic(q.entries);
  const Index c = q.entries.rows();
  Index zeros = 0;
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < c; ++i)
      if (i != j && std::abs(q.entries(i, j)) <= 1e-12) ++zeros;
  return static_cast<double>(zeros) / static_cast<double>(c * (c - 1));
}

CorruptionRecord corrupt_labels(const Labels& labels, const NoiseMatrix& q, std::uint64_t seed) {
  validate_column_stochastic(q.entries);
  const int c = q.num_classes();
  for (int y : labels)
    require(y >= 0 && y < c, ErrorCode::invalid_label, "label " + std::to_string(y) + " out of range");

  CorruptionRecord rec;
  rec.original_labels = labels;
  rec.noisy_labels.resize(labels.size());
  rec.flipped_mask.resize(labels.size());
  rec.rng_seed = seed;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const int truth = labels[n];
    const double u = unit(rng);
    double acc = 0.0;
    int drawn = c - 1;
    for (int i = 0; i < c; ++i) {
      acc += q.entries(i, truth);
      if (u < acc) {
        drawn = i;
        break;
      }
    }
    // Rounding can leave u >= acc at the end; never land on a zero-mass class.
    while (q.entries(drawn, truth) == 0.0 && drawn > 0) --drawn;
    rec.noisy_labels[n] = drawn;
    rec.flipped_mask[n] = drawn != truth;
  }
  return rec;
}

MatrixXd empirical_transition(const Labels& original, const Labels& noisy, int num_classes) {
  require(original.size() == noisy.size(), ErrorCode::shape_mismatch, "label vectors differ in length");
  MatrixXd counts = MatrixXd::Zero(num_classes, num_classes);
  for (std::size_t n = 0; n < original.size(); ++n) counts(noisy[n], original[n]) += 1.0;
  for (Index j = 0; j < counts.cols(); ++j) {
    const double total = counts.col(j).sum();
    if (total > 0) counts.col(j) /= total;
  }
  return counts;
}

void to_json(nlohmann::json& j, const NoiseMode& m) {
  j = (m == NoiseMode::symmetric) ? "symmetric" : "asymmetric";
}

void from_json(const nlohmann::json& j, NoiseMode& m) {
  const auto s = j.get<std::string>();
  if (s == "symmetric") m = NoiseMode::symmetric;
  else if (s == "asymmetric") m = NoiseMode::asymmetric;
  else fail(ErrorCode::config, "unknown noise mode '" + s + "'");
}

void to_json(nlohmann::json& j, const NoiseSpec& s) {
  j = {{"num_classes", s.num_classes}, {"level", s.level}, {"sparsity", s.sparsity},
       {"mode", s.mode}, {"rng_seed", s.rng_seed}};
}

void from_json(const nlohmann::json& j, NoiseSpec& s) {
  s.num_classes = j.value("num_classes", s.num_classes);
  s.level = j.value("level", s.level);
  s.sparsity = j.value("sparsity", s.sparsity);
  if (j.contains("mode")) s.mode = j.at("mode").get<NoiseMode>();
  s.rng_seed = j.value("rng_seed", s.rng_seed);
}

void to_json(nlohmann::json& j, const NoiseMatrix& q) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(q.entries.size()));
  for (Index r = 0; r < q.entries.rows(); ++r)
    for (Index c = 0; c < q.entries.cols(); ++c) flat.push_back(q.entries(r, c));
  j = {{"num_classes", q.num_classes()}, {"entries", flat}};
  if (q.spec) j["spec"] = *q.spec;
}

void from_json(const nlohmann::json& j, NoiseMatrix& q) {
  const int c = j.at("num_classes").get<int>();
  const auto flat = j.at("entries").get<std::vector<double>>();
  require(flat.size() == static_cast<std::size_t>(c) * static_cast<std::size_t>(c),
          ErrorCode::invalid_matrix, "entries length does not match num_classes");
  q.entries.resize(c, c);
  for (int r = 0; r < c; ++r)
    for (int col = 0; col < c; ++col) q.entries(r, col) = flat[static_cast<std::size_t>(r * c + col)];
  q.spec.reset();
  if (j.contains("spec")) q.spec = j.at("spec").get<NoiseSpec>();
}

void to_json(nlohmann::json& j, const CorruptionRecord& r) {
  std::vector<int> mask(r.flipped_mask.begin(), r.flipped_mask.end());
  j = {{"original_labels", r.original_labels}, {"noisy_labels", r.noisy_labels},
       {"flipped_mask", mask}, {"rng_seed", r.rng_seed}};
}

void from_json(const nlohmann::json& j, CorruptionRecord& r) {
  r.original_labels = j.at("original_labels").get<Labels>();
  r.noisy_labels = j.at("noisy_labels").get<Labels>();
  const auto mask = j.at("flipped_mask").get<std::vector<int>>();
  r.flipped_mask.assign(mask.begin(), mask.end());
  r.rng_seed = j.value("rng_seed", std::uint64_t{0});
}

}  // namespace fhlr
