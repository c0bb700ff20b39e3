#pragma once

#include <json.hpp>

#include <cstdint>
#include <optional>

#include "fhlr/core.hpp"

namespace fhlr {

enum class NoiseMode { symmetric, asymmetric };

struct NoiseSpec {
  int num_classes = 2;
  double level = 0.0;
  double sparsity = 0.0;
  NoiseMode mode = NoiseMode::symmetric;
  std::uint64_t rng_seed = 0;

  void validate() const;
  /// Sparsity as used for construction; asymmetric noise is always fully sparse.
  double effective_sparsity() const { return mode == NoiseMode::asymmetric ? 1.0 : sparsity; }
};

/// Column-stochastic label transition matrix: entries(i, j) = p(observed i | true j).
struct NoiseMatrix {
  MatrixXd entries;
  std::optional<NoiseSpec> spec;

  int num_classes() const { return static_cast<int>(entries.rows()); }
};

struct CorruptionRecord {
  Labels original_labels;
  Labels noisy_labels;
  std::vector<bool> flipped_mask;
  std::uint64_t rng_seed = 0;

  std::size_t flipped_count() const;
  /// Fraction of labels that changed.
  double empirical_level() const;
};

/// Number of nonzero off-diagonal targets per column for symmetric construction.
int off_diagonal_support(int num_classes, double sparsity);

NoiseMatrix build_noise_matrix(const NoiseSpec& spec);

/// Throws invalid-matrix unless every column is a probability vector (tolerance 1e-9).
void validate_column_stochastic(const MatrixXd& q);

/// 1 - mean(diag(Q)).
double measured_level(const NoiseMatrix& q);
/// Fraction of exactly-zero off-diagonal entries (tolerance 1e-12).
double measured_sparsity(const NoiseMatrix& q);

CorruptionRecord corrupt_labels(const Labels& labels, const NoiseMatrix& q, std::uint64_t seed);

/// Column-normalized empirical transition matrix estimated from a labeled pair.
MatrixXd empirical_transition(const Labels& original, const Labels& noisy, int num_classes);

void to_json(nlohmann::json& j, const NoiseMode& m);
void from_json(const nlohmann::json& j, NoiseMode& m);
void to_json(nlohmann::json& j, const NoiseSpec& s);
void from_json(const nlohmann::json& j, NoiseSpec& s);
void to_json(nlohmann::json& j, const NoiseMatrix& q);
void from_json(const nlohmann::json& j, NoiseMatrix& q);
void to_json(nlohmann::json& j, const CorruptionRecord& r);
void from_json(const nlohmann::json& j, CorruptionRecord& r);

}  // namespace fhlr
