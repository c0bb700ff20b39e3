#pragma once

#include <json.hpp>

#include <cstdint>

#include "fhlr/core.hpp"
#include "fhlr/datasets.hpp"
#include "fhlr/network.hpp"

namespace fhlr {

enum class MergeMethod { weighted_average, fisher, ensemble };

struct MergeSpec {
  std::vector<double> weights;
  MergeMethod method = MergeMethod::weighted_average;

  void validate(std::size_t num_states) const;
};

/// Seed-model weight by noise regime: 0.15 at configured noise >= 0.4, else 0.9.
double default_seed_weight(double noise_level);

/// Diagonal Fisher estimate aligned with the parameter layout.
struct FisherVector {
  VectorXd values;
  Index sample_count = 0;
  IndexList sampled_indices;
  Labels sampled_labels;  // labels drawn from the model's predictive distribution
};

/// Elementwise convex combination of the constituents' EMA parameters.
ModelState merge_weighted(const std::vector<ModelState>& states, const MergeSpec& spec);

FisherVector estimate_fisher(const ModelState& state, const WindowedDataset& data, Index n_samples,
                             std::uint64_t seed);

/// theta* = sum_i w_i (F_i + eps) theta_i / sum_i w_i (F_i + eps), eps = 1e-12.
ModelState merge_fisher(const std::vector<ModelState>& states, const std::vector<FisherVector>& fishers,
                        const MergeSpec& spec);

/// Arithmetic mean of per-model softmax outputs (EMA parameters).
MatrixXd ensemble_predict(const std::vector<ModelState>& states, const WindowTensor& X);

struct WeightSearchResult {
  double seed_weight = 0.0;
  double accuracy = 0.0;
  std::vector<std::pair<double, double>> grid;  // (w_seed, accuracy)
};

/// Picks the seed weight in the grid that maximizes validation accuracy of the merged model.
WeightSearchResult search_seed_weight(const ModelState& seed, const ModelState& fine_tuned,
                                      const WindowedDataset& validation,
                                      const std::vector<double>& grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});

/// Provenance block for merged checkpoints: constituent checksums and weights.
nlohmann::json merge_provenance(const std::vector<ModelState>& states, const MergeSpec& spec);

std::string_view to_string(MergeMethod m);
void to_json(nlohmann::json& j, const MergeSpec& s);
void from_json(const nlohmann::json& j, MergeSpec& s);

}  // namespace fhlr
