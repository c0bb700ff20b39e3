#pragma once

#include <json.hpp>

#include <cstdint>
#include <set>

#include "fhlr/core.hpp"

namespace fhlr {

enum class AcquisitionStrategy { stratified, entropy, smallest_margin, largest_margin, least_confidence };

struct AcquisitionSpec {
  AcquisitionStrategy strategy = AcquisitionStrategy::stratified;
  Index budget = 100;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Per-row uncertainty; larger means more uncertain. Rows must be probability vectors.
VectorXd score_uncertainty(const MatrixXd& probs, AcquisitionStrategy strategy);

/// Chooses `budget` pool rows not in `exclude`. Returned indices are sorted ascending.
IndexList select_batch(const MatrixXd& pool_probs, const AcquisitionSpec& spec,
                       const std::set<std::size_t>& exclude = {});

std::string_view to_string(AcquisitionStrategy s);
AcquisitionStrategy acquisition_strategy_from_string(const std::string& s);
void to_json(nlohmann::json& j, const AcquisitionSpec& s);
void from_json(const nlohmann::json& j, AcquisitionSpec& s);

/// {"indices": [...], "strategy": ..., "seed": ...}
nlohmann::json selection_to_json(const IndexList& indices, const AcquisitionSpec& spec);

}  // namespace fhlr
