#pragma once

#include <json.hpp>

#include <cstdint>

#include "fhlr/core.hpp"
#include "fhlr/datasets.hpp"
#include "fhlr/network.hpp"
#include "fhlr/training.hpp"

namespace fhlr {

struct ConfidentJoint {
  Eigen::MatrixXi counts;  // (observed label, suspected true label)
  VectorXd thresholds;     // NaN for classes without support
  std::vector<bool> class_supported;
  Labels suspected;        // per example, -1 when no class passes its threshold

  Index total() const { return counts.sum(); }
  /// Fraction of counted examples falling off the diagonal.
  double off_diagonal_fraction() const;
};

struct OofResult {
  MatrixXd probs;
  std::vector<int> fold_of;  // fold that held each example out
  int folds = 0;
};

/// Stratified fold assignment; retries with derived seeds when a class would vanish from a training fold.
std::vector<int> stratified_folds(const Labels& labels, int num_classes, int folds, std::uint64_t seed);

/// Out-of-fold predicted probabilities: each row comes from a model that never trained on it.
OofResult oof_probabilities(const WindowedDataset& ds, int folds, const ArchitectureSpec& arch, const TrainConfig& cfg,
                            std::uint64_t init_seed);

ConfidentJoint estimate_joint(const MatrixXd& probs, const Labels& noisy_labels);

/// For each off-diagonal cell (i, j) selects the count(i, j) examples labeled i with the largest
/// p_j - p_i, capped at half of each observed class. Sorted ascending.
IndexList select_prune(const ConfidentJoint& joint, const MatrixXd& probs, const Labels& noisy_labels);

struct PruneResult {
  WindowedDataset cleaned;
  IndexList kept;
  IndexList pruned;
  ModelState model;
};

PruneResult prune_and_retrain(const WindowedDataset& ds, const ConfidentJoint& joint, const MatrixXd& probs,
                              const ArchitectureSpec& arch, const TrainConfig& cfg, std::uint64_t init_seed);

/// Label-correction mode: the `budget` most suspicious examples get their clean label.
struct Correction {
  Labels labels;
  IndexList corrected;
};
Correction correct_labels(const ConfidentJoint& joint, const MatrixXd& probs, const Labels& noisy_labels,
                          const Labels& clean_labels, std::size_t budget);

nlohmann::json joint_to_json(const ConfidentJoint& joint, const IndexList& pruned = {});

}  // namespace fhlr
