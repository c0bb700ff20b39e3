#pragma once

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "fhlr/core.hpp"
#include "fhlr/datasets.hpp"
#include "fhlr/network.hpp"

namespace fhlr {

enum class LossKind { ce, ls, mixup, poly, bi_tempered, logit_clip, focal };

struct LossSpec {
  LossKind kind = LossKind::ce;
  double focal_gamma = 2.0;
  double poly_epsilon = 1.0;
  double bt_t1 = 0.7;
  double bt_t2 = 1.3;
  double clip_tau = 1.0;
  double mixup_alpha = 0.2;
  double ls_alpha = 0.1;

  void validate() const;
};

struct LossResult {
  double value = 0.0;
  MatrixXd grad;  // dL/dlogits, same shape as logits; loss is the batch mean
};

/// Rows of the mixing matrix (1 - alpha) I + (alpha / C) J selected by label.
MatrixXd smooth_targets(const Labels& labels, double alpha, int num_classes);
MatrixXd one_hot(const Labels& labels, int num_classes);

/// Batch-mean loss and its gradient w.r.t. the logits. Targets are probability rows.
LossResult loss_and_gradient(const LossSpec& spec, const MatrixXd& logits, const MatrixXd& targets);
double compute_loss(const LossSpec& spec, const MatrixXd& logits, const MatrixXd& targets);

/// Tempered softmax with temperature t (t = 1 is the ordinary softmax).
MatrixXd tempered_softmax(const MatrixXd& logits, double t);

struct MixedBatch {
  RowMatrix<float> inputs;  // [channels, batch * length]
  MatrixXd targets;
  double lambda = 1.0;
  std::vector<Index> partner;
};

/// Convex combination of each example with a shuffled partner for a fixed lambda.
MixedBatch mixup_with_lambda(const RowMatrix<float>& inputs, Index batch, const MatrixXd& targets, double lambda,
                             std::vector<Index> partner);
/// lambda ~ Beta(a, a); partner permutation drawn from the seed.
MixedBatch mixup_batch(const RowMatrix<float>& inputs, Index batch, const MatrixXd& targets, double a,
                       std::uint64_t seed);

/// ema' = m * ema + (1 - m) * params, evaluated in double and rounded once.
ParameterVector ema_update(const ParameterVector& ema, const ParameterVector& params, double momentum);
/// Same update on a double-precision accumulator; training keeps its average this way so
/// rounding does not build up over thousands of steps.
void accumulate_ema(VectorXd& ema, const VectorXf& params, double momentum);

/// Adaptive-moment optimizer state for one flat parameter vector.
class Adam {
 public:
  Adam(Index size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-7);
  void step(VectorXf& theta, const VectorXf& grad);
  Index steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  VectorXf m_, v_;
  Index t_ = 0;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  Index epochs = 10;
  Index batch_size = 32;
  double smoothing_alpha = 0.05;
  double ema_momentum = 0.99;
  bool use_ema = true;
  double l2 = 1e-4;
  std::uint64_t rng_seed = 0;
  /// Upper bound on optimizer steps (0 = unbounded); used by tests.
  Index max_steps = 0;

  void validate() const;
};

enum class ExpertSource { oracle, panel, live_ui };

struct ExpertSet {
  IndexList indices;
  Labels corrected_labels;
  ExpertSource source = ExpertSource::oracle;
  /// Optional raw votes, one row per index (empty when labels came from a single source).
  std::vector<std::vector<int>> votes;

  std::size_t size() const { return indices.size(); }
  void validate(int num_classes, std::optional<std::size_t> pool_size = std::nullopt) const;
  bool operator==(const ExpertSet&) const = default;
};

struct EpochMetrics {
  std::string phase;
  Index epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_accuracy;
};

using MetricsSink = std::function<void(const EpochMetrics&)>;

struct TrainOptions {
  LossSpec loss;
  const WindowedDataset* validation = nullptr;
  MetricsSink on_epoch;
  std::string phase = "train";
};

/// Runs the optimizer from `state` against soft targets; EMA tracked every step.
ModelState train_on_targets(ModelState state, const WindowedDataset& data, const MatrixXd& targets,
                            const TrainConfig& cfg, const TrainOptions& options = {});

/// Stage 1: fresh model trained on smoothed noisy labels.
ModelState train_seed(const ArchitectureSpec& arch, const WindowedDataset& train, const TrainConfig& cfg,
                      std::uint64_t init_seed, const TrainOptions& options = {});

/// Baseline training with the given loss on hard noisy labels (mixup handled per batch).
ModelState train_baseline(const ArchitectureSpec& arch, const WindowedDataset& train, const TrainConfig& cfg,
                          std::uint64_t init_seed, const TrainOptions& options);

/// Stage 2: continues from the seed's evaluated parameters on the expert-labeled instances only.
ModelState fine_tune(const ModelState& seed, const ExpertSet& expert, const WindowedDataset& train, double eta,
                     const TrainConfig& cfg, const TrainOptions& options = {});

std::string_view to_string(LossKind kind);
void to_json(nlohmann::json& j, const LossSpec& s);
void from_json(const nlohmann::json& j, LossSpec& s);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const ExpertSet& e);
void from_json(const nlohmann::json& j, ExpertSet& e);
void to_json(nlohmann::json& j, const EpochMetrics& m);

}  // namespace fhlr
