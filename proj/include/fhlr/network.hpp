#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "fhlr/core.hpp"
#include "fhlr/datasets.hpp"

namespace fhlr {

struct ArchitectureSpec {
  Index input_channels = 1;
  Index input_length = 128;
  int num_classes = 5;
  std::vector<Index> kernel_sizes{8, 8, 8, 6, 6, 4};
  std::vector<Index> filters{24, 32, 64, 72, 96, 128};
  Index norm_groups = 4;
  Index pool_size = 8;
  Index pool_stride = 2;
  std::vector<int> pool_after_blocks{2, 4, 6};  // 1-based block numbers
  double dropout_rate = 0.15;
  double l2_coefficient = 1e-4;
  double width_multiplier = 1.0;
  double norm_epsilon = 1e-3;

  /// Filter counts after applying width_multiplier.
  std::vector<Index> effective_filters() const;
  /// Group count of the normalization after block `block` (0-based).
  Index groups_for_block(std::size_t block) const;
  bool pools_after(std::size_t block) const;
  /// Throws invalid-spec on inconsistent settings.
  void validate() const;

  bool operator==(const ArchitectureSpec&) const = default;
};

struct ParameterEntry {
  std::string name;
  std::vector<Index> shape;
  Index offset = 0;
  Index size = 0;
  bool regularized = false;  // receives the L2 penalty

  bool operator==(const ParameterEntry&) const = default;
};

/// Canonical ordered parameter layout; a pure function of the architecture.
struct ParameterLayout {
  std::vector<ParameterEntry> entries;
  Index total = 0;

  static ParameterLayout for_architecture(const ArchitectureSpec& arch);
  const ParameterEntry& find(const std::string& name) const;
  /// 1 for every L2-regularized coordinate, 0 elsewhere.
  VectorXf regularization_mask() const;

  bool operator==(const ParameterLayout&) const = default;
};

struct ParameterVector {
  std::shared_ptr<const ParameterLayout> layout;
  VectorXf values;

  Index size() const { return values.size(); }
  bool same_layout(const ParameterVector& other) const {
    return layout && other.layout && *layout == *other.layout && values.size() == other.values.size();
  }
};

enum class ModelRole { seed, fine_tuned, merged, baseline };

struct ModelState {
  ArchitectureSpec arch;
  ParameterVector params;
  ParameterVector ema_params;
  ModelRole role = ModelRole::seed;

  const ParameterVector& eval_params(bool use_ema) const { return use_ema ? ema_params : params; }
};

/// The six-block convolutional classifier evaluated over a flat parameter vector.
///
/// Activations are laid out as [channels, batch * length] so every convolution is a
/// single GEMM over an im2col buffer. The instance caches what backward() needs from
/// the most recent forward(); it is not safe to share across threads.
template <typename Scalar>
class ConvNet {
 public:
  explicit ConvNet(const ArchitectureSpec& arch);

  const ArchitectureSpec& arch() const { return arch_; }
  const ParameterLayout& layout() const { return layout_; }

  /// input: [input_channels, batch * input_length]. Returns logits [batch, num_classes].
  /// Dropout is active only when train_mode is set; its mask is drawn from dropout_seed.
  Matrix<Scalar> forward(const Vector<Scalar>& theta, const RowMatrix<Scalar>& input, Index batch,
                         bool train_mode, std::uint64_t dropout_seed = 0);

  /// Gradient of the loss w.r.t. theta given dL/dlogits [batch, num_classes] for the last forward.
  Vector<Scalar> backward(const Matrix<Scalar>& dlogits);

 private:
  struct BlockCache {
    RowMatrix<Scalar> cols;     // im2col of the block input
    RowMatrix<Scalar> xhat;     // normalized pre-affine activations
    Matrix<Scalar> inv_std;     // [groups, batch]
    RowMatrix<Scalar> act;      // ELU output
    std::vector<Index> argmax;  // pool routing into act columns, empty when no pool
    Index length = 0;         // sequence length inside the block
    Index in_channels = 0;
  };

  ArchitectureSpec arch_;
  ParameterLayout layout_;
  std::vector<Index> filters_;
  std::vector<BlockCache> cache_;
  Vector<Scalar> theta_;
  RowMatrix<Scalar> dropout_mask_;
  Matrix<Scalar> features_;  // [filters_last, batch]
  Index batch_ = 0;
  Index final_length_ = 0;
};

extern template class ConvNet<float>;
extern template class ConvNet<double>;

/// Sequence length after each block, for the architecture's pooling schedule.
std::vector<Index> block_lengths(const ArchitectureSpec& arch);

ModelState build_model(const ArchitectureSpec& arch, std::uint64_t init_seed);

/// Packs the selected windows into the [channels, count * length] layout.
template <typename Scalar>
RowMatrix<Scalar> pack_batch(const WindowTensor& X, std::span<const std::size_t> indices);

/// Logits [N, num_classes] for every window in X, evaluated in chunks.
MatrixXf forward(const ModelState& state, const WindowTensor& X, bool use_ema, bool train_mode = false,
                 std::uint64_t dropout_seed = 0);
/// Softmax probabilities [N, num_classes] in double precision.
MatrixXd predict_proba(const ModelState& state, const WindowTensor& X, bool use_ema = true);

VectorXf flatten(const ModelState& state);
ParameterVector unflatten(const VectorXf& values, const ArchitectureSpec& arch);

/// Writes manifest.json + params.f32 + ema.f32 into dir.
void save_checkpoint(const std::filesystem::path& dir, const ModelState& state,
                     const nlohmann::json& provenance = {});
ModelState load_checkpoint(const std::filesystem::path& dir);
/// FNV-1a digest over the raw parameter bytes (used for provenance blocks).
std::string parameter_checksum(const ParameterVector& p);

std::string_view to_string(ModelRole role);
void to_json(nlohmann::json& j, const ArchitectureSpec& a);
void from_json(const nlohmann::json& j, ArchitectureSpec& a);
void to_json(nlohmann::json& j, const ModelRole& r);
void from_json(const nlohmann::json& j, ModelRole& r);

}  // namespace fhlr
