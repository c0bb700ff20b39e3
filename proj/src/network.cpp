#include "fhlr/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace fhlr {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

std::vector<Index> ArchitectureSpec::effective_filters() const {
  std::vector<Index> out;
  out.reserve(filters.size());
  for (Index f : filters) out.push_back(std::max<Index>(1, std::lround(static_cast<double>(f) * width_multiplier)));
  return out;
}

Index ArchitectureSpec::groups_for_block(std::size_t block) const {
  if (block != 0) return norm_groups;
  // First normalization: one group per input channel, falling back to the largest
  // divisor of the filter count not exceeding the channel count.
  const Index f = effective_filters().front();
  for (Index g = std::min(input_channels, f); g >= 1; --g)
    if (f % g == 0) return g;
  return 1;
}

bool ArchitectureSpec::pools_after(std::size_t block) const {
  const int number = static_cast<int>(block) + 1;
  return std::find(pool_after_blocks.begin(), pool_after_blocks.end(), number) != pool_after_blocks.end();
}

void ArchitectureSpec::validate() const {
  require(input_channels >= 1 && input_length >= 1, ErrorCode::invalid_spec, "empty input shape");
  require(num_classes >= 2, ErrorCode::invalid_spec, "num_classes must be >= 2");
  require(!filters.empty() && filters.size() == kernel_sizes.size(), ErrorCode::invalid_spec,
          "kernel_sizes and filters must have equal nonzero length");
  require(width_multiplier > 0.0 && width_multiplier <= 1.0, ErrorCode::invalid_spec,
          "width_multiplier must lie in (0, 1]");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, ErrorCode::invalid_spec, "dropout_rate must lie in [0, 1)");
  require(norm_groups >= 1 && pool_size >= 1 && pool_stride >= 1, ErrorCode::invalid_spec,
          "norm_groups, pool_size and pool_stride must be positive");
  for (Index k : kernel_sizes) require(k >= 1, ErrorCode::invalid_spec, "kernel sizes must be positive");
  const auto f = effective_filters();
  for (std::size_t b = 0; b < f.size(); ++b)
    require(f[b] % groups_for_block(b) == 0, ErrorCode::invalid_spec,
            "block " + std::to_string(b + 1) + ": " + std::to_string(f[b]) + " filters not divisible by " +
                std::to_string(groups_for_block(b)) + " groups");
  block_lengths(*this);
}

std::vector<Index> block_lengths(const ArchitectureSpec& arch) {
  std::vector<Index> out;
  Index length = arch.input_length;
  for (std::size_t b = 0; b < arch.filters.size(); ++b) {
    if (arch.pools_after(b)) {
      require(length >= arch.pool_size, ErrorCode::invalid_spec,
              "sequence of length " + std::to_string(length) + " too short to pool after block " +
                  std::to_string(b + 1));
      length = (length - arch.pool_size) / arch.pool_stride + 1;
    }
    out.push_back(length);
  }
  return out;
}

ParameterLayout ParameterLayout::for_architecture(const ArchitectureSpec& arch) {
  ParameterLayout layout;
  auto add = [&](std::string name, std::vector<Index> shape, bool regularized) {
    Index size = 1;
    for (Index d : shape) size *= d;
    layout.entries.push_back({std::move(name), std::move(shape), layout.total, size, regularized});
    layout.total += size;
  };
  const auto f = arch.effective_filters();
  Index in = arch.input_channels;
  for (std::size_t b = 0; b < f.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b + 1) + ".";
    add(prefix + "conv.kernel", {f[b], in, arch.kernel_sizes[b]}, true);
    add(prefix + "conv.bias", {f[b]}, false);
    add(prefix + "norm.gamma", {f[b]}, false);
    add(prefix + "norm.beta", {f[b]}, false);
    in = f[b];
  }
  add("dense.kernel", {arch.num_classes, in}, true);
  add("dense.bias", {arch.num_classes}, false);
  return layout;
}

const ParameterEntry& ParameterLayout::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  fail(ErrorCode::not_found, "no parameter named " + name);
}

VectorXf ParameterLayout::regularization_mask() const {
  VectorXf mask = VectorXf::Zero(total);
  for (const auto& e : entries)
    if (e.regularized) mask.segment(e.offset, e.size).setOnes();
  return mask;
}

// ---------------------------------------------------------------------------
// ConvNet
// ---------------------------------------------------------------------------

namespace {

// 'same' padding as in common deep-learning frameworks: the extra pad goes right.
inline Index pad_left(Index kernel) { return (kernel - 1) / 2; }

template <typename Scalar>
using ConstMatMap = Eigen::Map<const Matrix<Scalar>>;
template <typename Scalar>
using MatMap = Eigen::Map<Matrix<Scalar>>;

}  // namespace

template <typename Scalar>
ConvNet<Scalar>::ConvNet(const ArchitectureSpec& arch)
    : arch_(arch), layout_(ParameterLayout::for_architecture(arch)), filters_(arch.effective_filters()) {
  arch_.validate();
  cache_.resize(filters_.size());
}

template <typename Scalar>
Matrix<Scalar> ConvNet<Scalar>::forward(const Vector<Scalar>& theta, const RowMatrix<Scalar>& input, Index batch,
                                        bool train_mode, std::uint64_t dropout_seed) {
  require(theta.size() == layout_.total, ErrorCode::layout_mismatch,
          "parameter vector has " + std::to_string(theta.size()) + " entries, layout expects " +
              std::to_string(layout_.total));
  require(input.rows() == arch_.input_channels && input.cols() == batch * arch_.input_length,
          ErrorCode::shape_mismatch, "input does not match [channels, batch * length]");
  theta_ = theta;
  batch_ = batch;

  RowMatrix<Scalar> x = input;
  Index length = arch_.input_length;
  Index in_ch = arch_.input_channels;
  const Scalar eps = static_cast<Scalar>(arch_.norm_epsilon);

  for (std::size_t b = 0; b < filters_.size(); ++b) {
    BlockCache& c = cache_[b];
    const std::string prefix = "block" + std::to_string(b + 1) + ".";
    const auto& ek = layout_.find(prefix + "conv.kernel");
    const Index out_ch = filters_[b];
    const Index k = arch_.kernel_sizes[b];
    const Index pl = pad_left(k);
    const Index width = batch * length;
    c.length = length;
    c.in_channels = in_ch;

    // im2col: row (ci * k + kk) holds input channel ci shifted by kk - pl.
    c.cols.setZero(in_ch * k, width);
    for (Index ci = 0; ci < in_ch; ++ci) {
      for (Index kk = 0; kk < k; ++kk) {
        const Index d = kk - pl;
        const Index t0 = std::max<Index>(0, -d);
        const Index t1 = std::min(length, length - d);
        if (t1 <= t0) continue;
        for (Index s = 0; s < batch; ++s)
          c.cols.row(ci * k + kk).segment(s * length + t0, t1 - t0) =
              x.row(ci).segment(s * length + t0 + d, t1 - t0);
      }
    }

    // Kernel stored [out, in, k] row-major == [out, in * k] row-major; map as col-major transpose.
    Eigen::Map<const RowMatrix<Scalar>> w(theta.data() + ek.offset, out_ch, in_ch * k);
    const auto bias = theta.segment(layout_.find(prefix + "conv.bias").offset, out_ch);
    const auto gamma = theta.segment(layout_.find(prefix + "norm.gamma").offset, out_ch);
    const auto beta = theta.segment(layout_.find(prefix + "norm.beta").offset, out_ch);

    RowMatrix<Scalar> z = w * c.cols;
    z.colwise() += bias;

    const Index groups = arch_.groups_for_block(b);
    const Index cpg = out_ch / groups;
    const Scalar count = static_cast<Scalar>(cpg * length);
    c.xhat.resize(out_ch, width);
    c.inv_std.resize(groups, batch);
    for (Index s = 0; s < batch; ++s) {
      for (Index g = 0; g < groups; ++g) {
        auto blk = z.block(g * cpg, s * length, cpg, length);
        const Scalar mean = blk.sum() / count;
        const Scalar var = (blk.array() - mean).square().sum() / count;
        const Scalar inv = Scalar(1) / std::sqrt(var + eps);
        c.inv_std(g, s) = inv;
        c.xhat.block(g * cpg, s * length, cpg, length) = (blk.array() - mean) * inv;
      }
    }
    RowMatrix<Scalar> y = ((c.xhat.array().colwise() * gamma.array()).colwise() + beta.array()).matrix();
    c.act = y.unaryExpr([](Scalar v) { return v > Scalar(0) ? v : std::expm1(v); });

    if (arch_.pools_after(b)) {
      const Index out_len = (length - arch_.pool_size) / arch_.pool_stride + 1;
      RowMatrix<Scalar> pooled(out_ch, batch * out_len);
      c.argmax.assign(static_cast<std::size_t>(out_ch * batch * out_len), 0);
      for (Index ch = 0; ch < out_ch; ++ch) {
        for (Index s = 0; s < batch; ++s) {
          for (Index o = 0; o < out_len; ++o) {
            const Index start = s * length + o * arch_.pool_stride;
            Index best = start;
            for (Index p = 1; p < arch_.pool_size; ++p)
              if (c.act(ch, start + p) > c.act(ch, best)) best = start + p;
            pooled(ch, s * out_len + o) = c.act(ch, best);
            c.argmax[static_cast<std::size_t>(ch * batch * out_len + s * out_len + o)] = best;
          }
        }
      }
      x = std::move(pooled);
      length = out_len;
    } else {
      c.argmax.clear();
      x = c.act;
    }
    in_ch = out_ch;
  }

  final_length_ = length;
  if (train_mode && arch_.dropout_rate > 0.0) {
    std::mt19937_64 rng(dropout_seed);
    std::bernoulli_distribution keep(1.0 - arch_.dropout_rate);
    const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - arch_.dropout_rate));
    dropout_mask_.resize(x.rows(), x.cols());
    for (Index i = 0; i < dropout_mask_.rows(); ++i)
      for (Index j = 0; j < dropout_mask_.cols(); ++j) dropout_mask_(i, j) = keep(rng) ? scale : Scalar(0);
    x.array() *= dropout_mask_.array();
  } else {
    dropout_mask_.resize(0, 0);
  }

  features_.resize(in_ch, batch);
  for (Index s = 0; s < batch; ++s)
    features_.col(s) = x.middleCols(s * length, length).rowwise().mean();

  const auto& ed = layout_.find("dense.kernel");
  Eigen::Map<const RowMatrix<Scalar>> wd(theta.data() + ed.offset, arch_.num_classes, in_ch);
  const auto bd = theta.segment(layout_.find("dense.bias").offset, arch_.num_classes);
  Matrix<Scalar> logits_t = wd * features_;
  logits_t.colwise() += bd;
  return logits_t.transpose();
}

template <typename Scalar>
Vector<Scalar> ConvNet<Scalar>::backward(const Matrix<Scalar>& dlogits) {
  require(dlogits.rows() == batch_ && dlogits.cols() == arch_.num_classes, ErrorCode::shape_mismatch,
          "dlogits does not match the last forward batch");
  Vector<Scalar> grad = Vector<Scalar>::Zero(layout_.total);
  const Index last_ch = filters_.back();

  const Matrix<Scalar> dl_t = dlogits.transpose();  // [classes, batch]
  const auto& ed = layout_.find("dense.kernel");
  Eigen::Map<const RowMatrix<Scalar>> wd(theta_.data() + ed.offset, arch_.num_classes, last_ch);
  Eigen::Map<RowMatrix<Scalar>>(grad.data() + ed.offset, arch_.num_classes, last_ch) = dl_t * features_.transpose();
  grad.segment(layout_.find("dense.bias").offset, arch_.num_classes) = dl_t.rowwise().sum();
  const Matrix<Scalar> dfeat = wd.transpose() * dl_t;  // [channels, batch]

  Index length = final_length_;
  RowMatrix<Scalar> dx(last_ch, batch_ * length);
  const Scalar inv_len = Scalar(1) / static_cast<Scalar>(length);
  for (Index s = 0; s < batch_; ++s)
    dx.middleCols(s * length, length) = (dfeat.col(s) * inv_len).replicate(1, length);
  if (dropout_mask_.size() > 0) dx.array() *= dropout_mask_.array();

  for (std::size_t bi = filters_.size(); bi-- > 0;) {
    BlockCache& c = cache_[bi];
    const std::string prefix = "block" + std::to_string(bi + 1) + ".";
    const Index out_ch = filters_[bi];
    const Index k = arch_.kernel_sizes[bi];
    const Index pl = pad_left(k);
    const Index blen = c.length;
    const Index width = batch_ * blen;

    RowMatrix<Scalar> dact;
    if (!c.argmax.empty()) {
      dact.setZero(out_ch, width);
      const Index out_len = dx.cols() / batch_;
      for (Index ch = 0; ch < out_ch; ++ch)
        for (Index j = 0; j < batch_ * out_len; ++j)
          dact(ch, c.argmax[static_cast<std::size_t>(ch * batch_ * out_len + j)]) += dx(ch, j);
    } else {
      dact = std::move(dx);
    }

    // ELU': 1 on the positive side, act + 1 elsewhere.
    RowMatrix<Scalar> dy = (dact.array() * c.act.array().unaryExpr([](Scalar a) {
      return a > Scalar(0) ? Scalar(1) : a + Scalar(1);
    })).matrix();

    const auto& eg = layout_.find(prefix + "norm.gamma");
    const auto gamma = theta_.segment(eg.offset, out_ch);
    grad.segment(eg.offset, out_ch) = (dy.array() * c.xhat.array()).rowwise().sum();
    grad.segment(layout_.find(prefix + "norm.beta").offset, out_ch) = dy.rowwise().sum();

    RowMatrix<Scalar> dxhat = (dy.array().colwise() * gamma.array()).matrix();
    const Index groups = arch_.groups_for_block(bi);
    const Index cpg = out_ch / groups;
    const Scalar count = static_cast<Scalar>(cpg * blen);
    RowMatrix<Scalar> dz(out_ch, width);
    for (Index s = 0; s < batch_; ++s) {
      for (Index g = 0; g < groups; ++g) {
        const auto dh = dxhat.block(g * cpg, s * blen, cpg, blen);
        const auto xh = c.xhat.block(g * cpg, s * blen, cpg, blen);
        const Scalar sum_dh = dh.sum();
        const Scalar sum_dh_xh = (dh.array() * xh.array()).sum();
        dz.block(g * cpg, s * blen, cpg, blen) =
            (c.inv_std(g, s) / count) * (count * dh.array() - sum_dh - xh.array() * sum_dh_xh);
      }
    }

    const Index in_ch = c.in_channels;
    const auto& ek = layout_.find(prefix + "conv.kernel");
    Eigen::Map<RowMatrix<Scalar>>(grad.data() + ek.offset, out_ch, in_ch * k) = dz * c.cols.transpose();
    grad.segment(layout_.find(prefix + "conv.bias").offset, out_ch) = dz.rowwise().sum();

    if (bi == 0) break;
    Eigen::Map<const RowMatrix<Scalar>> w(theta_.data() + ek.offset, out_ch, in_ch * k);
    const RowMatrix<Scalar> dcols = w.transpose() * dz;
    dx.setZero(in_ch, width);
    for (Index ci = 0; ci < in_ch; ++ci) {
      for (Index kk = 0; kk < k; ++kk) {
        const Index d = kk - pl;
        const Index t0 = std::max<Index>(0, -d);
        const Index t1 = std::min(blen, blen - d);
        if (t1 <= t0) continue;
        for (Index s = 0; s < batch_; ++s)
          dx.row(ci).segment(s * blen + t0 + d, t1 - t0) += dcols.row(ci * k + kk).segment(s * blen + t0, t1 - t0);
      }
    }
  }
  return grad;
}

template class ConvNet<float>;
template class ConvNet<double>;

// ---------------------------------------------------------------------------
// Model state helpers
// ---------------------------------------------------------------------------

ModelState build_model(const ArchitectureSpec& arch, std::uint64_t init_seed) {
  arch.validate();
  auto layout = std::make_shared<const ParameterLayout>(ParameterLayout::for_architecture(arch));
  VectorXf theta = VectorXf::Zero(layout->total);
  std::mt19937_64 rng(init_seed);
  for (const auto& e : layout->entries) {
    if (e.name.ends_with(".kernel")) {
      // Glorot-uniform with receptive-field-scaled fans.
      Index fan_in = 1, fan_out = e.shape[0];
      for (std::size_t d = 1; d < e.shape.size(); ++d) fan_in *= e.shape[d];
      if (e.shape.size() == 3) fan_out *= e.shape[2];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Index i = 0; i < e.size; ++i) theta(e.offset + i) = static_cast<float>(dist(rng));
    } else if (e.name.ends_with(".gamma")) {
      theta.segment(e.offset, e.size).setOnes();
    }
  }
  ModelState state;
  state.arch = arch;
  state.params = {layout, theta};
  state.ema_params = state.params;
  state.role = ModelRole::seed;
  return state;
}

template <typename Scalar>
RowMatrix<Scalar> pack_batch(const WindowTensor& X, std::span<const std::size_t> indices) {
  const auto n = static_cast<Index>(indices.size());
  RowMatrix<Scalar> out(X.channels, n * X.length);
  for (Index s = 0; s < n; ++s) {
    const auto i = static_cast<Index>(indices[static_cast<std::size_t>(s)]);
    require(i < X.count, ErrorCode::invalid_input, "batch index out of range");
    out.middleCols(s * X.length, X.length) = X.window(i).template cast<Scalar>();
  }
  return out;
}

template RowMatrix<float> pack_batch<float>(const WindowTensor&, std::span<const std::size_t>);
template RowMatrix<double> pack_batch<double>(const WindowTensor&, std::span<const std::size_t>);

MatrixXf forward(const ModelState& state, const WindowTensor& X, bool use_ema, bool train_mode,
                 std::uint64_t dropout_seed) {
  require(X.channels == state.arch.input_channels && X.length == state.arch.input_length,
          ErrorCode::shape_mismatch, "input windows do not match the architecture");
  ConvNet<float> net(state.arch);
  const VectorXf& theta = state.eval_params(use_ema).values;
  MatrixXf out(X.count, state.arch.num_classes);
  constexpr Index chunk = 128;
  IndexList idx;
  for (Index start = 0; start < X.count; start += chunk) {
    const Index n = std::min(chunk, X.count - start);
    idx.resize(static_cast<std::size_t>(n));
    for (Index s = 0; s < n; ++s) idx[static_cast<std::size_t>(s)] = static_cast<std::size_t>(start + s);
    out.middleRows(start, n) =
        net.forward(theta, pack_batch<float>(X, idx), n, train_mode, dropout_seed + static_cast<std::uint64_t>(start));
  }
  return out;
}

MatrixXd predict_proba(const ModelState& state, const WindowTensor& X, bool use_ema) {
  return softmax_rows(forward(state, X, use_ema).cast<double>());
}

VectorXf flatten(const ModelState& state) { return state.params.values; }

ParameterVector unflatten(const VectorXf& values, const ArchitectureSpec& arch) {
  auto layout = std::make_shared<const ParameterLayout>(ParameterLayout::for_architecture(arch));
  require(values.size() == layout->total, ErrorCode::layout_mismatch,
          "vector length " + std::to_string(values.size()) + " does not match layout size " +
              std::to_string(layout->total));
  return {layout, values};
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

void write_f32(const fs::path& path, const VectorXf& v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian host");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
}

VectorXf read_f32(const fs::path& path, Index expected) {
  require(fs::exists(path), ErrorCode::io, "missing " + path.string());
  require(fs::file_size(path) == static_cast<std::uintmax_t>(expected) * sizeof(float), ErrorCode::shape_mismatch,
          path.filename().string() + " size does not match the layout");
  VectorXf v(expected);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(expected * sizeof(float)));
  require(static_cast<bool>(in) || expected == 0, ErrorCode::io, "short read on " + path.string());
  return v;
}

}  // namespace

std::string parameter_checksum(const ParameterVector& p) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(p.values.data());
  for (std::size_t i = 0; i < static_cast<std::size_t>(p.values.size()) * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_checkpoint(const fs::path& dir, const ModelState& state, const nlohmann::json& provenance) {
  fs::create_directories(dir);
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& e : state.params.layout->entries)
    layout.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}, {"size", e.size}});
  nlohmann::json manifest = {{"format", "fhlr-checkpoint-v1"},
                             {"arch", state.arch},
                             {"role", state.role},
                             {"layout", layout},
                             {"total", state.params.layout->total},
                             {"params_file", "params.f32"},
                             {"ema_file", "ema.f32"},
                             {"params_checksum", parameter_checksum(state.params)},
                             {"ema_checksum", parameter_checksum(state.ema_params)}};
  if (!provenance.is_null()) manifest["provenance"] = provenance;
  write_f32(dir / "params.f32", state.params.values);
  write_f32(dir / "ema.f32", state.ema_params.values);
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorCode::io, "cannot write checkpoint manifest");
}

ModelState load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  require(static_cast<bool>(in), ErrorCode::io, "missing checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, "malformed checkpoint manifest: " + std::string(e.what()));
  }
  ModelState state;
  state.arch = manifest.at("arch").get<ArchitectureSpec>();
  state.role = manifest.at("role").get<ModelRole>();
  const auto layout = ParameterLayout::for_architecture(state.arch);
  require(manifest.at("total").get<Index>() == layout.total, ErrorCode::layout_mismatch,
          "checkpoint layout does not match its architecture");
  state.params = unflatten(read_f32(dir / manifest.value("params_file", "params.f32"), layout.total), state.arch);
  state.ema_params = {state.params.layout,
                      read_f32(dir / manifest.value("ema_file", "ema.f32"), layout.total)};
  require(manifest.value("params_checksum", parameter_checksum(state.params)) == parameter_checksum(state.params) &&
              manifest.value("ema_checksum", parameter_checksum(state.ema_params)) == parameter_checksum(state.ema_params),
          ErrorCode::io, "checkpoint payload does not match its recorded checksum");
  return state;
}

std::string_view to_string(ModelRole role) {
  switch (role) {
    case ModelRole::seed: return "seed";
    case ModelRole::fine_tuned: return "fine_tuned";
    case ModelRole::merged: return "merged";
    case ModelRole::baseline: return "baseline";
  }
  return "unknown";
}

void to_json(nlohmann::json& j, const ModelRole& r) { j = std::string(to_string(r)); }

void from_json(const nlohmann::json& j, ModelRole& r) {
  const auto s = j.get<std::string>();
  for (auto candidate : {ModelRole::seed, ModelRole::fine_tuned, ModelRole::merged, ModelRole::baseline})
    if (to_string(candidate) == s) {
      r = candidate;
      return;
    }
  fail(ErrorCode::config, "unknown model role '" + s + "'");
}

void to_json(nlohmann::json& j, const ArchitectureSpec& a) {
  j = {{"input_channels", a.input_channels}, {"input_length", a.input_length},
       {"num_classes", a.num_classes},       {"kernel_sizes", a.kernel_sizes},
       {"filters", a.filters},               {"norm_groups", a.norm_groups},
       {"pool_size", a.pool_size},           {"pool_stride", a.pool_stride},
       {"pool_after_blocks", a.pool_after_blocks}, {"dropout_rate", a.dropout_rate},
       {"l2_coefficient", a.l2_coefficient}, {"width_multiplier", a.width_multiplier},
       {"norm_epsilon", a.norm_epsilon}};
}

void from_json(const nlohmann::json& j, ArchitectureSpec& a) {
  a.input_channels = j.value("input_channels", a.input_channels);
  a.input_length = j.value("input_length", a.input_length);
  a.num_classes = j.value("num_classes", a.num_classes);
  a.kernel_sizes = j.value("kernel_sizes", a.kernel_sizes);
  a.filters = j.value("filters", a.filters);
  a.norm_groups = j.value("norm_groups", a.norm_groups);
  a.pool_size = j.value("pool_size", a.pool_size);
  a.pool_stride = j.value("pool_stride", a.pool_stride);
  a.pool_after_blocks = j.value("pool_after_blocks", a.pool_after_blocks);
  a.dropout_rate = j.value("dropout_rate", a.dropout_rate);
  a.l2_coefficient = j.value("l2_coefficient", a.l2_coefficient);
  a.width_multiplier = j.value("width_multiplier", a.width_multiplier);
  a.norm_epsilon = j.value("norm_epsilon", a.norm_epsilon);
}

}  // namespace fhlr
