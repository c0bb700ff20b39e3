#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fhlr/network.hpp"

using namespace fhlr;
namespace fs = std::filesystem;

namespace {

ArchitectureSpec small_arch(Index channels = 2, Index length = 64) {
  ArchitectureSpec a;
  a.input_channels = channels;
  a.input_length = length;
  a.num_classes = 4;
  a.width_multiplier = 0.5;
  return a;
}

WindowTensor random_windows(Index n, Index c, Index l, std::uint64_t seed) {
  WindowTensor X(n, c, l);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (float& v : X.data) v = g(rng);
  return X;
}

// Straight-loop evaluation of the classifier for one window, independent of the GEMM path.
std::vector<double> reference_logits(const ArchitectureSpec& arch, const VectorXd& theta, const WindowTensor& X, Index i) {
  const auto layout = ParameterLayout::for_architecture(arch);
  const auto filters = arch.effective_filters();
  std::vector<std::vector<double>> x(static_cast<std::size_t>(arch.input_channels));
  for (Index c = 0; c < arch.input_channels; ++c)
    for (Index t = 0; t < arch.input_length; ++t) x[static_cast<std::size_t>(c)].push_back(X.window(i)(c, t));

  for (std::size_t b = 0; b < filters.size(); ++b) {
    const std::string p = "block" + std::to_string(b + 1) + ".";
    const Index out = filters[b], in = static_cast<Index>(x.size()), k = arch.kernel_sizes[b];
    const Index len = static_cast<Index>(x[0].size()), pl = (k - 1) / 2;
    const Index wk = layout.find(p + "conv.kernel").offset, wb = layout.find(p + "conv.bias").offset;
    const Index wg = layout.find(p + "norm.gamma").offset, wbeta = layout.find(p + "norm.beta").offset;
    std::vector<std::vector<double>> z(static_cast<std::size_t>(out), std::vector<double>(static_cast<std::size_t>(len)));
    for (Index o = 0; o < out; ++o)
      for (Index t = 0; t < len; ++t) {
        double acc = theta(wb + o);
        for (Index ci = 0; ci < in; ++ci)
          for (Index kk = 0; kk < k; ++kk) {
            const Index src = t + kk - pl;
            if (src >= 0 && src < len) acc += theta(wk + (o * in + ci) * k + kk) * x[static_cast<std::size_t>(ci)][static_cast<std::size_t>(src)];
          }
        z[static_cast<std::size_t>(o)][static_cast<std::size_t>(t)] = acc;
      }
    const Index groups = arch.groups_for_block(b), cpg = out / groups;
    for (Index g = 0; g < groups; ++g) {
      double mean = 0.0, var = 0.0;
      for (Index o = g * cpg; o < (g + 1) * cpg; ++o)
        for (double v : z[static_cast<std::size_t>(o)]) mean += v;
      mean /= static_cast<double>(cpg * len);
      for (Index o = g * cpg; o < (g + 1) * cpg; ++o)
        for (double v : z[static_cast<std::size_t>(o)]) var += (v - mean) * (v - mean);
      var /= static_cast<double>(cpg * len);
      for (Index o = g * cpg; o < (g + 1) * cpg; ++o)
        for (double& v : z[static_cast<std::size_t>(o)]) {
          v = theta(wg + o) * (v - mean) / std::sqrt(var + arch.norm_epsilon) + theta(wbeta + o);
          v = v > 0.0 ? v : std::expm1(v);
        }
    }
    if (arch.pools_after(b)) {
      for (auto& row : z) {
        std::vector<double> pooled;
        for (Index s = 0; s + arch.pool_size <= len; s += arch.pool_stride)
          pooled.push_back(*std::max_element(row.begin() + s, row.begin() + s + arch.pool_size));
        row = pooled;
      }
    }
    x = z;
  }
  const Index wd = layout.find("dense.kernel").offset, bd = layout.find("dense.bias").offset;
  std::vector<double> logits;
  for (Index c = 0; c < arch.num_classes; ++c) {
    double acc = theta(bd + c);
    for (std::size_t f = 0; f < x.size(); ++f) {
      double mean = 0.0;
      for (double v : x[f]) mean += v;
      acc += theta(wd + c * static_cast<Index>(x.size()) + static_cast<Index>(f)) * mean / static_cast<double>(x[f].size());
    }
    logits.push_back(acc);
  }
  return logits;
}

double ce_loss(ConvNet<double>& net, const VectorXd& theta, const RowMatrix<double>& input, Index batch,
               const MatrixXd& targets) {
  const MatrixXd p = softmax_rows(net.forward(theta, input, batch, false));
  return -(targets.array() * p.array().log()).sum() / static_cast<double>(batch);
}

}  // namespace

TEST_CASE("parameter count matches an independent tally of the layer list") {
  for (double width : {0.5, 1.0}) {
    ArchitectureSpec a = small_arch(3, 128);
    a.width_multiplier = width;
    Index expected = 0, in = 3;
    for (std::size_t b = 0; b < a.filters.size(); ++b) {
      const Index f = std::lround(a.filters[b] * width);
      expected += f * in * a.kernel_sizes[b] + 3 * f;
      in = f;
    }
    expected += in * a.num_classes + a.num_classes;
    const auto state = build_model(a, 1);
    CHECK(state.params.size() == expected);
    CHECK(state.params.layout->total == expected);
    CHECK(state.ema_params.same_layout(state.params));
  }
}

TEST_CASE("architecture validation") {
  ArchitectureSpec a = small_arch();
  CHECK(a.groups_for_block(0) == 2);
  CHECK(a.groups_for_block(3) == 4);
  a.width_multiplier = 0.25;  // 18 filters in block 4 do not split into 4 groups
  CHECK_THROWS_AS(a.validate(), Error);
  ArchitectureSpec shortw = small_arch(1, 16);
  CHECK_THROWS_AS(shortw.validate(), Error);
  CHECK(ParameterLayout::for_architecture(small_arch()) == ParameterLayout::for_architecture(small_arch()));
  CHECK(ParameterLayout::for_architecture(small_arch()).find("block1.conv.kernel").shape ==
        std::vector<Index>{12, 2, 8});
  CHECK_THROWS_AS(ParameterLayout::for_architecture(small_arch()).find("nope"), Error);
}

TEST_CASE("regularization mask covers exactly the kernels") {
  const auto layout = ParameterLayout::for_architecture(small_arch());
  const VectorXf mask = layout.regularization_mask();
  Index kernels = 0;
  for (const auto& e : layout.entries)
    if (e.name.ends_with(".kernel")) kernels += e.size;
  CHECK(static_cast<Index>(mask.sum()) == kernels);
  const auto& bias = layout.find("dense.bias");
  CHECK(mask.segment(bias.offset, bias.size).sum() == 0.0f);
}

TEST_CASE("forward matches a straight-loop reference") {
  const auto arch = small_arch();
  const auto state = build_model(arch, 3);
  VectorXd theta = state.params.values.cast<double>();
  // Non-trivial normalization affine parameters.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (const auto& e : state.params.layout->entries)
    if (!e.name.ends_with(".kernel"))
      for (Index k = 0; k < e.size; ++k) theta(e.offset + k) += u(rng);

  const auto X = random_windows(3, 2, 64, 5);
  const std::size_t idx[] = {0, 1, 2};
  ConvNet<double> net(arch);
  const MatrixXd logits = net.forward(theta, pack_batch<double>(X, idx), 3, false);
  REQUIRE(logits.rows() == 3);
  REQUIRE(logits.cols() == 4);
  for (Index i = 0; i < 3; ++i) {
    const auto ref = reference_logits(arch, theta, X, i);
    for (Index c = 0; c < 4; ++c) CHECK(logits(i, c) == doctest::Approx(ref[static_cast<std::size_t>(c)]).epsilon(1e-9));
  }
}

TEST_CASE("analytic gradient agrees with central differences") {
  const auto arch = small_arch();
  const auto state = build_model(arch, 7);
  const VectorXd theta = state.params.values.cast<double>();
  const auto X = random_windows(4, 2, 64, 8);
  const std::size_t idx[] = {0, 1, 2, 3};
  const RowMatrix<double> input = pack_batch<double>(X, idx);
  MatrixXd targets = MatrixXd::Constant(4, 4, 0.05);
  for (Index i = 0; i < 4; ++i) targets(i, i) = 0.85;

  ConvNet<double> net(arch);
  const MatrixXd p = softmax_rows(net.forward(theta, input, 4, false));
  const VectorXd grad = net.backward((p - targets) / 4.0);

  std::mt19937_64 rng(9);
  std::uniform_int_distribution<Index> pick(0, theta.size() - 1);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const Index k = pick(rng);
    VectorXd plus = theta, minus = theta;
    plus(k) += h;
    minus(k) -= h;
    const double numeric = (ce_loss(net, plus, input, 4, targets) - ce_loss(net, minus, input, 4, targets)) / (2 * h);
    const double denom = std::max(1e-7, std::abs(numeric) + std::abs(grad(k)));
    CHECK(std::abs(numeric - grad(k)) / denom < 1e-3);
  }
}

TEST_CASE("builds, forwards and dropout are deterministic") {
  const auto arch = small_arch();
  const auto a = build_model(arch, 11), b = build_model(arch, 11), c = build_model(arch, 12);
  CHECK(a.params.values == b.params.values);
  CHECK(a.params.values != c.params.values);
  CHECK(a.ema_params.values == a.params.values);

  const auto X = random_windows(5, 2, 64, 1);
  CHECK(forward(a, X, true) == forward(a, X, false));
  CHECK(forward(a, X, false) == forward(a, X, false));
  CHECK(forward(a, X, false, true, 3) == forward(a, X, false, true, 3));
  CHECK(forward(a, X, false, true, 3) != forward(a, X, false, false));

  const MatrixXd p = predict_proba(a, X);
  for (Index i = 0; i < p.rows(); ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0));

  const auto wrong = random_windows(2, 3, 64, 1);
  CHECK_THROWS_AS(forward(a, wrong, true), Error);
}

TEST_CASE("flatten and unflatten") {
  const auto arch = small_arch();
  const auto a = build_model(arch, 2);
  const VectorXf flat = flatten(a);
  CHECK(unflatten(flat, arch).values == a.params.values);
  CHECK(flatten(build_model(arch, 3)).size() == flat.size());
  CHECK_THROWS_AS(unflatten(flat.head(flat.size() - 1), arch), Error);
}

TEST_CASE("checkpoints round trip and detect tampering") {
  const fs::path dir = fs::temp_directory_path() / ("fhlr_ckpt_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  auto state = build_model(small_arch(), 5);
  state.ema_params.values *= 0.5f;
  state.role = ModelRole::fine_tuned;
  save_checkpoint(dir, state, {{"note", "unit"}});
  const auto back = load_checkpoint(dir);
  CHECK(back.arch == state.arch);
  CHECK(back.role == ModelRole::fine_tuned);
  CHECK(back.params.values == state.params.values);
  CHECK(back.ema_params.values == state.ema_params.values);
  CHECK(parameter_checksum(back.params) == parameter_checksum(state.params));
  CHECK(parameter_checksum(back.params) != parameter_checksum(back.ema_params));

  {
    std::fstream f(dir / "params.f32", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(16);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(load_checkpoint(dir), Error);
  fs::resize_file(dir / "params.f32", 8);
  try {
    load_checkpoint(dir);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::shape_mismatch);
  }
  fs::remove_all(dir);
}
