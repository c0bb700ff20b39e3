#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fhlr/merging.hpp"

using namespace fhlr;

namespace {

ArchitectureSpec tiny_arch() {
  ArchitectureSpec a;
  a.input_channels = 1;
  a.input_length = 64;
  a.num_classes = 3;
  a.width_multiplier = 0.5;
  return a;
}

ModelState constant_model(float value) {
  auto s = build_model(tiny_arch(), 0);
  s.ema_params.values.setConstant(value);
  s.params.values.setConstant(-100.0f);  // merging must read the EMA weights
  return s;
}

WindowedDataset tiny_data(Index n = 40) {
  SyntheticSpec s;
  s.num_classes = 3;
  s.window_length = 64;
  s.train_count = n;
  s.test_count = 3;
  return make_synthetic(s).first;
}

}  // namespace

TEST_CASE("default seed weight by noise regime") {
  CHECK(default_seed_weight(0.4) == 0.15);
  CHECK(default_seed_weight(0.6) == 0.15);
  CHECK(default_seed_weight(0.39) == 0.9);
  CHECK(default_seed_weight(0.0) == 0.9);
}

TEST_CASE("weighted merge") {
  const auto a = build_model(tiny_arch(), 1), b = build_model(tiny_arch(), 2);
  const auto same = merge_weighted({a, b}, {{1.0, 0.0}, MergeMethod::weighted_average});
  CHECK(same.params.values == a.ema_params.values);
  CHECK(same.ema_params.values == same.params.values);
  CHECK(same.role == ModelRole::merged);

  const auto m = merge_weighted({constant_model(1.0f), constant_model(3.0f)}, {{0.15, 0.85}, MergeMethod::weighted_average});
  CHECK(m.params.values.minCoeff() == doctest::Approx(2.7));
  CHECK(m.params.values.maxCoeff() == doctest::Approx(2.7));

  const auto three = merge_weighted({constant_model(0.0f), constant_model(3.0f), constant_model(6.0f)},
                                    {{0.5, 0.25, 0.25}, MergeMethod::weighted_average});
  CHECK(three.params.values(0) == doctest::Approx(2.25));
}

TEST_CASE("merge validation") {
  const auto a = constant_model(1.0f), b = constant_model(2.0f);
  CHECK_THROWS_AS(merge_weighted({a}, {{1.0}, MergeMethod::weighted_average}), Error);
  CHECK_THROWS_AS(merge_weighted({a, b}, {{0.5, 0.6}, MergeMethod::weighted_average}), Error);
  CHECK_THROWS_AS(merge_weighted({a, b}, {{1.2, -0.2}, MergeMethod::weighted_average}), Error);
  CHECK_THROWS_AS(merge_weighted({a, b}, {{1.0}, MergeMethod::weighted_average}), Error);
  ArchitectureSpec other = tiny_arch();
  other.num_classes = 4;
  CHECK_THROWS_AS(merge_weighted({a, build_model(other, 0)}, {{0.5, 0.5}, MergeMethod::weighted_average}), Error);
}

TEST_CASE("Fisher merge reduces to the weighted merge under uniform Fisher") {
  const auto a = build_model(tiny_arch(), 1), b = build_model(tiny_arch(), 2);
  const Index n = a.params.size();
  FisherVector f{VectorXd::Constant(n, 0.7), 1, {}, {}};
  const MergeSpec spec{{0.3, 0.7}, MergeMethod::fisher};
  const auto fisher = merge_fisher({a, b}, {f, f}, spec);
  const auto plain = merge_weighted({a, b}, spec);
  CHECK((fisher.params.values - plain.params.values).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("Fisher merge on hand-picked coordinates") {
  auto a = constant_model(0.0f), b = constant_model(4.0f);
  const Index n = a.params.size();
  VectorXd fa = VectorXd::Zero(n), fb = VectorXd::Zero(n);
  fa(0) = 1.0, fb(0) = 3.0;  // (0.5 * 1 * 0 + 0.5 * 3 * 4) / (0.5 * 1 + 0.5 * 3) = 3
  fa(1) = 0.0, fb(1) = 2.0;  // only b carries information
  fa(2) = 5.0, fb(2) = 5.0;  // equal curvature: plain average
  // coordinate 3: both zero, the floor makes it the weighted average
  const MergeSpec half{{0.5, 0.5}, MergeMethod::fisher};
  const auto m = merge_fisher({a, b}, {{fa, 1, {}, {}}, {fb, 1, {}, {}}}, half);
  CHECK(m.params.values(0) == doctest::Approx(3.0));
  CHECK(m.params.values(1) == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(m.params.values(2) == doctest::Approx(2.0));
  CHECK(m.params.values(3) == doctest::Approx(2.0));

  const MergeSpec skew{{0.2, 0.8}, MergeMethod::fisher};
  const auto s = merge_fisher({a, b}, {{fa, 1, {}, {}}, {fb, 1, {}, {}}}, skew);
  CHECK(s.params.values(0) == doctest::Approx((0.8 * 3.0 * 4.0) / (0.2 * 1.0 + 0.8 * 3.0)));
  CHECK(s.params.values(3) == doctest::Approx(0.8 * 4.0));

  VectorXd negative = fa;
  negative(5) = -1.0;
  CHECK_THROWS_AS(merge_fisher({a, b}, {{negative, 1, {}, {}}, {fb, 1, {}, {}}}, half), Error);
  CHECK_THROWS_AS(merge_fisher({a, b}, {{fa, 1, {}, {}}}, half), Error);
  CHECK_THROWS_AS(merge_fisher({a, b}, {{fa.head(3), 1, {}, {}}, {fb, 1, {}, {}}}, half), Error);
}

TEST_CASE("Fisher estimate matches the closed form when only the output bias matters") {
  // With a zero dense kernel the logits equal the dense bias for every window, so the
  // per-sample gradient is zero everywhere except the bias, where it is p - e_label.
  auto model = build_model(tiny_arch(), 3);
  const auto& layout = *model.ema_params.layout;
  const auto& kernel = layout.find("dense.kernel");
  const auto& bias = layout.find("dense.bias");
  model.ema_params.values.segment(kernel.offset, kernel.size).setZero();
  model.ema_params.values.segment(bias.offset, bias.size) << 0.5f, -0.25f, 1.0f;

  const auto data = tiny_data(60);
  const auto f = estimate_fisher(model, data, 60, 4);
  REQUIRE(f.sampled_labels.size() == 60);
  REQUIRE(f.sampled_indices.size() == 60);
  CHECK(std::set<std::size_t>(f.sampled_indices.begin(), f.sampled_indices.end()).size() == 60);

  const double z[3] = {0.5, -0.25, 1.0};
  const double norm = std::exp(z[0]) + std::exp(z[1]) + std::exp(z[2]);
  for (Index k = 0; k < 3; ++k) {
    const double p = std::exp(z[k]) / norm;
    double expected = 0.0;
    for (int label : f.sampled_labels) {
      const double g = p - (label == k ? 1.0 : 0.0);
      expected += g * g;
    }
    expected /= 60.0;
    CHECK(f.values(bias.offset + k) == doctest::Approx(expected).epsilon(1e-5));
  }
  double elsewhere = 0.0;
  for (const auto& e : layout.entries)
    if (e.name != "dense.kernel" && e.name != "dense.bias") elsewhere += f.values.segment(e.offset, e.size).sum();
  CHECK(elsewhere == 0.0);
  CHECK((f.values.array() >= 0.0).all());

  CHECK_THROWS_AS(estimate_fisher(model, data, 61, 0), Error);
  CHECK_THROWS_AS(estimate_fisher(model, data, 0, 0), Error);
}

TEST_CASE("sampled Fisher labels follow the predictive distribution") {
  auto model = build_model(tiny_arch(), 3);
  const auto& layout = *model.ema_params.layout;
  const auto& kernel = layout.find("dense.kernel");
  const auto& bias = layout.find("dense.bias");
  model.ema_params.values.segment(kernel.offset, kernel.size).setZero();
  model.ema_params.values.segment(bias.offset, bias.size) << 0.0f, 0.0f, std::log(2.0f);  // p = (.25, .25, .5)
  const auto data = tiny_data(2000);
  const auto f = estimate_fisher(model, data, 2000, 1);
  const auto twos = std::count(f.sampled_labels.begin(), f.sampled_labels.end(), 2);
  CHECK(static_cast<double>(twos) / 2000.0 == doctest::Approx(0.5).epsilon(0.08));
  // E[(p_k - 1{y=k})^2] = p_k (1 - p_k)
  CHECK(f.values(bias.offset + 2) == doctest::Approx(0.25).epsilon(0.05));
  CHECK(f.values(bias.offset + 0) == doctest::Approx(0.1875).epsilon(0.08));
}

TEST_CASE("ensemble averages member probabilities") {
  const auto a = build_model(tiny_arch(), 1), b = build_model(tiny_arch(), 2);
  const auto data = tiny_data(10);
  const MatrixXd pa = predict_proba(a, data.X), pb = predict_proba(b, data.X);
  CHECK(ensemble_predict({a}, data.X).isApprox(pa));
  CHECK(ensemble_predict({a, b}, data.X).isApprox(0.5 * (pa + pb)));
  CHECK_THROWS_AS(ensemble_predict({}, data.X), Error);
}

TEST_CASE("seed weight search reports the best grid point") {
  const auto a = build_model(tiny_arch(), 1), b = build_model(tiny_arch(), 2);
  const auto data = tiny_data(30);
  const auto r = search_seed_weight(a, b, data, {0.2, 0.5, 0.8});
  REQUIRE(r.grid.size() == 3);
  double best = 0.0;
  for (const auto& [w, acc] : r.grid) best = std::max(best, acc);
  CHECK(r.accuracy == best);
  CHECK_THROWS_AS(search_seed_weight(a, b, data, {}), Error);
}

TEST_CASE("merge provenance and serialization") {
  const auto a = build_model(tiny_arch(), 1), b = build_model(tiny_arch(), 2);
  const MergeSpec spec{{0.15, 0.85}, MergeMethod::weighted_average};
  const auto p = merge_provenance({a, b}, spec);
  CHECK(p["constituents"].size() == 2);
  CHECK(p["constituents"][0]["ema_checksum"] == parameter_checksum(a.ema_params));
  CHECK(p["constituents"][1]["weight"] == 0.85);
  const auto back = nlohmann::json(spec).get<MergeSpec>();
  CHECK(back.weights == spec.weights);
  CHECK_THROWS_AS((nlohmann::json{{"method", "slerp"}}.get<MergeSpec>()), Error);
}
