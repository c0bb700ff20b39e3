#include <doctest.h>

#include <cmath>
#include <random>

#include "fhlr/training.hpp"

using namespace fhlr;

namespace {

// Logits whose softmax is (0.9, 0.05, 0.05).
MatrixXd confident_logits() {
  MatrixXd z(1, 3);
  z << std::log(18.0), 0.0, 0.0;
  return z;
}

MatrixXd first_class() {
  MatrixXd t = MatrixXd::Zero(1, 3);
  t(0, 0) = 1.0;
  return t;
}

LossSpec spec_of(LossKind kind) {
  LossSpec s;
  s.kind = kind;
  return s;
}

ArchitectureSpec tiny_arch() {
  ArchitectureSpec a;
  a.input_channels = 1;
  a.input_length = 64;
  a.num_classes = 3;
  a.width_multiplier = 0.5;
  return a;
}

WindowedDataset tiny_data(Index n = 48) {
  SyntheticSpec s;
  s.num_classes = 3;
  s.window_length = 64;
  s.train_count = n;
  s.test_count = 3;
  s.class_separability = 3.0;
  s.noise_floor = 0.3;
  return make_synthetic(s).first;
}

}  // namespace

TEST_CASE("smoothed targets") {
  const MatrixXd t = smooth_targets({0, 3, 1}, 0.1, 4);
  CHECK(t(0, 0) == doctest::Approx(0.925));
  CHECK(t(0, 1) == doctest::Approx(0.025));
  CHECK(t(1, 3) == doctest::Approx(0.925));
  CHECK(t(2, 1) == doctest::Approx(0.925));
  for (Index i = 0; i < 3; ++i) CHECK(t.row(i).sum() == doctest::Approx(1.0));
  CHECK(one_hot({2}, 3)(0, 2) == 1.0);
  CHECK(one_hot({2}, 3).sum() == 1.0);
  CHECK_THROWS_AS(smooth_targets({4}, 0.1, 4), Error);
  CHECK_THROWS_AS(smooth_targets({0}, 1.5, 4), Error);
}

TEST_CASE("loss values at a known operating point") {
  const MatrixXd z = confident_logits(), y = first_class();
  const double ce = -std::log(0.9);
  CHECK(compute_loss(spec_of(LossKind::ce), z, y) == doctest::Approx(0.1053605).epsilon(1e-6));
  CHECK(compute_loss(spec_of(LossKind::focal), z, y) == doctest::Approx(0.01 * ce).epsilon(1e-6));
  CHECK(compute_loss(spec_of(LossKind::poly), z, y) == doctest::Approx(ce + 0.1).epsilon(1e-6));
  CHECK(compute_loss(spec_of(LossKind::mixup), z, y) == doctest::Approx(ce));

  LossSpec bt = spec_of(LossKind::bi_tempered);
  bt.bt_t1 = bt.bt_t2 = 1.0;
  CHECK(compute_loss(bt, z, y) == doctest::Approx(ce));
  // With soft targets the t = 1 limit is the KL divergence.
  MatrixXd soft(1, 3);
  soft << 0.6, 0.3, 0.1;
  const double kl = 0.6 * std::log(0.6 / 0.9) + 0.3 * std::log(0.3 / 0.05) + 0.1 * std::log(0.1 / 0.05);
  CHECK(compute_loss(bt, z, soft) == doctest::Approx(kl));

  LossSpec ls = spec_of(LossKind::ls);
  ls.ls_alpha = 0.3;
  CHECK(compute_loss(ls, z, y) == doctest::Approx(-(0.8 * std::log(0.9) + 0.2 * std::log(0.05))));

  LossSpec clip = spec_of(LossKind::logit_clip);
  clip.clip_tau = 100.0;
  CHECK(compute_loss(clip, z, y) == doctest::Approx(ce));
  clip.clip_tau = 1.0;  // logits collapse to (1, 0, 0)
  CHECK(compute_loss(clip, z, y) == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 2.0))));
}

TEST_CASE("bi-tempered loss is small on a confident correct prediction and validates temperatures") {
  const LossSpec bt = spec_of(LossKind::bi_tempered);
  MatrixXd wrong(1, 3);
  wrong << 0.0, std::log(18.0), 0.0;
  CHECK(compute_loss(bt, confident_logits(), first_class()) < compute_loss(bt, wrong, first_class()));
  CHECK(compute_loss(bt, confident_logits(), first_class()) >= 0.0);
  LossSpec bad = bt;
  bad.bt_t1 = 1.2;
  CHECK_THROWS_AS(compute_loss(bad, confident_logits(), first_class()), Error);
}

TEST_CASE("tempered softmax") {
  const MatrixXd z = confident_logits();
  CHECK(tempered_softmax(z, 1.0).isApprox(softmax_rows(z)));
  const MatrixXd p = tempered_softmax(z, 1.3);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p(0, 0) > p(0, 1));
  CHECK(p(0, 1) == doctest::Approx(p(0, 2)));
}

TEST_CASE("every loss gradient agrees with central differences") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.5);
  MatrixXd z(4, 5);
  for (Index i = 0; i < z.size(); ++i) z(i) = g(rng);
  MatrixXd y = MatrixXd::Constant(4, 5, 0.04);
  for (Index i = 0; i < 4; ++i) y(i, i) = 0.84;

  for (auto kind : {LossKind::ce, LossKind::ls, LossKind::mixup, LossKind::poly, LossKind::bi_tempered,
                    LossKind::logit_clip, LossKind::focal}) {
    CAPTURE(to_string(kind));
    LossSpec s = spec_of(kind);
    s.clip_tau = 2.0;  // some rows clipped, some not
    const MatrixXd grad = loss_and_gradient(s, z, y).grad;
    const double h = 1e-6;
    for (Index k = 0; k < z.size(); ++k) {
      MatrixXd plus = z, minus = z;
      plus(k) += h;
      minus(k) -= h;
      const double numeric = (compute_loss(s, plus, y) - compute_loss(s, minus, y)) / (2 * h);
      CHECK(grad(k) == doctest::Approx(numeric).epsilon(1e-4).scale(1e-3));
    }
  }
}

TEST_CASE("loss input checks") {
  CHECK_THROWS_AS(compute_loss(LossSpec{}, MatrixXd::Zero(2, 3), MatrixXd::Zero(2, 4)), Error);
  MatrixXd z = confident_logits();
  z(0, 1) = std::nan("");
  CHECK_THROWS_AS(compute_loss(LossSpec{}, z, first_class()), Error);
  CHECK(compute_loss(LossSpec{}, MatrixXd(0, 3), MatrixXd(0, 3)) == 0.0);
}

TEST_CASE("mixup combines inputs and targets with the drawn lambda") {
  RowMatrix<float> x(1, 6);
  x << 1, 2, 3, 10, 20, 30;  // two samples of length 3
  MatrixXd t(2, 2);
  t << 1, 0, 0, 1;
  const auto m = mixup_with_lambda(x, 2, t, 0.75, {1, 0});
  CHECK(m.inputs(0, 0) == doctest::Approx(0.75 * 1 + 0.25 * 10));
  CHECK(m.inputs(0, 5) == doctest::Approx(0.75 * 30 + 0.25 * 3));
  CHECK(m.targets(0, 0) == doctest::Approx(0.75));
  CHECK(m.targets(1, 0) == doctest::Approx(0.25));

  const auto a = mixup_batch(x, 2, t, 0.2, 9), b = mixup_batch(x, 2, t, 0.2, 9);
  CHECK(a.lambda == b.lambda);
  CHECK(a.partner == b.partner);
  CHECK(a.lambda >= 0.0);
  CHECK(a.lambda <= 1.0);
  CHECK_THROWS_AS(mixup_with_lambda(x, 2, t, 0.5, {0}), Error);
}

TEST_CASE("EMA follows its closed form under constant parameters") {
  auto layout = std::make_shared<const ParameterLayout>(ParameterLayout::for_architecture(tiny_arch()));
  const Index n = layout->total;
  ParameterVector ema{layout, VectorXf::Constant(n, 2.0f)}, params{layout, VectorXf::Constant(n, -1.0f)};
  const double m = 0.9;
  for (int k = 1; k <= 20; ++k) {
    ema = ema_update(ema, params, m);
    const double expected = std::pow(m, k) * 2.0 + (1.0 - std::pow(m, k)) * -1.0;
    CHECK(ema.values(0) == doctest::Approx(expected).epsilon(1e-5));
  }
  ParameterVector other{std::make_shared<const ParameterLayout>(), VectorXf::Zero(3)};
  CHECK_THROWS_AS(ema_update(ema, other, m), Error);
}

TEST_CASE("Adam matches the bias-corrected update") {
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-7;
  Adam adam(2, lr, b1, b2, eps);
  VectorXf theta(2);
  theta << 1.0f, -2.0f;
  double ref[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  const double grads[3][2] = {{0.5, -1.0}, {0.1, 3.0}, {-0.7, 0.0}};
  for (int t = 1; t <= 3; ++t) {
    VectorXf g(2);
    g << static_cast<float>(grads[t - 1][0]), static_cast<float>(grads[t - 1][1]);
    adam.step(theta, g);
    for (int k = 0; k < 2; ++k) {
      m[k] = b1 * m[k] + (1 - b1) * grads[t - 1][k];
      v[k] = b2 * v[k] + (1 - b2) * grads[t - 1][k] * grads[t - 1][k];
      const double mhat = m[k] / (1 - std::pow(b1, t)), vhat = v[k] / (1 - std::pow(b2, t));
      ref[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      CHECK(theta(k) == doctest::Approx(ref[k]).epsilon(1e-5));
    }
  }
  CHECK(adam.steps() == 3);
}

TEST_CASE("seed training with zero smoothing takes the cross-entropy step") {
  const auto data = tiny_data();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.max_steps = 2;
  cfg.smoothing_alpha = 0.0;
  cfg.rng_seed = 5;
  const auto seed = train_seed(tiny_arch(), data, cfg, 17);
  const auto base = train_baseline(tiny_arch(), data, cfg, 17, TrainOptions{});
  CHECK(seed.params.values == base.params.values);
  CHECK(seed.role == ModelRole::seed);
  CHECK(base.role == ModelRole::baseline);

  cfg.smoothing_alpha = 0.2;
  CHECK(train_seed(tiny_arch(), data, cfg, 17).params.values != base.params.values);
}

TEST_CASE("EMA toggling leaves the raw trajectory untouched") {
  const auto data = tiny_data();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.rng_seed = 2;
  cfg.use_ema = true;
  const auto with = train_seed(tiny_arch(), data, cfg, 4);
  cfg.use_ema = false;
  const auto without = train_seed(tiny_arch(), data, cfg, 4);
  CHECK(with.params.values == without.params.values);
  CHECK(without.ema_params.values == without.params.values);
  CHECK(with.ema_params.values != with.params.values);

  const auto init = build_model(tiny_arch(), 4);
  // Six steps at momentum 0.99 keep the average close to the initialization.
  CHECK((with.ema_params.values - init.params.values).norm() < (with.params.values - init.params.values).norm());
}

TEST_CASE("fine-tuning starts from the evaluated seed weights") {
  const auto data = tiny_data();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  const auto seed = train_seed(tiny_arch(), data, cfg, 8);
  ExpertSet expert{{0, 5, 9}, {data.y[0], data.y[5], data.y[9]}, ExpertSource::oracle, {}};

  TrainConfig none = cfg;
  none.epochs = 0;
  const auto same = fine_tune(seed, expert, data, 1e-3, none);
  CHECK(same.params.values == seed.ema_params.values);
  CHECK(same.role == ModelRole::fine_tuned);
  none.use_ema = false;
  CHECK(fine_tune(seed, expert, data, 1e-3, none).params.values == seed.params.values);

  TrainConfig one = cfg;
  one.epochs = 1;
  const auto moved = fine_tune(seed, expert, data, 1e-3, one);
  // A single Adam step moves each coordinate by at most about eta.
  CHECK((moved.params.values - seed.ema_params.values).cwiseAbs().maxCoeff() < 1.01e-3f);
  CHECK(moved.params.values != seed.ema_params.values);

  ExpertSet empty;
  CHECK_THROWS_AS(fine_tune(seed, empty, data, 1e-3, one), Error);
  ExpertSet outside{{1000}, {0}, ExpertSource::oracle, {}};
  CHECK_THROWS_AS(fine_tune(seed, outside, data, 1e-3, one), Error);
}

TEST_CASE("training learns a separable task") {
  const auto data = tiny_data(150);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 16;
  std::vector<double> losses;
  TrainOptions opts;
  opts.on_epoch = [&](const EpochMetrics& m) { losses.push_back(m.loss); };
  const auto model = train_seed(tiny_arch(), data, cfg, 1, opts);
  REQUIRE(losses.size() == 15);
  CHECK(losses.back() < losses.front());
  const auto pred = argmax_rows(forward(model, data.X, false));
  Index hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.y[i];
  CHECK(static_cast<double>(hits) / static_cast<double>(pred.size()) > 0.6);
}

TEST_CASE("an exploding step is reported as divergence") {
  const auto data = tiny_data();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 1e30;
  try {
    train_seed(tiny_arch(), data, cfg, 1);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::divergence);
  }
}

TEST_CASE("expert set validation and serialization") {
  ExpertSet e{{3, 1}, {2, 0}, ExpertSource::panel, {{2, 2, 1}, {0, 0, 0}}};
  CHECK_NOTHROW(e.validate(3, 5));
  CHECK_THROWS_AS(e.validate(2, 5), Error);
  CHECK_THROWS_AS(e.validate(3, 2), Error);
  ExpertSet dup{{1, 1}, {0, 0}, ExpertSource::oracle, {}};
  CHECK_THROWS_AS(dup.validate(3), Error);
  CHECK(nlohmann::json(e).get<ExpertSet>() == e);
  CHECK_THROWS_AS((nlohmann::json{{"indices", {1}}, {"corrected_labels", {0}}, {"source", "crowd"}}.get<ExpertSet>()), Error);
}

TEST_CASE("config serialization") {
  TrainConfig c;
  c.learning_rate = 3e-4;
  c.use_ema = false;
  c.rng_seed = 99;
  const auto back = nlohmann::json(c).get<TrainConfig>();
  CHECK(back.learning_rate == c.learning_rate);
  CHECK(back.use_ema == false);
  CHECK(back.rng_seed == 99);
  LossSpec s = spec_of(LossKind::focal);
  s.focal_gamma = 3.0;
  const auto sb = nlohmann::json(s).get<LossSpec>();
  CHECK(sb.kind == LossKind::focal);
  CHECK(sb.focal_gamma == 3.0);
  CHECK_THROWS_AS((nlohmann::json{{"kind", "hinge"}}.get<LossSpec>()), Error);
  TrainConfig bad;
  bad.ema_momentum = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}
