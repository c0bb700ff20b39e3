#include "fhlr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace fhlr {

void LossSpec::validate() const {
  require(focal_gamma >= 0.0, ErrorCode::invalid_spec, "focal gamma must be >= 0");
  require(clip_tau > 0.0, ErrorCode::invalid_spec, "logit clip bound must be > 0");
  require(mixup_alpha > 0.0, ErrorCode::invalid_spec, "mixup beta parameter must be > 0");
  require(ls_alpha >= 0.0 && ls_alpha <= 1.0, ErrorCode::invalid_spec, "ls alpha must lie in [0, 1]");
  if (kind == LossKind::bi_tempered) {
    const bool limit = bt_t1 == 1.0 && bt_t2 == 1.0;
    require(limit || (bt_t1 > 0.0 && bt_t1 < 1.0 && bt_t2 > 1.0), ErrorCode::invalid_spec,
            "bi-tempered loss requires 0 < t1 < 1 < t2 (or t1 = t2 = 1)");
  }
}

void TrainConfig::validate() const {
  require(learning_rate > 0.0, ErrorCode::config, "learning_rate must be > 0");
  require(batch_size >= 1, ErrorCode::config, "batch_size must be >= 1");
  require(epochs >= 0, ErrorCode::config, "epochs must be >= 0");
  require(smoothing_alpha >= 0.0 && smoothing_alpha <= 1.0, ErrorCode::config, "smoothing_alpha must lie in [0, 1]");
  require(ema_momentum >= 0.0 && ema_momentum < 1.0, ErrorCode::config, "ema_momentum must lie in [0, 1)");
  require(l2 >= 0.0, ErrorCode::config, "l2 must be >= 0");
}

void ExpertSet::validate(int num_classes, std::optional<std::size_t> pool_size) const {
  require(indices.size() == corrected_labels.size(), ErrorCode::shape_mismatch,
          "expert indices and labels differ in length");
  std::set<std::size_t> seen;
  for (std::size_t i : indices) {
    require(seen.insert(i).second, ErrorCode::invalid_input, "duplicate expert index " + std::to_string(i));
    if (pool_size) require(i < *pool_size, ErrorCode::invalid_input, "expert index out of range");
  }
  for (int y : corrected_labels)
    require(y >= 0 && y < num_classes, ErrorCode::invalid_label, "expert label out of range");
}

// ---------------------------------------------------------------------------
// Targets and losses
// ---------------------------------------------------------------------------

MatrixXd smooth_targets(const Labels& labels, double alpha, int num_classes) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::invalid_input, "alpha must lie in [0, 1]");
  MatrixXd out = MatrixXd::Constant(static_cast<Index>(labels.size()), num_classes, alpha / num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < num_classes, ErrorCode::invalid_label,
            "label " + std::to_string(labels[i]) + " out of range");
    out(static_cast<Index>(i), labels[i]) += 1.0 - alpha;
  }
  return out;
}

MatrixXd one_hot(const Labels& labels, int num_classes) { return smooth_targets(labels, 0.0, num_classes); }

namespace {

double log_t(double x, double t) { return t == 1.0 ? std::log(x) : (std::pow(x, 1.0 - t) - 1.0) / (1.0 - t); }

double exp_t(double x, double t) {
  if (t == 1.0) return std::exp(x);
  return std::pow(std::max(0.0, 1.0 + (1.0 - t) * x), 1.0 / (1.0 - t));
}

// Normalizing shift lambda with sum_c exp_t(z_c - lambda) = 1, found by bisection.
double tempered_normalizer(const Eigen::Ref<const RowVector<double>>& z, double t) {
  const double top = z.maxCoeff();
  const auto c = static_cast<double>(z.size());
  double lo = top;                 // the max term alone reaches 1
  double hi = top - log_t(1.0 / c, t);  // every term at most 1/C
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    double s = 0.0;
    for (Index k = 0; k < z.size(); ++k) s += exp_t(z(k) - mid, t);
    (s > 1.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void ce_rows(const MatrixXd& logits, const MatrixXd& targets, LossResult& out) {
  const MatrixXd p = softmax_rows(logits);
  for (Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    const double lse = peak + std::log((logits.row(i).array() - peak).exp().sum());
    out.value -= (targets.row(i).array() * (logits.row(i).array() - lse)).sum();
    out.grad.row(i) = p.row(i) * targets.row(i).sum() - targets.row(i);
  }
}

}  // namespace

MatrixXd tempered_softmax(const MatrixXd& logits, double t) {
  if (t == 1.0) return softmax_rows(logits);
  MatrixXd p(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double lambda = tempered_normalizer(logits.row(i), t);
    for (Index k = 0; k < logits.cols(); ++k) p(i, k) = exp_t(logits(i, k) - lambda, t);
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

LossResult loss_and_gradient(const LossSpec& spec, const MatrixXd& logits, const MatrixXd& targets) {
  spec.validate();
  require(logits.rows() == targets.rows() && logits.cols() == targets.cols(), ErrorCode::shape_mismatch,
          "logits and targets differ in shape");
  require(logits.allFinite(), ErrorCode::invalid_input, "non-finite logits");
  const Index n = logits.rows();
  const Index c = logits.cols();
  LossResult out{0.0, MatrixXd::Zero(n, c)};
  if (n == 0) return out;

  switch (spec.kind) {
    case LossKind::ce:
    case LossKind::mixup:
      ce_rows(logits, targets, out);
      break;

    case LossKind::ls: {
      const MatrixXd smoothed =
          ((1.0 - spec.ls_alpha) * targets.array() + spec.ls_alpha / static_cast<double>(c)).matrix();
      ce_rows(logits, smoothed, out);
      break;
    }

    case LossKind::poly: {
      ce_rows(logits, targets, out);
      const MatrixXd p = softmax_rows(logits);
      for (Index i = 0; i < n; ++i) {
        const double pt = (p.row(i).array() * targets.row(i).array()).sum();
        out.value += spec.poly_epsilon * (1.0 - pt);
        out.grad.row(i).array() -= spec.poly_epsilon * p.row(i).array() * (targets.row(i).array() - pt);
      }
      break;
    }

    case LossKind::focal: {
      const MatrixXd p = softmax_rows(logits);
      const double g = spec.focal_gamma;
      for (Index i = 0; i < n; ++i) {
        RowVector<double> dldp = RowVector<double>::Zero(c);
        for (Index k = 0; k < c; ++k) {
          const double t = targets(i, k);
          if (t == 0.0) continue;
          const double pk = std::max(p(i, k), 1e-300);
          const double one_minus = 1.0 - pk;
          out.value -= t * std::pow(one_minus, g) * std::log(pk);
          const double dpow = g == 0.0 ? 0.0 : g * std::pow(one_minus, g - 1.0);
          dldp(k) = -t * (-dpow * std::log(pk) + std::pow(one_minus, g) / pk);
        }
        const double dot = (dldp.array() * p.row(i).array()).sum();
        out.grad.row(i) = (p.row(i).array() * (dldp.array() - dot)).matrix();
      }
      break;
    }

    case LossKind::logit_clip: {
      MatrixXd clipped = logits;
      VectorXd norms = logits.rowwise().norm();
      for (Index i = 0; i < n; ++i)
        if (norms(i) > spec.clip_tau) clipped.row(i) *= spec.clip_tau / norms(i);
      LossResult inner{0.0, MatrixXd::Zero(n, c)};
      ce_rows(clipped, targets, inner);
      out.value = inner.value;
      for (Index i = 0; i < n; ++i) {
        if (norms(i) > spec.clip_tau) {
          const auto z = logits.row(i);
          const auto gz = inner.grad.row(i);
          const double nz = norms(i);
          out.grad.row(i) = (spec.clip_tau / nz) * (gz - z * (z.dot(gz) / (nz * nz)));
        } else {
          out.grad.row(i) = inner.grad.row(i);
        }
      }
      break;
    }

    case LossKind::bi_tempered: {
      const double t1 = spec.bt_t1, t2 = spec.bt_t2;
      if (t1 == 1.0 && t2 == 1.0) {
        ce_rows(logits, targets, out);
        for (Index i = 0; i < n; ++i)
          for (Index k = 0; k < c; ++k)
            if (targets(i, k) > 0.0) out.value += targets(i, k) * std::log(targets(i, k));
        break;
      }
      const MatrixXd p = tempered_softmax(logits, t2);
      for (Index i = 0; i < n; ++i) {
        RowVector<double> dldp(c), pt2(c);
        for (Index k = 0; k < c; ++k) {
          const double y = targets(i, k);
          const double pk = std::max(p(i, k), 1e-300);
          const double y_term = y > 0.0 ? y * log_t(y, t1) - std::pow(y, 2.0 - t1) / (2.0 - t1) : 0.0;
          out.value += y_term - y * log_t(pk, t1) + std::pow(pk, 2.0 - t1) / (2.0 - t1);
          dldp(k) = -y * std::pow(pk, -t1) + std::pow(pk, 1.0 - t1);
          pt2(k) = std::pow(pk, t2);
        }
        const double z = pt2.sum();
        const double dot = (dldp.array() * pt2.array()).sum();
        out.grad.row(i) = (pt2.array() * dldp.array() - (pt2.array() / z) * dot).matrix();
      }
      break;
    }
  }

  out.value /= static_cast<double>(n);
  out.grad /= static_cast<double>(n);
  require(std::isfinite(out.value), ErrorCode::divergence, "loss is not finite");
  return out;
}

double compute_loss(const LossSpec& spec, const MatrixXd& logits, const MatrixXd& targets) {
  return loss_and_gradient(spec, logits, targets).value;
}

// ---------------------------------------------------------------------------
// Mixup and EMA
// ---------------------------------------------------------------------------

MixedBatch mixup_with_lambda(const RowMatrix<float>& inputs, Index batch, const MatrixXd& targets, double lambda,
                             std::vector<Index> partner) {
  require(batch >= 1 && inputs.cols() % batch == 0, ErrorCode::shape_mismatch, "input width is not a batch multiple");
  require(static_cast<Index>(partner.size()) == batch && targets.rows() == batch, ErrorCode::shape_mismatch,
          "partner permutation and targets must match the batch");
  const Index length = inputs.cols() / batch;
  MixedBatch out{RowMatrix<float>(inputs.rows(), inputs.cols()), MatrixXd(targets.rows(), targets.cols()), lambda,
                 std::move(partner)};
  const auto lf = static_cast<float>(lambda);
  for (Index s = 0; s < batch; ++s) {
    const Index q = out.partner[static_cast<std::size_t>(s)];
    out.inputs.middleCols(s * length, length) =
        lf * inputs.middleCols(s * length, length) + (1.0f - lf) * inputs.middleCols(q * length, length);
    out.targets.row(s) = lambda * targets.row(s) + (1.0 - lambda) * targets.row(q);
  }
  return out;
}

MixedBatch mixup_batch(const RowMatrix<float>& inputs, Index batch, const MatrixXd& targets, double a,
                       std::uint64_t seed) {
  require(batch >= 2, ErrorCode::invalid_input, "mixup needs a batch of at least 2");
  require(a > 0.0, ErrorCode::invalid_input, "beta parameter must be > 0");
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gamma(a, 1.0);
  const double g1 = gamma(rng), g2 = gamma(rng);
  const double lambda = (g1 + g2) > 0.0 ? g1 / (g1 + g2) : 0.5;
  std::vector<Index> partner(static_cast<std::size_t>(batch));
  std::iota(partner.begin(), partner.end(), Index{0});
  std::shuffle(partner.begin(), partner.end(), rng);
  return mixup_with_lambda(inputs, batch, targets, lambda, std::move(partner));
}

ParameterVector ema_update(const ParameterVector& ema, const ParameterVector& params, double momentum) {
  require(ema.same_layout(params), ErrorCode::layout_mismatch, "EMA and parameters have different layouts");
  VectorXd acc = ema.values.cast<double>();
  accumulate_ema(acc, params.values, momentum);
  return {ema.layout, acc.cast<float>()};
}

void accumulate_ema(VectorXd& ema, const VectorXf& params, double momentum) {
  require(ema.size() == params.size(), ErrorCode::layout_mismatch, "EMA and parameters differ in length");
  ema = momentum * ema + (1.0 - momentum) * params.cast<double>();
}

Adam::Adam(Index size, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon), m_(VectorXf::Zero(size)),
      v_(VectorXf::Zero(size)) {}

void Adam::step(VectorXf& theta, const VectorXf& grad) {
  ++t_;
  const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  m_ = b1 * m_ + (1.0f - b1) * grad;
  v_ = b2 * v_ + (1.0f - b2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto step = static_cast<float>(lr_ * std::sqrt(bc2) / bc1);
  theta.array() -= step * m_.array() / (v_.array().sqrt() + static_cast<float>(eps_ * std::sqrt(bc2)));
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace {

double accuracy_of(const ModelState& state, const WindowedDataset& ds) {
  if (ds.size() == 0) return 0.0;
  const auto pred = argmax_rows(forward(state, ds.X, true));
  Index hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == ds.y[i];
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

}  // namespace

ModelState train_on_targets(ModelState state, const WindowedDataset& data, const MatrixXd& targets,
                            const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  require(data.size() > 0, ErrorCode::invalid_input, "training set is empty");
  require(targets.rows() == data.size() && targets.cols() == state.arch.num_classes, ErrorCode::shape_mismatch,
          "targets do not match the dataset");
  require(state.params.same_layout(state.ema_params), ErrorCode::layout_mismatch, "EMA layout mismatch");

  ConvNet<float> net(state.arch);
  Adam adam(state.params.size(), cfg.learning_rate);
  const VectorXf l2_mask = state.params.layout->regularization_mask();
  const auto l2 = static_cast<float>(cfg.l2);
  std::mt19937_64 rng(cfg.rng_seed);

  IndexList order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  Index steps = 0;
  bool stop = false;
  VectorXd ema = state.ema_params.values.cast<double>();

  for (Index epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    Index seen = 0, hits = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && steps >= cfg.max_steps) {
        stop = true;
        break;
      }
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto batch = static_cast<Index>(idx.size());
      RowMatrix<float> inputs = pack_batch<float>(data.X, idx);
      MatrixXd batch_targets(batch, targets.cols());
      for (Index s = 0; s < batch; ++s) batch_targets.row(s) = targets.row(static_cast<Index>(idx[static_cast<std::size_t>(s)]));

      const std::uint64_t step_seed = rng();
      if (options.loss.kind == LossKind::mixup && batch >= 2) {
        auto mixed = mixup_batch(inputs, batch, batch_targets, options.loss.mixup_alpha, step_seed ^ 0x9e3779b97f4a7c15ULL);
        inputs = std::move(mixed.inputs);
        batch_targets = std::move(mixed.targets);
      }

      const MatrixXf logits = net.forward(state.params.values, inputs, batch, true, step_seed);
      require(logits.allFinite(), ErrorCode::divergence,
              "non-finite logits at epoch " + std::to_string(epoch) + ", step " + std::to_string(steps));
      const auto result = loss_and_gradient(options.loss, logits.cast<double>(), batch_targets);
      const double penalty = cfg.l2 * state.params.values.cwiseProduct(l2_mask).squaredNorm();
      require(std::isfinite(result.value + penalty), ErrorCode::divergence,
              "non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(steps));

      VectorXf grad = net.backward(result.grad.cast<float>());
      grad += (2.0f * l2) * state.params.values.cwiseProduct(l2_mask);
      require(grad.allFinite(), ErrorCode::divergence, "non-finite gradient at step " + std::to_string(steps));
      adam.step(state.params.values, grad);
      if (cfg.use_ema) accumulate_ema(ema, state.params.values, cfg.ema_momentum);
      else ema = state.params.values.cast<double>();
      ++steps;

      loss_sum += result.value * static_cast<double>(batch);
      seen += batch;
      const auto pred = argmax_rows(logits);
      const auto want = argmax_rows(batch_targets);
      for (std::size_t s = 0; s < pred.size(); ++s) hits += pred[s] == want[s];
    }
    state.ema_params.values = ema.cast<float>();
    if (options.on_epoch && seen > 0) {
      EpochMetrics m{options.phase, epoch, loss_sum / static_cast<double>(seen),
                     static_cast<double>(hits) / static_cast<double>(seen), std::nullopt};
      if (options.validation) m.val_accuracy = accuracy_of(state, *options.validation);
      options.on_epoch(m);
    }
  }
  return state;
}

ModelState train_seed(const ArchitectureSpec& arch, const WindowedDataset& train, const TrainConfig& cfg,
                      std::uint64_t init_seed, const TrainOptions& options) {
  ModelState state = build_model(arch, init_seed);
  TrainOptions opts = options;
  opts.loss = LossSpec{};  // cross-entropy against the smoothed distribution
  state = train_on_targets(std::move(state), train, smooth_targets(train.y, cfg.smoothing_alpha, arch.num_classes),
                           cfg, opts);
  state.role = ModelRole::seed;
  return state;
}

ModelState train_baseline(const ArchitectureSpec& arch, const WindowedDataset& train, const TrainConfig& cfg,
                          std::uint64_t init_seed, const TrainOptions& options) {
  ModelState state = build_model(arch, init_seed);
  state = train_on_targets(std::move(state), train, one_hot(train.y, arch.num_classes), cfg, options);
  state.role = ModelRole::baseline;
  return state;
}

ModelState fine_tune(const ModelState& seed, const ExpertSet& expert, const WindowedDataset& train, double eta,
                     const TrainConfig& cfg, const TrainOptions& options) {
  require(expert.size() > 0, ErrorCode::invalid_input, "expert set is empty");
  expert.validate(seed.arch.num_classes, static_cast<std::size_t>(train.size()));
  require(train.channels() == seed.arch.input_channels && train.window_length() == seed.arch.input_length,
          ErrorCode::shape_mismatch, "training windows do not match the seed architecture");
  const WindowedDataset shots = train.subset(expert.indices).with_labels(expert.corrected_labels);
  TrainConfig ft = cfg;
  ft.learning_rate = eta;
  TrainOptions opts = options;
  opts.loss = LossSpec{};
  // The seed model is whatever it is evaluated as; with EMA that is the averaged weights.
  ModelState state = seed;
  state.params = seed.eval_params(cfg.use_ema);
  state.ema_params = state.params;
  state = train_on_targets(std::move(state), shots, one_hot(shots.y, seed.arch.num_classes), ft, opts);
  state.role = ModelRole::fine_tuned;
  return state;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::ce: return "ce";
    case LossKind::ls: return "ls";
    case LossKind::mixup: return "mixup";
    case LossKind::poly: return "poly";
    case LossKind::bi_tempered: return "bi_tempered";
    case LossKind::logit_clip: return "logit_clip";
    case LossKind::focal: return "focal";
  }
  return "unknown";
}

void to_json(nlohmann::json& j, const LossSpec& s) {
  j = {{"kind", std::string(to_string(s.kind))}, {"focal_gamma", s.focal_gamma}, {"poly_epsilon", s.poly_epsilon},
       {"bt_t1", s.bt_t1}, {"bt_t2", s.bt_t2}, {"clip_tau", s.clip_tau}, {"mixup_alpha", s.mixup_alpha},
       {"ls_alpha", s.ls_alpha}};
}

void from_json(const nlohmann::json& j, LossSpec& s) {
  if (j.contains("kind")) {
    const auto k = j.at("kind").get<std::string>();
    bool found = false;
    for (auto kind : {LossKind::ce, LossKind::ls, LossKind::mixup, LossKind::poly, LossKind::bi_tempered,
                      LossKind::logit_clip, LossKind::focal})
      if (to_string(kind) == k) {
        s.kind = kind;
        found = true;
      }
    require(found, ErrorCode::config, "unknown loss kind '" + k + "'");
  }
  s.focal_gamma = j.value("focal_gamma", s.focal_gamma);
  s.poly_epsilon = j.value("poly_epsilon", s.poly_epsilon);
  s.bt_t1 = j.value("bt_t1", s.bt_t1);
  s.bt_t2 = j.value("bt_t2", s.bt_t2);
  s.clip_tau = j.value("clip_tau", s.clip_tau);
  s.mixup_alpha = j.value("mixup_alpha", s.mixup_alpha);
  s.ls_alpha = j.value("ls_alpha", s.ls_alpha);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},       {"batch_size", c.batch_size},
       {"smoothing_alpha", c.smoothing_alpha}, {"ema_momentum", c.ema_momentum}, {"use_ema", c.use_ema},
       {"l2", c.l2},                       {"rng_seed", c.rng_seed},   {"max_steps", c.max_steps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.smoothing_alpha = j.value("smoothing_alpha", c.smoothing_alpha);
  c.ema_momentum = j.value("ema_momentum", c.ema_momentum);
  c.use_ema = j.value("use_ema", c.use_ema);
  c.l2 = j.value("l2", c.l2);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.max_steps = j.value("max_steps", c.max_steps);
}

namespace {
std::string_view source_name(ExpertSource s) {
  switch (s) {
    case ExpertSource::oracle: return "oracle";
    case ExpertSource::panel: return "panel";
    case ExpertSource::live_ui: return "live_ui";
  }
  return "oracle";
}
}  // namespace

void to_json(nlohmann::json& j, const ExpertSet& e) {
  j = {{"indices", e.indices}, {"corrected_labels", e.corrected_labels}, {"source", std::string(source_name(e.source))}};
  if (!e.votes.empty()) j["votes"] = e.votes;
}

void from_json(const nlohmann::json& j, ExpertSet& e) {
  e.indices = j.at("indices").get<IndexList>();
  e.corrected_labels = j.at("corrected_labels").get<Labels>();
  const auto s = j.value("source", std::string("oracle"));
  if (s == "oracle") e.source = ExpertSource::oracle;
  else if (s == "panel") e.source = ExpertSource::panel;
  else if (s == "live_ui") e.source = ExpertSource::live_ui;
  else fail(ErrorCode::config, "unknown expert source '" + s + "'");
  e.votes = j.value("votes", std::vector<std::vector<int>>{});
}

void to_json(nlohmann::json& j, const EpochMetrics& m) {
  j = {{"phase", m.phase}, {"epoch", m.epoch}, {"loss", m.loss}, {"train_accuracy", m.train_accuracy}};
  if (m.val_accuracy) j["val_accuracy"] = *m.val_accuracy;
}

}  // namespace fhlr
