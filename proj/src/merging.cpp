#include "fhlr/merging.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fhlr {

namespace {

constexpr double fisher_floor = 1e-12;

void require_shared_layout(const std::vector<ModelState>& states) {
  require(states.size() >= 2, ErrorCode::invalid_input, "merging needs at least two models");
  for (const auto& s : states) {
    require(s.arch == states.front().arch, ErrorCode::layout_mismatch, "constituents differ in architecture");
    require(s.ema_params.same_layout(states.front().ema_params), ErrorCode::layout_mismatch,
            "constituents differ in parameter layout");
  }
}

ModelState merged_state(const ModelState& like, VectorXf values) {
  ModelState out;
  out.arch = like.arch;
  out.params = {like.ema_params.layout, std::move(values)};
  out.ema_params = out.params;
  out.role = ModelRole::merged;
  return out;
}

}  // namespace

void MergeSpec::validate(std::size_t num_states) const {
  require(weights.size() == num_states, ErrorCode::invalid_input,
          "expected " + std::to_string(num_states) + " merge weights, got " + std::to_string(weights.size()));
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0, ErrorCode::invalid_input, "merge weights must be nonnegative");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-9, ErrorCode::invalid_input, "merge weights must sum to 1");
}

double default_seed_weight(double noise_level) { return noise_level >= 0.4 ? 0.15 : 0.9; }

ModelState merge_weighted(const std::vector<ModelState>& states, const MergeSpec& spec) {
  require_shared_layout(states);
  spec.validate(states.size());
  // Accumulate in double so w = [1, 0, ...] reproduces the first model bitwise.
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(states.front().ema_params.size());
  for (std::size_t i = 0; i < states.size(); ++i)
    acc += spec.weights[i] * states[i].ema_params.values.cast<double>();
  return merged_state(states.front(), acc.cast<float>());
}

FisherVector estimate_fisher(const ModelState& state, const WindowedDataset& data, Index n_samples,
                             std::uint64_t seed) {
  require(n_samples >= 1, ErrorCode::invalid_input, "Fisher estimation needs at least one sample");
  require(n_samples <= data.size(), ErrorCode::invalid_input, "n_samples exceeds the dataset size");
  std::mt19937_64 rng(seed);
  IndexList order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(n_samples));

  ConvNet<float> net(state.arch);
  const VectorXf& theta = state.ema_params.values;
  FisherVector out;
  out.values = VectorXd::Zero(theta.size());
  out.sample_count = n_samples;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t i : order) {
    const std::size_t one[] = {i};
    const MatrixXd logits = net.forward(theta, pack_batch<float>(data.X, one), 1, false).cast<double>();
    const MatrixXd p = softmax_rows(logits);
    // Label drawn from the model's own predictive distribution.
    const double u = unit(rng);
    int label = static_cast<int>(p.cols()) - 1;
    double acc = 0.0;
    for (Index k = 0; k < p.cols(); ++k) {
      acc += p(0, k);
      if (u < acc) {
        label = static_cast<int>(k);
        break;
      }
    }
    // d(-log p_label)/dlogits = p - e_label; the square is sign-agnostic.
    MatrixXd dlogits = p;
    dlogits(0, label) -= 1.0;
    const VectorXd g = net.backward(dlogits.cast<float>()).cast<double>();
    out.values += g.cwiseProduct(g);
    out.sampled_indices.push_back(i);
    out.sampled_labels.push_back(label);
  }
  out.values /= static_cast<double>(n_samples);
  return out;
}

ModelState merge_fisher(const std::vector<ModelState>& states, const std::vector<FisherVector>& fishers,
                        const MergeSpec& spec) {
  require_shared_layout(states);
  spec.validate(states.size());
  require(fishers.size() == states.size(), ErrorCode::invalid_input, "one Fisher vector per model required");
  const Index n = states.front().ema_params.size();
  Eigen::ArrayXd num = Eigen::ArrayXd::Zero(n);
  Eigen::ArrayXd den = Eigen::ArrayXd::Zero(n);
  for (std::size_t i = 0; i < states.size(); ++i) {
    require(fishers[i].values.size() == n, ErrorCode::layout_mismatch, "Fisher vector does not match the layout");
    require((fishers[i].values.array() >= 0.0).all(), ErrorCode::invalid_input, "Fisher entries must be >= 0");
    const Eigen::ArrayXd weight = spec.weights[i] * (fishers[i].values.array() + fisher_floor);
    num += weight * states[i].ema_params.values.cast<double>().array();
    den += weight;
  }
  VectorXf merged(n);
  for (Index k = 0; k < n; ++k) {
    // All weights zero on this coordinate only happens when every w_i is 0, excluded by the simplex check.
    merged(k) = static_cast<float>(num(k) / den(k));
  }
  return merged_state(states.front(), std::move(merged));
}

MatrixXd ensemble_predict(const std::vector<ModelState>& states, const WindowTensor& X) {
  require(!states.empty(), ErrorCode::invalid_input, "ensemble needs at least one model");
  for (const auto& s : states)
    require(s.arch == states.front().arch, ErrorCode::layout_mismatch, "ensemble members differ in architecture");
  MatrixXd mean = predict_proba(states.front(), X, true);
  for (std::size_t i = 1; i < states.size(); ++i) mean += predict_proba(states[i], X, true);
  return mean / static_cast<double>(states.size());
}

WeightSearchResult search_seed_weight(const ModelState& seed, const ModelState& fine_tuned,
                                      const WindowedDataset& validation, const std::vector<double>& grid) {
  require(!grid.empty(), ErrorCode::invalid_input, "empty weight grid");
  require(validation.size() > 0, ErrorCode::invalid_input, "empty validation set");
  WeightSearchResult best{grid.front(), -1.0, {}};
  for (double w : grid) {
    const auto merged = merge_weighted({seed, fine_tuned}, MergeSpec{{w, 1.0 - w}, MergeMethod::weighted_average});
    const Labels pred = argmax_rows(forward(merged, validation.X, true));
    Index hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == validation.y[i];
    const double acc = static_cast<double>(hits) / static_cast<double>(validation.size());
    best.grid.emplace_back(w, acc);
    if (acc > best.accuracy) {
      best.accuracy = acc;
      best.seed_weight = w;
    }
  }
  return best;
}

nlohmann::json merge_provenance(const std::vector<ModelState>& states, const MergeSpec& spec) {
  nlohmann::json constituents = nlohmann::json::array();
  for (std::size_t i = 0; i < states.size(); ++i)
    constituents.push_back({{"role", states[i].role},
                            {"ema_checksum", parameter_checksum(states[i].ema_params)},
                            {"weight", i < spec.weights.size() ? spec.weights[i] : 0.0}});
  return {{"method", std::string(to_string(spec.method))}, {"constituents", constituents}};
}

std::string_view to_string(MergeMethod m) {
  switch (m) {
    case MergeMethod::weighted_average: return "weighted_average";
    case MergeMethod::fisher: return "fisher";
    case MergeMethod::ensemble: return "ensemble";
  }
  return "weighted_average";
}

void to_json(nlohmann::json& j, const MergeSpec& s) {
  j = {{"weights", s.weights}, {"method", std::string(to_string(s.method))}};
}

void from_json(const nlohmann::json& j, MergeSpec& s) {
  s.weights = j.value("weights", s.weights);
  if (j.contains("method")) {
    const auto m = j.at("method").get<std::string>();
    if (m == "weighted_average") s.method = MergeMethod::weighted_average;
    else if (m == "fisher") s.method = MergeMethod::fisher;
    else if (m == "ensemble") s.method = MergeMethod::ensemble;
    else fail(ErrorCode::config, "unknown merge method '" + m + "'");
  }
}

}  // namespace fhlr
