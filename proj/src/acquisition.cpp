#include "fhlr/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fhlr {

void AcquisitionSpec::validate() const { require(budget >= 1, ErrorCode::invalid_spec, "budget must be >= 1"); }

VectorXd score_uncertainty(const MatrixXd& probs, AcquisitionStrategy strategy) {
  require(strategy != AcquisitionStrategy::stratified, ErrorCode::invalid_input,
          "stratified selection has no uncertainty score");
  require(probs.cols() >= 2, ErrorCode::invalid_input, "need at least two classes");
  for (Index i = 0; i < probs.rows(); ++i)
    require((probs.row(i).array() >= -1e-12).all() && std::abs(probs.row(i).sum() - 1.0) <= 1e-6,
            ErrorCode::invalid_input, "row " + std::to_string(i) + " is not a probability vector");

  VectorXd scores(probs.rows());
  std::vector<double> sorted(static_cast<std::size_t>(probs.cols()));
  for (Index i = 0; i < probs.rows(); ++i) {
    const auto row = probs.row(i);
    switch (strategy) {
      case AcquisitionStrategy::entropy: {
        double h = 0.0;
        for (Index k = 0; k < row.size(); ++k)
          if (row(k) > 0.0) h -= row(k) * std::log(row(k));
        scores(i) = h;
        break;
      }
      case AcquisitionStrategy::least_confidence:
        scores(i) = 1.0 - row.maxCoeff();
        break;
      case AcquisitionStrategy::smallest_margin:
        for (Index k = 0; k < row.size(); ++k) sorted[static_cast<std::size_t>(k)] = row(k);
        std::partial_sort(sorted.begin(), sorted.begin() + 2, sorted.end(), std::greater<>());
        scores(i) = -(sorted[0] - sorted[1]);
        break;
      case AcquisitionStrategy::largest_margin:
        scores(i) = -(row.maxCoeff() - row.minCoeff());
        break;
      case AcquisitionStrategy::stratified:
        break;
    }
  }
  return scores;
}

IndexList select_batch(const MatrixXd& pool_probs, const AcquisitionSpec& spec, const std::set<std::size_t>& exclude) {
  spec.validate();
  const auto n = static_cast<std::size_t>(pool_probs.rows());
  IndexList available;
  for (std::size_t i = 0; i < n; ++i)
    if (!exclude.count(i)) available.push_back(i);
  const auto budget = static_cast<std::size_t>(spec.budget);
  require(budget <= available.size(), ErrorCode::invalid_input,
          "budget " + std::to_string(budget) + " exceeds the " + std::to_string(available.size()) +
              " available pool items");

  IndexList chosen;
  if (spec.strategy != AcquisitionStrategy::stratified) {
    const VectorXd scores = score_uncertainty(pool_probs, spec.strategy);
    std::stable_sort(available.begin(), available.end(), [&](std::size_t a, std::size_t b) {
      return scores(static_cast<Index>(a)) > scores(static_cast<Index>(b));
    });
    chosen.assign(available.begin(), available.begin() + static_cast<std::ptrdiff_t>(budget));
  } else {
    const auto c = static_cast<std::size_t>(pool_probs.cols());
    std::mt19937_64 rng(spec.rng_seed);
    const Labels predicted = argmax_rows(pool_probs);
    std::vector<IndexList> groups(c);
    for (std::size_t i : available) groups[static_cast<std::size_t>(predicted[i])].push_back(i);
    for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);

    std::vector<std::size_t> quota(c, budget / c);
    IndexList classes(c);
    std::iota(classes.begin(), classes.end(), std::size_t{0});
    std::shuffle(classes.begin(), classes.end(), rng);
    for (std::size_t r = 0; r < budget % c; ++r) ++quota[classes[r]];

    std::vector<bool> taken(n, false);
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t take = std::min(quota[k], groups[k].size());
      for (std::size_t t = 0; t < take; ++t) {
        chosen.push_back(groups[k][t]);
        taken[groups[k][t]] = true;
      }
    }
    // Exhausted classes: fill the shortfall from the remaining global pool.
    if (chosen.size() < budget) {
      IndexList rest;
      for (std::size_t i : available)
        if (!taken[i]) rest.push_back(i);
      std::shuffle(rest.begin(), rest.end(), rng);
      for (std::size_t t = 0; chosen.size() < budget; ++t) chosen.push_back(rest[t]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::string_view to_string(AcquisitionStrategy s) {
  switch (s) {
    case AcquisitionStrategy::stratified: return "stratified";
    case AcquisitionStrategy::entropy: return "entropy";
    case AcquisitionStrategy::smallest_margin: return "smallest_margin";
    case AcquisitionStrategy::largest_margin: return "largest_margin";
    case AcquisitionStrategy::least_confidence: return "least_confidence";
  }
  return "stratified";
}

AcquisitionStrategy acquisition_strategy_from_string(const std::string& s) {
  for (auto v : {AcquisitionStrategy::stratified, AcquisitionStrategy::entropy, AcquisitionStrategy::smallest_margin,
                 AcquisitionStrategy::largest_margin, AcquisitionStrategy::least_confidence})
    if (to_string(v) == s) return v;
  fail(ErrorCode::config, "unknown acquisition strategy '" + s + "'");
}

void to_json(nlohmann::json& j, const AcquisitionSpec& s) {
  j = {{"strategy", std::string(to_string(s.strategy))}, {"budget", s.budget}, {"rng_seed", s.rng_seed}};
}

void from_json(const nlohmann::json& j, AcquisitionSpec& s) {
  if (j.contains("strategy")) s.strategy = acquisition_strategy_from_string(j.at("strategy").get<std::string>());
  s.budget = j.value("budget", s.budget);
  s.rng_seed = j.value("rng_seed", s.rng_seed);
}

nlohmann::json selection_to_json(const IndexList& indices, const AcquisitionSpec& spec) {
  return {{"indices", indices}, {"strategy", std::string(to_string(spec.strategy))}, {"seed", spec.rng_seed}};
}

}  // namespace fhlr
