#include "fhlr/confident_learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace fhlr {

double ConfidentJoint::off_diagonal_fraction() const {
  const Index total_count = total();
  if (total_count == 0) return 0.0;
  return static_cast<double>(total_count - counts.diagonal().sum()) / static_cast<double>(total_count);
}

std::vector<int> stratified_folds(const Labels& labels, int num_classes, int folds, std::uint64_t seed) {
  require(folds >= 2, ErrorCode::invalid_input, "need at least two folds");
  require(static_cast<std::size_t>(folds) <= labels.size(), ErrorCode::invalid_input, "more folds than examples");
  const bool leave_one_out = static_cast<std::size_t>(folds) == labels.size();

  for (int attempt = 0; attempt < 16; ++attempt) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(attempt) * 0x9e3779b97f4a7c15ULL);
    std::vector<int> fold(labels.size(), 0);
    if (leave_one_out) {
      std::iota(fold.begin(), fold.end(), 0);
    } else {
      std::vector<IndexList> by_class(static_cast<std::size_t>(num_classes));
      for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
      int next = 0;
      for (auto& members : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        for (std::size_t i : members) fold[i] = next++ % folds;
      }
    }
    // Every training complement must still contain each class present overall.
    bool ok = true;
    std::vector<std::set<int>> held(static_cast<std::size_t>(folds));
    std::vector<int> class_total(static_cast<std::size_t>(num_classes), 0);
    std::vector<std::vector<int>> per_fold(static_cast<std::size_t>(folds),
                                           std::vector<int>(static_cast<std::size_t>(num_classes), 0));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      ++class_total[static_cast<std::size_t>(labels[i])];
      ++per_fold[static_cast<std::size_t>(fold[i])][static_cast<std::size_t>(labels[i])];
    }
    for (int f = 0; f < folds && ok; ++f)
      for (int c = 0; c < num_classes; ++c)
        if (class_total[static_cast<std::size_t>(c)] > 0 &&
            per_fold[static_cast<std::size_t>(f)][static_cast<std::size_t>(c)] == class_total[static_cast<std::size_t>(c)])
          ok = false;
    if (ok || leave_one_out) return fold;
  }
  fail(ErrorCode::invalid_input, "could not build folds with every class present in each training fold");
}

OofResult oof_probabilities(const WindowedDataset& ds, int folds, const ArchitectureSpec& arch, const TrainConfig& cfg,
                            std::uint64_t init_seed) {
  require(ds.size() > 0, ErrorCode::invalid_input, "empty dataset");
  OofResult out;
  out.folds = folds;
  out.fold_of = stratified_folds(ds.y, ds.num_classes, folds, cfg.rng_seed);
  out.probs = MatrixXd::Zero(ds.size(), ds.num_classes);
  TrainOptions opts;
  opts.phase = "cl_fold";
  for (int f = 0; f < folds; ++f) {
    IndexList train_idx, held_idx;
    for (std::size_t i = 0; i < out.fold_of.size(); ++i) (out.fold_of[i] == f ? held_idx : train_idx).push_back(i);
    if (held_idx.empty()) continue;
    TrainConfig fold_cfg = cfg;
    fold_cfg.rng_seed = cfg.rng_seed + static_cast<std::uint64_t>(f) + 1;
    const auto model = train_baseline(arch, ds.subset(train_idx), fold_cfg, init_seed + static_cast<std::uint64_t>(f), opts);
    const MatrixXd p = predict_proba(model, ds.subset(held_idx).X, true);
    for (std::size_t k = 0; k < held_idx.size(); ++k) out.probs.row(static_cast<Index>(held_idx[k])) = p.row(static_cast<Index>(k));
  }
  return out;
}

ConfidentJoint estimate_joint(const MatrixXd& probs, const Labels& noisy_labels) {
  require(probs.rows() == static_cast<Index>(noisy_labels.size()), ErrorCode::shape_mismatch,
          "probabilities and labels differ in length");
  const Index c = probs.cols();
  ConfidentJoint joint;
  joint.counts = Eigen::MatrixXi::Zero(c, c);
  joint.thresholds = VectorXd::Constant(c, std::numeric_limits<double>::quiet_NaN());
  joint.class_supported.assign(static_cast<std::size_t>(c), false);
  joint.suspected.assign(noisy_labels.size(), -1);

  VectorXd sums = VectorXd::Zero(c);
  Eigen::VectorXi support = Eigen::VectorXi::Zero(c);
  for (std::size_t i = 0; i < noisy_labels.size(); ++i) {
    const int y = noisy_labels[i];
    require(y >= 0 && y < c, ErrorCode::invalid_label, "label out of range");
    sums(y) += probs(static_cast<Index>(i), y);
    ++support(y);
  }
  for (Index j = 0; j < c; ++j)
    if (support(j) > 0) {
      joint.thresholds(j) = sums(j) / support(j);
      joint.class_supported[static_cast<std::size_t>(j)] = true;
    }

  for (std::size_t i = 0; i < noisy_labels.size(); ++i) {
    int best = -1;
    for (Index j = 0; j < c; ++j) {
      if (!joint.class_supported[static_cast<std::size_t>(j)]) continue;
      const double p = probs(static_cast<Index>(i), j);
      if (p >= joint.thresholds(j) && (best < 0 || p > probs(static_cast<Index>(i), best))) best = static_cast<int>(j);
    }
    joint.suspected[i] = best;
    if (best >= 0) ++joint.counts(noisy_labels[i], best);
  }
  return joint;
}

IndexList select_prune(const ConfidentJoint& joint, const MatrixXd& probs, const Labels& noisy_labels) {
  const Index c = joint.counts.rows();
  std::vector<IndexList> by_label(static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < noisy_labels.size(); ++i) by_label[static_cast<std::size_t>(noisy_labels[i])].push_back(i);

  std::set<std::size_t> pruned;
  for (Index i = 0; i < c; ++i) {
    const auto& members = by_label[static_cast<std::size_t>(i)];
    const std::size_t cap = members.size() / 2;
    std::set<std::size_t> from_class;
    for (Index j = 0; j < c; ++j) {
      if (i == j || joint.counts(i, j) == 0) continue;
      IndexList ranked = members;
      std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
        return probs(static_cast<Index>(a), j) - probs(static_cast<Index>(a), i) >
               probs(static_cast<Index>(b), j) - probs(static_cast<Index>(b), i);
      });
      Index taken = 0;
      for (std::size_t k : ranked) {
        if (taken >= joint.counts(i, j) || from_class.size() >= cap) break;
        if (from_class.insert(k).second) ++taken;
      }
    }
    pruned.insert(from_class.begin(), from_class.end());
  }
  return {pruned.begin(), pruned.end()};
}

PruneResult prune_and_retrain(const WindowedDataset& ds, const ConfidentJoint& joint, const MatrixXd& probs,
                              const ArchitectureSpec& arch, const TrainConfig& cfg, std::uint64_t init_seed) {
  require(joint.counts.rows() == ds.num_classes, ErrorCode::shape_mismatch, "joint does not match the class count");
  PruneResult out;
  out.pruned = select_prune(joint, probs, ds.y);
  std::vector<bool> drop(static_cast<std::size_t>(ds.size()), false);
  for (std::size_t i : out.pruned) drop[i] = true;
  for (std::size_t i = 0; i < drop.size(); ++i)
    if (!drop[i]) out.kept.push_back(i);
  out.cleaned = ds.subset(out.kept);
  TrainOptions opts;
  opts.phase = "cl_retrain";
  out.model = train_baseline(arch, out.cleaned, cfg, init_seed, opts);
  return out;
}

Correction correct_labels(const ConfidentJoint& joint, const MatrixXd& probs, const Labels& noisy_labels,
                          const Labels& clean_labels, std::size_t budget) {
  require(clean_labels.size() == noisy_labels.size(), ErrorCode::shape_mismatch, "clean and noisy labels differ in length");
  struct Candidate {
    std::size_t index;
    double margin;
  };
  std::vector<Candidate> flagged;
  for (std::size_t i = 0; i < noisy_labels.size(); ++i) {
    const int s = joint.suspected[i];
    if (s >= 0 && s != noisy_labels[i])
      flagged.push_back({i, probs(static_cast<Index>(i), s) - probs(static_cast<Index>(i), noisy_labels[i])});
  }
  std::stable_sort(flagged.begin(), flagged.end(), [](const Candidate& a, const Candidate& b) { return a.margin > b.margin; });
  Correction out{noisy_labels, {}};
  for (std::size_t k = 0; k < std::min(budget, flagged.size()); ++k) {
    out.labels[flagged[k].index] = clean_labels[flagged[k].index];
    out.corrected.push_back(flagged[k].index);
  }
  std::sort(out.corrected.begin(), out.corrected.end());
  return out;
}

nlohmann::json joint_to_json(const ConfidentJoint& joint, const IndexList& pruned) {
  std::vector<std::vector<int>> counts(static_cast<std::size_t>(joint.counts.rows()));
  std::vector<nlohmann::json> thresholds;
  for (Index i = 0; i < joint.counts.rows(); ++i) {
    for (Index j = 0; j < joint.counts.cols(); ++j) counts[static_cast<std::size_t>(i)].push_back(joint.counts(i, j));
    thresholds.push_back(std::isnan(joint.thresholds(i)) ? nlohmann::json(nullptr) : nlohmann::json(joint.thresholds(i)));
  }
  return {{"counts", counts}, {"thresholds", thresholds}, {"pruned", pruned}};
}

}  // namespace fhlr
