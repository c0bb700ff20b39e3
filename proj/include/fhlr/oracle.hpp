#pragma once

#include <json.hpp>

#include <cstdint>
#include <span>

#include "fhlr/core.hpp"

namespace fhlr {

struct AnnotatorPanel {
  int num_annotators = 10;
  double disagreement_rate = 0.0;
  int num_classes = 2;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// votes(item, annotator), every entry in [0, C).
struct AnnotationMatrix {
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> votes;

  Index items() const { return votes.rows(); }
  Index annotators() const { return votes.cols(); }
};

struct PanelResult {
  AnnotationMatrix matrix;
  Labels aggregated;
};

/// Ground-truth lookup; duplicates are returned in order.
Labels oracle_labels(const IndexList& indices, const Labels& clean_labels);

/// Each annotator keeps the clean label with probability 1 - d, otherwise reports a
/// uniformly random different class. Aggregates by majority vote.
PanelResult panel_annotate(const IndexList& indices, const Labels& clean_labels, const AnnotatorPanel& panel);

/// Most frequent vote; ties resolve to the smallest class index.
int majority_vote(std::span<const int> votes, int num_classes);
Labels majority_labels(const AnnotationMatrix& m, int num_classes);

/// Per-item category counts n_ic.
Eigen::MatrixXd category_counts(const AnnotationMatrix& m, int num_classes);

double fleiss_kappa(const AnnotationMatrix& m, int num_classes);

void to_json(nlohmann::json& j, const AnnotationMatrix& m);
void from_json(const nlohmann::json& j, AnnotationMatrix& m);
void to_json(nlohmann::json& j, const AnnotatorPanel& p);
void from_json(const nlohmann::json& j, AnnotatorPanel& p);

}  // namespace fhlr
