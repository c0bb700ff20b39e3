#include "fhlr/oracle.hpp"

#include <cmath>
#include <random>

namespace fhlr {

void AnnotatorPanel::validate() const {
  require(num_annotators >= 1, ErrorCode::invalid_spec, "panel needs at least one annotator");
  require(disagreement_rate >= 0.0 && disagreement_rate <= 1.0, ErrorCode::invalid_spec,
          "disagreement_rate must lie in [0, 1]");
  require(num_classes >= 2, ErrorCode::invalid_spec, "num_classes must be >= 2");
}

Labels oracle_labels(const IndexList& indices, const Labels& clean_labels) {
  Labels out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    require(i < clean_labels.size(), ErrorCode::invalid_input, "index " + std::to_string(i) + " out of range");
    out.push_back(clean_labels[i]);
  }
  return out;
}

int majority_vote(std::span<const int> votes, int num_classes) {
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int v : votes) {
    require(v >= 0 && v < num_classes, ErrorCode::invalid_label, "vote out of range");
    ++counts[static_cast<std::size_t>(v)];
  }
  int best = 0;
  for (int c = 1; c < num_classes; ++c)
    if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
  return best;
}

Labels majority_labels(const AnnotationMatrix& m, int num_classes) {
  Labels out(static_cast<std::size_t>(m.items()));
  std::vector<int> row(static_cast<std::size_t>(m.annotators()));
  for (Index i = 0; i < m.items(); ++i) {
    for (Index a = 0; a < m.annotators(); ++a) row[static_cast<std::size_t>(a)] = m.votes(i, a);
    out[static_cast<std::size_t>(i)] = majority_vote(row, num_classes);
  }
  return out;
}

PanelResult panel_annotate(const IndexList& indices, const Labels& clean_labels, const AnnotatorPanel& panel) {
  panel.validate();
  const Labels truth = oracle_labels(indices, clean_labels);
  std::mt19937_64 rng(panel.rng_seed);
  std::bernoulli_distribution errs(panel.disagreement_rate);
  std::uniform_int_distribution<int> other(0, panel.num_classes - 2);

  PanelResult out;
  out.matrix.votes.resize(static_cast<Index>(truth.size()), panel.num_annotators);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (int a = 0; a < panel.num_annotators; ++a) {
      int vote = truth[i];
      if (errs(rng)) {
        vote = other(rng);
        if (vote >= truth[i]) ++vote;  // skip the clean class
      }
      out.matrix.votes(static_cast<Index>(i), a) = vote;
    }
  }
  out.aggregated = majority_labels(out.matrix, panel.num_classes);
  return out;
}

Eigen::MatrixXd category_counts(const AnnotationMatrix& m, int num_classes) {
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(m.items(), num_classes);
  for (Index i = 0; i < m.items(); ++i)
    for (Index a = 0; a < m.annotators(); ++a) {
      const int v = m.votes(i, a);
      require(v >= 0 && v < num_classes, ErrorCode::invalid_label, "vote out of range");
      counts(i, v) += 1.0;
    }
  return counts;
}

double fleiss_kappa(const AnnotationMatrix& m, int num_classes) {
  const Index raters = m.annotators();
  require(raters >= 2, ErrorCode::invalid_input, "Fleiss kappa needs at least two annotators");
  require(m.items() >= 1, ErrorCode::invalid_input, "Fleiss kappa needs at least one item");
  const Eigen::MatrixXd n = category_counts(m, num_classes);
  const auto r = static_cast<double>(raters);

  const Eigen::VectorXd per_item = (n.array().square().rowwise().sum() - r) / (r * (r - 1.0));
  const double p_bar = per_item.mean();
  const Eigen::RowVectorXd p_cat = n.colwise().sum() / (static_cast<double>(m.items()) * r);
  const double p_e = p_cat.squaredNorm();

  if (std::abs(1.0 - p_e) <= 1e-15) {
    require(std::abs(1.0 - p_bar) <= 1e-15, ErrorCode::invalid_input, "degenerate chance agreement");
    return 1.0;
  }
  return (p_bar - p_e) / (1.0 - p_e);
}

void to_json(nlohmann::json& j, const AnnotationMatrix& m) {
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(m.items()));
  for (Index i = 0; i < m.items(); ++i)
    for (Index a = 0; a < m.annotators(); ++a) rows[static_cast<std::size_t>(i)].push_back(m.votes(i, a));
  j = {{"votes", rows}};
}

void from_json(const nlohmann::json& j, AnnotationMatrix& m) {
  const auto rows = j.at("votes").get<std::vector<std::vector<int>>>();
  const auto cols = rows.empty() ? std::size_t{0} : rows.front().size();
  m.votes.resize(static_cast<Index>(rows.size()), static_cast<Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].size() == cols, ErrorCode::shape_mismatch, "ragged annotation matrix");
    for (std::size_t a = 0; a < cols; ++a) m.votes(static_cast<Index>(i), static_cast<Index>(a)) = rows[i][a];
  }
}

void to_json(nlohmann::json& j, const AnnotatorPanel& p) {
  j = {{"num_annotators", p.num_annotators}, {"disagreement_rate", p.disagreement_rate},
       {"num_classes", p.num_classes}, {"rng_seed", p.rng_seed}};
}

void from_json(const nlohmann::json& j, AnnotatorPanel& p) {
  p.num_annotators = j.value("num_annotators", p.num_annotators);
  p.disagreement_rate = j.value("disagreement_rate", p.disagreement_rate);
  p.num_classes = j.value("num_classes", p.num_classes);
  p.rng_seed = j.value("rng_seed", p.rng_seed);
}

}  // namespace fhlr
