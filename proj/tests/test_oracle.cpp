#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fhlr/oracle.hpp"

using namespace fhlr;

namespace {

AnnotationMatrix matrix(std::vector<std::vector<int>> rows) {
  AnnotationMatrix m;
  m.votes.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t a = 0; a < rows[i].size(); ++a) m.votes(static_cast<Index>(i), static_cast<Index>(a)) = rows[i][a];
  return m;
}

// Straight transcription of Fleiss' definition over vote lists.
double reference_kappa(const std::vector<std::vector<int>>& rows, int classes) {
  const double r = static_cast<double>(rows[0].size()), n = static_cast<double>(rows.size());
  double p_bar = 0.0;
  std::vector<double> totals(static_cast<std::size_t>(classes), 0.0);
  for (const auto& row : rows) {
    double agree = 0.0;
    for (int c = 0; c < classes; ++c) {
      double count = 0.0;
      for (int v : row) count += v == c;
      agree += count * (count - 1.0);
      totals[static_cast<std::size_t>(c)] += count;
    }
    p_bar += agree / (r * (r - 1.0));
  }
  p_bar /= n;
  double p_e = 0.0;
  for (double t : totals) p_e += (t / (n * r)) * (t / (n * r));
  return (p_bar - p_e) / (1.0 - p_e);
}

}  // namespace

TEST_CASE("Fleiss kappa on a worked example") {
  const auto m = matrix({{0, 0, 1}, {1, 1, 1}, {0, 1, 2}});
  // P_bar = 4/9, P_e = 35/81.
  CHECK(fleiss_kappa(m, 3) == doctest::Approx(1.0 / 46.0));
  const auto counts = category_counts(m, 3);
  CHECK(counts(0, 0) == 2);
  CHECK(counts(1, 1) == 3);
  CHECK(counts(2, 2) == 1);
}

TEST_CASE("Fleiss kappa agrees with the reference on random panels") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> vote(0, 3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<int>> rows(15, std::vector<int>(4));
    for (auto& row : rows)
      for (int& v : row) v = vote(rng);
    CHECK(fleiss_kappa(matrix(rows), 4) == doctest::Approx(reference_kappa(rows, 4)));
  }
}

TEST_CASE("Fleiss kappa edge cases") {
  CHECK(fleiss_kappa(matrix({{1, 1}, {0, 0}, {2, 2}}), 3) == doctest::Approx(1.0));
  CHECK(fleiss_kappa(matrix({{1, 1}, {1, 1}}), 3) == 1.0);  // all agree on one class
  CHECK_THROWS_AS(fleiss_kappa(matrix({{1}, {0}}), 2), Error);
  CHECK(fleiss_kappa(matrix({{0, 1}, {1, 0}}), 2) < 0.0);
}

TEST_CASE("majority vote") {
  const std::vector<int> tie{1, 0, 1, 0};
  CHECK(majority_vote(tie, 3) == 0);
  const std::vector<int> clear{2, 2, 1};
  CHECK(majority_vote(clear, 3) == 2);
  CHECK(majority_labels(matrix({{0, 0, 1}, {1, 1, 1}, {0, 1, 2}}), 3) == Labels{0, 1, 0});
}

TEST_CASE("oracle lookup") {
  const Labels clean{4, 3, 2, 1, 0};
  CHECK(oracle_labels({0, 4, 0}, clean) == Labels{4, 0, 4});
  CHECK_THROWS_AS(oracle_labels({5}, clean), Error);
}

TEST_CASE("panel votes follow the disagreement model") {
  const int classes = 5;
  Labels clean(4000);
  for (std::size_t i = 0; i < clean.size(); ++i) clean[i] = static_cast<int>(i % classes);
  IndexList idx(clean.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const double d = 0.2;
  const auto result = panel_annotate(idx, clean, {10, d, classes, 3});
  REQUIRE(result.matrix.items() == 4000);
  REQUIRE(result.matrix.annotators() == 10);

  double kept = 0.0;
  std::vector<double> wrong_offset(classes, 0.0);
  for (Index i = 0; i < 4000; ++i)
    for (Index a = 0; a < 10; ++a) {
      const int v = result.matrix.votes(i, a), t = clean[static_cast<std::size_t>(i)];
      if (v == t) kept += 1.0;
      else wrong_offset[static_cast<std::size_t>((v - t + classes) % classes)] += 1.0;
    }
  const double total = 40000.0;
  CHECK(kept / total == doctest::Approx(1.0 - d).epsilon(0.02));
  for (int o = 1; o < classes; ++o) CHECK(wrong_offset[static_cast<std::size_t>(o)] / total == doctest::Approx(d / 4).epsilon(0.1));

  // Two raters agree with probability (1-d)^2 + d^2/(C-1); chance agreement is 1/C on balanced labels.
  const double agree = (1 - d) * (1 - d) + d * d / (classes - 1);
  const double expected = (agree - 1.0 / classes) / (1.0 - 1.0 / classes);
  CHECK(fleiss_kappa(result.matrix, classes) == doctest::Approx(expected).epsilon(0.03));

  Index correct = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) correct += result.aggregated[i] == clean[i];
  CHECK(correct >= 3990);

  const auto again = panel_annotate(idx, clean, {10, d, classes, 3});
  CHECK(again.matrix.votes == result.matrix.votes);
  const auto perfect = panel_annotate(idx, clean, {10, 0.0, classes, 3});
  CHECK(perfect.aggregated == clean);
  CHECK(fleiss_kappa(perfect.matrix, classes) == doctest::Approx(1.0));
}

TEST_CASE("panel validation and serialization") {
  AnnotatorPanel bad{0, 0.1, 3, 0};
  CHECK_THROWS_AS(bad.validate(), Error);
  AnnotatorPanel bad_rate{3, 1.5, 3, 0};
  CHECK_THROWS_AS(bad_rate.validate(), Error);
  const auto m = matrix({{0, 2}, {1, 1}});
  CHECK(nlohmann::json(m).get<AnnotationMatrix>().votes == m.votes);
  AnnotatorPanel p{7, 0.1, 4, 11};
  const auto back = nlohmann::json(p).get<AnnotatorPanel>();
  CHECK(back.num_annotators == 7);
  CHECK(back.disagreement_rate == 0.1);
}
