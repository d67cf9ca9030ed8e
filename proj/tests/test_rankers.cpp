#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "dfr/errors.hpp"
#include "dfr/rankers.hpp"
#include "test_util.hpp"

using namespace dfr;
using namespace dfr::rank;
using dfr::test::random_matrix;

namespace {

// y = 2 x1 + x2 + 0 x3
nn::Model linear_model() {
  nn::Dense d = nn::make_dense(3, 1);
  d.weight = Matrix{{2.0}, {1.0}, {0.0}};
  return nn::Model(nn::Task::regression, 3, {d});
}

Matrix linear_target(const Matrix& x) {
  Matrix y(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) y(i, 0) = 2.0 * x(i, 0) + x(i, 1);
  return y;
}

}  // namespace

TEST_CASE("ranker names round trip and unknown names are rejected") {
  for (RankerKind k : all_ranker_kinds()) CHECK(parse_ranker_kind(to_string(k)) == k);
  CHECK(all_ranker_kinds().size() == 6);
  CHECK_THROWS_AS(parse_ranker_kind("lasso"), ParseError);
  CHECK_FALSE(needs_model(RankerKind::random));
  CHECK_FALSE(needs_model(RankerKind::marginal));
  CHECK(needs_model(RankerKind::mean));
  CHECK(needs_model(RankerKind::dropout_fr));
}

TEST_CASE("mean ranker scores the loss increase of mean imputation") {
  const nn::Model m = linear_model();
  const Matrix x = random_matrix(400, 3, 1);
  const FeatureRanking r = rank_mean(m, x, linear_target(x));
  CHECK(r.order == std::vector<std::size_t>{0, 1, 2});
  // A zero-weight input cannot change the output.
  CHECK(r.scores[2] == 0.0);
  // Replacing x1 by its mean costs 4 Var(x1) (sample variance, divisor n).
  const auto c0 = x.column(0);
  double mean = 0.0, var = 0.0;
  for (double v : c0) mean += v;
  mean /= double(c0.size());
  for (double v : c0) var += (v - mean) * (v - mean);
  var /= double(c0.size());
  CHECK(r.scores[0] == doctest::Approx(4.0 * var).epsilon(1e-9));
  r.validate();
}

TEST_CASE("shuffle ranker is seeded and finds the informative inputs") {
  const nn::Model m = linear_model();
  const Matrix x = random_matrix(400, 3, 2);
  const Matrix y = linear_target(x);
  const FeatureRanking a = rank_shuffle(m, x, y, 3, 5);
  CHECK(a.order == std::vector<std::size_t>{0, 1, 2});
  CHECK(a.scores[2] == 0.0);
  CHECK(rank_shuffle(m, x, y, 3, 5).scores == a.scores);
  CHECK(rank_shuffle(m, x, y, 3, 6).scores != a.scores);
  CHECK_THROWS_AS(rank_shuffle(m, x, y, 0, 5), ConfigError);
}

TEST_CASE("model rankers reject mismatched data") {
  const nn::Model m = linear_model();
  CHECK_THROWS_AS(rank_mean(m, random_matrix(5, 2, 1), random_matrix(5, 1, 2)), ShapeError);
}

TEST_CASE("marginal regression ranks by absolute correlation") {
  Matrix x{{1, 5, 3, 7}, {2, 4, 3, 1}, {3, 3, 3, 4}, {4, 2, 3, 2}, {5, 1, 3, 9}};
  const std::vector<double> y{2, 1, 4, 3, 6};
  const FeatureRanking r = rank_marginal(x, y, nn::Task::regression);
  // |r| of column 0 with y (numpy.corrcoef) = 0.8219949365267863; column 1
  // is its mirror image; the constant column scores 0.
  CHECK(r.scores[0] == doctest::Approx(0.8219949365267863).epsilon(1e-12));
  CHECK(r.scores[1] == doctest::Approx(0.8219949365267863).epsilon(1e-12));
  CHECK(r.scores[2] == 0.0);
  CHECK(r.order.front() == 0);
  CHECK(r.order[2] == 3);
  CHECK(r.order.back() == 2);
  CHECK_THROWS_AS(rank_marginal(x, std::vector<double>(5, 1.0), nn::Task::regression), DomainError);
}

TEST_CASE("marginal classification ranks by Welch t-test p-value") {
  // Feature 0: class 0 = 1..5, class 1 = 2,4,...,12.
  // scipy.stats.ttest_ind(equal_var=False) p-value: 0.04928433820673049.
  const std::vector<double> f0{1, 2, 3, 4, 5, 2, 4, 6, 8, 10, 12};
  const std::vector<double> y{0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  Matrix x(11, 3);
  for (std::size_t i = 0; i < 11; ++i) {
    x(i, 0) = f0[i];
    x(i, 1) = 7.0;                // constant: p = 1
    x(i, 2) = y[i] * 10.0 + double(i % 2);  // strongly separated
  }
  const FeatureRanking r = rank_marginal(x, y, nn::Task::binary_classification);
  CHECK_FALSE(r.higher_is_better);
  CHECK(r.scores[0] == doctest::Approx(0.04928433820673049).epsilon(1e-9));
  CHECK(r.scores[1] == 1.0);
  CHECK(r.order == std::vector<std::size_t>{2, 0, 1});

  std::vector<double> one_positive(11, 0.0);
  one_positive[0] = 1.0;
  CHECK_THROWS_AS(rank_marginal(x, one_positive, nn::Task::binary_classification), DomainError);
  std::vector<double> bad = y;
  bad[3] = 2.0;
  CHECK_THROWS_AS(rank_marginal(x, bad, nn::Task::binary_classification), DomainError);
}

TEST_CASE("random ranker is a seeded uniform permutation") {
  const FeatureRanking a = rank_random(40, 1);
  a.validate();
  CHECK(rank_random(40, 1).order == a.order);
  CHECK(rank_random(40, 2).order != a.order);
  for (std::size_t p = 0; p < 40; ++p) CHECK(a.scores[a.order[p]] == double(40 - p));
  CHECK_THROWS_AS(rank_random(0, 1), DomainError);

  // Position of feature 0 is uniform over seeds.
  std::vector<int> first(4, 0);
  for (std::uint64_t s = 0; s < 4000; ++s) ++first[rank_random(4, s).position_of()[0]];
  for (int c : first) CHECK(std::abs(c - 1000) < 120);
}

TEST_CASE("deep fs shrinks the weight of an unused input") {
  const nn::Model m = linear_model();
  const Matrix x = random_matrix(512, 3, 3);
  const Matrix y = linear_target(x);
  DeepFsConfig c;
  c.l1_lambda = 0.05;
  c.epochs = 40;
  c.learning_rate = 0.02;
  const DeepFsResult fit = fit_deep_fs(m, x, y, c);
  CHECK(std::abs(fit.weights[2]) < 0.1);
  CHECK(std::abs(fit.weights[0] - 1.0) < 0.1);
  const FeatureRanking r = rank_deep_fs(m, x, y, c);
  CHECK(r.method == "deep_fs");
  CHECK(r.order.back() == 2);
  CHECK(deep_fs_loss(m, x, y, fit.weights) < deep_fs_loss(m, x, y, std::vector<double>{0.0, 0.0, 0.0}));

  c.freeze_model = false;
  c.epochs = 1;
  CHECK(fit_deep_fs(m, x, y, c).tuned_model.has_value());
}

TEST_CASE("dropout_fr ranker wraps the rate fit") {
  const nn::Model m = linear_model();
  const Matrix x = random_matrix(256, 3, 4);
  fr::FRConfig c;
  c.epochs = 40;
  c.anneal_epochs = 10;
  c.learning_rate = 0.05;
  const FeatureRanking r = rank_dropout_fr(m, x, linear_target(x), c);
  CHECK(r.method == "dropout_fr");
  CHECK(r.order.back() == 2);
}
