#include <cmath>
#include <utility>

#include "doctest.h"
#include "dfr/concrete_dropout.hpp"
#include "dfr/errors.hpp"
#include "test_util.hpp"

using namespace dfr;
using namespace dfr::fr;
using dfr::test::central_diff;
using dfr::test::random_matrix;
using dfr::test::rel_err;

namespace {

// y = 2 x1 + x2 + 0 x3, as a fixed one-layer model.
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

Matrix uniform_noise(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix u(r, c);
  for (double& v : u.data()) v = open_uniform(rng);
  return u;
}

}  // namespace

TEST_CASE("concrete sample matches a hand-computed value") {
  // keep probability 0.8 (logit ln 4), noise u = 0.3, temperature 0.1
  const std::vector<double> a{std::log(4.0)};
  const Matrix z = sample_concrete(a, Matrix{{0.3}}, 0.1);
  CHECK(z(0, 0) == doctest::Approx(0.9954585855623853).epsilon(1e-14));
  const auto g = concrete_grad(a, Matrix{{0.3}}, 0.1, Matrix{{1.0}});
  CHECK(g[0] == doctest::Approx(0.045207899925205124).epsilon(1e-12));
}

TEST_CASE("concrete scalar derivative matches central differences to 1e-6") {
  // Away from saturation: (a + logit u) / t stays within a few units.
  for (double a0 : {-2.0, -0.3, 0.0, 0.4, 1.7}) {
    for (double d : {-0.3, -0.1, 0.0, 0.1, 0.3}) {
      const double u = 1.0 / (1.0 + std::exp(a0 - d));
      std::vector<double> a{a0};
      const Matrix noise{{u}};
      const double analytic = concrete_grad(a, noise, 0.1, Matrix{{1.0}})[0];
      const double numeric = central_diff([&] { return sample_concrete(a, noise, 0.1)(0, 0); }, a[0], 1e-7);
      CHECK(rel_err(analytic, numeric) < 1e-6);
    }
  }
}

TEST_CASE("concrete vector gradient matches central differences") {
  std::vector<double> a{0.3, -0.5, 1.0, 0.0};
  const Matrix noise = uniform_noise(6, 4, 1);
  const Matrix up = random_matrix(6, 4, 2);
  const auto g = concrete_grad(a, noise, 0.5, up);
  auto weighted = [&] {
    const Matrix z = sample_concrete(a, noise, 0.5);
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += z.data()[i] * up.data()[i];
    return s;
  };
  for (std::size_t j = 0; j < a.size(); ++j) CHECK(rel_err(g[j], central_diff(weighted, a[j])) < 1e-6);
}

TEST_CASE("noise outside the open unit interval is rejected") {
  const std::vector<double> a{0.0};
  CHECK_THROWS_AS(sample_concrete(a, Matrix{{0.0}}, 0.1), DomainError);
  CHECK_THROWS_AS(sample_concrete(a, Matrix{{1.0}}, 0.1), DomainError);
  CHECK_THROWS_AS(sample_concrete(a, Matrix{{0.5}}, 0.0), DomainError);
  CHECK_THROWS_AS(sample_concrete(a, Matrix{{0.5, 0.5}}, 0.1), ShapeError);
}

TEST_CASE("fr loss gradients match central differences") {
  nn::Model m = nn::make_mlp(4, nn::ArchitectureSpec{{5, 3}, 0.5, true}, nn::Task::regression, 3);
  {
    // Non-trivial running statistics so eval mode is not an identity.
    Rng rng(4);
    nn::forward(m, random_matrix(16, 4, 5), nn::Mode::train, rng);
  }
  const Matrix x = random_matrix(8, 4, 6);
  const Matrix y = random_matrix(8, 1, 7);
  const Matrix noise = uniform_noise(8, 4, 8);
  std::vector<double> a{0.5, -0.2, 1.2, 0.0};
  const double t = 0.5;
  const double lambda = 0.3;
  auto value = [&] { return fr_loss(m, x, y, sample_concrete(a, noise, t), lambda, t).value; };

  const FrLoss l = fr_loss(m, x, y, sample_concrete(a, noise, t), lambda, t);
  CHECK(l.value == doctest::Approx(l.data_loss + l.penalty));
  for (std::size_t j = 0; j < a.size(); ++j) CHECK(rel_err(l.logit_grad[j], central_diff(value, a[j])) < 1e-4);

  Matrix masks = sample_concrete(a, noise, t);
  const FrLoss lm = fr_loss(m, x, y, masks, lambda, t);
  for (std::size_t i = 0; i < masks.size(); i += 3) {
    const double num = central_diff([&] { return fr_loss(m, x, y, masks, lambda, t).value; }, masks.data()[i]);
    CHECK(rel_err(lm.mask_grad.data()[i], num) < 1e-4);
  }
}

TEST_CASE("fr penalty is lambda over M times the mask sum") {
  const nn::Model m = linear_model();
  const Matrix x = random_matrix(4, 3, 9);
  const Matrix masks{{1, 0.5, 0}, {0, 0, 0}, {1, 1, 1}, {0.25, 0, 0}};
  const FrLoss l = fr_loss(m, x, linear_target(x), masks, 0.2, 0.1);
  CHECK(l.penalty == doctest::Approx(0.2 * 4.75 / 4.0));
}

TEST_CASE("Monte-Carlo penalty mean tracks lambda times the sum of keep probabilities") {
  const std::vector<double> theta{0.95, 0.8, 0.6, 0.5, 0.3, 0.1, 0.05, 0.7, 0.4, 0.2};
  std::vector<double> a;
  for (double p : theta) a.push_back(std::log(p) - std::log1p(-p));
  const std::size_t draws = 100000;
  const Matrix z = sample_concrete(a, uniform_noise(draws, a.size(), 10), 0.1);
  const double lambda = 1.0;
  double sum = 0.0;
  for (double v : z.data()) sum += v;
  const double penalty = lambda * sum / double(draws);
  double expected = 0.0;
  for (double p : theta) expected += lambda * p;
  CHECK(std::abs(penalty - expected) < 0.02 * double(a.size()));
}

TEST_CASE("relaxed mask exceeds one half with the keep probability") {
  const std::size_t draws = 100000;
  for (double theta : {0.05, 0.3, 0.5, 0.9}) {
    const std::vector<double> a{std::log(theta) - std::log1p(-theta)};
    const Matrix z = sample_concrete(a, uniform_noise(draws, 1, 11), 0.1);
    double hits = 0.0;
    for (double v : z.data()) hits += v > 0.5;
    const double p = hits / double(draws);
    const double se = std::sqrt(theta * (1.0 - theta) / double(draws));
    CHECK(std::abs(p - theta) < 3.0 * se);
  }
}

TEST_CASE("lambda anneals linearly over the first epochs") {
  FRConfig c;
  c.lambda = 0.1;
  c.anneal_epochs = 30;
  CHECK(anneal_lambda(0, c) == 0.0);
  CHECK(anneal_lambda(15, c) == doctest::Approx(0.05));
  CHECK(anneal_lambda(30, c) == 0.1);
  CHECK(anneal_lambda(150, c) == 0.1);
  c.anneal_epochs = 0;
  CHECK(anneal_lambda(0, c) == 0.1);
}

TEST_CASE("fr config defaults and validation") {
  FRConfig c;
  CHECK(c.lambda == 0.1);
  CHECK(c.temperature == 0.1);
  CHECK(c.anneal_epochs == 30);
  CHECK(c.epochs == 200);
  CHECK(c.learning_rate == 0.001);
  c.temperature = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = FRConfig{};
  c.anneal_epochs = 300;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = FRConfig{};
  c.lambda = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("keep probabilities live in the open unit interval") {
  CHECK_THROWS_AS(KeepProbVector({0.5, 1.0}), DomainError);
  CHECK_THROWS_AS(KeepProbVector({0.0}), DomainError);
  CHECK(KeepProbVector({0.2, 0.4}).mean() == doctest::Approx(0.3));
  FeatureDropoutLayer layer(3);
  CHECK(layer.keep_probs()[1] == 0.5);
  layer.logits()[0] = 1000.0;
  layer.clamp();
  CHECK(layer.logits()[0] == kLogitBound);
  CHECK(layer.keep_probs()[0] < 1.0);
}

TEST_CASE("rank_from_rates orders by keep probability, ties by index") {
  const FeatureRanking r = rank_from_rates(KeepProbVector({0.3, 0.9, 0.3, 0.99, 0.1}));
  CHECK(r.method == "dropout_fr");
  CHECK(r.order == std::vector<std::size_t>{3, 1, 0, 2, 4});
  r.validate();
}

TEST_CASE("rate fit keeps informative inputs and drops the unused one") {
  const nn::Model m = linear_model();
  const Matrix x = random_matrix(512, 3, 12);
  const Matrix y = linear_target(x);
  FRConfig c;
  c.lambda = 0.1;
  c.epochs = 60;
  c.anneal_epochs = 10;
  c.learning_rate = 0.05;
  c.seed = 13;
  const FitResult fit = fit_dropout_rates(m, x, y, c);
  const auto& th = fit.keep_probs;
  CHECK(th[0] > 0.9);
  CHECK(th[1] > 0.9);
  CHECK(th[2] < 0.1);
  CHECK(rank_from_rates(th).order.back() == 2);
  CHECK(fit.epoch_loss.size() == 60);
  CHECK_FALSE(fit.tuned_model.has_value());
  CHECK(fit_dropout_rates(m, x, y, c).logits == fit.logits);
}

TEST_CASE("an oversized penalty saturates every rate and warns") {
  const nn::Model m = linear_model();
  const Matrix x = random_matrix(256, 3, 14);
  FRConfig c;
  c.lambda = 100.0;
  // At t = 0.1 the mask gradient vanishes below Adam's epsilon long before
  // the rates reach the warning threshold.
  c.temperature = 1.0;
  c.epochs = 40;
  c.anneal_epochs = 0;
  c.learning_rate = 0.2;
  const FitResult fit = fit_dropout_rates(m, x, linear_target(x), c);
  CHECK(fit.warnings.size() == 1);
}

TEST_CASE("unfrozen rate fit returns a tuned model") {
  const nn::Model m = linear_model();
  const Matrix x = random_matrix(64, 3, 15);
  FRConfig c;
  c.epochs = 2;
  c.anneal_epochs = 1;
  c.freeze_model = false;
  const FitResult fit = fit_dropout_rates(m, x, linear_target(x), c);
  REQUIRE(fit.tuned_model.has_value());
  CHECK(fit.tuned_model->parameters()[0][0] != 2.0);
}

TEST_CASE("rate fit rejects a feature-count mismatch") {
  const nn::Model m = linear_model();
  CHECK_THROWS_AS(fit_dropout_rates(m, random_matrix(10, 2, 1), random_matrix(10, 1, 2), FRConfig{}), ShapeError);
}

TEST_CASE("masked loss is reproducible under its seed") {
  const nn::Model m = linear_model();
  const Matrix x = random_matrix(50, 3, 16);
  const std::vector<double> a{3.0, 3.0, -3.0};
  const double l1 = masked_loss(m, x, linear_target(x), a, 0.1, 7);
  CHECK(l1 == masked_loss(m, x, linear_target(x), a, 0.1, 7));
  CHECK(l1 < masked_loss(m, x, linear_target(x), std::vector<double>{-3.0, -3.0, -3.0}, 0.1, 7));
}
