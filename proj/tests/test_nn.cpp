#include <cmath>
#include <filesystem>
#include <utility>

#include "doctest.h"
#include "dfr/errors.hpp"
#include "dfr/model_io.hpp"
#include "dfr/nn.hpp"
#include "test_util.hpp"

using namespace dfr;
using namespace dfr::nn;
using dfr::test::central_diff;
using dfr::test::random_matrix;
using dfr::test::rel_err;

namespace {

void randomize(Model& model, std::uint64_t seed) {
  Rng rng(seed);
  for (auto block : model.parameters()) {
    for (double& v : block) v = 0.5 * standard_normal(rng) + 0.1;
  }
}

double loss_of(Model& model, const Matrix& x, const Matrix& y, Mode mode) {
  Rng rng(42);  // same dropout mask on every call
  if (mode == Mode::eval) return task_loss(model.task(), forward(std::as_const(model), x).output, y).value;
  auto fwd = forward(model, x, mode, rng);
  return task_loss(model.task(), fwd.output, y).value;
}

// Analytic parameter and input gradients against central differences.
void check_gradients(Model& model, Matrix x, const Matrix& y, Mode mode, double tol = 1e-4) {
  Rng rng(42);
  ForwardResult fwd = mode == Mode::eval ? forward(std::as_const(model), x) : forward(model, x, mode, rng);
  const LossResult loss = task_loss(model.task(), fwd.output, y);
  const Gradients g = backward(model, fwd.cache, loss.grad);

  auto params = model.parameters();
  REQUIRE(g.params.size() == params.size());
  double worst = 0.0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double num = central_diff([&] { return loss_of(model, x, y, mode); }, params[b][i]);
      worst = std::max(worst, rel_err(g.params[b][i], num));
    }
  }
  CHECK(worst < tol);

  double worst_in = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double num = central_diff([&] { return loss_of(model, x, y, mode); }, x.data()[i]);
    worst_in = std::max(worst_in, rel_err(g.input.data()[i], num));
  }
  CHECK(worst_in < tol);
}

Model stack(std::size_t in, std::vector<Layer> layers, Task task = Task::regression) {
  return Model(task, in, std::move(layers));
}

}  // namespace

TEST_CASE("dense layer gradients match finite differences") {
  Model m = stack(3, {make_dense(3, 4), make_dense(4, 1)});
  randomize(m, 1);
  check_gradients(m, random_matrix(5, 3, 2), random_matrix(5, 1, 3), Mode::train);
}

TEST_CASE("relu gradients match finite differences") {
  Model m = stack(3, {make_dense(3, 4), Relu{4}, make_dense(4, 1)});
  randomize(m, 4);
  check_gradients(m, random_matrix(6, 3, 5), random_matrix(6, 1, 6), Mode::train);
}

TEST_CASE("sigmoid gradients match finite differences") {
  Model m = stack(3, {make_dense(3, 4), Sigmoid{4}, make_dense(4, 1)});
  randomize(m, 7);
  check_gradients(m, random_matrix(6, 3, 8), random_matrix(6, 1, 9), Mode::train);
}

TEST_CASE("batch norm gradients match finite differences in both modes") {
  Model m = stack(3, {make_dense(3, 4), make_batch_norm(4), make_dense(4, 1)});
  randomize(m, 10);
  SUBCASE("train mode, batch statistics") {
    check_gradients(m, random_matrix(7, 3, 11), random_matrix(7, 1, 12), Mode::train);
  }
  SUBCASE("eval mode, running statistics") {
    auto& bn = std::get<BatchNorm>(m.mutable_layers()[1]);
    bn.running_mean = {0.1, -0.2, 0.3, 0.0};
    bn.running_var = {1.5, 0.7, 2.0, 1.0};
    check_gradients(m, random_matrix(7, 3, 13), random_matrix(7, 1, 14), Mode::eval);
  }
}

TEST_CASE("dropout gradients match finite differences under a fixed mask") {
  Model m = stack(3, {make_dense(3, 6), Dropout{6, 0.5}, make_dense(6, 1)});
  randomize(m, 15);
  check_gradients(m, random_matrix(6, 3, 16), random_matrix(6, 1, 17), Mode::train);
}

TEST_CASE("classification loss gradients match finite differences") {
  Model m = stack(3, {make_dense(3, 4), Relu{4}, make_dense(4, 1)}, Task::binary_classification);
  randomize(m, 18);
  Matrix y{{0}, {1}, {1}, {0}, {1}};
  check_gradients(m, random_matrix(5, 3, 19), y, Mode::train);
}

TEST_CASE("full default architecture gradients match finite differences") {
  Model m = make_mlp(5, ArchitectureSpec{{6, 4}, 0.5, true}, Task::regression, 20);
  check_gradients(m, random_matrix(8, 5, 21), random_matrix(8, 1, 22), Mode::train);
}

TEST_CASE("hand-computed two-layer relu forward pass") {
  Dense d1 = make_dense(2, 2);
  d1.weight = Matrix{{1.0, -1.0}, {2.0, 0.5}};
  d1.bias = {0.5, -1.0};
  Dense d2 = make_dense(2, 1);
  d2.weight = Matrix{{1.0}, {-2.0}};
  d2.bias = {0.25};
  const Model m(Task::regression, 2, {d1, Relu{2}, d2});
  const Matrix out = infer(m, Matrix{{1.0, 2.0}, {-1.0, 0.0}});
  CHECK(out(0, 0) == 5.75);
  CHECK(out(1, 0) == 0.25);
}

TEST_CASE("model construction validates the layer chain") {
  CHECK_THROWS_AS(Model(Task::regression, 3, {make_dense(2, 1)}), ShapeError);
  CHECK_THROWS_AS(Model(Task::regression, 3, {make_dense(3, 2)}), ShapeError);
  CHECK_THROWS_AS(Model(Task::regression, 3, {make_dense(3, 2), Relu{3}, make_dense(3, 1)}), ShapeError);
  CHECK_THROWS_AS(Model(Task::regression, 2, {make_dense(2, 2), Dropout{2, 1.0}, make_dense(2, 1)}), DomainError);
}

TEST_CASE("make_mlp builds dense, batch norm, relu, dropout per hidden layer") {
  const Model m = make_mlp(40, ArchitectureSpec{}, Task::regression, 1);
  const auto& ls = m.layers();
  REQUIRE(ls.size() == 9);
  const char* kinds[] = {"dense", "batchnorm", "relu", "dropout", "dense", "batchnorm", "relu", "dropout", "dense"};
  for (std::size_t i = 0; i < ls.size(); ++i) CHECK(std::string(kind_name(ls[i])) == kinds[i]);
  CHECK(output_dim(ls[0]) == 40);
  CHECK(output_dim(ls[4]) == 20);
  CHECK(std::get<Dropout>(ls[3]).rate == 0.5);
  // Glorot-uniform bound sqrt(6 / (in + out)).
  const double bound = std::sqrt(6.0 / 80.0);
  for (double w : std::get<Dense>(ls[0]).weight.data()) CHECK(std::abs(w) <= bound);
  CHECK(make_mlp(40, {}, Task::regression, 1).parameters()[0][0] == m.parameters()[0][0]);
}

TEST_CASE("backward rejects a cache from an older parameter state") {
  Model m = stack(2, {make_dense(2, 1)});
  auto fwd = forward(std::as_const(m), Matrix{{1.0, 2.0}});
  m.parameters()[0][0] = 3.0;
  CHECK_THROWS_AS(backward(m, fwd.cache, Matrix{{1.0}}), ContractError);
}

TEST_CASE("forward rejects a batch of the wrong width") {
  const Model m = stack(2, {make_dense(2, 1)});
  CHECK_THROWS_AS(infer(m, Matrix{{1.0, 2.0, 3.0}}), ShapeError);
}

TEST_CASE("losses") {
  const LossResult mse = loss_mse(Matrix{{1.0}, {3.0}}, Matrix{{0.0}, {0.0}});
  CHECK(mse.value == 5.0);
  CHECK(mse.grad == Matrix{{1.0}, {3.0}});
  const LossResult bce = loss_bce(Matrix{{0.0}}, Matrix{{1.0}});
  CHECK(bce.value == doctest::Approx(std::log(2.0)));
  CHECK(bce.grad(0, 0) == doctest::Approx(-0.5));
  // Large logits stay finite.
  CHECK(std::isfinite(loss_bce(Matrix{{800.0}}, Matrix{{0.0}}).value));
  CHECK_THROWS_AS(loss_bce(Matrix{{0.0}}, Matrix{{0.5}}), DomainError);
}

TEST_CASE("adam matches a hand-computed scalar trajectory") {
  std::vector<double> w{1.0};
  std::vector<std::span<double>> blocks{w};
  AdamState s = AdamState::for_blocks(blocks);
  adam_step(blocks, {{0.5}}, s, 0.1, 0.0);
  CHECK(w[0] == doctest::Approx(0.900000002).epsilon(1e-12));
  adam_step(blocks, {{-0.25}}, s, 0.1, 0.0);
  CHECK(w[0] == doctest::Approx(0.8733662987078463).epsilon(1e-12));
  CHECK(s.step == 2);
  CHECK(s.m[0].size() == 1);
}

TEST_CASE("l2 penalty applies only to flagged blocks") {
  std::vector<double> w{2.0}, b{2.0};
  std::vector<std::span<double>> blocks{w, b};
  AdamState s = AdamState::for_blocks(blocks);
  adam_step(blocks, {{0.0}, {0.0}}, s, 0.01, 0.1, {true, false});
  CHECK(w[0] < 2.0);
  CHECK(b[0] == 2.0);
  CHECK_THROWS_AS(adam_step(blocks, {{0.0}}, s, 0.01, 0.0), ShapeError);
}

TEST_CASE("decay mask flags dense weights only") {
  const Model m = make_mlp(3, ArchitectureSpec{{4}, 0.0, true}, Task::regression, 1);
  CHECK(m.decay_mask() == std::vector<bool>{true, false, false, false, true, false});
}

TEST_CASE("training fits a linear target and restores the best epoch") {
  Matrix x = random_matrix(600, 3, 30);
  Matrix y(600, 1);
  for (std::size_t i = 0; i < 600; ++i) y(i, 0) = 2.0 * x(i, 0) - x(i, 1);
  const std::vector<std::size_t> tr = [] { std::vector<std::size_t> v; for (std::size_t i = 0; i < 500; ++i) v.push_back(i); return v; }();
  const std::vector<std::size_t> va = [] { std::vector<std::size_t> v; for (std::size_t i = 500; i < 600; ++i) v.push_back(i); return v; }();
  Model m = make_mlp(3, ArchitectureSpec{{16}, 0.0, false}, Task::regression, 31);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 32;
  cfg.max_epochs = 60;
  cfg.seed = 32;
  const TrainReport r = train(m, x.select_rows(tr), y.select_rows(tr), x.select_rows(va), y.select_rows(va), cfg);
  CHECK(r.best_val_loss < 0.05);
  CHECK(evaluate_loss(m, x.select_rows(va), y.select_rows(va)) == r.best_val_loss);
  CHECK(r.val_loss[r.best_epoch] == r.best_val_loss);
}

TEST_CASE("early stopping fires after lookahead epochs without improvement") {
  Matrix x = random_matrix(200, 2, 40);
  Matrix y = random_matrix(200, 1, 41);  // pure noise: improvement stalls quickly
  Matrix xv = random_matrix(50, 2, 42);
  Matrix yv = random_matrix(50, 1, 43);
  Model m = make_mlp(2, ArchitectureSpec{{8}, 0.0, false}, Task::regression, 44);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.patience = 2;
  cfg.lookahead = 4;
  cfg.max_epochs = 200;
  const TrainReport r = train(m, x, y, xv, yv, cfg);
  REQUIRE(r.train_loss.size() < 200);
  CHECK(r.train_loss.size() - 1 - r.best_epoch == 4);
  CHECK(r.final_learning_rate < cfg.learning_rate);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.patience = 11;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr_decay_factor = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("training is deterministic under a seed") {
  Matrix x = random_matrix(100, 3, 50);
  Matrix y = random_matrix(100, 1, 51);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.seed = 9;
  Model a = make_mlp(3, ArchitectureSpec{{5}, 0.5, true}, Task::regression, 7);
  Model b = a;
  train(a, x, y, x, y, cfg);
  train(b, x, y, x, y, cfg);
  CHECK(model_to_json(a) == model_to_json(b));
}

TEST_CASE("model save and load reproduce predictions bit-exactly") {
  Model m = make_mlp(4, ArchitectureSpec{{6, 3}, 0.5, true}, Task::binary_classification, 60);
  Matrix x = random_matrix(20, 4, 61);
  Matrix y(20, 1);
  for (std::size_t i = 0; i < 20; ++i) y(i, 0) = x(i, 0) > 0 ? 1.0 : 0.0;
  TrainConfig cfg;
  cfg.max_epochs = 2;
  train(m, x, y, x, y, cfg);
  const auto path = (std::filesystem::temp_directory_path() / "dfr_model_rt.json").string();
  save_model(path, m, train_config_to_json(cfg));
  const Model back = load_model(path);
  CHECK(predict(back, x) == predict(m, x));
  CHECK(train_config_from_json(train_config_to_json(cfg)).lookahead == cfg.lookahead);
  std::filesystem::remove(path);

  auto j = model_to_json(m);
  j["layers"][0]["weight"]["data"].erase(0);
  CHECK_THROWS_AS(model_from_json(j), ParseError);
}
