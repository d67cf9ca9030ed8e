#pragma once

// Feed-forward network engine: layers, losses, reverse-mode gradients, Adam
// and a training loop with learning-rate decay and early stopping.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dfr/matrix.hpp"
#include "dfr/rng.hpp"

namespace dfr::nn {

enum class Task { regression, binary_classification };
enum class Mode { train, eval };

const char* to_string(Task task);
Task parse_task(const std::string& name);

struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  Matrix weight;  // in x out
  std::vector<double> bias;
};

struct BatchNorm {
  std::size_t dim = 0;
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

struct Relu {
  std::size_t dim = 0;
};

struct Sigmoid {
  std::size_t dim = 0;
};

// Inverted dropout: kept units are scaled by 1/(1-rate) at train time.
struct Dropout {
  std::size_t dim = 0;
  double rate = 0.0;
};

using Layer = std::variant<Dense, BatchNorm, Relu, Sigmoid, Dropout>;

Dense make_dense(std::size_t in, std::size_t out);
BatchNorm make_batch_norm(std::size_t dim);

std::size_t input_dim(const Layer& layer);
std::size_t output_dim(const Layer& layer);
const char* kind_name(const Layer& layer);

class Model {
 public:
  Model() = default;
  // Validates that layer dimensions chain and that the stack ends in a
  // single output unit.
  Model(Task task, std::size_t input_dim, std::vector<Layer> layers);

  Task task() const noexcept { return task_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  // Learnable parameter blocks in a fixed order: per dense layer (weight,
  // bias), per batch-norm layer (gamma, beta). The mutable overload marks
  // the model state as changed, invalidating outstanding forward caches.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;
  // One flag per parameter block; true for dense weights (the blocks the
  // l2 penalty applies to).
  std::vector<bool> decay_mask() const;

  std::vector<Layer>& mutable_layers();

  // Exponential-moving-average update of a batch-norm layer's running
  // statistics. Running statistics are not learnable, so the state id is kept.
  void update_batch_norm_stats(std::size_t layer, std::span<const double> batch_mean,
                               std::span<const double> batch_var);

  // Identifier of the current parameter state. Changes on every mutable access.
  std::uint64_t state_id() const noexcept { return state_id_; }

 private:
  void touch();

  Task task_ = Task::regression;
  std::size_t input_dim_ = 0;
  std::vector<Layer> layers_;
  std::uint64_t state_id_ = 0;
};

struct ArchitectureSpec {
  std::vector<std::size_t> hidden{40, 20};
  double dropout_rate = 0.5;
  bool batch_norm = true;
};

// Dense -> BatchNorm -> ReLU -> Dropout per hidden layer, then Dense(.., 1).
// Dense weights are Glorot-uniform, biases zero.
Model make_mlp(std::size_t input_dim, const ArchitectureSpec& arch, Task task,
               std::uint64_t seed);

struct ForwardCache {
  Mode mode = Mode::eval;
  std::uint64_t state_id = 0;
  std::vector<Matrix> inputs;  // input seen by each layer
  std::vector<Matrix> aux;     // dropout mask or batch-norm normalized input
  std::vector<std::vector<double>> inv_std;  // batch-norm 1/sqrt(var + eps)
};

struct ForwardResult {
  Matrix output;  // raw model output (logits for classification)
  ForwardCache cache;
};

// Train mode samples dropout masks from `rng`, uses batch statistics and
// updates batch-norm running statistics.
ForwardResult forward(Model& model, const Matrix& batch, Mode mode, Rng& rng);
// Eval-mode forward on a shared model.
ForwardResult forward(const Model& model, const Matrix& batch);
// Eval-mode raw outputs without recording a cache.
Matrix infer(const Model& model, const Matrix& batch);
// Eval-mode predictions; probabilities for classification models.
Matrix predict(const Model& model, const Matrix& data);

struct Gradients {
  std::vector<std::vector<double>> params;  // mirrors Model::parameters()
  Matrix input;                              // d loss / d batch
};

Gradients backward(const Model& model, const ForwardCache& cache, const Matrix& loss_grad);
// Only d loss / d input; skips parameter gradients.
Matrix input_gradient(const Model& model, const ForwardCache& cache, const Matrix& loss_grad);

struct LossResult {
  double value = 0.0;
  Matrix grad;  // d value / d prediction
};

LossResult loss_mse(const Matrix& pred, const Matrix& target);
// Mean binary cross-entropy on logits, computed as softplus(x) - y*x.
LossResult loss_bce(const Matrix& logits, const Matrix& labels);
LossResult task_loss(Task task, const Matrix& output, const Matrix& target);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_blocks(std::span<const std::span<double>> params);
};

// One Adam update. When `decay_mask` is non-empty, l2_penalty * w is added to
// the gradient of each flagged block before the moment update.
void adam_step(std::span<const std::span<double>> params,
               const std::vector<std::vector<double>>& grads, AdamState& state,
               double learning_rate, double l2_penalty,
               const std::vector<bool>& decay_mask = {});

struct TrainConfig {
  double learning_rate = 1e-3;
  double l2_penalty = 1e-5;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 100;
  std::size_t patience = 3;
  std::size_t lookahead = 10;
  double lr_decay_factor = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double final_learning_rate = 0.0;
};

// Mini-batch Adam. After each epoch the validation loss is measured in eval
// mode; every `patience` consecutive epochs without improvement multiply the
// learning rate by lr_decay_factor, `lookahead` such epochs stop training.
// The model is left holding the best-validation parameters.
TrainReport train(Model& model, const Matrix& x_train, const Matrix& y_train,
                  const Matrix& x_val, const Matrix& y_val, const TrainConfig& config);

// Eval-mode data loss of the model on (x, y).
double evaluate_loss(const Model& model, const Matrix& x, const Matrix& y);

}  // namespace dfr::nn
