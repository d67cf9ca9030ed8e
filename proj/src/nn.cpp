#include "dfr/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <type_traits>

#include "dfr/errors.hpp"

namespace dfr::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;

ConstMapMat view(const Matrix& m) { return {m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())}; }
MapMat view(Matrix& m) { return {m.data().data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())}; }
ConstMapVec view(const std::vector<double>& v) { return {v.data(), Eigen::Index(v.size())}; }

std::uint64_t next_state_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Matrix dense_forward(const Dense& d, const Matrix& x) {
  Matrix out(x.rows(), d.out);
  auto o = view(out);
  o.noalias() = view(x) * view(d.weight);
  o.rowwise() += view(d.bias).transpose();
  return out;
}

void batch_norm_apply(const std::vector<double>& mean, const std::vector<double>& inv_std,
                      const BatchNorm& bn, const Matrix& x, Matrix& xhat, Matrix& out) {
  const std::size_t n = x.rows();
  const std::size_t c = x.cols();
  xhat = Matrix(n, c);
  out = Matrix(n, c);
  for (std::size_t r = 0; r < n; ++r) {
    const auto xr = x.row(r);
    auto hr = xhat.row(r);
    auto orow = out.row(r);
    for (std::size_t j = 0; j < c; ++j) {
      hr[j] = (xr[j] - mean[j]) * inv_std[j];
      orow[j] = bn.gamma[j] * hr[j] + bn.beta[j];
    }
  }
}

void check_input(const Model& model, const Matrix& batch) {
  if (batch.cols() != model.input_dim()) {
    throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                     " columns, model expects " + std::to_string(model.input_dim()));
  }
}

// Shared implementation; `mutable_model` is non-null only in train mode.
ForwardResult run_forward(const Model& model, Model* mutable_model, const Matrix& batch,
                          Mode mode, Rng* rng, bool record) {
  check_input(model, batch);
  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.mode = mode;
  cache.state_id = model.state_id();
  const auto& layers = model.layers();
  if (record) {
    cache.inputs.resize(layers.size());
    cache.aux.resize(layers.size());
    cache.inv_std.resize(layers.size());
  }

  Matrix current = batch;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    Matrix next;
    std::visit(
        Overloaded{
            [&](const Dense& d) { next = dense_forward(d, current); },
            [&](const BatchNorm& bn) {
              const std::size_t n = current.rows();
              const std::size_t c = current.cols();
              std::vector<double> mean(c), inv_std(c);
              Matrix xhat;
              if (mode == Mode::train) {
                if (n < 2) throw ShapeError("batch-norm in train mode needs at least 2 rows");
                std::vector<double> var(c, 0.0);
                const auto x = view(current);
                const Eigen::RowVectorXd mu = x.colwise().mean();
                for (std::size_t j = 0; j < c; ++j) {
                  mean[j] = mu(Eigen::Index(j));
                  var[j] = (x.col(Eigen::Index(j)).array() - mean[j]).square().sum() / double(n);
                  inv_std[j] = 1.0 / std::sqrt(var[j] + bn.eps);
                }
                const double unbias = double(n) / double(n - 1);
                for (double& v : var) v *= unbias;
                mutable_model->update_batch_norm_stats(li, mean, var);
              } else {
                for (std::size_t j = 0; j < c; ++j) {
                  mean[j] = bn.running_mean[j];
                  inv_std[j] = 1.0 / std::sqrt(bn.running_var[j] + bn.eps);
                }
              }
              batch_norm_apply(mean, inv_std, bn, current, xhat, next);
              if (record) {
                cache.aux[li] = std::move(xhat);
                cache.inv_std[li] = std::move(inv_std);
              }
            },
            [&](const Relu&) {
              next = current;
              for (double& v : next.data()) v = v > 0.0 ? v : 0.0;
            },
            [&](const Sigmoid&) {
              next = current;
              for (double& v : next.data()) v = stable_sigmoid(v);
            },
            [&](const Dropout& dr) {
              if (mode == Mode::eval || dr.rate == 0.0) {
                next = current;
                if (record) cache.aux[li] = Matrix(current.rows(), current.cols(), 1.0);
                return;
              }
              const double keep = 1.0 - dr.rate;
              std::bernoulli_distribution coin(keep);
              Matrix mask(current.rows(), current.cols());
              for (double& m : mask.data()) m = coin(*rng) ? 1.0 / keep : 0.0;
              next = current;
              auto nd = next.data();
              const auto md = mask.data();
              for (std::size_t i = 0; i < nd.size(); ++i) nd[i] *= md[i];
              if (record) cache.aux[li] = std::move(mask);
            },
        },
        layers[li]);
    if (record) cache.inputs[li] = std::move(current);
    current = std::move(next);
  }
  result.output = std::move(current);
  return result;
}

// Reverse pass shared by backward and input_gradient.
Matrix run_backward(const Model& model, const ForwardCache& cache, const Matrix& loss_grad,
                    std::vector<std::vector<double>>* param_grads) {
  if (cache.state_id != model.state_id()) {
    throw ContractError("backward: forward cache was produced by a different model state");
  }
  const auto& layers = model.layers();
  if (cache.inputs.size() != layers.size()) {
    throw ContractError("backward: cache does not match model layer count");
  }
  const std::size_t n = cache.inputs.front().rows();
  if (loss_grad.rows() != n || loss_grad.cols() != 1) {
    throw ShapeError("backward: loss gradient must be " + std::to_string(n) + "x1");
  }

  // Parameter block offsets per layer, matching Model::parameters().
  std::vector<std::size_t> block_of(layers.size(), 0);
  std::size_t blocks = 0;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    block_of[li] = blocks;
    if (std::holds_alternative<Dense>(layers[li]) || std::holds_alternative<BatchNorm>(layers[li])) blocks += 2;
  }
  if (param_grads) param_grads->assign(blocks, {});

  Matrix grad = loss_grad;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Matrix& x = cache.inputs[li];
    Matrix prev;
    std::visit(
        Overloaded{
            [&](const Dense& d) {
              if (param_grads) {
                std::vector<double> gw(d.in * d.out), gb(d.out);
                Eigen::Map<RowMat>(gw.data(), Eigen::Index(d.in), Eigen::Index(d.out)).noalias() =
                    view(x).transpose() * view(grad);
                MapVec(gb.data(), Eigen::Index(d.out)) = view(grad).colwise().sum().transpose();
                (*param_grads)[block_of[li]] = std::move(gw);
                (*param_grads)[block_of[li] + 1] = std::move(gb);
              }
              prev = Matrix(x.rows(), d.in);
              view(prev).noalias() = view(grad) * view(d.weight).transpose();
            },
            [&](const BatchNorm& bn) {
              const Matrix& xhat = cache.aux[li];
              const auto& inv_std = cache.inv_std[li];
              const std::size_t c = bn.dim;
              std::vector<double> dgamma(c, 0.0), dbeta(c, 0.0);
              for (std::size_t r = 0; r < n; ++r) {
                const auto g = grad.row(r);
                const auto h = xhat.row(r);
                for (std::size_t j = 0; j < c; ++j) {
                  dgamma[j] += g[j] * h[j];
                  dbeta[j] += g[j];
                }
              }
              prev = Matrix(n, c);
              if (cache.mode == Mode::train) {
                // dx = inv_std/N * (N*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                const double nn = double(n);
                for (std::size_t r = 0; r < n; ++r) {
                  const auto g = grad.row(r);
                  const auto h = xhat.row(r);
                  auto p = prev.row(r);
                  for (std::size_t j = 0; j < c; ++j) {
                    const double dxhat = g[j] * bn.gamma[j];
                    const double sum_dxhat = dbeta[j] * bn.gamma[j];
                    const double sum_dxhat_xhat = dgamma[j] * bn.gamma[j];
                    p[j] = inv_std[j] / nn * (nn * dxhat - sum_dxhat - h[j] * sum_dxhat_xhat);
                  }
                }
              } else {
                for (std::size_t r = 0; r < n; ++r) {
                  const auto g = grad.row(r);
                  auto p = prev.row(r);
                  for (std::size_t j = 0; j < c; ++j) p[j] = g[j] * bn.gamma[j] * inv_std[j];
                }
              }
              if (param_grads) {
                (*param_grads)[block_of[li]] = std::move(dgamma);
                (*param_grads)[block_of[li] + 1] = std::move(dbeta);
              }
            },
            [&](const Relu&) {
              prev = grad;
              auto pd = prev.data();
              const auto xd = x.data();
              for (std::size_t i = 0; i < pd.size(); ++i) pd[i] = xd[i] > 0.0 ? pd[i] : 0.0;
            },
            [&](const Sigmoid&) {
              prev = grad;
              auto pd = prev.data();
              const auto xd = x.data();
              for (std::size_t i = 0; i < pd.size(); ++i) {
                const double s = stable_sigmoid(xd[i]);
                pd[i] *= s * (1.0 - s);
              }
            },
            [&](const Dropout&) {
              prev = grad;
              auto pd = prev.data();
              const auto md = cache.aux[li].data();
              for (std::size_t i = 0; i < pd.size(); ++i) pd[i] *= md[i];
            },
        },
        layers[li]);
    grad = std::move(prev);
  }
  return grad;
}

}  // namespace

const char* to_string(Task task) {
  return task == Task::regression ? "regression" : "binary_classification";
}

Task parse_task(const std::string& name) {
  if (name == "regression") return Task::regression;
  if (name == "binary_classification" || name == "classification") return Task::binary_classification;
  throw ParseError("unknown task '" + name + "'");
}

Dense make_dense(std::size_t in, std::size_t out) {
  return Dense{in, out, Matrix(in, out), std::vector<double>(out, 0.0)};
}

BatchNorm make_batch_norm(std::size_t dim) {
  BatchNorm bn;
  bn.dim = dim;
  bn.gamma.assign(dim, 1.0);
  bn.beta.assign(dim, 0.0);
  bn.running_mean.assign(dim, 0.0);
  bn.running_var.assign(dim, 1.0);
  return bn;
}

std::size_t input_dim(const Layer& layer) {
  return std::visit(Overloaded{[](const Dense& d) { return d.in; },
                               [](const auto& l) { return l.dim; }},
                    layer);
}

std::size_t output_dim(const Layer& layer) {
  return std::visit(Overloaded{[](const Dense& d) { return d.out; },
                               [](const auto& l) { return l.dim; }},
                    layer);
}

const char* kind_name(const Layer& layer) {
  return std::visit(Overloaded{[](const Dense&) { return "dense"; },
                               [](const BatchNorm&) { return "batchnorm"; },
                               [](const Relu&) { return "relu"; },
                               [](const Sigmoid&) { return "sigmoid"; },
                               [](const Dropout&) { return "dropout"; }},
                    layer);
}

Model::Model(Task task, std::size_t input_dim, std::vector<Layer> layers)
    : task_(task), input_dim_(input_dim), layers_(std::move(layers)), state_id_(next_state_id()) {
  if (layers_.empty()) throw ShapeError("model needs at least one layer");
  std::size_t width = input_dim_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (nn::input_dim(l) != width) {
      throw ShapeError("layer " + std::to_string(i) + " (" + kind_name(l) + ") expects width " +
                       std::to_string(nn::input_dim(l)) + ", got " + std::to_string(width));
    }
    if (const auto* d = std::get_if<Dense>(&l)) {
      if (d->weight.rows() != d->in || d->weight.cols() != d->out || d->bias.size() != d->out) {
        throw ShapeError("dense layer " + std::to_string(i) + " has inconsistent parameter shapes");
      }
    } else if (const auto* bn = std::get_if<BatchNorm>(&l)) {
      if (bn->gamma.size() != bn->dim || bn->beta.size() != bn->dim ||
          bn->running_mean.size() != bn->dim || bn->running_var.size() != bn->dim) {
        throw ShapeError("batchnorm layer " + std::to_string(i) + " has inconsistent parameter shapes");
      }
    } else if (const auto* dr = std::get_if<Dropout>(&l)) {
      if (!(dr->rate >= 0.0 && dr->rate < 1.0)) throw DomainError("dropout rate must be in [0, 1)");
    }
    width = output_dim(l);
  }
  if (width != 1) throw ShapeError("model must end in a single output unit");
}

void Model::touch() { state_id_ = next_state_id(); }

void Model::update_batch_norm_stats(std::size_t layer, std::span<const double> batch_mean,
                                    std::span<const double> batch_var) {
  auto& bn = std::get<BatchNorm>(layers_.at(layer));
  for (std::size_t j = 0; j < bn.dim; ++j) {
    bn.running_mean[j] = (1.0 - bn.momentum) * bn.running_mean[j] + bn.momentum * batch_mean[j];
    bn.running_var[j] = (1.0 - bn.momentum) * bn.running_var[j] + bn.momentum * batch_var[j];
  }
}

std::vector<std::span<double>> Model::parameters() {
  touch();
  std::vector<std::span<double>> out;
  for (Layer& l : layers_) {
    if (auto* d = std::get_if<Dense>(&l)) {
      out.emplace_back(d->weight.data());
      out.emplace_back(d->bias);
    } else if (auto* bn = std::get_if<BatchNorm>(&l)) {
      out.emplace_back(bn->gamma);
      out.emplace_back(bn->beta);
    }
  }
  return out;
}

std::vector<std::span<const double>> Model::parameters() const {
  std::vector<std::span<const double>> out;
  for (const Layer& l : layers_) {
    if (const auto* d = std::get_if<Dense>(&l)) {
      out.emplace_back(d->weight.data());
      out.emplace_back(d->bias);
    } else if (const auto* bn = std::get_if<BatchNorm>(&l)) {
      out.emplace_back(bn->gamma);
      out.emplace_back(bn->beta);
    }
  }
  return out;
}

std::vector<bool> Model::decay_mask() const {
  std::vector<bool> mask;
  for (const Layer& l : layers_) {
    if (std::holds_alternative<Dense>(l)) {
      mask.push_back(true);
      mask.push_back(false);
    } else if (std::holds_alternative<BatchNorm>(l)) {
      mask.push_back(false);
      mask.push_back(false);
    }
  }
  return mask;
}

std::vector<Layer>& Model::mutable_layers() {
  touch();
  return layers_;
}

Model make_mlp(std::size_t input_dim, const ArchitectureSpec& arch, Task task, std::uint64_t seed) {
  if (input_dim == 0) throw ShapeError("make_mlp: input_dim must be positive");
  Rng rng(seed);
  auto glorot = [&](Dense& d) {
    const double limit = std::sqrt(6.0 / double(d.in + d.out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : d.weight.data()) w = dist(rng);
  };
  std::vector<Layer> layers;
  std::size_t width = input_dim;
  for (std::size_t h : arch.hidden) {
    Dense d = make_dense(width, h);
    glorot(d);
    layers.emplace_back(std::move(d));
    if (arch.batch_norm) layers.emplace_back(make_batch_norm(h));
    layers.emplace_back(Relu{h});
    if (arch.dropout_rate > 0.0) layers.emplace_back(Dropout{h, arch.dropout_rate});
    width = h;
  }
  Dense out = make_dense(width, 1);
  glorot(out);
  layers.emplace_back(std::move(out));
  return Model(task, input_dim, std::move(layers));
}

ForwardResult forward(Model& model, const Matrix& batch, Mode mode, Rng& rng) {
  if (mode == Mode::eval) return run_forward(model, nullptr, batch, mode, nullptr, true);
  return run_forward(model, &model, batch, mode, &rng, true);
}

ForwardResult forward(const Model& model, const Matrix& batch) {
  return run_forward(model, nullptr, batch, Mode::eval, nullptr, true);
}

Matrix infer(const Model& model, const Matrix& batch) {
  return run_forward(model, nullptr, batch, Mode::eval, nullptr, false).output;
}

Matrix predict(const Model& model, const Matrix& data) {
  Matrix out = infer(model, data);
  if (model.task() == Task::binary_classification) {
    for (double& v : out.data()) v = stable_sigmoid(v);
  }
  return out;
}

Gradients backward(const Model& model, const ForwardCache& cache, const Matrix& loss_grad) {
  Gradients g;
  g.input = run_backward(model, cache, loss_grad, &g.params);
  return g;
}

Matrix input_gradient(const Model& model, const ForwardCache& cache, const Matrix& loss_grad) {
  return run_backward(model, cache, loss_grad, nullptr);
}

LossResult loss_mse(const Matrix& pred, const Matrix& target) {
  require_same_shape(pred, target, "loss_mse");
  if (pred.rows() == 0) throw ShapeError("loss_mse: empty batch");
  const double n = double(pred.rows());
  LossResult r;
  r.grad = Matrix(pred.rows(), pred.cols());
  const auto p = pred.data();
  const auto t = target.data();
  auto g = r.grad.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = p[i] - t[i];
    sum += e * e;
    g[i] = 2.0 * e / n;
  }
  r.value = sum / n;
  return r;
}

LossResult loss_bce(const Matrix& logits, const Matrix& labels) {
  require_same_shape(logits, labels, "loss_bce");
  if (logits.rows() == 0) throw ShapeError("loss_bce: empty batch");
  const double n = double(logits.rows());
  LossResult r;
  r.grad = Matrix(logits.rows(), logits.cols());
  const auto x = logits.data();
  const auto y = labels.data();
  auto g = r.grad.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) {
      throw DomainError("loss_bce: label " + std::to_string(y[i]) + " at row " +
                        std::to_string(i) + " is not 0 or 1");
    }
    sum += softplus(x[i]) - y[i] * x[i];
    g[i] = (stable_sigmoid(x[i]) - y[i]) / n;
  }
  r.value = sum / n;
  return r;
}

LossResult task_loss(Task task, const Matrix& output, const Matrix& target) {
  return task == Task::regression ? loss_mse(output, target) : loss_bce(output, target);
}

AdamState AdamState::for_blocks(std::span<const std::span<double>> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_step(std::span<const std::span<double>> params,
               const std::vector<std::vector<double>>& grads, AdamState& state,
               double learning_rate, double l2_penalty, const std::vector<bool>& decay_mask) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size() || (!decay_mask.empty() && decay_mask.size() != params.size())) {
    throw ShapeError("adam_step: parameter, gradient and state block counts differ");
  }
  state.step += 1;
  const double t = double(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b];
    const auto& g = grads[b];
    auto& m = state.m[b];
    auto& v = state.v[b];
    if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
      throw ShapeError("adam_step: block " + std::to_string(b) + " shape mismatch");
    }
    const bool decay = !decay_mask.empty() && decay_mask[b] && l2_penalty > 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = decay ? g[i] + l2_penalty * p[i] : g[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= learning_rate * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (!(l2_penalty >= 0.0)) throw ConfigError("train: l2_penalty must be non-negative");
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (patience == 0 || patience > lookahead) {
    throw ConfigError("train: require 0 < patience <= lookahead");
  }
  if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) {
    throw ConfigError("train: lr_decay_factor must be in (0, 1)");
  }
}

double evaluate_loss(const Model& model, const Matrix& x, const Matrix& y) {
  return task_loss(model.task(), infer(model, x), y).value;
}

TrainReport train(Model& model, const Matrix& x_train, const Matrix& y_train, const Matrix& x_val,
                  const Matrix& y_val, const TrainConfig& config) {
  config.validate();
  if (x_train.rows() == 0 || x_val.rows() == 0) throw ShapeError("train: empty dataset");
  if (x_train.rows() != y_train.rows() || x_val.rows() != y_val.rows() || y_train.cols() != 1 ||
      y_val.cols() != 1) {
    throw ShapeError("train: features and targets disagree in shape");
  }
  if (x_train.cols() != model.input_dim() || x_val.cols() != model.input_dim()) {
    throw ShapeError("train: feature count does not match model input width");
  }

  Rng rng(config.seed);
  auto params = model.parameters();
  AdamState adam = AdamState::for_blocks(params);
  const std::vector<bool> decay = model.decay_mask();
  double lr = config.learning_rate;

  TrainReport report;
  report.best_val_loss = std::numeric_limits<double>::infinity();
  Model best = model;
  std::size_t since_improvement = 0;
  const std::size_t n = x_train.rows();

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto order = random_permutation(n, rng);
    double loss_sum = 0.0;
    std::size_t start = 0;
    std::size_t batch_index = 0;
    while (start < n) {
      std::size_t end = std::min(n, start + config.batch_size);
      if (n - end == 1) end = n;  // never leave a single-row batch
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix xb = x_train.select_rows(idx);
      const Matrix yb = y_train.select_rows(idx);
      auto fwd = forward(model, xb, Mode::train, rng);
      const LossResult loss = task_loss(model.task(), fwd.output, yb);
      if (!std::isfinite(loss.value)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index));
      }
      loss_sum += loss.value * double(idx.size());
      const Gradients g = backward(model, fwd.cache, loss.grad);
      params = model.parameters();
      adam_step(params, g.params, adam, lr, config.l2_penalty, decay);
      start = end;
      ++batch_index;
    }
    const double val = evaluate_loss(model, x_val, y_val);
    if (!std::isfinite(val)) {
      throw NumericError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    report.train_loss.push_back(loss_sum / double(n));
    report.val_loss.push_back(val);
    if (val < report.best_val_loss) {
      report.best_val_loss = val;
      report.best_epoch = epoch;
      best = model;
      since_improvement = 0;
    } else {
      ++since_improvement;
      if (since_improvement >= config.lookahead) break;
      if (since_improvement % config.patience == 0) lr *= config.lr_decay_factor;
    }
  }
  report.final_learning_rate = lr;
  model = std::move(best);
  model.mutable_layers();  // fresh state id for the restored parameters
  return report;
}

}  // namespace dfr::nn
