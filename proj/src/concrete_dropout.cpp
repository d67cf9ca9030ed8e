#include "dfr/concrete_dropout.hpp"

#include <algorithm>
#include <cmath>

#include "dfr/errors.hpp"
#include "dfr/rng.hpp"

namespace dfr::fr {
namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double u) {
  if (!(u > 0.0 && u < 1.0)) {
    throw DomainError("concrete noise must lie strictly inside (0, 1), got " + std::to_string(u));
  }
  return std::log(u) - std::log1p(-u);
}

Matrix open_uniform_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix u(rows, cols);
  for (double& v : u.data()) v = open_uniform(rng);
  return u;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  auto o = out.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return out;
}

}  // namespace

void FRConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("fr: lambda must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("fr: temperature must be positive");
  if (anneal_epochs > epochs) throw ConfigError("fr: anneal_epochs must not exceed epochs");
  if (!(learning_rate > 0.0)) throw ConfigError("fr: learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("fr: batch_size must be positive");
}

nlohmann::json fr_config_to_json(const FRConfig& c) {
  return {{"lambda", c.lambda},           {"temperature", c.temperature},
          {"anneal_epochs", c.anneal_epochs}, {"epochs", c.epochs},
          {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"seed", c.seed},               {"freeze_model", c.freeze_model}};
}

KeepProbVector::KeepProbVector(std::vector<double> values) : values_(std::move(values)) {
  for (double v : values_) {
    if (!(v > 0.0 && v < 1.0)) throw DomainError("keep probabilities must lie in (0, 1)");
  }
}

double KeepProbVector::mean() const {
  if (values_.empty()) return 0.0;
  double s = 0.0;
  for (double v : values_) s += v;
  return s / double(values_.size());
}

KeepProbVector FeatureDropoutLayer::keep_probs() const {
  std::vector<double> theta(logits_.size());
  std::transform(logits_.begin(), logits_.end(), theta.begin(), sigmoid);
  return KeepProbVector(std::move(theta));
}

void FeatureDropoutLayer::clamp() {
  for (double& a : logits_) a = std::clamp(a, -kLogitBound, kLogitBound);
}

Matrix sample_concrete(std::span<const double> logits, const Matrix& noise_u, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("sample_concrete: temperature must be positive");
  if (noise_u.cols() != logits.size()) throw ShapeError("sample_concrete: noise width != feature count");
  Matrix z(noise_u.rows(), noise_u.cols());
  for (std::size_t i = 0; i < noise_u.rows(); ++i) {
    const auto u = noise_u.row(i);
    auto zr = z.row(i);
    for (std::size_t j = 0; j < logits.size(); ++j) {
      zr[j] = sigmoid((logits[j] + logit(u[j])) / temperature);
    }
  }
  return z;
}

std::vector<double> concrete_grad_from_masks(const Matrix& masks, double temperature,
                                             const Matrix& upstream) {
  require_same_shape(masks, upstream, "concrete_grad");
  std::vector<double> g(masks.cols(), 0.0);
  for (std::size_t i = 0; i < masks.rows(); ++i) {
    const auto z = masks.row(i);
    const auto up = upstream.row(i);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += up[j] * z[j] * (1.0 - z[j]) / temperature;
  }
  return g;
}

std::vector<double> concrete_grad(std::span<const double> logits, const Matrix& noise_u,
                                  double temperature, const Matrix& upstream) {
  require_same_shape(noise_u, upstream, "concrete_grad");
  return concrete_grad_from_masks(sample_concrete(logits, noise_u, temperature), temperature, upstream);
}

FrLoss fr_loss(const nn::Model& model, const Matrix& x, const Matrix& y, const Matrix& masks,
               double lambda_current, double temperature) {
  require_same_shape(x, masks, "fr_loss");
  const double m = double(x.rows());
  const Matrix xm = hadamard(x, masks);
  const auto fwd = nn::forward(model, xm);
  const nn::LossResult data = nn::task_loss(model.task(), fwd.output, y);

  FrLoss out;
  out.data_loss = data.value;
  double mask_sum = 0.0;
  for (double z : masks.data()) mask_sum += z;
  out.penalty = lambda_current * mask_sum / m;
  out.value = out.data_loss + out.penalty;

  // d/dz (data) = d/d(x*z) * x ; d/dz (penalty) = lambda / M.
  out.mask_grad = hadamard(nn::input_gradient(model, fwd.cache, data.grad), x);
  const double dpen = lambda_current / m;
  for (double& g : out.mask_grad.data()) g += dpen;
  out.logit_grad = concrete_grad_from_masks(masks, temperature, out.mask_grad);
  return out;
}

double anneal_lambda(std::size_t epoch, const FRConfig& config) {
  if (config.anneal_epochs == 0 || epoch >= config.anneal_epochs) return config.lambda;
  return config.lambda * double(epoch) / double(config.anneal_epochs);
}

FitResult fit_dropout_rates(const nn::Model& model, const Matrix& x, const Matrix& y,
                            const FRConfig& config) {
  config.validate();
  if (x.cols() != model.input_dim()) throw ShapeError("fit_dropout_rates: feature count != model input width");
  if (x.rows() == 0 || x.rows() != y.rows()) throw ShapeError("fit_dropout_rates: empty or mismatched data");

  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  FeatureDropoutLayer layer(d);
  std::vector<std::span<double>> logit_block{layer.logits()};
  nn::AdamState adam = nn::AdamState::for_blocks(logit_block);

  std::optional<nn::Model> tuned;
  nn::AdamState model_adam;
  Rng model_rng(derive_seed(config.seed, Stream::dropout_fr, {2}));
  if (!config.freeze_model) {
    tuned = model;
    auto p = tuned->parameters();
    model_adam = nn::AdamState::for_blocks(p);
  }

  FitResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lambda = anneal_lambda(epoch, config);
    Rng shuffle_rng(derive_seed(config.seed, Stream::dropout_fr, {0, epoch}));
    const auto order = random_permutation(n, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batch = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch) {
      std::size_t end = std::min(n, start + config.batch_size);
      if (n - end == 1) end = n;
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix xb = x.select_rows(idx);
      const Matrix yb = y.select_rows(idx);
      Rng noise_rng(derive_seed(config.seed, Stream::dropout_fr, {1, epoch, batch}));
      const Matrix u = open_uniform_matrix(idx.size(), d, noise_rng);
      const Matrix masks = sample_concrete(layer.logits(), u, config.temperature);

      double value = 0.0;
      std::vector<std::vector<double>> logit_grad(1);
      if (config.freeze_model) {
        FrLoss loss = fr_loss(model, xb, yb, masks, lambda, config.temperature);
        value = loss.value;
        logit_grad[0] = std::move(loss.logit_grad);
      } else {
        const Matrix xm = hadamard(xb, masks);
        auto fwd = nn::forward(*tuned, xm, nn::Mode::train, model_rng);
        const nn::LossResult data = nn::task_loss(tuned->task(), fwd.output, yb);
        const nn::Gradients g = nn::backward(*tuned, fwd.cache, data.grad);
        Matrix mask_grad = hadamard(g.input, xb);
        double mask_sum = 0.0;
        for (double z : masks.data()) mask_sum += z;
        const double dpen = lambda / double(idx.size());
        for (double& v : mask_grad.data()) v += dpen;
        value = data.value + lambda * mask_sum / double(idx.size());
        logit_grad[0] = concrete_grad_from_masks(masks, config.temperature, mask_grad);
        auto params = tuned->parameters();
        nn::adam_step(params, g.params, model_adam, config.learning_rate, 0.0);
      }
      if (!std::isfinite(value)) {
        throw NumericError("fit_dropout_rates: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch));
      }
      loss_sum += value * double(idx.size());
      nn::adam_step(logit_block, logit_grad, adam, config.learning_rate, 0.0);
      layer.clamp();
      if (end == n) break;
    }
    result.epoch_loss.push_back(loss_sum / double(n));
  }

  result.logits.assign(layer.logits().begin(), layer.logits().end());
  result.keep_probs = layer.keep_probs();
  const auto theta = result.keep_probs.values();
  const bool all_high = std::all_of(theta.begin(), theta.end(), [](double t) { return t > 0.999; });
  const bool all_low = std::all_of(theta.begin(), theta.end(), [](double t) { return t < 0.001; });
  if (d > 1 && (all_high || all_low)) {
    result.warnings.push_back(std::string("every keep probability saturated ") +
                              (all_high ? "near 1" : "near 0") + "; lambda is likely mis-scaled");
  }
  result.tuned_model = std::move(tuned);
  return result;
}

FeatureRanking rank_from_rates(const KeepProbVector& keep_probs, nlohmann::json config) {
  const auto v = keep_probs.values();
  return FeatureRanking::from_scores("dropout_fr", {v.begin(), v.end()}, true, std::move(config));
}

double masked_loss(const nn::Model& model, const Matrix& x, const Matrix& y,
                   std::span<const double> logits, double temperature, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix u = open_uniform_matrix(x.rows(), x.cols(), rng);
  const Matrix masks = sample_concrete(logits, u, temperature);
  return nn::evaluate_loss(model, hadamard(x, masks), y);
}

}  // namespace dfr::fr
