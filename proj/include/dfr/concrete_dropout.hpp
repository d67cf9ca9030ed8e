#pragma once

// Per-feature dropout rates learned on the input layer of a trained model.
//
// Each feature j carries a logit a_j with keep probability sigmoid(a_j).
// Masks are drawn from the binary concrete relaxation
//
//   z = sigmoid((a_j + log u - log(1 - u)) / t),   u ~ Uniform(0, 1)
//
// and the logits minimize
//
//   mean_i loss(y_i, f(x_i * z_i)) + (lambda / M) * sum_i sum_j z_ij
//
// with lambda ramped linearly from 0 over the first anneal_epochs epochs.
// Features are ranked by keep probability, highest first.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfr/matrix.hpp"
#include "dfr/nn.hpp"
#include "dfr/ranking.hpp"

namespace dfr::fr {

struct FRConfig {
  double lambda = 0.1;
  double temperature = 0.1;
  std::size_t anneal_epochs = 30;
  std::size_t epochs = 200;
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  bool freeze_model = true;

  void validate() const;
};

nlohmann::json fr_config_to_json(const FRConfig& config);

// Keep probabilities in the open interval (0, 1), one per feature.
class KeepProbVector {
 public:
  KeepProbVector() = default;
  explicit KeepProbVector(std::vector<double> values);

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t j) const { return values_[j]; }
  std::span<const double> values() const noexcept { return values_; }
  double mean() const;

 private:
  std::vector<double> values_;
};

// Logits are kept inside [-kLogitBound, kLogitBound] so sigmoid never rounds
// to exactly 0 or 1.
inline constexpr double kLogitBound = 30.0;

class FeatureDropoutLayer {
 public:
  explicit FeatureDropoutLayer(std::size_t features) : logits_(features, 0.0) {}

  std::size_t size() const noexcept { return logits_.size(); }
  std::span<const double> logits() const noexcept { return logits_; }
  std::span<double> logits() noexcept { return logits_; }
  KeepProbVector keep_probs() const;
  void clamp();

 private:
  std::vector<double> logits_;
};

// Relaxed masks, one row per noise row. Throws DomainError if any noise
// value is outside (0, 1).
Matrix sample_concrete(std::span<const double> logits, const Matrix& noise_u, double temperature);

// d/d logits of sum(upstream .* z), where z = sample_concrete(logits, noise_u, t).
std::vector<double> concrete_grad(std::span<const double> logits, const Matrix& noise_u,
                                  double temperature, const Matrix& upstream);
// Same derivative expressed through the masks: dz/da = z (1 - z) / t.
std::vector<double> concrete_grad_from_masks(const Matrix& masks, double temperature,
                                             const Matrix& upstream);

struct FrLoss {
  double value = 0.0;
  double data_loss = 0.0;
  double penalty = 0.0;
  Matrix mask_grad;                 // d value / d masks
  std::vector<double> logit_grad;   // d value / d logits
};

// Masked data loss of a frozen model (eval mode) plus the mask-count penalty.
FrLoss fr_loss(const nn::Model& model, const Matrix& x, const Matrix& y, const Matrix& masks,
               double lambda_current, double temperature);

double anneal_lambda(std::size_t epoch, const FRConfig& config);

struct FitResult {
  KeepProbVector keep_probs;
  std::vector<double> logits;
  std::vector<double> epoch_loss;
  std::vector<std::string> warnings;
  // Present only when freeze_model is false.
  std::optional<nn::Model> tuned_model;
};

FitResult fit_dropout_rates(const nn::Model& model, const Matrix& x, const Matrix& y,
                            const FRConfig& config);

// Keep probability descending, ties by lower feature index.
FeatureRanking rank_from_rates(const KeepProbVector& keep_probs,
                               nlohmann::json config = nlohmann::json::object());

// Data loss with one concrete mask draw per row, for choosing lambda on a
// validation split.
double masked_loss(const nn::Model& model, const Matrix& x, const Matrix& y,
                   std::span<const double> logits, double temperature, std::uint64_t seed);

}  // namespace dfr::fr
