#pragma once

// Feature rankers behind one interface. Every ranker returns a
// FeatureRanking whose order is a permutation consistent with its scores.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfr/concrete_dropout.hpp"
#include "dfr/matrix.hpp"
#include "dfr/nn.hpp"
#include "dfr/ranking.hpp"

namespace dfr::rank {

enum class RankerKind { dropout_fr, mean, shuffle, marginal, random, deep_fs };

const char* to_string(RankerKind kind);
// Throws ParseError for names outside the enumeration.
RankerKind parse_ranker_kind(const std::string& name);
const std::vector<RankerKind>& all_ranker_kinds();
// Whether the ranker needs a trained model.
bool needs_model(RankerKind kind);

// Replace column j by its mean; score = eval-mode loss increase.
FeatureRanking rank_mean(const nn::Model& model, const Matrix& x, const Matrix& y);

// Permute column j across rows; score = mean loss increase over `repeats`
// permutations. Permutation (r, j) is drawn from derive_seed(seed, shuffle, {r, j}).
FeatureRanking rank_shuffle(const nn::Model& model, const Matrix& x, const Matrix& y,
                            std::size_t repeats, std::uint64_t seed);

// Regression: |Pearson r| with the target, higher first. Classification:
// two-sided Welch t-test p-value, lower first. Zero-variance features get
// the worst possible score (|r| = 0, p = 1).
FeatureRanking rank_marginal(const Matrix& x, std::span<const double> y, nn::Task task);

// Uniform random permutation; score is d - position.
FeatureRanking rank_random(std::size_t d, std::uint64_t seed);

struct DeepFsConfig {
  double l1_lambda = 1e-3;
  std::size_t epochs = 200;
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  bool freeze_model = true;
};

nlohmann::json deep_fs_config_to_json(const DeepFsConfig& config);

struct DeepFsResult {
  std::vector<double> weights;  // elementwise input scaling, initialised to 1
  std::optional<nn::Model> tuned_model;  // only when freeze_model is false
};

// Learns x -> x * w in front of the model under an l1 penalty on w (subgradient
// 0 at w = 0).
DeepFsResult fit_deep_fs(const nn::Model& model, const Matrix& x, const Matrix& y,
                         const DeepFsConfig& config);
// Score |w_j|, higher first.
FeatureRanking rank_deep_fs(const nn::Model& model, const Matrix& x, const Matrix& y,
                            const DeepFsConfig& config);
// Eval-mode data loss with the scaling layer applied.
double deep_fs_loss(const nn::Model& model, const Matrix& x, const Matrix& y,
                    std::span<const double> weights);

FeatureRanking rank_dropout_fr(const nn::Model& model, const Matrix& x, const Matrix& y,
                               const fr::FRConfig& config);

}  // namespace dfr::rank
