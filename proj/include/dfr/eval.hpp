#pragma once

// Ranking quality against ground truth (Spearman with a top-K restriction)
// and the zero-out / retrain test-performance curves.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dfr/datasets.hpp"
#include "dfr/matrix.hpp"
#include "dfr/nn.hpp"
#include "dfr/ranking.hpp"
#include "json.hpp"

namespace dfr::eval {

// Pearson correlation; 0 if either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);
// Pearson correlation of fractional ranks.
double spearman_correlation(std::span<const double> a, std::span<const double> b);

struct SpearmanResult {
  double coefficient = 0.0;
  std::size_t k = 0;
  std::string tie_note;
};

// Restricts to the K features with the smallest ground-truth ranks (lower
// index wins a tie at the boundary), re-ranks the predicted positions within
// that subset and correlates them with the ground-truth ranks.
SpearmanResult spearman(const FeatureRanking& predicted, std::span<const double> truth_ranks,
                        std::size_t top_k);

double metric_mse(const Matrix& pred, const Matrix& target);
// Fraction correct; probability >= 0.5 predicts class 1.
double metric_accuracy(const Matrix& probs, const Matrix& labels);

enum class MetricKind { mse, accuracy };
enum class CurveMode { zero_out, retrain };

const char* to_string(MetricKind m);
const char* to_string(CurveMode m);
CurveMode parse_curve_mode(const std::string& name);
MetricKind metric_for(nn::Task task);

// Test metric of a model: mse for regression, accuracy for classification.
double test_metric(const nn::Model& model, const Matrix& x, const Matrix& y);

struct CurvePoint {
  std::size_t n_features = 0;
  std::vector<double> fold_values;

  double mean() const;
  double sd() const;  // sample sd; 0 for a single fold
};

struct EvalCurve {
  std::string method;
  CurveMode mode = CurveMode::zero_out;
  MetricKind metric = MetricKind::mse;
  std::vector<CurvePoint> points;

  std::size_t folds() const { return points.empty() ? 0 : points.front().fold_values.size(); }
};

// "1,2,5" -> {1, 2, 5}. Values must be strictly increasing.
std::vector<std::size_t> parse_n_list(const std::string& text);
void validate_n_list(std::span<const std::size_t> n_list, std::size_t d);

// Keeps the ranking's top-N columns, zeroes the rest and evaluates the
// already-trained model. One fold value per point.
EvalCurve zero_out_eval(const nn::Model& model, const FeatureRanking& ranking,
                        const Matrix& x_test, const Matrix& y_test,
                        std::span<const std::size_t> n_list);

struct RetrainSetup {
  nn::ArchitectureSpec arch;
  nn::Task task = nn::Task::regression;
  nn::TrainConfig train;
  std::uint64_t seed = 0;
};

// One fold's preprocessed splits.
struct FoldData {
  Matrix x_train, y_train;
  Matrix x_val, y_val;
  Matrix x_test, y_test;
};

// Top-N columns of the ranking, in ascending feature-index order, so N = D
// selects the original matrix unchanged.
std::vector<std::size_t> top_columns(const FeatureRanking& ranking, std::size_t n);

// Per fold and N, trains a fresh model on the ranking's top-N columns and
// records its test metric. rankings.size() is 1 (shared) or folds.size().
// Cell (fold f, N) is seeded from derive_seed(seed, retrain, {f, N}), so the
// grid can run on `jobs` threads with identical results.
EvalCurve retrain_eval(std::span<const FeatureRanking> rankings, std::span<const FoldData> folds,
                       const RetrainSetup& setup, std::span<const std::size_t> n_list,
                       std::size_t jobs = 1);

// Concatenates single-fold curves with matching points into one curve.
EvalCurve merge_folds(std::span<const EvalCurve> per_fold);

// Rows: method, mode, n_features, fold, metric.
std::string curves_to_csv(std::span<const EvalCurve> curves);
nlohmann::json curve_summary_json(const EvalCurve& curve);

}  // namespace dfr::eval
