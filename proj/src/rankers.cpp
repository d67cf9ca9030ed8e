#include "dfr/rankers.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>

#include "dfr/errors.hpp"
#include "dfr/rng.hpp"

namespace dfr::rank {
namespace {

double column_mean(const Matrix& x, std::size_t j) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) s += x(i, j);
  return s / double(x.rows());
}

void check_model_data(const nn::Model& model, const Matrix& x, const Matrix& y, const char* who) {
  if (x.cols() != model.input_dim()) {
    throw ShapeError(std::string(who) + ": feature count does not match model input width");
  }
  if (x.rows() == 0 || y.rows() != x.rows() || y.cols() != 1) {
    throw ShapeError(std::string(who) + ": empty or mismatched data");
  }
}

Matrix scale_columns(const Matrix& x, std::span<const double> w) {
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < w.size(); ++j) r[j] *= w[j];
  }
  return out;
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

const char* to_string(RankerKind kind) {
  switch (kind) {
    case RankerKind::dropout_fr: return "dropout_fr";
    case RankerKind::mean: return "mean";
    case RankerKind::shuffle: return "shuffle";
    case RankerKind::marginal: return "marginal";
    case RankerKind::random: return "random";
    case RankerKind::deep_fs: return "deep_fs";
  }
  return "unknown";
}

RankerKind parse_ranker_kind(const std::string& name) {
  for (RankerKind k : all_ranker_kinds()) {
    if (name == to_string(k)) return k;
  }
  throw ParseError("unknown ranking method '" + name + "'");
}

const std::vector<RankerKind>& all_ranker_kinds() {
  static const std::vector<RankerKind> kinds{RankerKind::dropout_fr, RankerKind::mean,
                                             RankerKind::shuffle,    RankerKind::marginal,
                                             RankerKind::random,     RankerKind::deep_fs};
  return kinds;
}

bool needs_model(RankerKind kind) {
  return kind != RankerKind::marginal && kind != RankerKind::random;
}

FeatureRanking rank_mean(const nn::Model& model, const Matrix& x, const Matrix& y) {
  check_model_data(model, x, y, "rank_mean");
  const double baseline = nn::evaluate_loss(model, x, y);
  std::vector<double> scores(x.cols());
  Matrix work = x;
  for (std::size_t j = 0; j < x.cols(); ++j) {
    const double mu = column_mean(x, j);
    for (std::size_t i = 0; i < x.rows(); ++i) work(i, j) = mu;
    scores[j] = nn::evaluate_loss(model, work, y) - baseline;
    for (std::size_t i = 0; i < x.rows(); ++i) work(i, j) = x(i, j);
  }
  return FeatureRanking::from_scores("mean", std::move(scores), true,
                                     {{"baseline_loss", baseline}});
}

FeatureRanking rank_shuffle(const nn::Model& model, const Matrix& x, const Matrix& y,
                            std::size_t repeats, std::uint64_t seed) {
  check_model_data(model, x, y, "rank_shuffle");
  if (repeats == 0) throw ConfigError("rank_shuffle: repeats must be at least 1");
  const double baseline = nn::evaluate_loss(model, x, y);
  std::vector<double> scores(x.cols(), 0.0);
  Matrix work = x;
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double total = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
      Rng rng(derive_seed(seed, Stream::shuffle_ranker, {r, j}));
      const auto perm = random_permutation(x.rows(), rng);
      for (std::size_t i = 0; i < x.rows(); ++i) work(i, j) = x(perm[i], j);
      total += nn::evaluate_loss(model, work, y) - baseline;
    }
    for (std::size_t i = 0; i < x.rows(); ++i) work(i, j) = x(i, j);
    scores[j] = total / double(repeats);
  }
  return FeatureRanking::from_scores("shuffle", std::move(scores), true,
                                     {{"repeats", repeats}, {"seed", seed}, {"baseline_loss", baseline}});
}

FeatureRanking rank_marginal(const Matrix& x, std::span<const double> y, nn::Task task) {
  if (x.rows() != y.size() || x.rows() < 2) throw ShapeError("rank_marginal: bad data shape");
  const std::size_t n = x.rows();
  std::vector<double> scores(x.cols());

  if (task == nn::Task::regression) {
    double my = 0.0;
    for (double v : y) my += v;
    my /= double(n);
    double syy = 0.0;
    for (double v : y) syy += (v - my) * (v - my);
    if (syy == 0.0) throw DomainError("rank_marginal: target has zero variance");
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double mx = column_mean(x, j);
      double sxx = 0.0, sxy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double dx = x(i, j) - mx;
        sxx += dx * dx;
        sxy += dx * (y[i] - my);
      }
      scores[j] = sxx == 0.0 ? 0.0 : std::min(1.0, std::abs(sxy) / std::sqrt(sxx * syy));
    }
    return FeatureRanking::from_scores("marginal", std::move(scores), true,
                                       {{"statistic", "abs_pearson"}});
  }

  std::size_t n1 = 0;
  for (double v : y) {
    if (v != 0.0 && v != 1.0) throw DomainError("rank_marginal: labels must be 0 or 1");
    if (v == 1.0) ++n1;
  }
  const std::size_t n0 = n - n1;
  if (n0 < 2 || n1 < 2) throw DomainError("rank_marginal: each class needs at least 2 samples");
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double s0 = 0.0, s1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) (y[i] == 1.0 ? s1 : s0) += x(i, j);
    const double m0 = s0 / double(n0), m1 = s1 / double(n1);
    double v0 = 0.0, v1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x(i, j);
      if (y[i] == 1.0) v1 += (v - m1) * (v - m1);
      else v0 += (v - m0) * (v - m0);
    }
    v0 /= double(n0 - 1);
    v1 /= double(n1 - 1);
    const double a = v0 / double(n0), b = v1 / double(n1);
    if (a + b == 0.0) {
      scores[j] = 1.0;
      continue;
    }
    const double t = (m1 - m0) / std::sqrt(a + b);
    // Welch-Satterthwaite degrees of freedom.
    double df = (a + b) * (a + b);
    const double den = (a * a) / double(n0 - 1) + (b * b) / double(n1 - 1);
    df = den > 0.0 ? df / den : double(n - 2);
    boost::math::students_t dist(df);
    scores[j] = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
  }
  return FeatureRanking::from_scores("marginal", std::move(scores), false,
                                     {{"statistic", "welch_t_pvalue"}});
}

FeatureRanking rank_random(std::size_t d, std::uint64_t seed) {
  if (d == 0) throw DomainError("rank_random: d must be at least 1");
  Rng rng(derive_seed(seed, Stream::random_ranker));
  const auto perm = random_permutation(d, rng);
  std::vector<double> scores(d);
  for (std::size_t pos = 0; pos < d; ++pos) scores[perm[pos]] = double(d - pos);
  return FeatureRanking::from_scores("random", std::move(scores), true, {{"seed", seed}});
}

nlohmann::json deep_fs_config_to_json(const DeepFsConfig& c) {
  return {{"l1_lambda", c.l1_lambda}, {"epochs", c.epochs},
          {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"seed", c.seed}, {"freeze_model", c.freeze_model}};
}

DeepFsResult fit_deep_fs(const nn::Model& model, const Matrix& x, const Matrix& y,
                         const DeepFsConfig& config) {
  check_model_data(model, x, y, "rank_deep_fs");
  if (!(config.l1_lambda >= 0.0)) throw ConfigError("deep_fs: l1_lambda must be non-negative");
  if (config.batch_size == 0 || !(config.learning_rate > 0.0)) {
    throw ConfigError("deep_fs: batch_size and learning_rate must be positive");
  }
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  DeepFsResult result;
  result.weights.assign(d, 1.0);
  std::vector<std::span<double>> w_block{result.weights};
  nn::AdamState adam = nn::AdamState::for_blocks(w_block);

  std::optional<nn::Model> tuned;
  nn::AdamState model_adam;
  Rng model_rng(derive_seed(config.seed, Stream::deep_fs, {2}));
  if (!config.freeze_model) {
    tuned = model;
    auto p = tuned->parameters();
    model_adam = nn::AdamState::for_blocks(p);
  }

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, Stream::deep_fs, {0, epoch}));
    const auto order = random_permutation(n, shuffle_rng);
    for (std::size_t start = 0, batch = 0; start < n; start += config.batch_size, ++batch) {
      std::size_t end = std::min(n, start + config.batch_size);
      if (n - end == 1) end = n;
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix xb = x.select_rows(idx);
      const Matrix yb = y.select_rows(idx);
      const Matrix xs = scale_columns(xb, result.weights);

      Matrix gx;
      double value = 0.0;
      if (config.freeze_model) {
        const auto fwd = nn::forward(model, xs);
        const nn::LossResult loss = nn::task_loss(model.task(), fwd.output, yb);
        value = loss.value;
        gx = nn::input_gradient(model, fwd.cache, loss.grad);
      } else {
        auto fwd = nn::forward(*tuned, xs, nn::Mode::train, model_rng);
        const nn::LossResult loss = nn::task_loss(tuned->task(), fwd.output, yb);
        value = loss.value;
        nn::Gradients g = nn::backward(*tuned, fwd.cache, loss.grad);
        gx = std::move(g.input);
        auto params = tuned->parameters();
        nn::adam_step(params, g.params, model_adam, config.learning_rate, 0.0);
      }
      if (!std::isfinite(value)) {
        throw NumericError("deep_fs: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch));
      }
      std::vector<std::vector<double>> grad(1, std::vector<double>(d, 0.0));
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto g = gx.row(i);
        const auto xr = xb.row(i);
        for (std::size_t j = 0; j < d; ++j) grad[0][j] += g[j] * xr[j];
      }
      for (std::size_t j = 0; j < d; ++j) grad[0][j] += config.l1_lambda * sign(result.weights[j]);
      nn::adam_step(w_block, grad, adam, config.learning_rate, 0.0);
      if (end == n) break;
    }
  }
  result.tuned_model = std::move(tuned);
  return result;
}

FeatureRanking rank_deep_fs(const nn::Model& model, const Matrix& x, const Matrix& y,
                            const DeepFsConfig& config) {
  const DeepFsResult fit = fit_deep_fs(model, x, y, config);
  std::vector<double> scores(fit.weights.size());
  std::transform(fit.weights.begin(), fit.weights.end(), scores.begin(),
                 [](double w) { return std::abs(w); });
  auto cfg = deep_fs_config_to_json(config);
  cfg["weights"] = fit.weights;
  return FeatureRanking::from_scores("deep_fs", std::move(scores), true, std::move(cfg));
}

double deep_fs_loss(const nn::Model& model, const Matrix& x, const Matrix& y,
                    std::span<const double> weights) {
  if (weights.size() != x.cols()) throw ShapeError("deep_fs_loss: weight count != feature count");
  return nn::evaluate_loss(model, scale_columns(x, weights), y);
}

FeatureRanking rank_dropout_fr(const nn::Model& model, const Matrix& x, const Matrix& y,
                               const fr::FRConfig& config) {
  const fr::FitResult fit = fr::fit_dropout_rates(model, x, y, config);
  auto cfg = fr::fr_config_to_json(config);
  if (!fit.warnings.empty()) cfg["warnings"] = fit.warnings;
  return fr::rank_from_rates(fit.keep_probs, std::move(cfg));
}

}  // namespace dfr::rank
