#include "dfr/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "dfr/csv.hpp"
#include "dfr/errors.hpp"
#include "dfr/rng.hpp"

namespace dfr::eval {

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("pearson: length mismatch");
  if (a.empty()) throw DomainError("pearson: empty input");
  const double n = double(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double spearman_correlation(std::span<const double> a, std::span<const double> b) {
  const auto ra = fractional_ranks(a);
  const auto rb = fractional_ranks(b);
  return pearson(ra, rb);
}

SpearmanResult spearman(const FeatureRanking& predicted, std::span<const double> truth_ranks,
                        std::size_t top_k) {
  const std::size_t d = truth_ranks.size();
  if (top_k < 2) throw DomainError("spearman: top_k must be at least 2");
  if (top_k > d) throw DomainError("spearman: top_k exceeds the feature count");
  if (predicted.scores.size() != d) throw ShapeError("spearman: ranking and ground truth differ in length");
  for (double r : truth_ranks) {
    if (!std::isfinite(r) || r < 1.0 || r > double(d)) throw DomainError("spearman: malformed ground-truth rank");
  }

  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return truth_ranks[a] < truth_ranks[b]; });
  idx.resize(top_k);

  std::vector<double> pred_key(top_k), truth(top_k);
  for (std::size_t i = 0; i < top_k; ++i) {
    const double s = predicted.scores[idx[i]];
    pred_key[i] = predicted.higher_is_better ? -s : s;
    truth[i] = truth_ranks[idx[i]];
  }
  SpearmanResult r;
  r.coefficient = spearman_correlation(pred_key, truth);
  r.k = top_k;
  r.tie_note =
      "subset: the k features with the smallest ground-truth ranks (boundary ties to the lower index); "
      "both sides re-ranked within the subset with average ranks for ties";
  return r;
}

double metric_mse(const Matrix& pred, const Matrix& target) {
  require_same_shape(pred, target, "metric_mse");
  if (pred.empty()) throw DomainError("metric_mse: empty input");
  double s = 0.0;
  const auto p = pred.data();
  const auto t = target.data();
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return s / double(p.size());
}

double metric_accuracy(const Matrix& probs, const Matrix& labels) {
  require_same_shape(probs, labels, "metric_accuracy");
  if (probs.empty()) throw DomainError("metric_accuracy: empty input");
  std::size_t correct = 0;
  const auto p = probs.data();
  const auto l = labels.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double cls = p[i] >= 0.5 ? 1.0 : 0.0;
    if (cls == l[i]) ++correct;
  }
  return double(correct) / double(p.size());
}

const char* to_string(MetricKind m) { return m == MetricKind::mse ? "mse" : "accuracy"; }
const char* to_string(CurveMode m) { return m == CurveMode::zero_out ? "zero_out" : "retrain"; }

CurveMode parse_curve_mode(const std::string& name) {
  if (name == "zero_out" || name == "zero-out") return CurveMode::zero_out;
  if (name == "retrain") return CurveMode::retrain;
  throw ParseError("unknown evaluation mode '" + name + "' (expected zero_out or retrain)");
}

MetricKind metric_for(nn::Task task) {
  return task == nn::Task::regression ? MetricKind::mse : MetricKind::accuracy;
}

double test_metric(const nn::Model& model, const Matrix& x, const Matrix& y) {
  const Matrix pred = nn::predict(model, x);
  return model.task() == nn::Task::regression ? metric_mse(pred, y) : metric_accuracy(pred, y);
}

double CurvePoint::mean() const {
  if (fold_values.empty()) return 0.0;
  return std::accumulate(fold_values.begin(), fold_values.end(), 0.0) / double(fold_values.size());
}

double CurvePoint::sd() const {
  if (fold_values.size() < 2) return 0.0;
  const double m = mean();
  double ss = 0.0;
  for (double v : fold_values) ss += (v - m) * (v - m);
  return std::sqrt(ss / double(fold_values.size() - 1));
}

std::vector<std::size_t> parse_n_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ParseError("n_list: empty entry in '" + text + "'");
    item = item.substr(b, e - b + 1);
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || item.front() == '-') throw ParseError("n_list: '" + item + "' is not a count");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ParseError("n_list: no values");
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i] <= out[i - 1]) throw ParseError("n_list: values must be strictly increasing");
  }
  return out;
}

void validate_n_list(std::span<const std::size_t> n_list, std::size_t d) {
  if (n_list.empty()) throw DomainError("n_list is empty");
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    if (n_list[i] > d) {
      throw DomainError("n_list: N = " + std::to_string(n_list[i]) + " exceeds the feature count " +
                        std::to_string(d));
    }
    if (i > 0 && n_list[i] <= n_list[i - 1]) throw DomainError("n_list must be strictly increasing");
  }
}

std::vector<std::size_t> top_columns(const FeatureRanking& ranking, std::size_t n) {
  auto cols = ranking.top(n);
  std::sort(cols.begin(), cols.end());
  return cols;
}

EvalCurve zero_out_eval(const nn::Model& model, const FeatureRanking& ranking, const Matrix& x_test,
                        const Matrix& y_test, std::span<const std::size_t> n_list) {
  const std::size_t d = x_test.cols();
  if (ranking.size() != d) throw ShapeError("zero_out_eval: ranking covers a different feature count");
  validate_n_list(n_list, d);
  EvalCurve curve{ranking.method, CurveMode::zero_out, metric_for(model.task()), {}};
  for (std::size_t n : n_list) {
    double value = 0.0;
    if (n == d) {
      value = test_metric(model, x_test, y_test);
    } else {
      std::vector<bool> keep(d, false);
      for (std::size_t j : ranking.top(n)) keep[j] = true;
      Matrix xz = x_test;
      for (std::size_t i = 0; i < xz.rows(); ++i) {
        auto row = xz.row(i);
        for (std::size_t j = 0; j < d; ++j) {
          if (!keep[j]) row[j] = 0.0;
        }
      }
      value = test_metric(model, xz, y_test);
    }
    curve.points.push_back({n, {value}});
  }
  return curve;
}

EvalCurve retrain_eval(std::span<const FeatureRanking> rankings, std::span<const FoldData> folds,
                       const RetrainSetup& setup, std::span<const std::size_t> n_list, std::size_t jobs) {
  if (folds.empty()) throw DomainError("retrain_eval: no folds");
  if (rankings.size() != 1 && rankings.size() != folds.size()) {
    throw ShapeError("retrain_eval: need one ranking or one per fold");
  }
  setup.train.validate();
  const std::size_t d = folds.front().x_train.cols();
  for (const auto& r : rankings) {
    if (r.size() != d) throw ShapeError("retrain_eval: ranking covers a different feature count");
  }
  validate_n_list(n_list, d);
  if (n_list.front() == 0) throw DomainError("retrain_eval: cannot train on zero features");

  const std::size_t cells = folds.size() * n_list.size();
  std::vector<double> values(cells, 0.0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= cells) return;
      const std::size_t f = c / n_list.size();
      const std::size_t n = n_list[c % n_list.size()];
      try {
        const FoldData& fd = folds[f];
        const FeatureRanking& r = rankings.size() == 1 ? rankings[0] : rankings[f];
        const auto cols = top_columns(r, n);
        const std::uint64_t cell_seed = derive_seed(setup.seed, Stream::retrain, {f, n});
        nn::Model m = nn::make_mlp(n, setup.arch, setup.task, derive_seed(cell_seed, {0}));
        nn::TrainConfig tc = setup.train;
        tc.seed = derive_seed(cell_seed, {1});
        nn::train(m, fd.x_train.select_cols(cols), fd.y_train, fd.x_val.select_cols(cols), fd.y_val, tc);
        values[c] = test_metric(m, fd.x_test.select_cols(cols), fd.y_test);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = cells;
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, cells));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  EvalCurve curve{rankings[0].method, CurveMode::retrain, metric_for(setup.task), {}};
  for (std::size_t p = 0; p < n_list.size(); ++p) {
    CurvePoint pt{n_list[p], {}};
    for (std::size_t f = 0; f < folds.size(); ++f) pt.fold_values.push_back(values[f * n_list.size() + p]);
    curve.points.push_back(std::move(pt));
  }
  return curve;
}

EvalCurve merge_folds(std::span<const EvalCurve> per_fold) {
  if (per_fold.empty()) throw DomainError("merge_folds: nothing to merge");
  EvalCurve out = per_fold.front();
  for (std::size_t i = 1; i < per_fold.size(); ++i) {
    const EvalCurve& c = per_fold[i];
    if (c.method != out.method || c.mode != out.mode || c.metric != out.metric ||
        c.points.size() != out.points.size()) {
      throw ShapeError("merge_folds: curves do not describe the same experiment");
    }
    for (std::size_t p = 0; p < c.points.size(); ++p) {
      if (c.points[p].n_features != out.points[p].n_features) throw ShapeError("merge_folds: point mismatch");
      out.points[p].fold_values.insert(out.points[p].fold_values.end(), c.points[p].fold_values.begin(),
                                       c.points[p].fold_values.end());
    }
  }
  return out;
}

std::string curves_to_csv(std::span<const EvalCurve> curves) {
  data::CsvTable t;
  t.header = {"method", "mode", "n_features", "fold", "metric"};
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      for (std::size_t f = 0; f < p.fold_values.size(); ++f) {
        t.rows.push_back({c.method, to_string(c.mode), std::to_string(p.n_features), std::to_string(f),
                          data::format_double(p.fold_values[f])});
      }
    }
  }
  return data::format_csv(t);
}

nlohmann::json curve_summary_json(const EvalCurve& curve) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : curve.points) {
    pts.push_back({{"n_features", p.n_features}, {"mean", p.mean()}, {"sd", p.sd()}, {"folds", p.fold_values}});
  }
  return {{"method", curve.method},
          {"mode", to_string(curve.mode)},
          {"metric", to_string(curve.metric)},
          {"points", std::move(pts)}};
}

}  // namespace dfr::eval
