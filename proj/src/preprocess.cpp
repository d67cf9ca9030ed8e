#include "dfr/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "dfr/errors.hpp"

namespace dfr::data {

const char* to_string(TargetHandling t) {
  return t == TargetHandling::none ? "none" : "normalize";
}

TargetHandling parse_target_handling(const std::string& name) {
  if (name == "none") return TargetHandling::none;
  if (name == "normalize") return TargetHandling::normalize;
  throw ParseError("unknown target handling '" + name + "' (expected none or normalize)");
}

void PreprocessSpec::validate() const {
  if (!(iqr_multiplier > 0.0)) throw ConfigError("preprocess: iqr_multiplier must be positive");
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DomainError("quantile of an empty sample");
  const double h = (double(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - double(lo)) * (sorted[hi] - sorted[lo]);
}

ClipBounds iqr_bounds(std::span<const double> column, double multiplier) {
  if (column.size() < 4) throw DomainError("iqr_clip needs at least 4 values");
  if (!(multiplier > 0.0)) throw DomainError("iqr multiplier must be positive");
  std::vector<double> sorted(column.begin(), column.end());
  std::sort(sorted.begin(), sorted.end());
  const double q1 = quantile_sorted(sorted, 0.25);
  const double q3 = quantile_sorted(sorted, 0.75);
  const double iqr = q3 - q1;
  return {q1 - multiplier * iqr, q3 + multiplier * iqr};
}

std::vector<double> apply_clip(std::span<const double> column, ClipBounds b) {
  std::vector<double> out(column.begin(), column.end());
  for (double& v : out) v = std::clamp(v, b.lo, b.hi);
  return out;
}

std::vector<double> iqr_clip(std::span<const double> column, double multiplier) {
  return apply_clip(column, iqr_bounds(column, multiplier));
}

ColumnStats column_stats(std::span<const double> column) {
  if (column.empty()) throw DomainError("statistics of an empty column");
  double mean = 0.0;
  for (double v : column) mean += v;
  mean /= double(column.size());
  double ss = 0.0;
  for (double v : column) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / double(column.size()))};
}

std::vector<double> apply_standardize(std::span<const double> column, ColumnStats s) {
  std::vector<double> out(column.size(), 0.0);
  if (s.sd > 0.0) {
    for (std::size_t i = 0; i < column.size(); ++i) out[i] = (column[i] - s.mean) / s.sd;
  }
  return out;
}

StandardizeResult standardize(const Matrix& train, const Matrix& apply) {
  if (train.cols() != apply.cols()) throw ShapeError("standardize: column counts differ");
  StandardizeResult r{Matrix(apply.rows(), apply.cols()), {}};
  for (std::size_t c = 0; c < train.cols(); ++c) {
    const auto tc = train.column(c);
    const ColumnStats s = column_stats(tc);
    r.stats.push_back(s);
    r.values.set_column(c, apply_standardize(apply.column(c), s));
  }
  return r;
}

CategoryMap fit_one_hot(std::span<const std::string> column) {
  if (column.empty()) throw DomainError("one_hot: empty column");
  CategoryMap m{{column.begin(), column.end()}};
  std::sort(m.categories.begin(), m.categories.end());
  m.categories.erase(std::unique(m.categories.begin(), m.categories.end()), m.categories.end());
  return m;
}

Matrix apply_one_hot(std::span<const std::string> column, const CategoryMap& map) {
  Matrix out(column.size(), map.categories.size(), 0.0);
  for (std::size_t i = 0; i < column.size(); ++i) {
    const auto it = std::lower_bound(map.categories.begin(), map.categories.end(), column[i]);
    if (it != map.categories.end() && *it == column[i]) {
      out(i, static_cast<std::size_t>(it - map.categories.begin())) = 1.0;
    }
  }
  return out;
}

namespace {

template <typename T>
std::vector<T> gather(const std::vector<T>& v, std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= v.size()) throw ShapeError("row index " + std::to_string(r) + " out of range");
    out.push_back(v[r]);
  }
  return out;
}

}  // namespace

void Preprocessor::check_table(const RawTable& table) const {
  if (table.feature_names.size() != columns_.size()) {
    throw ShapeError("preprocessor: table has " + std::to_string(table.feature_names.size()) +
                     " feature columns, fitted on " + std::to_string(columns_.size()));
  }
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    if (table.feature_names[c] != columns_[c].name || table.categorical[c] != columns_[c].categorical) {
      throw ShapeError("preprocessor: column '" + table.feature_names[c] + "' does not match fitted schema");
    }
  }
}

Preprocessor Preprocessor::fit(const RawTable& table, std::span<const std::size_t> train_rows,
                               const PreprocessSpec& spec) {
  spec.validate();
  if (train_rows.empty()) throw DomainError("preprocessor: no training rows");
  Preprocessor p;
  p.spec_ = spec;
  for (std::size_t c = 0; c < table.feature_names.size(); ++c) {
    Column col;
    col.name = table.feature_names[c];
    col.categorical = table.categorical[c];
    if (col.categorical) {
      col.categories = fit_one_hot(gather(table.levels[c], train_rows));
      for (const auto& cat : col.categories.categories) p.output_names_.push_back(col.name + "=" + cat);
    } else {
      std::vector<double> v = gather(table.numeric[c], train_rows);
      if (spec.clip) {
        col.clip = iqr_bounds(v, spec.iqr_multiplier);
        col.clipped = true;
        v = apply_clip(v, col.clip);
      }
      col.stats = spec.standardize ? column_stats(v) : ColumnStats{0.0, 1.0};
      p.output_names_.push_back(col.name);
    }
    p.columns_.push_back(std::move(col));
  }
  if (spec.target == TargetHandling::normalize && table.task == nn::Task::regression) {
    std::vector<double> y = gather(table.target, train_rows);
    if (spec.clip) {
      p.target_clip_ = iqr_bounds(y, spec.iqr_multiplier);
      y = apply_clip(y, p.target_clip_);
    }
    p.target_stats_ = column_stats(y);
    p.target_transformed_ = true;
  }
  return p;
}

Matrix Preprocessor::transform_features(const RawTable& table, std::span<const std::size_t> rows) const {
  check_table(table);
  Matrix out(rows.size(), output_dim());
  std::size_t oc = 0;
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    const Column& col = columns_[c];
    if (col.categorical) {
      const Matrix oh = apply_one_hot(gather(table.levels[c], rows), col.categories);
      for (std::size_t k = 0; k < oh.cols(); ++k) out.set_column(oc++, oh.column(k));
    } else {
      std::vector<double> v = gather(table.numeric[c], rows);
      if (col.clipped) v = apply_clip(v, col.clip);
      out.set_column(oc++, apply_standardize(v, col.stats));
    }
  }
  return out;
}

Matrix Preprocessor::transform_target(const RawTable& table, std::span<const std::size_t> rows) const {
  std::vector<double> y = gather(table.target, rows);
  if (target_transformed_) {
    if (spec_.clip) y = apply_clip(y, target_clip_);
    y = apply_standardize(y, target_stats_);
  }
  return Matrix::column_vector(y);
}

nlohmann::json Preprocessor::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const Column& c : columns_) {
    nlohmann::json j{{"name", c.name}, {"categorical", c.categorical}};
    if (c.categorical) {
      j["categories"] = c.categories.categories;
    } else {
      j["clipped"] = c.clipped;
      j["clip"] = {c.clip.lo, c.clip.hi};
      j["mean"] = c.stats.mean;
      j["sd"] = c.stats.sd;
    }
    cols.push_back(std::move(j));
  }
  return {{"iqr_multiplier", spec_.iqr_multiplier},
          {"clip", spec_.clip},
          {"standardize", spec_.standardize},
          {"target", to_string(spec_.target)},
          {"columns", std::move(cols)},
          {"target_transformed", target_transformed_},
          {"target_clip", {target_clip_.lo, target_clip_.hi}},
          {"target_mean", target_stats_.mean},
          {"target_sd", target_stats_.sd}};
}

Preprocessor Preprocessor::from_json(const nlohmann::json& j) {
  try {
    Preprocessor p;
    p.spec_.iqr_multiplier = j.at("iqr_multiplier").get<double>();
    p.spec_.clip = j.at("clip").get<bool>();
    p.spec_.standardize = j.at("standardize").get<bool>();
    p.spec_.target = parse_target_handling(j.at("target").get<std::string>());
    for (const auto& cj : j.at("columns")) {
      Column c;
      c.name = cj.at("name").get<std::string>();
      c.categorical = cj.at("categorical").get<bool>();
      if (c.categorical) {
        c.categories.categories = cj.at("categories").get<std::vector<std::string>>();
        for (const auto& cat : c.categories.categories) p.output_names_.push_back(c.name + "=" + cat);
      } else {
        c.clipped = cj.at("clipped").get<bool>();
        c.clip = {cj.at("clip").at(0).get<double>(), cj.at("clip").at(1).get<double>()};
        c.stats = {cj.at("mean").get<double>(), cj.at("sd").get<double>()};
        p.output_names_.push_back(c.name);
      }
      p.columns_.push_back(std::move(c));
    }
    p.target_transformed_ = j.at("target_transformed").get<bool>();
    p.target_clip_ = {j.at("target_clip").at(0).get<double>(), j.at("target_clip").at(1).get<double>()};
    p.target_stats_ = {j.at("target_mean").get<double>(), j.at("target_sd").get<double>()};
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("preprocessor json: ") + e.what());
  }
}

}  // namespace dfr::data
