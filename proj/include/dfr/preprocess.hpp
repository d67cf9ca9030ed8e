#pragma once

// Training-split preprocessing: IQR outlier clipping, standardization and
// one-hot encoding. Every statistic is fitted on training rows only and then
// applied unchanged to validation and test rows.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dfr/csv.hpp"
#include "dfr/matrix.hpp"
#include "json.hpp"

namespace dfr::data {

enum class TargetHandling { none, normalize };

const char* to_string(TargetHandling t);
TargetHandling parse_target_handling(const std::string& name);

struct PreprocessSpec {
  double iqr_multiplier = 1.5;
  bool clip = true;
  bool standardize = true;
  TargetHandling target = TargetHandling::none;

  void validate() const;
};

// Linear-interpolation quantile (type 7) of an ascending-sorted sample.
double quantile_sorted(std::span<const double> sorted, double q);

struct ClipBounds {
  double lo = 0.0;
  double hi = 0.0;
};

// [Q1 - m IQR, Q3 + m IQR]. Requires at least 4 values.
ClipBounds iqr_bounds(std::span<const double> column, double multiplier);
std::vector<double> apply_clip(std::span<const double> column, ClipBounds bounds);
std::vector<double> iqr_clip(std::span<const double> column, double multiplier);

struct ColumnStats {
  double mean = 0.0;
  double sd = 1.0;  // population sd
};

ColumnStats column_stats(std::span<const double> column);
// (x - mean) / sd; a zero sd maps every value to 0.
std::vector<double> apply_standardize(std::span<const double> column, ColumnStats stats);

struct StandardizeResult {
  Matrix values;
  std::vector<ColumnStats> stats;
};

// Column statistics from `train`, applied to `apply`.
StandardizeResult standardize(const Matrix& train, const Matrix& apply);

// Sorted distinct categories observed in training.
struct CategoryMap {
  std::vector<std::string> categories;
};

CategoryMap fit_one_hot(std::span<const std::string> column);
// One column per category; unseen categories give an all-zero row.
Matrix apply_one_hot(std::span<const std::string> column, const CategoryMap& map);

// Fitted pipeline for a RawTable. Numeric columns: clip then standardize.
// Categorical columns: one-hot, not standardized. Regression targets may be
// clipped and standardized with training statistics.
class Preprocessor {
 public:
  Preprocessor() = default;

  static Preprocessor fit(const RawTable& table, std::span<const std::size_t> train_rows,
                          const PreprocessSpec& spec);

  Matrix transform_features(const RawTable& table, std::span<const std::size_t> rows) const;
  Matrix transform_target(const RawTable& table, std::span<const std::size_t> rows) const;

  // Names of the output columns; one-hot columns are "<name>=<category>".
  const std::vector<std::string>& output_names() const noexcept { return output_names_; }
  std::size_t output_dim() const noexcept { return output_names_.size(); }
  const PreprocessSpec& spec() const noexcept { return spec_; }

  nlohmann::json to_json() const;
  static Preprocessor from_json(const nlohmann::json& j);

 private:
  struct Column {
    std::string name;
    bool categorical = false;
    ClipBounds clip;
    bool clipped = false;
    ColumnStats stats;
    CategoryMap categories;
  };

  void check_table(const RawTable& table) const;

  PreprocessSpec spec_;
  std::vector<Column> columns_;
  std::vector<std::string> output_names_;
  ClipBounds target_clip_;
  ColumnStats target_stats_;
  bool target_transformed_ = false;
};

}  // namespace dfr::data
