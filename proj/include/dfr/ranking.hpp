#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace dfr {

inline constexpr int kRankingFormatVersion = 1;

// Ordered feature indices (best first) plus the per-feature scores that
// produced the order.
struct FeatureRanking {
  std::string method;
  std::vector<std::size_t> order;
  std::vector<double> scores;
  bool higher_is_better = true;
  nlohmann::json config = nlohmann::json::object();

  // Sorts features by score in the declared direction, ties by lower index.
  static FeatureRanking from_scores(std::string method, std::vector<double> scores,
                                    bool higher_is_better,
                                    nlohmann::json config = nlohmann::json::object());

  std::size_t size() const noexcept { return order.size(); }
  // position_of()[j] is feature j's 0-based position in `order`.
  std::vector<std::size_t> position_of() const;
  // The first n features of `order`.
  std::vector<std::size_t> top(std::size_t n) const;

  // Throws DomainError if `order` is not a permutation consistent with
  // `scores` under the direction and tie rule.
  void validate() const;
};

nlohmann::json ranking_to_json(const FeatureRanking& ranking,
                               const std::vector<std::string>& feature_names = {});
FeatureRanking ranking_from_json(const nlohmann::json& j);

// Average (fractional) ranks, 1-based, ascending by value.
std::vector<double> fractional_ranks(std::span<const double> values);

}  // namespace dfr
