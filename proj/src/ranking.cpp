#include "dfr/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dfr/errors.hpp"

namespace dfr {

namespace {

bool before(double a, double b, bool higher_is_better) {
  return higher_is_better ? a > b : a < b;
}

}  // namespace

FeatureRanking FeatureRanking::from_scores(std::string method, std::vector<double> scores,
                                           bool higher_is_better, nlohmann::json config) {
  for (double s : scores) {
    if (!std::isfinite(s)) throw DomainError("ranking scores must be finite");
  }
  FeatureRanking r;
  r.method = std::move(method);
  r.order.resize(scores.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
    return before(scores[a], scores[b], higher_is_better);
  });
  r.scores = std::move(scores);
  r.higher_is_better = higher_is_better;
  r.config = std::move(config);
  return r;
}

std::vector<std::size_t> FeatureRanking::position_of() const {
  std::vector<std::size_t> pos(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
  return pos;
}

std::vector<std::size_t> FeatureRanking::top(std::size_t n) const {
  if (n > order.size()) throw DomainError("top: n exceeds feature count");
  return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n)};
}

void FeatureRanking::validate() const {
  const std::size_t d = order.size();
  if (scores.size() != d) throw DomainError("ranking: order and scores differ in length");
  std::vector<bool> seen(d, false);
  for (std::size_t j : order) {
    if (j >= d || seen[j]) throw DomainError("ranking: order is not a permutation");
    seen[j] = true;
  }
  for (std::size_t i = 1; i < d; ++i) {
    const double a = scores[order[i - 1]];
    const double b = scores[order[i]];
    if (before(b, a, higher_is_better) || (a == b && order[i - 1] > order[i])) {
      throw DomainError("ranking: order inconsistent with scores at position " + std::to_string(i));
    }
  }
}

nlohmann::json ranking_to_json(const FeatureRanking& r, const std::vector<std::string>& names) {
  std::vector<std::string> feature_names = names;
  if (feature_names.empty()) {
    for (std::size_t j = 0; j < r.size(); ++j) feature_names.push_back("x" + std::to_string(j + 1));
  }
  if (feature_names.size() != r.size()) throw DomainError("ranking: feature name count mismatch");
  return nlohmann::json{{"format_version", kRankingFormatVersion},
                        {"method", r.method},
                        {"feature_names", feature_names},
                        {"order", r.order},
                        {"scores", r.scores},
                        {"higher_is_better", r.higher_is_better},
                        {"config", r.config}};
}

FeatureRanking ranking_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kRankingFormatVersion) {
      throw ParseError("ranking file: unsupported format_version");
    }
    FeatureRanking r;
    r.method = j.at("method").get<std::string>();
    r.order = j.at("order").get<std::vector<std::size_t>>();
    r.scores = j.at("scores").get<std::vector<double>>();
    r.higher_is_better = j.value("higher_is_better", true);
    r.config = j.value("config", nlohmann::json::object());
    r.validate();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ranking file: ") + e.what());
  }
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double avg = (double(i) + double(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace dfr
