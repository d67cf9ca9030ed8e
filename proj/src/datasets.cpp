#include "dfr/datasets.hpp"

#include <algorithm>
#include <cmath>

#include "dfr/errors.hpp"
#include "dfr/rng.hpp"

namespace dfr::data {

const char* to_string(SimKind kind) {
  return kind == SimKind::no_interaction ? "no_interaction" : "interaction";
}

SimKind parse_sim_kind(const std::string& name) {
  if (name == "no_interaction") return SimKind::no_interaction;
  if (name == "interaction") return SimKind::interaction;
  throw ParseError("unknown simulation kind '" + name + "' (expected no_interaction or interaction)");
}

double sim_keep_probability(std::size_t d) {
  if (d < 1 || d > kSimInformative) throw DomainError("sim_keep_probability: d must be in 1..20");
  return 1.0 - 0.05 * double(d - 1);
}

namespace {

SimDataset generate_impl(SimKind kind, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DomainError("simulation needs n >= 1");
  SimDataset ds;
  ds.kind = kind;
  ds.seed = seed;
  ds.x = Matrix(n, kSimFeatures);
  ds.y.assign(n, 0.0);
  ds.ground_truth_ranks = ground_truth_ranks(kind);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = ds.x.row(i);
    for (double& v : row) v = normal(rng);
    double y = 0.0;
    if (kind == SimKind::no_interaction) {
      for (std::size_t d = 1; d <= kSimInformative; ++d) {
        const bool keep = unit(rng) < sim_keep_probability(d);
        if (keep) y += row[d - 1];
      }
    } else {
      for (std::size_t d = 1; d < kSimInformative; d += 2) {
        const bool keep = unit(rng) < sim_keep_probability(d);
        if (keep) y += row[d - 1] * row[d];
      }
    }
    ds.y[i] = y;
  }
  return ds;
}

}  // namespace

SimDataset gen_no_interaction(std::size_t n, std::uint64_t seed) {
  return generate_impl(SimKind::no_interaction, n, seed);
}

SimDataset gen_interaction(std::size_t n, std::uint64_t seed) {
  return generate_impl(SimKind::interaction, n, seed);
}

SimDataset generate(SimKind kind, std::size_t n, std::uint64_t seed) {
  return generate_impl(kind, n, seed);
}

std::vector<double> ground_truth_ranks(SimKind kind) {
  std::vector<double> ranks(kSimFeatures);
  // Noise features 21..40 tie for ranks 21..40, average 30.5.
  const double noise_rank = (double(kSimInformative + 1) + double(kSimFeatures)) / 2.0;
  for (std::size_t j = 0; j < kSimFeatures; ++j) {
    const std::size_t d = j + 1;
    if (d > kSimInformative) {
      ranks[j] = noise_rank;
    } else if (kind == SimKind::no_interaction) {
      ranks[j] = double(d);
    } else {
      const std::size_t first = d % 2 == 1 ? d : d - 1;
      ranks[j] = double(first) + 0.5;
    }
  }
  return ranks;
}

double analytic_target_variance(SimKind kind) {
  double v = 0.0;
  const std::size_t step = kind == SimKind::no_interaction ? 1 : 2;
  for (std::size_t d = 1; d <= kSimInformative; d += step) v += sim_keep_probability(d);
  return v;
}

nlohmann::json ground_truth_json(const SimDataset& ds) {
  return {{"format_version", 1},
          {"kind", to_string(ds.kind)},
          {"seed", ds.seed},
          {"n", ds.n()},
          {"ranks", ds.ground_truth_ranks}};
}

std::vector<Fold> kfold_split(std::size_t n, const FoldPlan& plan) {
  if (plan.k < 2) throw ConfigError("kfold_split: k must be at least 2");
  if (n < plan.k) throw DomainError("kfold_split: n (" + std::to_string(n) + ") < k (" +
                                    std::to_string(plan.k) + ")");
  if (!(plan.val_fraction >= 0.0 && plan.val_fraction < 1.0)) {
    throw ConfigError("kfold_split: val_fraction must be in [0, 1)");
  }
  Rng rng(derive_seed(plan.seed, Stream::split));
  const auto perm = random_permutation(n, rng);
  std::vector<Fold> folds(plan.k);
  std::vector<std::size_t> fold_of(n);
  for (std::size_t i = 0; i < n; ++i) fold_of[perm[i]] = i * plan.k / n;
  for (std::size_t f = 0; f < plan.k; ++f) {
    std::vector<std::size_t> training;
    for (std::size_t i = 0; i < n; ++i) (fold_of[i] == f ? folds[f].test : training).push_back(i);
    Rng val_rng(derive_seed(plan.seed, Stream::split, {f}));
    const auto order = random_permutation(training.size(), val_rng);
    const auto n_val = static_cast<std::size_t>(std::llround(plan.val_fraction * double(training.size())));
    for (std::size_t i = 0; i < training.size(); ++i) {
      (i < n_val ? folds[f].val : folds[f].train).push_back(training[order[i]]);
    }
    std::sort(folds[f].val.begin(), folds[f].val.end());
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

}  // namespace dfr::data
