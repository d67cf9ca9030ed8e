#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dfr/matrix.hpp"
#include "json.hpp"

namespace dfr::data {

enum class SimKind { no_interaction, interaction };

const char* to_string(SimKind kind);
SimKind parse_sim_kind(const std::string& name);

inline constexpr std::size_t kSimFeatures = 40;
inline constexpr std::size_t kSimInformative = 20;

// Simulated regression data with known feature importance.
struct SimDataset {
  Matrix x;                              // n x 40, iid N(0, 1)
  std::vector<double> y;
  std::vector<double> ground_truth_ranks;  // fractional, 1 = most important
  SimKind kind = SimKind::no_interaction;
  std::uint64_t seed = 0;

  std::size_t n() const noexcept { return x.rows(); }
};

// Keep probability of the Bernoulli gate on informative feature d (1-based).
double sim_keep_probability(std::size_t d);

// y = sum_{d<=20} x_d z_d with z_d ~ Bern(1 - 0.05 (d - 1)) drawn per sample.
SimDataset gen_no_interaction(std::size_t n, std::uint64_t seed);
// y = sum_{d odd <= 19} x_d x_{d+1} z_d with the same gate probabilities.
SimDataset gen_interaction(std::size_t n, std::uint64_t seed);
SimDataset generate(SimKind kind, std::size_t n, std::uint64_t seed);

std::vector<double> ground_truth_ranks(SimKind kind);

// Analytic Var(y) of each simulation.
double analytic_target_variance(SimKind kind);

// Sidecar {kind, seed, n, ranks}.
nlohmann::json ground_truth_json(const SimDataset& ds);

struct FoldPlan {
  std::size_t k = 5;
  double val_fraction = 0.10;
  std::uint64_t seed = 0;
};

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Shuffled k-fold split; each fold's validation rows are drawn from its
// training portion. Index lists are sorted ascending.
std::vector<Fold> kfold_split(std::size_t n, const FoldPlan& plan);

}  // namespace dfr::data
