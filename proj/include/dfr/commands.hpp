#pragma once

// The five pipeline commands behind the dfr executable. Each returns the
// paths it wrote; failures surface as dfr::Error.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dfr/experiment.hpp"

namespace dfr::cli {

// Output directory when none is given: $DFR_OUTPUT_DIR, else "out".
std::string default_output_dir();

struct SimulateArgs {
  std::string kind = "no_interaction";
  std::size_t n = 10000;
  std::uint64_t seed = 0;
  std::string out;  // data CSV; ground truth goes next to it as <stem>.truth.json
};

std::vector<std::string> cmd_simulate(const SimulateArgs& args);

// Settings source shared by train, rank, evaluate and compare: an optional
// config file plus per-key overrides.
struct ConfigSource {
  std::optional<std::string> path;
  exp::Overrides overrides;
};

struct TrainArgs {
  ConfigSource config;
  std::size_t fold = 0;
  std::string out;  // model JSON; the training report goes to <stem>.report.json
};

std::vector<std::string> cmd_train(const TrainArgs& args);

struct RankArgs {
  std::string method;
  std::optional<std::string> model;  // required unless the method needs none
  ConfigSource config;               // defaults to the config embedded in the model
  std::optional<std::size_t> fold;   // defaults to the model's fold, else 0
  std::string out;                   // ranking JSON
};

// With a lambda grid, dropout_fr also writes <stem>.lambda<i>.json per grid
// value and <stem>.lambda_report.json; `out` holds the selected lambda.
std::vector<std::string> cmd_rank(const RankArgs& args);

struct EvaluateArgs {
  std::string mode = "zero_out";
  std::string ranking;
  std::optional<std::string> model;  // zero_out
  ConfigSource config;               // retrain requires an explicit config
  std::optional<std::string> n_list;
  std::string out_dir;
};

// Writes curves.csv and summary.json under out_dir.
std::vector<std::string> cmd_evaluate(const EvaluateArgs& args);

struct CompareArgs {
  ConfigSource config;
  std::optional<std::string> out_dir;
};

std::vector<std::string> cmd_compare(const CompareArgs& args, std::string* table = nullptr);

}  // namespace dfr::cli
