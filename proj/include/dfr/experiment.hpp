#pragma once

// Experiment configuration and the multi-fold comparison harness.
//
// A config is a flat set of "section.key" settings, read from an INI-style
// file and overridable one key at a time. Every artifact embeds the full
// settings map, so it can be regenerated from the artifact alone.
//
// Seeds. The master seed (run.seed) feeds every random component through
// derive_seed(master, stream, {fold, ...}); simulated data uses data.seed.
//   split              fold assignment
//   model_init {f}     initial weights of fold f's model
//   train {f}          mini-batch order and dropout masks
//   dropout_fr {f}     concrete noise and batch order of the rate fit
//   shuffle_ranker {f}, random_ranker {f}, deep_fs {f}
//   retrain {f, N}     retrain cell (fold f, N features)
//   masked_validation {f}   noise for lambda-grid validation, shared by all lambdas

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dfr/concrete_dropout.hpp"
#include "dfr/csv.hpp"
#include "dfr/datasets.hpp"
#include "dfr/eval.hpp"
#include "dfr/nn.hpp"
#include "dfr/preprocess.hpp"
#include "dfr/rankers.hpp"
#include "json.hpp"

namespace dfr::exp {

inline constexpr int kArtifactFormatVersion = 1;

enum class SourceKind { simulation, csv };

struct ExperimentConfig {
  SourceKind source = SourceKind::simulation;
  data::SimKind sim_kind = data::SimKind::no_interaction;
  std::size_t sim_n = 10000;
  std::uint64_t data_seed = 0;
  std::string csv_path;
  data::CsvSchema schema{"y", {}, nn::Task::regression};

  data::PreprocessSpec preprocess;
  nn::ArchitectureSpec arch;
  nn::TrainConfig train;
  fr::FRConfig fr;
  std::vector<double> lambda_grid;  // empty: fr.lambda only

  std::vector<rank::RankerKind> rankers = rank::all_ranker_kinds();
  std::size_t shuffle_repeats = 1;
  rank::DeepFsConfig deep_fs;
  std::vector<double> deep_fs_l1_grid{1e-3, 1e-2, 1e-1};

  std::vector<std::size_t> top_k{40, 20, 5};
  std::vector<std::size_t> n_list{1, 2, 5, 10, 20, 40};
  std::vector<eval::CurveMode> modes{eval::CurveMode::zero_out};

  data::FoldPlan folds;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string output_dir = "out";

  nn::Task task() const { return source == SourceKind::simulation ? nn::Task::regression : schema.task; }
  void validate() const;
};

// Column defaults for the two simulations: the only difference is the
// penalty weight (0.1 without interactions, 1 with).
ExperimentConfig simulation_defaults(data::SimKind kind);

// Every settable key, in file order.
const std::vector<std::string>& config_keys();
// Sets one "section.key". Throws ConfigError for unknown keys or bad values.
void set_option(ExperimentConfig& config, const std::string& key, const std::string& value);
std::string get_option(const ExperimentConfig& config, const std::string& key);

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Starts from simulation_defaults(data.kind) (data.kind taken from the
// overrides, then the file), applies the file, then the overrides.
ExperimentConfig load_config(const std::optional<std::string>& path, const Overrides& overrides);
ExperimentConfig config_from_settings(const std::map<std::string, std::string>& settings,
                                      const Overrides& overrides = {});
std::map<std::string, std::string> config_settings(const ExperimentConfig& config);
std::string config_to_ini(const ExperimentConfig& config);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);

// Raw table plus ground truth (simulations only).
struct PreparedData {
  data::RawTable table;
  std::optional<std::vector<double>> truth_ranks;
};

PreparedData load_data(const ExperimentConfig& config);
data::RawTable sim_to_table(const data::SimDataset& ds);
data::CsvTable sim_to_csv(const data::SimDataset& ds);

struct PreparedFold {
  data::Fold rows;
  data::Preprocessor preprocessor;
  eval::FoldData data;
};

std::vector<data::Fold> make_folds(const ExperimentConfig& config, std::size_t n);
PreparedFold prepare_fold(const ExperimentConfig& config, const PreparedData& data, const data::Fold& rows);

struct TrainedModel {
  nn::Model model;
  nn::TrainReport report;
};

TrainedModel train_fold_model(const ExperimentConfig& config, const eval::FoldData& data, std::size_t fold);

struct RankOutcome {
  FeatureRanking ranking;
  std::vector<std::string> warnings;
};

// Runs one ranker on the fold's training rows. Deep FS picks its l1 weight
// from deep_fs_l1_grid by validation loss.
RankOutcome run_ranker(const ExperimentConfig& config, rank::RankerKind kind, const nn::Model* model,
                       const eval::FoldData& data, std::size_t fold);

fr::FRConfig fold_fr_config(const ExperimentConfig& config, std::size_t fold);

struct LambdaFit {
  double lambda = 0.0;
  FeatureRanking ranking;
  double mean_keep_prob = 0.0;
  double masked_val_loss = 0.0;
  std::vector<std::string> warnings;
};

// One rate fit per lambda on the fold's training rows, each scored by the
// masked validation loss.
std::vector<LambdaFit> lambda_sweep(const ExperimentConfig& config, const nn::Model& model,
                                    const eval::FoldData& data, std::size_t fold,
                                    const std::vector<double>& lambdas);
// Index of the lowest masked validation loss (first on ties).
std::size_t select_lambda(const std::vector<LambdaFit>& fits);
nlohmann::json lambda_report_json(const std::vector<LambdaFit>& fits);

struct CompareResult {
  nlohmann::json report;
  std::string table;
  std::vector<eval::EvalCurve> curves;
};

CompareResult run_compare(const ExperimentConfig& config);
// report.json, table.txt, curves.csv, curves_summary.json under output_dir.
void write_compare(const CompareResult& result, const std::string& output_dir);

struct StabilityResult {
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> keep_probs;  // per seed
  std::vector<std::vector<double>> pairwise;    // Spearman between seeds
  double min_pairwise = 0.0;
};

// Refits model and rates on fold 0 with each master seed; data and folds
// stay fixed.
StabilityResult run_stability(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds);

}  // namespace dfr::exp
