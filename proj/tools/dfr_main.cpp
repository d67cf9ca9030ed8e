// dfr: simulate | train | rank | evaluate | compare.
//
// Every config key is also a flag (--fr.lambda 0.5, --data.kind interaction);
// flags override the --config file. Failures print one line
// "error: <kind>: <message>" and exit nonzero.

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "dfr/commands.hpp"
#include "dfr/errors.hpp"
#include "dfr/rankers.hpp"

namespace {

using dfr::cli::ConfigSource;

struct ConfigFlags {
  std::string path;
  std::map<std::string, std::string> values;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.path, "INI config file")->check(CLI::ExistingFile);
  for (const auto& key : dfr::exp::config_keys()) {
    cmd->add_option("--" + key, flags.values[key], "config key " + key)->group("Config keys");
  }
}

ConfigSource to_source(const CLI::App* cmd, const ConfigFlags& flags) {
  ConfigSource src;
  if (!flags.path.empty()) src.path = flags.path;
  for (const auto& key : dfr::exp::config_keys()) {
    if (cmd->count("--" + key) > 0) src.overrides.emplace_back(key, flags.values.at(key));
  }
  return src;
}

void print_written(const std::vector<std::string>& paths) {
  for (const auto& p : paths) std::cout << "wrote " << p << "\n";
}

std::vector<std::string> ranker_names() {
  std::vector<std::string> names;
  for (auto k : dfr::rank::all_ranker_kinds()) names.emplace_back(dfr::rank::to_string(k));
  return names;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature ranking with learned input dropout rates"};
  app.require_subcommand(1);

  dfr::cli::SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Write a simulated dataset and its ground truth");
  simulate->add_option("--kind", sim.kind, "no_interaction or interaction")
      ->check(CLI::IsMember({"no_interaction", "interaction"}))
      ->capture_default_str();
  simulate->add_option("--n", sim.n, "number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  simulate->add_option("--seed", sim.seed, "data seed")->capture_default_str();
  simulate->add_option("--out", sim.out, "data CSV path (default $DFR_OUTPUT_DIR/<kind>.csv)");

  dfr::cli::TrainArgs tr;
  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "Train the model of one fold");
  add_config_flags(train, train_flags);
  train->add_option("--fold", tr.fold, "fold index")->capture_default_str();
  train->add_option("--out", tr.out, "model JSON path");

  dfr::cli::RankArgs rk;
  ConfigFlags rank_flags;
  std::string rank_model;
  std::size_t rank_fold = 0;
  auto* rank = app.add_subcommand("rank", "Rank features with one method");
  rank->add_option("--method", rk.method, "ranking method")->required()->check(CLI::IsMember(ranker_names()));
  rank->add_option("--model", rank_model, "model JSON from 'dfr train'")->check(CLI::ExistingFile);
  add_config_flags(rank, rank_flags);
  rank->add_option("--fold", rank_fold, "fold index (default: the model's)");
  rank->add_option("--out", rk.out, "ranking JSON path");

  dfr::cli::EvaluateArgs ev;
  ConfigFlags eval_flags;
  std::string eval_model, n_list;
  auto* evaluate = app.add_subcommand("evaluate", "Zero-out or retrain curve of a ranking");
  evaluate->add_option("--mode", ev.mode, "zero_out or retrain")
      ->check(CLI::IsMember({"zero_out", "retrain"}))
      ->capture_default_str();
  evaluate->add_option("--ranking", ev.ranking, "ranking JSON")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--model", eval_model, "model JSON (zero_out)")->check(CLI::ExistingFile);
  add_config_flags(evaluate, eval_flags);
  evaluate->add_option("--n-list", n_list, "feature counts, e.g. 1,2,5,10,20,40");
  evaluate->add_option("--out-dir", ev.out_dir, "output directory");

  dfr::cli::CompareArgs cmp;
  ConfigFlags cmp_flags;
  std::string cmp_out;
  auto* compare = app.add_subcommand("compare", "Run every ranker over all folds and report");
  add_config_flags(compare, cmp_flags);
  compare->add_option("--out-dir", cmp_out, "output directory (default run.output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    std::cerr << "error: usage: " << msg << "\n";
    return 2;
  }

  try {
    if (*simulate) {
      print_written(dfr::cli::cmd_simulate(sim));
    } else if (*train) {
      tr.config = to_source(train, train_flags);
      print_written(dfr::cli::cmd_train(tr));
    } else if (*rank) {
      rk.config = to_source(rank, rank_flags);
      if (!rank_model.empty()) rk.model = rank_model;
      if (rank->count("--fold") > 0) rk.fold = rank_fold;
      print_written(dfr::cli::cmd_rank(rk));
    } else if (*evaluate) {
      ev.config = to_source(evaluate, eval_flags);
      if (!eval_model.empty()) ev.model = eval_model;
      if (!n_list.empty()) ev.n_list = n_list;
      print_written(dfr::cli::cmd_evaluate(ev));
    } else if (*compare) {
      cmp.config = to_source(compare, cmp_flags);
      if (!cmp_out.empty()) cmp.out_dir = cmp_out;
      std::string table;
      const auto written = dfr::cli::cmd_compare(cmp, &table);
      std::cout << table;
      print_written(written);
    }
  } catch (const dfr::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
