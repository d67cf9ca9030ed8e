#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dfr/errors.hpp"
#include "dfr/experiment.hpp"
#include "dfr/io.hpp"

using namespace dfr;
using namespace dfr::exp;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Small enough to run in well under a second per fold.
Overrides tiny() {
  return {{"data.n", "300"},        {"train.max_epochs", "3"},         {"fr.epochs", "6"},
          {"fr.anneal_epochs", "3"}, {"rankers.deep_fs_epochs", "2"},  {"rankers.deep_fs_l1_grid", "0.001,0.1"},
          {"folds.k", "3"},          {"eval.n_list", "1,5,40"}};
}

}  // namespace

TEST_CASE("simulation defaults carry the standard hyperparameters") {
  for (auto kind : {data::SimKind::no_interaction, data::SimKind::interaction}) {
    const ExperimentConfig c = simulation_defaults(kind);
    CHECK(c.arch.hidden == std::vector<std::size_t>{40, 20});
    CHECK(c.arch.dropout_rate == 0.5);
    CHECK(c.arch.batch_norm);
    CHECK(c.train.learning_rate == 0.001);
    CHECK(c.train.l2_penalty == 1e-5);
    CHECK(c.train.patience == 3);
    CHECK(c.train.lookahead == 10);
    CHECK(c.train.max_epochs == 100);
    CHECK(c.fr.learning_rate == 0.001);
    CHECK(c.fr.epochs == 200);
    CHECK(c.fr.anneal_epochs == 30);
    CHECK(c.sim_n == 10000);
    CHECK(c.folds.k == 5);
    CHECK(c.folds.val_fraction == 0.1);
    CHECK(c.n_list == std::vector<std::size_t>{1, 2, 5, 10, 20, 40});
  }
  CHECK(simulation_defaults(data::SimKind::no_interaction).fr.lambda == 0.1);
  CHECK(simulation_defaults(data::SimKind::interaction).fr.lambda == 1.0);
}

TEST_CASE("config file, then flags") {
  const std::string path = temp_path("dfr_cfg_test.ini");
  write_text_atomic(path,
                    "; comment\n[data]\nkind = interaction\nn = 2000\n\n[fr]\nlambda = 0.5\n"
                    "[rankers]\nmethods = mean, random\n");
  const ExperimentConfig c = load_config(path, {{"fr.lambda", "0.25"}, {"run.seed", "7"}});
  CHECK(c.sim_kind == data::SimKind::interaction);
  CHECK(c.sim_n == 2000);
  CHECK(c.fr.lambda == 0.25);
  CHECK(c.seed == 7);
  CHECK(c.rankers == std::vector<rank::RankerKind>{rank::RankerKind::mean, rank::RankerKind::random});

  // Interaction default lambda applies when nothing sets it.
  CHECK(load_config(std::nullopt, {{"data.kind", "interaction"}}).fr.lambda == 1.0);
  std::filesystem::remove(path);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(load_config(std::nullopt, {{"fr.lamda", "1"}}), ConfigError);
  CHECK_THROWS_AS(load_config(std::nullopt, {{"fr.lambda", "abc"}}), ConfigError);
  CHECK_THROWS_AS(load_config(std::nullopt, {{"data.kind", "linear"}}), ConfigError);
  CHECK_THROWS_AS(load_config(std::nullopt, {{"train.patience", "20"}}), ConfigError);
  CHECK_THROWS_AS(load_config(std::nullopt, {{"rankers.methods", "mean,mean"}}), ConfigError);
  CHECK_THROWS_AS(load_config(std::nullopt, {{"rankers.methods", "lasso"}}), ConfigError);
  CHECK_THROWS_AS(load_config(std::nullopt, {{"eval.n_list", "5,1"}}), ConfigError);
  CHECK_THROWS_AS(load_config(std::nullopt, {{"data.source", "csv"}}), ConfigError);
  CHECK_THROWS_AS(load_config(std::string("/nonexistent/dfr.ini"), {}), IoError);

  const std::string path = temp_path("dfr_cfg_bad.ini");
  write_text_atomic(path, "[fr]\nbogus = 1\n");
  CHECK_THROWS_AS(load_config(path, {}), ConfigError);
  write_text_atomic(path, "[fr\nlambda = 1\n");
  CHECK_THROWS_AS(load_config(path, {}), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("every key round trips through the ini form and the json echo") {
  ExperimentConfig c = load_config(std::nullopt, {{"data.kind", "interaction"},
                                                  {"fr.lambda_grid", "0.001,0.01"},
                                                  {"model.hidden", "8,4"},
                                                  {"eval.modes", "zero_out,retrain"},
                                                  {"data.categorical", "a,b"}});
  const std::string path = temp_path("dfr_cfg_rt.ini");
  write_text_atomic(path, config_to_ini(c));
  const ExperimentConfig back = load_config(path, {});
  CHECK(config_settings(back) == config_settings(c));
  CHECK(config_settings(config_from_json(config_to_json(c))).at("fr.lambda_grid") == "0.001,0.01");
  CHECK(config_keys().size() == config_settings(c).size());
  // Where and how fast a run happens is not part of its identity.
  CHECK_FALSE(config_to_json(c).contains("run.jobs"));
  std::filesystem::remove(path);
}

TEST_CASE("compare report is byte-identical for a fixed seed, independent of jobs") {
  Overrides o = tiny();
  const ExperimentConfig c1 = load_config(std::nullopt, o);
  o.emplace_back("run.jobs", "3");
  const ExperimentConfig c3 = load_config(std::nullopt, o);
  const CompareResult a = run_compare(c1);
  const CompareResult b = run_compare(c3);
  CHECK(a.report.dump() == b.report.dump());
  CHECK(a.table == b.table);

  o.emplace_back("run.seed", "1");
  CHECK(run_compare(load_config(std::nullopt, o)).report.dump() != a.report.dump());

  // Every configured ranker appears; absent external baselines are marked.
  for (auto k : rank::all_ranker_kinds()) {
    CHECK(a.report["spearman"].contains(rank::to_string(k)));
    CHECK(a.table.find(rank::to_string(k)) != std::string::npos);
  }
  CHECK(a.report["external_baselines"]["lasso"] == "not computed");
  CHECK(a.table.find("random_forest   not computed") != std::string::npos);
  CHECK(a.report["folds"].size() == 3);
  CHECK(a.report["format_version"] == kArtifactFormatVersion);
  CHECK(a.curves.size() == 6);
  CHECK(a.curves[0].folds() == 3);

  const std::string dir = temp_path("dfr_compare_test");
  std::filesystem::remove_all(dir);
  write_compare(a, dir);
  for (const char* f : {"report.json", "table.txt", "curves.csv", "curves_summary.json"}) {
    CHECK(std::filesystem::exists(dir + "/" + f));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("compare with retrain curves") {
  Overrides o = tiny();
  o.emplace_back("rankers.methods", "random,marginal");
  o.emplace_back("eval.modes", "retrain");
  o.emplace_back("eval.n_list", "2,40");
  const CompareResult r = run_compare(load_config(std::nullopt, o));
  REQUIRE(r.curves.size() == 2);
  CHECK(r.curves[0].mode == eval::CurveMode::retrain);
  CHECK(r.curves[0].folds() == 3);
}

TEST_CASE("compare on a csv dataset has no spearman section") {
  const std::string csv = temp_path("dfr_cmp.csv");
  std::string text = "a,b,c,y\n";
  for (int i = 0; i < 60; ++i) {
    text += std::to_string(i % 7) + "," + std::to_string((i * 3) % 5) + "," + (i % 2 ? "u" : "v") + "," +
            std::to_string((i % 7) * 2 + (i % 3)) + "\n";
  }
  write_text_atomic(csv, text);
  Overrides o = tiny();
  o.emplace_back("data.source", "csv");
  o.emplace_back("data.path", csv);
  o.emplace_back("data.categorical", "c");
  o.emplace_back("eval.n_list", "1,4");
  o.emplace_back("preprocess.target", "normalize");
  const CompareResult r = run_compare(load_config(std::nullopt, o));
  CHECK(r.report["spearman"].empty());
  CHECK(r.report["data"]["features"] == 4);  // a, b, c=u, c=v
  CHECK(r.table.find("No ground truth") != std::string::npos);
  std::filesystem::remove(csv);
}

TEST_CASE("lambda sweep and selection") {
  const ExperimentConfig c = load_config(std::nullopt, tiny());
  const PreparedData data = load_data(c);
  const auto folds = make_folds(c, data.table.rows());
  const PreparedFold pf = prepare_fold(c, data, folds[0]);
  const TrainedModel tm = train_fold_model(c, pf.data, 0);
  const auto fits = lambda_sweep(c, tm.model, pf.data, 0, {0.001, 10.0});
  REQUIRE(fits.size() == 2);
  CHECK(fits[0].mean_keep_prob > fits[1].mean_keep_prob);
  const auto j = lambda_report_json(fits);
  CHECK(j["fits"].size() == 2);
  CHECK(j["selected_lambda"] == fits[select_lambda(fits)].lambda);
}

TEST_CASE("stability run returns pairwise correlations") {
  const ExperimentConfig c = load_config(std::nullopt, tiny());
  const StabilityResult s = run_stability(c, {1, 2, 3});
  CHECK(s.keep_probs.size() == 3);
  CHECK(s.pairwise[0][0] == 1.0);
  CHECK(s.pairwise[0][1] == s.pairwise[1][0]);
  CHECK(s.min_pairwise <= s.pairwise[1][2]);
  CHECK_THROWS_AS(run_stability(c, {1}), ConfigError);
}

TEST_CASE("checked-in configs load") {
  for (const char* name : {"no_interaction.ini", "interaction.ini"}) {
    const std::string path = std::string(DFR_SOURCE_DIR) + "/configs/" + name;
    const ExperimentConfig c = load_config(path, {});
    CHECK(c.source == SourceKind::simulation);
  }
}
