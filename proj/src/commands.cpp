#include "dfr/commands.hpp"

#include <cstdlib>
#include <filesystem>

#include "dfr/csv.hpp"
#include "dfr/errors.hpp"
#include "dfr/io.hpp"
#include "dfr/model_io.hpp"

namespace dfr::cli {
namespace {

namespace fs = std::filesystem;

std::string sibling(const std::string& path, const std::string& suffix) {
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix)).string();
}

exp::ExperimentConfig resolve(const ConfigSource& src) { return exp::load_config(src.path, src.overrides); }

// Rebuilds the model's training fold, transformed with the preprocessor
// stored in the model file.
struct ModelContext {
  nlohmann::json file;
  nn::Model model;
  exp::ExperimentConfig config;
  std::size_t fold = 0;
  data::Preprocessor preprocessor;
};

ModelContext load_model_context(const std::string& path, const ConfigSource& src) {
  ModelContext c;
  c.file = read_json(path);
  c.model = nn::model_from_json(c.file);
  if (!c.file.contains("config") || !c.file.contains("preprocessor") || !c.file.contains("fold")) {
    throw ParseError("model file " + path + " lacks the config, fold or preprocessor written by 'dfr train'");
  }
  if (src.path) {
    c.config = resolve(src);
  } else {
    auto settings = c.file.at("config");
    std::map<std::string, std::string> m;
    for (const auto& [k, v] : settings.items()) m[k] = v.get<std::string>();
    c.config = exp::config_from_settings(m, src.overrides);
  }
  c.fold = c.file.at("fold").get<std::size_t>();
  c.preprocessor = data::Preprocessor::from_json(c.file.at("preprocessor"));
  return c;
}

eval::FoldData transform_fold(const data::Preprocessor& p, const data::RawTable& t, const data::Fold& rows) {
  eval::FoldData d;
  d.x_train = p.transform_features(t, rows.train);
  d.y_train = p.transform_target(t, rows.train);
  d.x_val = p.transform_features(t, rows.val);
  d.y_val = p.transform_target(t, rows.val);
  d.x_test = p.transform_features(t, rows.test);
  d.y_test = p.transform_target(t, rows.test);
  return d;
}

const data::Fold& pick_fold(const std::vector<data::Fold>& folds, std::size_t f) {
  if (f >= folds.size()) {
    throw ConfigError("fold " + std::to_string(f) + " out of range (folds.k = " + std::to_string(folds.size()) + ")");
  }
  return folds[f];
}

}  // namespace

std::string default_output_dir() {
  const char* dir = std::getenv("DFR_OUTPUT_DIR");
  return (dir != nullptr && *dir != '\0') ? dir : "out";
}

std::vector<std::string> cmd_simulate(const SimulateArgs& args) {
  const auto kind = data::parse_sim_kind(args.kind);
  if (args.n == 0) throw DomainError("simulate: n must be at least 1");
  const auto ds = data::generate(kind, args.n, args.seed);
  const std::string out = args.out.empty() ? default_output_dir() + "/" + args.kind + ".csv" : args.out;
  const std::string truth = sibling(out, ".truth.json");
  data::write_csv(out, exp::sim_to_csv(ds));
  nlohmann::json gt = data::ground_truth_json(ds);
  gt["format_version"] = exp::kArtifactFormatVersion;
  gt["feature_names"] = exp::sim_to_table(ds).feature_names;
  write_json_atomic(truth, gt);
  return {out, truth};
}

std::vector<std::string> cmd_train(const TrainArgs& args) {
  const exp::ExperimentConfig config = resolve(args.config);
  const auto data = exp::load_data(config);
  const auto folds = exp::make_folds(config, data.table.rows());
  const exp::PreparedFold pf = exp::prepare_fold(config, data, pick_fold(folds, args.fold));
  const exp::TrainedModel tm = exp::train_fold_model(config, pf.data, args.fold);
  const double metric = eval::test_metric(tm.model, pf.data.x_test, pf.data.y_test);

  nn::TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, Stream::train, {args.fold});
  nlohmann::json mj = nn::model_to_json(tm.model, nn::train_config_to_json(tc));
  mj["config"] = exp::config_to_json(config);
  mj["fold"] = args.fold;
  mj["model_seed"] = derive_seed(config.seed, Stream::model_init, {args.fold});
  mj["feature_names"] = pf.preprocessor.output_names();
  mj["preprocessor"] = pf.preprocessor.to_json();

  const std::string out = args.out.empty() ? default_output_dir() + "/model.json" : args.out;
  const std::string report = sibling(out, ".report.json");
  write_json_atomic(out, mj);
  write_json_atomic(report, {{"format_version", exp::kArtifactFormatVersion},
                             {"config", exp::config_to_json(config)},
                             {"fold", args.fold},
                             {"train_report", nn::train_report_to_json(tm.report)},
                             {"test_metric", {{eval::to_string(eval::metric_for(config.task())), metric}}}});
  return {out, report};
}

std::vector<std::string> cmd_rank(const RankArgs& args) {
  const auto kind = rank::parse_ranker_kind(args.method);
  if (rank::needs_model(kind) && !args.model) {
    throw ConfigError(std::string("method ") + rank::to_string(kind) + " needs --model");
  }
  std::optional<ModelContext> mc;
  exp::ExperimentConfig config;
  if (args.model) {
    mc = load_model_context(*args.model, args.config);
    config = mc->config;
  } else {
    config = resolve(args.config);
  }
  const std::size_t fold = args.fold ? *args.fold : (mc ? mc->fold : 0);
  const auto data = exp::load_data(config);
  const auto folds = exp::make_folds(config, data.table.rows());
  const auto& rows = pick_fold(folds, fold);
  const data::Preprocessor prep =
      mc ? mc->preprocessor : data::Preprocessor::fit(data.table, rows.train, config.preprocess);
  const eval::FoldData fd = transform_fold(prep, data.table, rows);
  if (mc && fd.x_train.cols() != mc->model.input_dim()) {
    throw ShapeError("model expects " + std::to_string(mc->model.input_dim()) + " inputs, data has " +
                     std::to_string(fd.x_train.cols()));
  }
  const nn::Model* model = mc ? &mc->model : nullptr;
  const std::string out = args.out.empty() ? default_output_dir() + "/ranking.json" : args.out;

  auto stamp = [&](FeatureRanking& r) {
    r.config["experiment"] = exp::config_to_json(config);
    r.config["fold"] = fold;
    if (args.model) r.config["model"] = *args.model;
  };

  std::vector<std::string> written;
  if (kind == rank::RankerKind::dropout_fr && !config.lambda_grid.empty()) {
    auto fits = exp::lambda_sweep(config, *model, fd, fold, config.lambda_grid);
    for (std::size_t i = 0; i < fits.size(); ++i) {
      stamp(fits[i].ranking);
      const std::string p = sibling(out, ".lambda" + std::to_string(i) + ".json");
      write_json_atomic(p, ranking_to_json(fits[i].ranking, prep.output_names()));
      written.push_back(p);
    }
    nlohmann::json report = exp::lambda_report_json(fits);
    report["format_version"] = exp::kArtifactFormatVersion;
    report["config"] = exp::config_to_json(config);
    report["fold"] = fold;
    const std::string rp = sibling(out, ".lambda_report.json");
    write_json_atomic(rp, report);
    written.push_back(rp);
    FeatureRanking best = fits[exp::select_lambda(fits)].ranking;
    write_json_atomic(out, ranking_to_json(best, prep.output_names()));
    written.insert(written.begin(), out);
    return written;
  }

  exp::RankOutcome r = exp::run_ranker(config, kind, model, fd, fold);
  stamp(r.ranking);
  r.ranking.config["warnings"] = r.warnings;
  write_json_atomic(out, ranking_to_json(r.ranking, prep.output_names()));
  return {out};
}

std::vector<std::string> cmd_evaluate(const EvaluateArgs& args) {
  const auto mode = eval::parse_curve_mode(args.mode);
  const nlohmann::json rj = read_json(args.ranking);
  const FeatureRanking ranking = ranking_from_json(rj);
  const std::string dir = args.out_dir.empty() ? default_output_dir() : args.out_dir;

  eval::EvalCurve curve;
  nlohmann::json config_echo;
  std::size_t fold = 0;
  if (mode == eval::CurveMode::zero_out) {
    if (!args.model) throw ConfigError("zero_out evaluation needs --model");
    const ModelContext mc = load_model_context(*args.model, args.config);
    fold = mc.fold;
    const auto data = exp::load_data(mc.config);
    const auto folds = exp::make_folds(mc.config, data.table.rows());
    const eval::FoldData fd = transform_fold(mc.preprocessor, data.table, pick_fold(folds, fold));
    const auto n_list = args.n_list ? eval::parse_n_list(*args.n_list) : mc.config.n_list;
    curve = eval::zero_out_eval(mc.model, ranking, fd.x_test, fd.y_test, n_list);
    config_echo = exp::config_to_json(mc.config);
  } else {
    if (!args.config.path) throw ConfigError("retrain evaluation needs a training config (--config)");
    const exp::ExperimentConfig config = resolve(args.config);
    fold = ranking.config.value("fold", std::size_t{0});
    const auto data = exp::load_data(config);
    const auto folds = exp::make_folds(config, data.table.rows());
    const exp::PreparedFold pf = exp::prepare_fold(config, data, pick_fold(folds, fold));
    const auto n_list = args.n_list ? eval::parse_n_list(*args.n_list) : config.n_list;
    eval::RetrainSetup setup{config.arch, config.task(), config.train, config.seed};
    const std::vector<FeatureRanking> rs{ranking};
    const std::vector<eval::FoldData> fds{pf.data};
    curve = eval::retrain_eval(rs, fds, setup, n_list, config.jobs);
    config_echo = exp::config_to_json(config);
  }

  const std::string csv = dir + "/curves.csv";
  const std::string summary = dir + "/summary.json";
  const std::vector<eval::EvalCurve> curves{curve};
  write_text_atomic(csv, eval::curves_to_csv(curves));
  write_json_atomic(summary, {{"format_version", exp::kArtifactFormatVersion},
                              {"config", config_echo},
                              {"ranking", args.ranking},
                              {"fold", fold},
                              {"curve", eval::curve_summary_json(curve)}});
  return {csv, summary};
}

std::vector<std::string> cmd_compare(const CompareArgs& args, std::string* table) {
  const exp::ExperimentConfig config = resolve(args.config);
  const exp::CompareResult r = exp::run_compare(config);
  const std::string dir = args.out_dir ? *args.out_dir : config.output_dir;
  exp::write_compare(r, dir);
  if (table) *table = r.table;
  return {dir + "/report.json", dir + "/table.txt", dir + "/curves.csv", dir + "/curves_summary.json"};
}

}  // namespace dfr::cli
