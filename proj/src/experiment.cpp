#include "dfr/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dfr/errors.hpp"
#include "dfr/io.hpp"
#include "dfr/rng.hpp"

namespace dfr::exp {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += items[i];
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  if (!data::parse_double(v, out)) throw ConfigError(key + ": '" + v + "' is not a number");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(t, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (t.empty() || pos != t.size() || t.front() == '-') {
    throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }
std::string from_double(double d) { return data::format_double(d); }

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
  return out;
}

std::string from_doubles(const std::vector<double>& v) {
  std::vector<std::string> items;
  for (double d : v) items.push_back(from_double(d));
  return join(items);
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(to_size(key, item));
  return out;
}

std::string from_sizes(const std::vector<std::size_t>& v) {
  std::vector<std::string> items;
  for (std::size_t s : v) items.push_back(std::to_string(s));
  return join(items);
}

struct Option {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// Wraps Error subclasses thrown by enum parsers into ConfigError with the key.
template <typename F>
auto keyed(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

const std::vector<Option>& options() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::vector<Option> opts = {
      {"data.source",
       [](C& c, S v) {
         if (v == "simulation") c.source = SourceKind::simulation;
         else if (v == "csv") c.source = SourceKind::csv;
         else throw ConfigError("data.source: expected simulation or csv, got '" + v + "'");
       },
       [](const C& c) { return std::string(c.source == SourceKind::simulation ? "simulation" : "csv"); }},
      {"data.kind", [](C& c, S v) { c.sim_kind = keyed("data.kind", [&] { return data::parse_sim_kind(v); }); },
       [](const C& c) { return std::string(data::to_string(c.sim_kind)); }},
      {"data.n", [](C& c, S v) { c.sim_n = to_size("data.n", v); },
       [](const C& c) { return std::to_string(c.sim_n); }},
      {"data.seed", [](C& c, S v) { c.data_seed = to_u64("data.seed", v); },
       [](const C& c) { return std::to_string(c.data_seed); }},
      {"data.path", [](C& c, S v) { c.csv_path = v; }, [](const C& c) { return c.csv_path; }},
      {"data.target", [](C& c, S v) { c.schema.target = v; }, [](const C& c) { return c.schema.target; }},
      {"data.categorical", [](C& c, S v) { c.schema.categorical = split_list(v); },
       [](const C& c) { return join(c.schema.categorical); }},
      {"data.task", [](C& c, S v) { c.schema.task = keyed("data.task", [&] { return nn::parse_task(v); }); },
       [](const C& c) { return std::string(nn::to_string(c.schema.task)); }},

      {"preprocess.iqr_multiplier",
       [](C& c, S v) { c.preprocess.iqr_multiplier = to_double("preprocess.iqr_multiplier", v); },
       [](const C& c) { return from_double(c.preprocess.iqr_multiplier); }},
      {"preprocess.clip", [](C& c, S v) { c.preprocess.clip = to_bool("preprocess.clip", v); },
       [](const C& c) { return from_bool(c.preprocess.clip); }},
      {"preprocess.standardize", [](C& c, S v) { c.preprocess.standardize = to_bool("preprocess.standardize", v); },
       [](const C& c) { return from_bool(c.preprocess.standardize); }},
      {"preprocess.target",
       [](C& c, S v) {
         c.preprocess.target = keyed("preprocess.target", [&] { return data::parse_target_handling(v); });
       },
       [](const C& c) { return std::string(data::to_string(c.preprocess.target)); }},

      {"model.hidden", [](C& c, S v) { c.arch.hidden = to_sizes("model.hidden", v); },
       [](const C& c) { return from_sizes(c.arch.hidden); }},
      {"model.dropout", [](C& c, S v) { c.arch.dropout_rate = to_double("model.dropout", v); },
       [](const C& c) { return from_double(c.arch.dropout_rate); }},
      {"model.batch_norm", [](C& c, S v) { c.arch.batch_norm = to_bool("model.batch_norm", v); },
       [](const C& c) { return from_bool(c.arch.batch_norm); }},

      {"train.learning_rate", [](C& c, S v) { c.train.learning_rate = to_double("train.learning_rate", v); },
       [](const C& c) { return from_double(c.train.learning_rate); }},
      {"train.l2_penalty", [](C& c, S v) { c.train.l2_penalty = to_double("train.l2_penalty", v); },
       [](const C& c) { return from_double(c.train.l2_penalty); }},
      {"train.batch_size", [](C& c, S v) { c.train.batch_size = to_size("train.batch_size", v); },
       [](const C& c) { return std::to_string(c.train.batch_size); }},
      {"train.max_epochs", [](C& c, S v) { c.train.max_epochs = to_size("train.max_epochs", v); },
       [](const C& c) { return std::to_string(c.train.max_epochs); }},
      {"train.patience", [](C& c, S v) { c.train.patience = to_size("train.patience", v); },
       [](const C& c) { return std::to_string(c.train.patience); }},
      {"train.lookahead", [](C& c, S v) { c.train.lookahead = to_size("train.lookahead", v); },
       [](const C& c) { return std::to_string(c.train.lookahead); }},
      {"train.lr_decay_factor", [](C& c, S v) { c.train.lr_decay_factor = to_double("train.lr_decay_factor", v); },
       [](const C& c) { return from_double(c.train.lr_decay_factor); }},

      {"fr.lambda", [](C& c, S v) { c.fr.lambda = to_double("fr.lambda", v); },
       [](const C& c) { return from_double(c.fr.lambda); }},
      {"fr.lambda_grid", [](C& c, S v) { c.lambda_grid = to_doubles("fr.lambda_grid", v); },
       [](const C& c) { return from_doubles(c.lambda_grid); }},
      {"fr.temperature", [](C& c, S v) { c.fr.temperature = to_double("fr.temperature", v); },
       [](const C& c) { return from_double(c.fr.temperature); }},
      {"fr.anneal_epochs", [](C& c, S v) { c.fr.anneal_epochs = to_size("fr.anneal_epochs", v); },
       [](const C& c) { return std::to_string(c.fr.anneal_epochs); }},
      {"fr.epochs", [](C& c, S v) { c.fr.epochs = to_size("fr.epochs", v); },
       [](const C& c) { return std::to_string(c.fr.epochs); }},
      {"fr.learning_rate", [](C& c, S v) { c.fr.learning_rate = to_double("fr.learning_rate", v); },
       [](const C& c) { return from_double(c.fr.learning_rate); }},
      {"fr.batch_size", [](C& c, S v) { c.fr.batch_size = to_size("fr.batch_size", v); },
       [](const C& c) { return std::to_string(c.fr.batch_size); }},
      {"fr.freeze_model", [](C& c, S v) { c.fr.freeze_model = to_bool("fr.freeze_model", v); },
       [](const C& c) { return from_bool(c.fr.freeze_model); }},

      {"rankers.methods",
       [](C& c, S v) {
         c.rankers.clear();
         for (const auto& name : split_list(v)) {
           c.rankers.push_back(keyed("rankers.methods", [&] { return rank::parse_ranker_kind(name); }));
         }
       },
       [](const C& c) {
         std::vector<std::string> names;
         for (auto k : c.rankers) names.emplace_back(rank::to_string(k));
         return join(names);
       }},
      {"rankers.shuffle_repeats", [](C& c, S v) { c.shuffle_repeats = to_size("rankers.shuffle_repeats", v); },
       [](const C& c) { return std::to_string(c.shuffle_repeats); }},
      {"rankers.deep_fs_l1_grid", [](C& c, S v) { c.deep_fs_l1_grid = to_doubles("rankers.deep_fs_l1_grid", v); },
       [](const C& c) { return from_doubles(c.deep_fs_l1_grid); }},
      {"rankers.deep_fs_epochs", [](C& c, S v) { c.deep_fs.epochs = to_size("rankers.deep_fs_epochs", v); },
       [](const C& c) { return std::to_string(c.deep_fs.epochs); }},
      {"rankers.deep_fs_learning_rate",
       [](C& c, S v) { c.deep_fs.learning_rate = to_double("rankers.deep_fs_learning_rate", v); },
       [](const C& c) { return from_double(c.deep_fs.learning_rate); }},
      {"rankers.deep_fs_batch_size",
       [](C& c, S v) { c.deep_fs.batch_size = to_size("rankers.deep_fs_batch_size", v); },
       [](const C& c) { return std::to_string(c.deep_fs.batch_size); }},
      {"rankers.deep_fs_freeze_model",
       [](C& c, S v) { c.deep_fs.freeze_model = to_bool("rankers.deep_fs_freeze_model", v); },
       [](const C& c) { return from_bool(c.deep_fs.freeze_model); }},

      {"eval.top_k", [](C& c, S v) { c.top_k = to_sizes("eval.top_k", v); },
       [](const C& c) { return from_sizes(c.top_k); }},
      {"eval.n_list", [](C& c, S v) { c.n_list = keyed("eval.n_list", [&] { return eval::parse_n_list(v); }); },
       [](const C& c) { return from_sizes(c.n_list); }},
      {"eval.modes",
       [](C& c, S v) {
         c.modes.clear();
         for (const auto& m : split_list(v)) c.modes.push_back(keyed("eval.modes", [&] { return eval::parse_curve_mode(m); }));
       },
       [](const C& c) {
         std::vector<std::string> names;
         for (auto m : c.modes) names.emplace_back(eval::to_string(m));
         return join(names);
       }},

      {"folds.k", [](C& c, S v) { c.folds.k = to_size("folds.k", v); },
       [](const C& c) { return std::to_string(c.folds.k); }},
      {"folds.val_fraction", [](C& c, S v) { c.folds.val_fraction = to_double("folds.val_fraction", v); },
       [](const C& c) { return from_double(c.folds.val_fraction); }},

      {"run.seed", [](C& c, S v) { c.seed = to_u64("run.seed", v); },
       [](const C& c) { return std::to_string(c.seed); }},
      {"run.jobs", [](C& c, S v) { c.jobs = to_size("run.jobs", v); },
       [](const C& c) { return std::to_string(c.jobs); }},
      {"run.output_dir", [](C& c, S v) { c.output_dir = v; }, [](const C& c) { return c.output_dir; }},
  };
  return opts;
}

const Option& find_option(const std::string& key) {
  for (const auto& o : options()) {
    if (o.key == key) return o;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

// Keys that change where or how fast a run happens but not its results.
bool affects_results(const std::string& key) { return key != "run.jobs" && key != "run.output_dir"; }

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / double(v.size() - 1));
}

// Runs body(i) for i in [0, count) on up to `jobs` threads; rethrows the
// first failure.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(m);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, count));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (source == SourceKind::simulation && sim_n < folds.k) throw ConfigError("data.n must be at least folds.k");
  if (source == SourceKind::csv && csv_path.empty()) throw ConfigError("data.path is required for csv data");
  preprocess.validate();
  if (!(arch.dropout_rate >= 0.0 && arch.dropout_rate < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
  for (std::size_t h : arch.hidden) {
    if (h == 0) throw ConfigError("model.hidden sizes must be positive");
  }
  train.validate();
  fr.validate();
  for (double l : lambda_grid) {
    if (!(l >= 0.0)) throw ConfigError("fr.lambda_grid values must be non-negative");
  }
  if (rankers.empty()) throw ConfigError("rankers.methods is empty");
  if (std::set<rank::RankerKind>(rankers.begin(), rankers.end()).size() != rankers.size()) {
    throw ConfigError("rankers.methods lists a method twice");
  }
  if (shuffle_repeats == 0) throw ConfigError("rankers.shuffle_repeats must be positive");
  if (deep_fs_l1_grid.empty()) throw ConfigError("rankers.deep_fs_l1_grid is empty");
  for (double l : deep_fs_l1_grid) {
    if (!(l >= 0.0)) throw ConfigError("rankers.deep_fs_l1_grid values must be non-negative");
  }
  if (deep_fs.epochs == 0 || deep_fs.batch_size == 0 || !(deep_fs.learning_rate > 0.0)) {
    throw ConfigError("rankers.deep_fs_* settings must be positive");
  }
  for (std::size_t k : top_k) {
    if (k < 2) throw ConfigError("eval.top_k values must be at least 2");
  }
  if (n_list.empty()) throw ConfigError("eval.n_list is empty");
  for (std::size_t i = 1; i < n_list.size(); ++i) {
    if (n_list[i] <= n_list[i - 1]) throw ConfigError("eval.n_list must be strictly increasing");
  }
  if (folds.k < 2) throw ConfigError("folds.k must be at least 2");
  if (!(folds.val_fraction > 0.0 && folds.val_fraction < 1.0)) {
    throw ConfigError("folds.val_fraction must be in (0, 1)");
  }
  if (jobs == 0) throw ConfigError("run.jobs must be positive");
}

ExperimentConfig simulation_defaults(data::SimKind kind) {
  ExperimentConfig c;
  c.sim_kind = kind;
  c.fr.lambda = kind == data::SimKind::interaction ? 1.0 : 0.1;
  // Simulated features are already unit normals; clipping would only cut tails.
  c.preprocess.clip = false;
  if (const char* dir = std::getenv("DFR_OUTPUT_DIR"); dir != nullptr && *dir != '\0') c.output_dir = dir;
  return c;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& o : options()) k.push_back(o.key);
    return k;
  }();
  return keys;
}

void set_option(ExperimentConfig& config, const std::string& key, const std::string& value) {
  find_option(key).set(config, trim(value));
}

std::string get_option(const ExperimentConfig& config, const std::string& key) {
  return find_option(key).get(config);
}

ExperimentConfig config_from_settings(const std::map<std::string, std::string>& settings,
                                      const Overrides& overrides) {
  std::string kind = "no_interaction";
  if (auto it = settings.find("data.kind"); it != settings.end()) kind = it->second;
  for (const auto& [k, v] : overrides) {
    if (k == "data.kind") kind = v;
  }
  ExperimentConfig c = simulation_defaults(keyed("data.kind", [&] { return data::parse_sim_kind(trim(kind)); }));
  // data.source first so later keys see the final source; everything else in
  // registry order for a deterministic result.
  for (const auto& key : config_keys()) {
    if (auto it = settings.find(key); it != settings.end()) set_option(c, key, it->second);
  }
  for (const auto& [k, v] : settings) find_option(k);  // reject unknown keys
  for (const auto& [k, v] : overrides) set_option(c, k, v);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::optional<std::string>& path, const Overrides& overrides) {
  std::map<std::string, std::string> settings;
  if (path) {
    boost::property_tree::ptree tree;
    std::istringstream in(read_text(*path));
    try {
      boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ParseError("config " + *path + ": " + e.message() + " at line " + std::to_string(e.line()));
    }
    for (const auto& [section, body] : tree) {
      if (body.empty()) throw ConfigError("config " + *path + ": key '" + section + "' is outside a section");
      for (const auto& [key, value] : body) settings[section + "." + key] = value.get_value<std::string>();
    }
  }
  return config_from_settings(settings, overrides);
}

std::map<std::string, std::string> config_settings(const ExperimentConfig& config) {
  std::map<std::string, std::string> out;
  for (const auto& o : options()) out[o.key] = o.get(config);
  return out;
}

std::string config_to_ini(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& o : options()) {
    const auto dot = o.key.find('.');
    const std::string s = o.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out += '\n';
      out += "[" + s + "]\n";
      section = s;
    }
    out += o.key.substr(dot + 1) + " = " + o.get(config) + "\n";
  }
  return out;
}

nlohmann::json config_to_json(const ExperimentConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& o : options()) {
    if (affects_results(o.key)) j[o.key] = o.get(config);
  }
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("config echo must be an object");
  std::map<std::string, std::string> settings;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw ParseError("config echo: value of '" + k + "' must be a string");
    settings[k] = v.get<std::string>();
  }
  return config_from_settings(settings);
}

data::RawTable sim_to_table(const data::SimDataset& ds) {
  data::RawTable t;
  t.task = nn::Task::regression;
  const std::size_t d = ds.x.cols();
  for (std::size_t j = 0; j < d; ++j) {
    t.feature_names.push_back("x" + std::to_string(j + 1));
    t.categorical.push_back(false);
    t.numeric.push_back(ds.x.column(j));
  }
  t.levels.resize(d);
  t.target = ds.y;
  return t;
}

data::CsvTable sim_to_csv(const data::SimDataset& ds) {
  data::CsvTable t;
  for (std::size_t j = 0; j < ds.x.cols(); ++j) t.header.push_back("x" + std::to_string(j + 1));
  t.header.push_back("y");
  for (std::size_t i = 0; i < ds.n(); ++i) {
    std::vector<std::string> row;
    for (double v : ds.x.row(i)) row.push_back(data::format_double(v));
    row.push_back(data::format_double(ds.y[i]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

PreparedData load_data(const ExperimentConfig& config) {
  PreparedData p;
  if (config.source == SourceKind::simulation) {
    const auto ds = data::generate(config.sim_kind, config.sim_n, config.data_seed);
    p.table = sim_to_table(ds);
    p.truth_ranks = ds.ground_truth_ranks;
  } else {
    p.table = data::load_csv(config.csv_path, config.schema);
  }
  if (p.table.rows() < config.folds.k) throw DomainError("dataset has fewer rows than folds");
  return p;
}

std::vector<data::Fold> make_folds(const ExperimentConfig& config, std::size_t n) {
  data::FoldPlan plan = config.folds;
  plan.seed = config.seed;
  return data::kfold_split(n, plan);
}

PreparedFold prepare_fold(const ExperimentConfig& config, const PreparedData& data, const data::Fold& rows) {
  PreparedFold f{rows, data::Preprocessor::fit(data.table, rows.train, config.preprocess), {}};
  const auto& t = data.table;
  const auto& p = f.preprocessor;
  f.data.x_train = p.transform_features(t, rows.train);
  f.data.y_train = p.transform_target(t, rows.train);
  f.data.x_val = p.transform_features(t, rows.val);
  f.data.y_val = p.transform_target(t, rows.val);
  f.data.x_test = p.transform_features(t, rows.test);
  f.data.y_test = p.transform_target(t, rows.test);
  if (f.data.x_val.rows() == 0) throw DomainError("fold has no validation rows; raise folds.val_fraction or n");
  return f;
}

TrainedModel train_fold_model(const ExperimentConfig& config, const eval::FoldData& d, std::size_t fold) {
  TrainedModel t{nn::make_mlp(d.x_train.cols(), config.arch, config.task(),
                              derive_seed(config.seed, Stream::model_init, {fold})),
                 {}};
  nn::TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, Stream::train, {fold});
  t.report = nn::train(t.model, d.x_train, d.y_train, d.x_val, d.y_val, tc);
  return t;
}

fr::FRConfig fold_fr_config(const ExperimentConfig& config, std::size_t fold) {
  fr::FRConfig c = config.fr;
  c.seed = derive_seed(config.seed, Stream::dropout_fr, {fold});
  return c;
}

RankOutcome run_ranker(const ExperimentConfig& config, rank::RankerKind kind, const nn::Model* model,
                       const eval::FoldData& d, std::size_t fold) {
  if (rank::needs_model(kind) && model == nullptr) {
    throw ConfigError(std::string("ranker ") + rank::to_string(kind) + " needs a trained model");
  }
  RankOutcome out;
  switch (kind) {
    case rank::RankerKind::dropout_fr: {
      const fr::FRConfig c = fold_fr_config(config, fold);
      fr::FitResult fit = fr::fit_dropout_rates(*model, d.x_train, d.y_train, c);
      out.warnings = fit.warnings;
      out.ranking = fr::rank_from_rates(fit.keep_probs, {{"fr", fr::fr_config_to_json(c)}, {"logits", fit.logits}});
      break;
    }
    case rank::RankerKind::mean:
      out.ranking = rank::rank_mean(*model, d.x_train, d.y_train);
      break;
    case rank::RankerKind::shuffle:
      out.ranking = rank::rank_shuffle(*model, d.x_train, d.y_train, config.shuffle_repeats,
                                       derive_seed(config.seed, Stream::shuffle_ranker, {fold}));
      break;
    case rank::RankerKind::marginal:
      out.ranking = rank::rank_marginal(d.x_train, d.y_train.data(), config.task());
      break;
    case rank::RankerKind::random:
      out.ranking = rank::rank_random(d.x_train.cols(), derive_seed(config.seed, Stream::random_ranker, {fold}));
      break;
    case rank::RankerKind::deep_fs: {
      rank::DeepFsConfig c = config.deep_fs;
      c.seed = derive_seed(config.seed, Stream::deep_fs, {fold});
      nlohmann::json grid = nlohmann::json::array();
      std::optional<std::vector<double>> best_w;
      double best_loss = 0.0;
      double best_l1 = 0.0;
      for (double l1 : config.deep_fs_l1_grid) {
        c.l1_lambda = l1;
        const rank::DeepFsResult fit = rank::fit_deep_fs(*model, d.x_train, d.y_train, c);
        const double loss =
            rank::deep_fs_loss(fit.tuned_model ? *fit.tuned_model : *model, d.x_val, d.y_val, fit.weights);
        grid.push_back({{"l1_lambda", l1}, {"val_loss", loss}});
        if (!best_w || loss < best_loss) {
          best_w = fit.weights;
          best_loss = loss;
          best_l1 = l1;
        }
      }
      c.l1_lambda = best_l1;
      std::vector<double> scores(best_w->size());
      std::transform(best_w->begin(), best_w->end(), scores.begin(), [](double w) { return std::abs(w); });
      out.ranking = FeatureRanking::from_scores(
          "deep_fs", std::move(scores), true,
          {{"deep_fs", rank::deep_fs_config_to_json(c)}, {"weights", *best_w}, {"l1_grid", grid}});
      break;
    }
  }
  return out;
}

std::vector<LambdaFit> lambda_sweep(const ExperimentConfig& config, const nn::Model& model,
                                    const eval::FoldData& d, std::size_t fold,
                                    const std::vector<double>& lambdas) {
  if (lambdas.empty()) throw ConfigError("lambda sweep needs at least one lambda");
  std::vector<LambdaFit> fits;
  const std::uint64_t val_seed = derive_seed(config.seed, Stream::masked_validation, {fold});
  for (double lambda : lambdas) {
    fr::FRConfig c = fold_fr_config(config, fold);
    c.lambda = lambda;
    fr::FitResult fit = fr::fit_dropout_rates(model, d.x_train, d.y_train, c);
    LambdaFit lf;
    lf.lambda = lambda;
    lf.mean_keep_prob = fit.keep_probs.mean();
    lf.masked_val_loss = fr::masked_loss(fit.tuned_model ? *fit.tuned_model : model, d.x_val, d.y_val,
                                         fit.logits, c.temperature, val_seed);
    lf.warnings = fit.warnings;
    lf.ranking = fr::rank_from_rates(fit.keep_probs, {{"fr", fr::fr_config_to_json(c)}, {"logits", fit.logits}});
    fits.push_back(std::move(lf));
  }
  return fits;
}

std::size_t select_lambda(const std::vector<LambdaFit>& fits) {
  if (fits.empty()) throw DomainError("select_lambda: no fits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < fits.size(); ++i) {
    if (fits[i].masked_val_loss < fits[best].masked_val_loss) best = i;
  }
  return best;
}

nlohmann::json lambda_report_json(const std::vector<LambdaFit>& fits) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& f : fits) {
    rows.push_back({{"lambda", f.lambda},
                    {"masked_val_loss", f.masked_val_loss},
                    {"mean_keep_prob", f.mean_keep_prob},
                    {"warnings", f.warnings}});
  }
  return {{"fits", rows}, {"selected_lambda", fits.at(select_lambda(fits)).lambda},
          {"selection", "lowest masked validation loss"}};
}

namespace {

struct FoldOutcome {
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  nn::TrainReport train_report;
  double test_metric = 0.0;
  std::vector<RankOutcome> rankings;                 // config.rankers order
  std::vector<std::vector<double>> spearman;         // [ranker][top_k]
  std::vector<eval::EvalCurve> zero_out;             // [ranker]
  eval::FoldData data;
  std::vector<std::string> feature_names;  // after one-hot expansion
};

std::string pm(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f \xC2\xB1 %.3f", mean, sd);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  // Width counts code points; the plus-minus sign is two bytes.
  std::size_t cp = 0;
  for (unsigned char c : s) cp += (c & 0xC0) != 0x80;
  if (cp < width) s.append(width - cp, ' ');
  return s;
}

}  // namespace

CompareResult run_compare(const ExperimentConfig& config) {
  config.validate();
  const PreparedData data = load_data(config);
  const auto folds = make_folds(config, data.table.rows());
  const bool use_zero_out =
      std::find(config.modes.begin(), config.modes.end(), eval::CurveMode::zero_out) != config.modes.end();
  const bool use_retrain =
      std::find(config.modes.begin(), config.modes.end(), eval::CurveMode::retrain) != config.modes.end();

  std::vector<FoldOutcome> outcomes(folds.size());
  parallel_for(folds.size(), config.jobs, [&](std::size_t f) {
    FoldOutcome& o = outcomes[f];
    PreparedFold pf = prepare_fold(config, data, folds[f]);
    const std::size_t d = pf.data.x_train.cols();
    eval::validate_n_list(config.n_list, d);
    o.n_train = pf.rows.train.size();
    o.n_val = pf.rows.val.size();
    o.n_test = pf.rows.test.size();
    o.feature_names = pf.preprocessor.output_names();
    TrainedModel tm = train_fold_model(config, pf.data, f);
    o.train_report = tm.report;
    o.test_metric = eval::test_metric(tm.model, pf.data.x_test, pf.data.y_test);
    for (auto kind : config.rankers) {
      RankOutcome r = run_ranker(config, kind, &tm.model, pf.data, f);
      std::vector<double> sp;
      if (data.truth_ranks) {
        for (std::size_t k : config.top_k) {
          if (k > d) throw ConfigError("eval.top_k value " + std::to_string(k) + " exceeds the feature count");
          sp.push_back(eval::spearman(r.ranking, *data.truth_ranks, k).coefficient);
        }
      }
      if (use_zero_out) {
        o.zero_out.push_back(eval::zero_out_eval(tm.model, r.ranking, pf.data.x_test, pf.data.y_test, config.n_list));
      }
      o.spearman.push_back(std::move(sp));
      o.rankings.push_back(std::move(r));
    }
    o.data = std::move(pf.data);
  });

  CompareResult result;
  std::vector<eval::FoldData> fold_data;
  for (auto& o : outcomes) fold_data.push_back(std::move(o.data));

  for (std::size_t m = 0; m < config.rankers.size(); ++m) {
    if (use_zero_out) {
      std::vector<eval::EvalCurve> per_fold;
      for (const auto& o : outcomes) per_fold.push_back(o.zero_out[m]);
      result.curves.push_back(eval::merge_folds(per_fold));
    }
    if (use_retrain) {
      std::vector<FeatureRanking> rs;
      for (const auto& o : outcomes) rs.push_back(o.rankings[m].ranking);
      eval::RetrainSetup setup{config.arch, config.task(), config.train, config.seed};
      result.curves.push_back(eval::retrain_eval(rs, fold_data, setup, config.n_list, config.jobs));
    }
  }

  nlohmann::json j;
  j["format_version"] = kArtifactFormatVersion;
  j["command"] = "compare";
  j["config"] = config_to_json(config);
  j["data"] = {{"rows", data.table.rows()},
               {"features", outcomes.front().rankings.front().ranking.size()},
               {"has_ground_truth", data.truth_ranks.has_value()}};
  if (data.truth_ranks) j["data"]["ground_truth_ranks"] = *data.truth_ranks;
  const char* metric = eval::to_string(eval::metric_for(config.task()));

  nlohmann::json fold_json = nlohmann::json::array();
  for (std::size_t f = 0; f < outcomes.size(); ++f) {
    const FoldOutcome& o = outcomes[f];
    nlohmann::json methods = nlohmann::json::object();
    for (std::size_t m = 0; m < config.rankers.size(); ++m) {
      const auto& r = o.rankings[m];
      nlohmann::json mj = ranking_to_json(r.ranking, o.feature_names);
      mj["warnings"] = r.warnings;
      if (data.truth_ranks) {
        nlohmann::json sp = nlohmann::json::object();
        for (std::size_t k = 0; k < config.top_k.size(); ++k) sp["top" + std::to_string(config.top_k[k])] = o.spearman[m][k];
        mj["spearman"] = sp;
      }
      methods[rank::to_string(config.rankers[m])] = mj;
    }
    fold_json.push_back({{"fold", f},
                         {"rows", {{"train", o.n_train}, {"val", o.n_val}, {"test", o.n_test}}},
                         {"model",
                          {{"epochs_run", o.train_report.train_loss.size()},
                           {"best_epoch", o.train_report.best_epoch},
                           {"best_val_loss", o.train_report.best_val_loss},
                           {"test_" + std::string(metric), o.test_metric}}},
                         {"methods", methods}});
  }
  j["folds"] = fold_json;

  nlohmann::json summary = nlohmann::json::object();
  std::ostringstream table;
  const std::size_t col0 = 16, col = 18;
  if (data.truth_ranks) {
    table << "Spearman correlation with ground truth, mean \xC2\xB1 sd over " << folds.size() << " folds\n";
    table << "data: simulation " << data::to_string(config.sim_kind) << ", n = " << config.sim_n
          << ", data seed " << config.data_seed << ", master seed " << config.seed << "\n\n";
    std::string header = pad("method", col0);
    for (std::size_t k : config.top_k) header += pad("top " + std::to_string(k), col);
    table << trim(header) << "\n";
    for (std::size_t m = 0; m < config.rankers.size(); ++m) {
      const std::string name = rank::to_string(config.rankers[m]);
      std::string line = pad(name, col0);
      nlohmann::json ms = nlohmann::json::object();
      for (std::size_t k = 0; k < config.top_k.size(); ++k) {
        std::vector<double> vals;
        for (const auto& o : outcomes) vals.push_back(o.spearman[m][k]);
        ms["top" + std::to_string(config.top_k[k])] = {{"mean", mean_of(vals)}, {"sd", sd_of(vals)}, {"folds", vals}};
        line += pad(pm(mean_of(vals), sd_of(vals)), col);
      }
      summary[name] = ms;
      table << trim(line) << "\n";
    }
  } else {
    table << "No ground truth for this dataset; Spearman columns are omitted.\n";
    table << "data: " << config.csv_path << ", master seed " << config.seed << "\n";
  }
  for (const char* ext : {"random_forest", "lasso", "elastic_net"}) {
    table << pad(ext, col0) << "not computed\n";
  }
  j["spearman"] = summary;
  j["external_baselines"] = {
      {"random_forest", "not computed"}, {"lasso", "not computed"}, {"elastic_net", "not computed"}};

  std::vector<double> full;
  for (const auto& o : outcomes) full.push_back(o.test_metric);
  j["full_model"] = {{"metric", metric}, {"mean", mean_of(full)}, {"sd", sd_of(full)}, {"folds", full}};
  table << "\nfull-feature model test " << metric << ": " << pm(mean_of(full), sd_of(full)) << "\n";

  nlohmann::json curves = nlohmann::json::array();
  for (const auto& c : result.curves) curves.push_back(eval::curve_summary_json(c));
  j["curves"] = curves;
  for (const auto& c : result.curves) {
    table << "\n" << c.method << " " << eval::to_string(c.mode) << " test " << eval::to_string(c.metric) << ":";
    for (const auto& p : c.points) table << "  N=" << p.n_features << " " << pm(p.mean(), p.sd());
    table << "\n";
  }

  result.report = std::move(j);
  result.table = table.str();
  return result;
}

void write_compare(const CompareResult& result, const std::string& dir) {
  write_json_atomic(dir + "/report.json", result.report);
  write_text_atomic(dir + "/table.txt", result.table);
  write_text_atomic(dir + "/curves.csv", eval::curves_to_csv(result.curves));
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& c : result.curves) summary.push_back(eval::curve_summary_json(c));
  write_json_atomic(dir + "/curves_summary.json",
                    {{"format_version", kArtifactFormatVersion},
                     {"config", result.report.at("config")},
                     {"curves", summary}});
}

StabilityResult run_stability(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds) {
  config.validate();
  if (seeds.size() < 2) throw ConfigError("stability needs at least two seeds");
  const PreparedData data = load_data(config);
  const auto folds = make_folds(config, data.table.rows());
  const PreparedFold pf = prepare_fold(config, data, folds.front());

  StabilityResult r;
  r.seeds = seeds;
  r.keep_probs.resize(seeds.size());
  parallel_for(seeds.size(), config.jobs, [&](std::size_t i) {
    ExperimentConfig c = config;
    c.seed = seeds[i];
    const TrainedModel tm = train_fold_model(c, pf.data, 0);
    const fr::FitResult fit = fr::fit_dropout_rates(tm.model, pf.data.x_train, pf.data.y_train, fold_fr_config(c, 0));
    const auto v = fit.keep_probs.values();
    r.keep_probs[i].assign(v.begin(), v.end());
  });
  r.pairwise.assign(seeds.size(), std::vector<double>(seeds.size(), 1.0));
  r.min_pairwise = 1.0;
  for (std::size_t a = 0; a < seeds.size(); ++a) {
    for (std::size_t b = a + 1; b < seeds.size(); ++b) {
      const double s = eval::spearman_correlation(r.keep_probs[a], r.keep_probs[b]);
      r.pairwise[a][b] = r.pairwise[b][a] = s;
      r.min_pairwise = std::min(r.min_pairwise, s);
    }
  }
  return r;
}

}  // namespace dfr::exp
