#include "dfr/model_io.hpp"

#include <fstream>
#include <variant>

#include "dfr/errors.hpp"
#include "dfr/io.hpp"

namespace dfr::nn {
namespace {

using nlohmann::json;

json array_json(std::span<const double> values, std::vector<std::size_t> shape) {
  return json{{"shape", shape}, {"data", std::vector<double>(values.begin(), values.end())}};
}

std::vector<double> array_from_json(const json& j, std::vector<std::size_t> expected_shape,
                                    const char* what) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape != expected_shape) throw ParseError(std::string("model file: bad shape for ") + what);
  auto data = j.at("data").get<std::vector<double>>();
  std::size_t count = 1;
  for (std::size_t s : shape) count *= s;
  if (data.size() != count) throw ParseError(std::string("model file: bad length for ") + what);
  return data;
}

}  // namespace

json train_config_to_json(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate}, {"l2_penalty", c.l2_penalty},
              {"batch_size", c.batch_size},       {"max_epochs", c.max_epochs},
              {"patience", c.patience},           {"lookahead", c.lookahead},
              {"lr_decay_factor", c.lr_decay_factor}, {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.l2_penalty = j.value("l2_penalty", c.l2_penalty);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.lookahead = j.value("lookahead", c.lookahead);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.seed = j.value("seed", c.seed);
  return c;
}

json train_report_to_json(const TrainReport& r) {
  return json{{"train_loss", r.train_loss},
              {"val_loss", r.val_loss},
              {"best_epoch", r.best_epoch},
              {"best_val_loss", r.best_val_loss},
              {"final_learning_rate", r.final_learning_rate}};
}

json model_to_json(const Model& model, const json& train_config) {
  json layers = json::array();
  for (const Layer& layer : model.layers()) {
    json l{{"kind", kind_name(layer)}};
    if (const auto* d = std::get_if<Dense>(&layer)) {
      l["in"] = d->in;
      l["out"] = d->out;
      l["weight"] = array_json(d->weight.data(), {d->in, d->out});
      l["bias"] = array_json(d->bias, {d->out});
    } else if (const auto* bn = std::get_if<BatchNorm>(&layer)) {
      l["dim"] = bn->dim;
      l["momentum"] = bn->momentum;
      l["eps"] = bn->eps;
      l["gamma"] = array_json(bn->gamma, {bn->dim});
      l["beta"] = array_json(bn->beta, {bn->dim});
      l["running_mean"] = array_json(bn->running_mean, {bn->dim});
      l["running_var"] = array_json(bn->running_var, {bn->dim});
    } else if (const auto* dr = std::get_if<Dropout>(&layer)) {
      l["dim"] = dr->dim;
      l["rate"] = dr->rate;
    } else {
      l["dim"] = input_dim(layer);
    }
    layers.push_back(std::move(l));
  }
  json out{{"format_version", kModelFormatVersion},
           {"task", to_string(model.task())},
           {"input_dim", model.input_dim()},
           {"layers", std::move(layers)}};
  if (!train_config.is_null()) out["train_config"] = train_config;
  return out;
}

Model model_from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw ParseError("model file: unsupported format_version");
    }
    const Task task = parse_task(j.at("task").get<std::string>());
    const auto input_dim = j.at("input_dim").get<std::size_t>();
    std::vector<Layer> layers;
    for (const json& l : j.at("layers")) {
      const auto kind = l.at("kind").get<std::string>();
      if (kind == "dense") {
        Dense d = make_dense(l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>());
        d.weight = Matrix(d.in, d.out, array_from_json(l.at("weight"), {d.in, d.out}, "weight"));
        d.bias = array_from_json(l.at("bias"), {d.out}, "bias");
        layers.emplace_back(std::move(d));
      } else if (kind == "batchnorm") {
        BatchNorm bn = make_batch_norm(l.at("dim").get<std::size_t>());
        bn.momentum = l.at("momentum").get<double>();
        bn.eps = l.at("eps").get<double>();
        bn.gamma = array_from_json(l.at("gamma"), {bn.dim}, "gamma");
        bn.beta = array_from_json(l.at("beta"), {bn.dim}, "beta");
        bn.running_mean = array_from_json(l.at("running_mean"), {bn.dim}, "running_mean");
        bn.running_var = array_from_json(l.at("running_var"), {bn.dim}, "running_var");
        layers.emplace_back(std::move(bn));
      } else if (kind == "relu") {
        layers.emplace_back(Relu{l.at("dim").get<std::size_t>()});
      } else if (kind == "sigmoid") {
        layers.emplace_back(Sigmoid{l.at("dim").get<std::size_t>()});
      } else if (kind == "dropout") {
        layers.emplace_back(Dropout{l.at("dim").get<std::size_t>(), l.at("rate").get<double>()});
      } else {
        throw ParseError("model file: unknown layer kind '" + kind + "'");
      }
    }
    return Model(task, input_dim, std::move(layers));
  } catch (const json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
}

void save_model(const std::string& path, const Model& model, const json& train_config) {
  write_json_atomic(path, model_to_json(model, train_config));
}

Model load_model(const std::string& path) { return model_from_json(read_json(path)); }

}  // namespace dfr::nn
