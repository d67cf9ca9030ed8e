#pragma once

#include "json.hpp"

#include <string>

#include "dfr/nn.hpp"

namespace dfr::nn {

inline constexpr int kModelFormatVersion = 1;

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_report_to_json(const TrainReport& report);

// {format_version, task, input_dim, layers: [...], train_config}. Parameter
// arrays are flat lists with explicit shapes. Doubles are written in
// shortest round-trip form, so save -> load reproduces predictions exactly.
nlohmann::json model_to_json(const Model& model, const nlohmann::json& train_config = nullptr);
Model model_from_json(const nlohmann::json& j);

void save_model(const std::string& path, const Model& model,
                const nlohmann::json& train_config = nullptr);
Model load_model(const std::string& path);

}  // namespace dfr::nn
