#pragma once

// JSON views of the run settings. Every parser rejects unknown keys and keeps
// defaults for keys that are absent.

#include "unimatch/dataset.hpp"
#include "unimatch/network.hpp"
#include "unimatch/training.hpp"

#include <json.hpp>

namespace unimatch::config {

nlohmann::json to_json(const data::SyntheticConfig& c);
data::SyntheticConfig synthetic_from_json(const nlohmann::json& j, data::SyntheticConfig base = {});

nlohmann::json to_json(const network::NetworkConfig& c);
network::NetworkConfig network_from_json(const nlohmann::json& j, network::NetworkConfig base = {});

nlohmann::json to_json(const training::LossWeights& w);
training::LossWeights weights_from_json(const nlohmann::json& j, training::LossWeights base);

/// Keys: schedule fields, "weights", "warm_weights", "optimizer" ("adam" or
/// "sgd"), "deformation", "freeze_universe_graph", "threads", "log_every",
/// "checkpoint_every".
nlohmann::json to_json(const training::TrainConfig& c);
training::TrainConfig train_from_json(const nlohmann::json& j, training::TrainConfig base = {});

nlohmann::json to_json(const training::EvalOptions& c);
training::EvalOptions eval_from_json(const nlohmann::json& j, training::EvalOptions base = {});

nlohmann::json to_json(const training::EvalReport& r);

}  // namespace unimatch::config
