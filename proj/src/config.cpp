#include "unimatch/config.hpp"

#include "unimatch/errors.hpp"

#include <functional>
#include <map>

namespace unimatch::config {

using nlohmann::json;

namespace {

using Handler = std::function<void(const json&)>;

// Applies one handler per key; unknown keys and type errors are usage errors.
void apply(const json& j, const char* section, const std::map<std::string, Handler>& handlers) {
  if (j.is_null()) return;
  if (!j.is_object()) throw Error(ErrorKind::Usage, std::string(section) + " settings must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = handlers.find(key);
    if (it == handlers.end()) throw Error(ErrorKind::Usage, std::string("unknown ") + section + " setting '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Usage, std::string(section) + " setting '" + key + "': " + e.what());
    }
  }
}

template <typename T>
Handler set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(); }

}  // namespace

json to_json(const data::SyntheticConfig& c) {
  return {{"categories", c.categories},
          {"universe_sizes", c.universe_sizes},
          {"instances", c.instances},
          {"test_fraction", c.test_fraction},
          {"deformation", c.deformation},
          {"noise", c.noise},
          {"occlusion", c.occlusion},
          {"translation_box", c.cameras.translation_box},
          {"scale_min", c.cameras.scale_min},
          {"scale_max", c.cameras.scale_max},
          {"max_rotation_angle", c.cameras.max_rotation_angle},
          {"seed", c.seed}};
}

data::SyntheticConfig synthetic_from_json(const json& j, data::SyntheticConfig c) {
  apply(j, "synthetic",
        {{"categories", set(c.categories)},
         {"universe_sizes", set(c.universe_sizes)},
         {"instances", set(c.instances)},
         {"test_fraction", set(c.test_fraction)},
         {"deformation", set(c.deformation)},
         {"noise", set(c.noise)},
         {"occlusion", set(c.occlusion)},
         {"translation_box", set(c.cameras.translation_box)},
         {"scale_min", set(c.cameras.scale_min)},
         {"scale_max", set(c.cameras.scale_max)},
         {"max_rotation_angle", set(c.cameras.max_rotation_angle)},
         {"seed", set(c.seed)}});
  c.validate();
  return c;
}

json to_json(const network::NetworkConfig& c) {
  return {{"encoder_widths", c.encoder_widths}, {"point_widths", c.point_widths}, {"offset_widths", c.offset_widths},
          {"latent", c.latent},                 {"rounds", c.rounds},             {"category_noise", c.category_noise}};
}

network::NetworkConfig network_from_json(const json& j, network::NetworkConfig c) {
  apply(j, "network",
        {{"encoder_widths", set(c.encoder_widths)},
         {"point_widths", set(c.point_widths)},
         {"offset_widths", set(c.offset_widths)},
         {"latent", set(c.latent)},
         {"rounds", set(c.rounds)},
         {"category_noise", set(c.category_noise)}});
  c.validate();
  return c;
}

json to_json(const training::LossWeights& w) {
  return {{"match", w.match}, {"deform", w.deform}, {"rec", w.rec}, {"off", w.off}, {"reg", w.reg}};
}

training::LossWeights weights_from_json(const json& j, training::LossWeights w) {
  apply(j, "loss weight",
        {{"match", set(w.match)}, {"deform", set(w.deform)}, {"rec", set(w.rec)}, {"off", set(w.off)}, {"reg", set(w.reg)}});
  w.validate();
  return w;
}

json to_json(const training::TrainConfig& c) {
  return {{"warm_start_iterations", c.schedule.warm_start_iterations},
          {"total_iterations", c.schedule.total_iterations},
          {"batch_size", c.schedule.batch_size},
          {"initial_lr", c.schedule.initial_lr},
          {"decay_factor", c.schedule.decay_factor},
          {"decay_every", c.schedule.decay_every},
          {"weights", to_json(c.weights)},
          {"warm_weights", to_json(c.warm_weights)},
          {"optimizer", c.optimizer == training::OptimizerKind::Adam ? "adam" : "sgd"},
          {"deformation", c.forward.deformation},
          {"freeze_universe_graph", c.forward.freeze_universe_graph},
          {"threads", c.threads},
          {"log_every", c.log_every},
          {"checkpoint_every", c.checkpoint_every}};
}

training::TrainConfig train_from_json(const json& j, training::TrainConfig c) {
  apply(j, "training",
        {{"warm_start_iterations", set(c.schedule.warm_start_iterations)},
         {"total_iterations", set(c.schedule.total_iterations)},
         {"batch_size", set(c.schedule.batch_size)},
         {"initial_lr", set(c.schedule.initial_lr)},
         {"decay_factor", set(c.schedule.decay_factor)},
         {"decay_every", set(c.schedule.decay_every)},
         {"weights", [&c](const json& v) { c.weights = weights_from_json(v, c.weights); }},
         {"warm_weights", [&c](const json& v) { c.warm_weights = weights_from_json(v, c.warm_weights); }},
         {"optimizer",
          [&c](const json& v) {
            const auto s = v.get<std::string>();
            if (s == "adam")
              c.optimizer = training::OptimizerKind::Adam;
            else if (s == "sgd")
              c.optimizer = training::OptimizerKind::Sgd;
            else
              throw Error(ErrorKind::Usage, "optimizer must be 'adam' or 'sgd', got '" + s + "'");
          }},
         {"deformation", set(c.forward.deformation)},
         {"freeze_universe_graph", set(c.forward.freeze_universe_graph)},
         {"threads", set(c.threads)},
         {"log_every", set(c.log_every)},
         {"checkpoint_every", set(c.checkpoint_every)}});
  c.validate();
  return c;
}

json to_json(const training::EvalOptions& c) {
  return {{"deformation", c.forward.deformation},
          {"freeze_universe_graph", c.forward.freeze_universe_graph},
          {"exhaustive_limit", c.exhaustive_limit},
          {"sampled_triples", c.sampled_triples},
          {"seed", c.seed}};
}

training::EvalOptions eval_from_json(const json& j, training::EvalOptions c) {
  apply(j, "evaluation",
        {{"deformation", set(c.forward.deformation)},
         {"freeze_universe_graph", set(c.forward.freeze_universe_graph)},
         {"exhaustive_limit", set(c.exhaustive_limit)},
         {"sampled_triples", set(c.sampled_triples)},
         {"seed", set(c.seed)}});
  if (c.exhaustive_limit < 3 || c.sampled_triples < 1)
    throw Error(ErrorKind::Usage, "triple sampling settings must be positive");
  return c;
}

json to_json(const training::EvalReport& r) {
  json cats = json::array();
  for (const training::CategoryReport& c : r.categories)
    cats.push_back({{"name", c.name},
                    {"instances", c.instances},
                    {"accuracy", opt_json(c.accuracy)},
                    {"cycle_consistency_score", opt_json(c.cycle_score)},
                    {"triples", c.triples},
                    {"skipped_triples", c.skipped_triples},
                    {"cycle_consistent", c.consistent},
                    {"reconstruction_error_static", opt_json(c.reconstruction_static)},
                    {"reconstruction_error_deformed", opt_json(c.reconstruction_deformed)}});
  return {{"categories", cats},
          {"average_accuracy", opt_json(r.accuracy)},
          {"cycle_consistency_score", opt_json(r.cycle_score)},
          {"reconstruction_error_static", opt_json(r.reconstruction_static)},
          {"reconstruction_error_deformed", opt_json(r.reconstruction_deformed)}};
}

}  // namespace unimatch::config
