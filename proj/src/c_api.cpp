#include "unimatch/unimatch.h"

#include "unimatch/config.hpp"
#include "unimatch/dataset.hpp"
#include "unimatch/errors.hpp"
#include "unimatch/io.hpp"
#include "unimatch/training.hpp"

#include <json.hpp>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

using nlohmann::json;
using namespace unimatch;

struct um_dataset {
  data::DatasetManifest manifest;
};

struct um_model {
  training::TrainState state;
  json run_config = json::object();
};

namespace {

thread_local std::string last_error;

um_status status_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return UM_ERR_USAGE;
    case ErrorKind::Data:
    case ErrorKind::UndefinedScore: return UM_ERR_DATA;
    case ErrorKind::Numerical:
    case ErrorKind::Singular:
    case ErrorKind::Projection: return UM_ERR_NUMERICAL;
    case ErrorKind::Io: return UM_ERR_IO;
    case ErrorKind::Shape: return UM_ERR_SHAPE;
    case ErrorKind::Graph: return UM_ERR_GRAPH;
    case ErrorKind::Infeasible: return UM_ERR_INFEASIBLE;
    case ErrorKind::Integrity: return UM_ERR_INTEGRITY;
    case ErrorKind::Version: return UM_ERR_VERSION;
  }
  return UM_ERR_INTERNAL;
}

template <typename F>
um_status guard(F&& f) {
  try {
    f();
    return UM_OK;
  } catch (const Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const json::exception& e) {
    last_error = std::string("invalid JSON: ") + e.what();
    return UM_ERR_USAGE;
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return UM_ERR_IO;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return UM_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return UM_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw Error(ErrorKind::Usage, std::string(what) + " must not be NULL");
}

json parse_optional(const char* text) {
  if (text == nullptr || *text == '\0') return json::object();
  return json::parse(text);
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<training::PreparedInstance> select(const um_dataset* ds, const network::Model& model, const char* split) {
  const std::string s = split == nullptr ? "test" : split;
  if (s == "train") return training::prepare_split(ds->manifest, data::Split::Train, model, false);
  if (s == "test") return training::prepare_split(ds->manifest, data::Split::Test, model, false);
  if (s == "all") {
    auto out = training::prepare_split(ds->manifest, data::Split::Train, model, false);
    auto test = training::prepare_split(ds->manifest, data::Split::Test, model, false);
    out.insert(out.end(), std::make_move_iterator(test.begin()), std::make_move_iterator(test.end()));
    return out;
  }
  throw Error(ErrorKind::Usage, "split must be 'train', 'test' or 'all', got '" + s + "'");
}

}  // namespace

extern "C" {

const char* um_version(void) { return "1.0.0"; }

const char* um_last_error(void) { return last_error.c_str(); }

const char* um_status_name(um_status status) {
  switch (status) {
    case UM_OK: return "ok";
    case UM_ERR_USAGE: return "usage";
    case UM_ERR_DATA: return "data";
    case UM_ERR_NUMERICAL: return "numerical";
    case UM_ERR_IO: return "io";
    case UM_ERR_SHAPE: return "shape";
    case UM_ERR_GRAPH: return "graph";
    case UM_ERR_INFEASIBLE: return "infeasible";
    case UM_ERR_INTEGRITY: return "integrity";
    case UM_ERR_VERSION: return "version";
    case UM_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void um_string_free(char* s) { std::free(s); }

um_status um_dataset_load(const char* path, um_dataset** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    auto ds = std::make_unique<um_dataset>();
    ds->manifest = data::load_dataset(path);
    *out = ds.release();
  });
}

um_status um_dataset_synthesize(const char* config_json, um_dataset** out) {
  return guard([&] {
    require(out, "out");
    const data::SyntheticConfig cfg = config::synthetic_from_json(parse_optional(config_json));
    auto ds = std::make_unique<um_dataset>();
    ds->manifest = data::generate_synthetic(cfg).manifest;
    *out = ds.release();
  });
}

um_status um_dataset_save(const um_dataset* ds, const char* path) {
  return guard([&] {
    require(ds, "dataset");
    require(path, "path");
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    data::save_dataset(ds->manifest, path);
  });
}

um_status um_dataset_summary(const um_dataset* ds, char** json_out) {
  return guard([&] {
    require(ds, "dataset");
    require(json_out, "json_out");
    json cats = json::array();
    for (const data::CategorySpec& c : ds->manifest.categories) {
      int train = 0, test = 0;
      for (const data::KeypointInstance& i : ds->manifest.instances)
        if (i.category == c.name) (i.split == data::Split::Train ? train : test)++;
      cats.push_back({{"name", c.name}, {"universe_size", c.universe_size}, {"train", train}, {"test", test}});
    }
    const json j = {{"categories", cats},
                    {"instances", ds->manifest.instances.size()},
                    {"train", ds->manifest.count(data::Split::Train)},
                    {"test", ds->manifest.count(data::Split::Test)}};
    *json_out = dup(j.dump());
  });
}

void um_dataset_free(um_dataset* ds) { delete ds; }

um_status um_model_create(const um_dataset* ds, const char* network_json, uint64_t seed, um_model** out) {
  return guard([&] {
    require(ds, "dataset");
    require(out, "out");
    const network::NetworkConfig cfg = config::network_from_json(parse_optional(network_json));
    std::vector<network::CategoryInfo> cats;
    for (const data::CategorySpec& c : ds->manifest.categories) cats.push_back({c.name, c.universe_size});
    auto m = std::make_unique<um_model>();
    m->state = training::init_state(std::move(cats), cfg, seed);
    *out = m.release();
  });
}

um_status um_model_load(const char* checkpoint_path, um_model** out) {
  return guard([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    io::Checkpoint ck = io::load_checkpoint(checkpoint_path);
    auto m = std::make_unique<um_model>();
    m->state = std::move(ck.state);
    m->run_config = std::move(ck.run_config);
    *out = m.release();
  });
}

um_status um_model_save(const um_model* model, const char* checkpoint_path) {
  return guard([&] {
    require(model, "model");
    require(checkpoint_path, "checkpoint_path");
    io::save_checkpoint(model->state, checkpoint_path, model->run_config);
  });
}

um_status um_model_iteration(const um_model* model, int* out) {
  return guard([&] {
    require(model, "model");
    require(out, "out");
    *out = model->state.iteration;
  });
}

um_status um_model_run_config(const um_model* model, char** json_out) {
  return guard([&] {
    require(model, "model");
    require(json_out, "json_out");
    *json_out = dup(model->run_config.dump());
  });
}

um_status um_model_train(um_model* model, const um_dataset* ds, const char* train_json, const char* checkpoint_path,
                         um_log_fn log, void* user, char** result_json) {
  return guard([&] {
    require(model, "model");
    require(ds, "dataset");
    // Settings stored with the model are the base, so a resumed run continues unchanged.
    training::TrainConfig base;
    if (model->run_config.contains("train")) base = config::train_from_json(model->run_config["train"]);
    const training::TrainConfig cfg = config::train_from_json(parse_optional(train_json), base);
    model->run_config["train"] = config::to_json(cfg);

    const auto train_set = training::prepare_split(ds->manifest, data::Split::Train, *model->state.model, true);
    training::TrainHooks hooks;
    if (log != nullptr)
      hooks.on_log = [log, user](const training::MetricsRecord& r) { log(training::to_json_line(r).c_str(), user); };
    const std::string ckpt = checkpoint_path == nullptr ? "" : checkpoint_path;
    if (!ckpt.empty())
      hooks.on_checkpoint = [&](const training::TrainState& s) { io::save_checkpoint(s, ckpt, model->run_config); };

    const training::TrainResult r = training::train(model->state, train_set, cfg, hooks);
    if (!ckpt.empty() && r.iterations_run == 0 && !r.diverged) io::save_checkpoint(model->state, ckpt, model->run_config);
    if (result_json != nullptr) {
      json j = {{"iterations_run", r.iterations_run}, {"iteration", model->state.iteration}, {"diverged", r.diverged}};
      if (!r.log.empty()) j["last"] = json::parse(training::to_json_line(r.log.back()));
      *result_json = dup(j.dump());
    }
    if (r.diverged) throw Error(ErrorKind::Numerical, r.message);
  });
}

um_status um_model_evaluate(um_model* model, const um_dataset* ds, const char* split, const char* eval_json,
                            char** report_json) {
  return guard([&] {
    require(model, "model");
    require(ds, "dataset");
    require(report_json, "report_json");
    const training::EvalOptions opts = config::eval_from_json(parse_optional(eval_json));
    const auto insts = select(ds, *model->state.model, split);
    const training::EvalReport rep = training::evaluate(*model->state.model, insts, opts);
    json j = config::to_json(rep);
    j["split"] = split == nullptr ? "test" : split;
    j["iteration"] = model->state.iteration;
    *report_json = dup(j.dump(2));
  });
}

um_status um_model_export_geometry(um_model* model, const um_dataset* ds, const char* split, const char* dir,
                                   const char* eval_json) {
  return guard([&] {
    require(model, "model");
    require(ds, "dataset");
    require(dir, "dir");
    const training::EvalOptions opts = config::eval_from_json(parse_optional(eval_json));
    const auto insts = select(ds, *model->state.model, split);
    io::export_geometry(*model->state.model, insts, dir, opts.forward);
  });
}

um_status um_model_export_matchings(um_model* model, const um_dataset* ds, const char* split, const char* dir,
                                    const char* eval_json, int include_pairwise) {
  return guard([&] {
    require(model, "model");
    require(ds, "dataset");
    require(dir, "dir");
    const training::EvalOptions opts = config::eval_from_json(parse_optional(eval_json));
    const auto insts = select(ds, *model->state.model, split);
    std::filesystem::create_directories(dir);
    network::Model& net = *model->state.model;
    for (std::size_t c = 0; c < net.categories().size(); ++c) {
      matching::MultiMatching multi;
      for (const training::PreparedInstance& inst : insts)
        if (inst.category == static_cast<int>(c)) multi.instances.emplace_back(inst.id, training::predict(net, inst, opts.forward));
      const auto& cat = net.categories()[c];
      const std::string path = (std::filesystem::path(dir) / ("matchings_" + cat.name + ".json")).string();
      io::export_matchings(multi, cat.universe_size, path, include_pairwise != 0);
    }
  });
}

void um_model_free(um_model* model) { delete model; }

}  // extern "C"
