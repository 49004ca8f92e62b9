// Command-line front end over the C interface.

#include "unimatch/unimatch.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct Failure {
  int code;
  std::string message;
};

int exit_code(um_status s) {
  if (s == UM_ERR_USAGE) return kExitUsage;
  if (s == UM_ERR_NUMERICAL) return kExitNumerical;
  return kExitData;
}

void check(um_status s) {
  if (s != UM_OK) throw Failure{exit_code(s), std::string(um_status_name(s)) + " error: " + um_last_error()};
}

std::string take(char* s) {
  std::string out = s == nullptr ? "" : s;
  um_string_free(s);
  return out;
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  ~Handle() { Free(p); }
};
using Dataset = Handle<um_dataset, um_dataset_free>;
using Model = Handle<um_model, um_model_free>;

std::string default_output_dir() {
  const char* env = std::getenv("UNIMATCH_OUTPUT_DIR");
  return env != nullptr && *env != '\0' ? env : "unimatch-out";
}

// Config file layout: {"seed", "threads", "output_dir", "synth", "network", "train", "eval"}.
json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw Failure{kExitUsage, "cannot open config file " + path};
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Failure{kExitUsage, "config file " + path + ": " + e.what()};
  }
  if (!j.is_object()) throw Failure{kExitUsage, "config file must hold a JSON object"};
  static const std::vector<std::string> known{"seed", "threads", "output_dir", "synth", "network", "train", "eval"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw Failure{kExitUsage, "unknown config key '" + key + "'"};
  return j;
}

json section(const json& cfg, const char* name) { return cfg.contains(name) ? cfg.at(name) : json::object(); }

template <typename T>
void put(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

struct Common {
  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file (flags take precedence)");
    app->add_option("--out", out, "Output directory (default $UNIMATCH_OUTPUT_DIR or ./unimatch-out)");
    app->add_option("--seed", seed, "Random seed");
  }

  std::string output_dir(const json& cfg) const {
    if (out) return *out;
    if (cfg.contains("output_dir")) return cfg.at("output_dir").get<std::string>();
    return default_output_dir();
  }

  std::optional<std::uint64_t> seed_or(const json& cfg) const {
    if (seed) return seed;
    if (cfg.contains("seed")) return cfg.at("seed").get<std::uint64_t>();
    return std::nullopt;
  }
};

struct SynthArgs {
  Common common;
  std::optional<int> categories, instances;
  std::vector<int> points;
  std::optional<double> test_fraction, deformation, noise, occlusion, max_rotation;

  int run() const {
    const json cfg = load_config(common.config_path);
    json s = section(cfg, "synth");
    put(s, "categories", categories);
    if (!points.empty()) s["universe_sizes"] = points;
    put(s, "instances", instances);
    put(s, "test_fraction", test_fraction);
    put(s, "deformation", deformation);
    put(s, "noise", noise);
    put(s, "occlusion", occlusion);
    put(s, "max_rotation_angle", max_rotation);
    put(s, "seed", common.seed_or(cfg));

    Dataset ds;
    check(um_dataset_synthesize(s.dump().c_str(), &ds.p));
    const fs::path dir = common.output_dir(cfg);
    const std::string path = (dir / "dataset.txt").string();
    check(um_dataset_save(ds.p, path.c_str()));
    char* summary = nullptr;
    check(um_dataset_summary(ds.p, &summary));
    json j = json::parse(take(summary));
    j["path"] = path;
    std::cout << j.dump(2) << '\n';
    return 0;
  }
};

struct TrainArgs {
  Common common;
  std::string data;
  std::optional<std::string> resume;
  std::optional<int> threads, warm_start, iterations, batch_size, decay_every, log_every, checkpoint_every, latent,
      rounds;
  std::optional<double> lr, decay, w_match, w_def, w_rec, w_off, w_reg;
  std::optional<std::string> optimizer;
  std::vector<std::string> ablate;
  bool freeze_universe_graph = false;

  json train_settings(const json& cfg) const {
    json t = section(cfg, "train");
    if (cfg.contains("threads") && !t.contains("threads")) t["threads"] = cfg.at("threads");
    put(t, "threads", threads);
    put(t, "warm_start_iterations", warm_start);
    put(t, "total_iterations", iterations);
    put(t, "batch_size", batch_size);
    put(t, "initial_lr", lr);
    put(t, "decay_factor", decay);
    put(t, "decay_every", decay_every);
    put(t, "log_every", log_every);
    put(t, "checkpoint_every", checkpoint_every);
    put(t, "optimizer", optimizer);
    json w = t.contains("weights") ? t["weights"] : json::object();
    put(w, "match", w_match);
    put(w, "deform", w_def);
    put(w, "rec", w_rec);
    put(w, "off", w_off);
    put(w, "reg", w_reg);
    if (!w.empty()) t["weights"] = w;
    if (freeze_universe_graph) t["freeze_universe_graph"] = true;
    for (const std::string& a : ablate) {
      if (a == "no-deform")
        t["deformation"] = false;
      else if (a == "no-warm-start")
        t["warm_start_iterations"] = 0;
      else
        throw Failure{kExitUsage, "unknown ablation '" + a + "' (expected no-deform or no-warm-start)"};
    }
    return t;
  }

  int run() const {
    const json cfg = load_config(common.config_path);
    const json t = train_settings(cfg);
    const fs::path dir = common.output_dir(cfg);
    fs::create_directories(dir);
    const std::string ckpt = (dir / "model.ckpt").string();
    const std::string log_path = (dir / "metrics.jsonl").string();

    Dataset ds;
    check(um_dataset_load(data.c_str(), &ds.p));
    Model model;
    if (resume) {
      check(um_model_load(resume->c_str(), &model.p));
    } else {
      json net = section(cfg, "network");
      put(net, "latent", latent);
      put(net, "rounds", rounds);
      check(um_model_create(ds.p, net.dump().c_str(), common.seed_or(cfg).value_or(0), &model.p));
    }

    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw Failure{kExitData, "cannot write " + log_path};
    auto on_log = [](const char* line, void* user) {
      *static_cast<std::ofstream*>(user) << line << '\n';
      std::cerr << line << '\n';
    };
    char* result = nullptr;
    const um_status s = um_model_train(model.p, ds.p, t.dump().c_str(), ckpt.c_str(), on_log, &log, &result);
    const std::string result_text = take(result);
    char* used = nullptr;
    check(um_model_run_config(model.p, &used));
    std::cerr << "settings: " << take(used) << '\n';
    check(s);
    json r = json::parse(result_text);
    r["checkpoint"] = ckpt;
    r["metrics_log"] = log_path;
    std::cout << r.dump(2) << '\n';
    return 0;
  }
};

struct EvalArgs {
  Common common;
  std::string checkpoint, data, split = "test";
  std::optional<int> exhaustive_limit, samples;
  bool no_deform = false;

  json eval_settings(const json& cfg) const {
    json e = section(cfg, "eval");
    put(e, "seed", common.seed_or(cfg));
    put(e, "exhaustive_limit", exhaustive_limit);
    put(e, "sampled_triples", samples);
    if (no_deform) e["deformation"] = false;
    return e;
  }

  void load(const json& cfg, Dataset& ds, Model& model, json& e) const {
    check(um_dataset_load(data.c_str(), &ds.p));
    check(um_model_load(checkpoint.c_str(), &model.p));
    e = eval_settings(cfg);
    // A model trained without deformation is evaluated the same way.
    char* rc = nullptr;
    check(um_model_run_config(model.p, &rc));
    const json run = json::parse(take(rc));
    if (!e.contains("deformation") && run.contains("train") && run["train"].value("deformation", true) == false)
      e["deformation"] = false;
  }

  int run() const {
    const json cfg = load_config(common.config_path);
    Dataset ds;
    Model model;
    json e;
    load(cfg, ds, model, e);
    char* report = nullptr;
    check(um_model_evaluate(model.p, ds.p, split.c_str(), e.dump().c_str(), &report));
    const std::string text = take(report);
    const fs::path dir = common.output_dir(cfg);
    fs::create_directories(dir);
    const std::string path = (dir / "eval_report.json").string();
    std::ofstream out(path);
    if (!out) throw Failure{kExitData, "cannot write " + path};
    out << text << '\n';
    std::cout << text << '\n';
    return 0;
  }
};

struct ExportArgs {
  EvalArgs eval;
  std::string what;
  bool pairwise = false;

  int run() const {
    if (what != "geometry" && what != "matchings")
      throw Failure{kExitUsage, "unknown export '" + what + "' (expected geometry or matchings)"};
    const json cfg = load_config(eval.common.config_path);
    Dataset ds;
    Model model;
    json e;
    eval.load(cfg, ds, model, e);
    const std::string dir = eval.common.output_dir(cfg);
    if (what == "geometry")
      check(um_model_export_geometry(model.p, ds.p, eval.split.c_str(), dir.c_str(), e.dump().c_str()));
    else
      check(um_model_export_matchings(model.p, ds.p, eval.split.c_str(), dir.c_str(), e.dump().c_str(), pairwise ? 1 : 0));
    std::cout << json{{"exported", what}, {"directory", dir}}.dump() << '\n';
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint universe-point learning and cycle-consistent keypoint matching"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(um_version()));

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic keypoint dataset");
  synth.common.add(s);
  s->add_option("--categories", synth.categories, "Number of categories");
  s->add_option("--points", synth.points, "Universe size (one value or one per category)");
  s->add_option("--instances", synth.instances, "Instances per category");
  s->add_option("--test-fraction", synth.test_fraction, "Fraction of instances tagged test");
  s->add_option("--deformation", synth.deformation, "Deformation amplitude");
  s->add_option("--noise", synth.noise, "Keypoint noise (normalized units)");
  s->add_option("--occlusion", synth.occlusion, "Per-keypoint occlusion probability");
  s->add_option("--max-rotation", synth.max_rotation, "Largest camera rotation angle in radians (pi = uniform)");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model");
  train.common.add(t);
  t->add_option("--data", train.data, "Dataset file")->required();
  t->add_option("--resume", train.resume, "Continue from a checkpoint");
  t->add_option("--threads", train.threads, "Worker threads for batch elements");
  t->add_option("--warm-start", train.warm_start, "Reconstruction-only iterations (default 4000)");
  t->add_option("--iterations", train.iterations, "Total iterations including the warm start (default 150000)");
  t->add_option("--batch-size", train.batch_size, "Instances per step (default 16)");
  t->add_option("--lr", train.lr, "Initial learning rate (default 0.008)");
  t->add_option("--decay", train.decay, "Learning-rate decay factor (default 0.98)");
  t->add_option("--decay-every", train.decay_every, "Iterations between decays (default 3000)");
  t->add_option("--w-match", train.w_match, "Matching loss weight");
  t->add_option("--w-def", train.w_def, "Deformed reconstruction loss weight");
  t->add_option("--w-rec", train.w_rec, "Static reconstruction loss weight (main phase)");
  t->add_option("--w-off", train.w_off, "Offset penalty weight");
  t->add_option("--w-reg", train.w_reg, "One-to-one regularizer weight");
  t->add_option("--optimizer", train.optimizer, "adam or sgd");
  t->add_option("--latent", train.latent, "Graph network latent width");
  t->add_option("--rounds", train.rounds, "Message passing rounds");
  t->add_option("--log-every", train.log_every, "Metrics log interval");
  t->add_option("--checkpoint-every", train.checkpoint_every, "Checkpoint interval");
  t->add_option("--ablate", train.ablate, "no-deform and/or no-warm-start");
  t->add_flag("--freeze-universe-graph", train.freeze_universe_graph, "Build universe edges from static points");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval.common.add(e);
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", eval.data, "Dataset file")->required();
  e->add_option("--split", eval.split, "train, test or all")->capture_default_str();
  e->add_option("--exhaustive-limit", eval.exhaustive_limit, "Enumerate all triples up to this many instances");
  e->add_option("--samples", eval.samples, "Sampled triples above the limit");
  e->add_flag("--no-deform", eval.no_deform, "Evaluate with offsets forced to zero");

  ExportArgs exp;
  auto* x = app.add_subcommand("export", "Export geometry or matchings");
  exp.eval.common.add(x);
  x->add_option("what", exp.what, "geometry or matchings")->required();
  x->add_option("--checkpoint", exp.eval.checkpoint, "Checkpoint file")->required();
  x->add_option("--data", exp.eval.data, "Dataset file")->required();
  x->add_option("--split", exp.eval.split, "train, test or all")->capture_default_str();
  x->add_flag("--pairwise", exp.pairwise, "Include composed pairwise matchings");
  x->add_flag("--no-deform", exp.eval.no_deform, "Export with offsets forced to zero");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (s->parsed()) return synth.run();
    if (t->parsed()) return train.run();
    if (e->parsed()) return eval.run();
    if (x->parsed()) return exp.run();
  } catch (const Failure& f) {
    std::cerr << "unimatch: " << f.message << '\n';
    return f.code;
  } catch (const json::exception& err) {
    std::cerr << "unimatch: invalid setting: " << err.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "unimatch: " << err.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
