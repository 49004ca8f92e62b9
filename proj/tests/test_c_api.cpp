#include "unimatch/unimatch.h"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s == nullptr ? "" : s;
  um_string_free(s);
  return out;
}

const char* kSmallNet = R"({"encoder_widths":[8,8],"point_widths":[8],"offset_widths":[8],"latent":6,"rounds":1})";

}  // namespace

TEST_CASE("C API datasets") {
  CHECK(std::string(um_version()).size() > 0);
  CHECK(std::string(um_status_name(UM_ERR_INTEGRITY)) == "integrity");

  um_dataset* ds = nullptr;
  REQUIRE(um_dataset_synthesize(R"({"instances":200,"universe_sizes":[10],"seed":1})", &ds) == UM_OK);
  char* text = nullptr;
  REQUIRE(um_dataset_summary(ds, &text) == UM_OK);
  const json summary = json::parse(take(text));
  CHECK(summary["instances"] == 200);
  CHECK(summary["train"] == 160);
  CHECK(summary["test"] == 40);
  CHECK(summary["categories"][0]["universe_size"] == 10);

  const fs::path dir = fs::temp_directory_path() / "unimatch-test-capi";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string path = (dir / "d.txt").string();
  REQUIRE(um_dataset_save(ds, path.c_str()) == UM_OK);
  um_dataset* back = nullptr;
  REQUIRE(um_dataset_load(path.c_str(), &back) == UM_OK);
  REQUIRE(um_dataset_summary(back, &text) == UM_OK);
  CHECK(json::parse(take(text)) == summary);
  um_dataset_free(back);
  um_dataset_free(ds);

  um_dataset* none = nullptr;
  CHECK(um_dataset_synthesize(R"({"instances":0})", &none) == UM_ERR_USAGE);
  CHECK(none == nullptr);
  CHECK(std::string(um_last_error()).size() > 0);
  CHECK(um_dataset_synthesize(R"({"bogus":1})", &none) == UM_ERR_USAGE);
  CHECK(um_dataset_synthesize("{not json", &none) == UM_ERR_USAGE);
  CHECK(um_dataset_load("/nonexistent/unimatch.txt", &none) == UM_ERR_IO);
  CHECK(um_dataset_summary(nullptr, &text) == UM_ERR_USAGE);
  um_dataset_free(nullptr);
}

TEST_CASE("C API training round trip") {
  um_dataset* ds = nullptr;
  REQUIRE(um_dataset_synthesize(R"({"instances":20,"universe_sizes":[6],"seed":2})", &ds) == UM_OK);
  um_model* model = nullptr;
  REQUIRE(um_model_create(ds, kSmallNet, 4, &model) == UM_OK);

  char* text = nullptr;
  REQUIRE(um_model_run_config(model, &text) == UM_OK);
  CHECK(take(text) == "{}");

  const fs::path dir = fs::temp_directory_path() / "unimatch-test-capi-train";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string ckpt = (dir / "m.ckpt").string();

  SUBCASE("zero iterations keep the default schedule and write a checkpoint") {
    REQUIRE(um_model_train(model, ds, R"({"total_iterations":0})", ckpt.c_str(), nullptr, nullptr, &text) == UM_OK);
    CHECK(json::parse(take(text))["iterations_run"] == 0);
    CHECK(fs::exists(ckpt));
    REQUIRE(um_model_run_config(model, &text) == UM_OK);
    const json t = json::parse(take(text))["train"];
    CHECK(t["warm_start_iterations"] == 4000);
    CHECK(t["batch_size"] == 16);
    CHECK(t["initial_lr"] == 0.008);
    CHECK(t["decay_factor"] == 0.98);
    CHECK(t["decay_every"] == 3000);
    CHECK(t["weights"]["deform"] == 0.5);
  }

  SUBCASE("training, evaluation and exports") {
    std::vector<std::string> lines;
    auto on_log = [](const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); };
    const char* cfg = R"({"warm_start_iterations":5,"total_iterations":12,"batch_size":4,"log_every":3})";
    REQUIRE(um_model_train(model, ds, cfg, ckpt.c_str(), on_log, &lines, &text) == UM_OK);
    CHECK(json::parse(take(text))["iteration"] == 12);
    CHECK(lines.size() == 4);
    CHECK(json::parse(lines.front())["phase"] == "warm_start");

    um_model* loaded = nullptr;
    REQUIRE(um_model_load(ckpt.c_str(), &loaded) == UM_OK);
    int it = 0;
    REQUIRE(um_model_iteration(loaded, &it) == UM_OK);
    CHECK(it == 12);

    char* a = nullptr;
    char* b = nullptr;
    REQUIRE(um_model_evaluate(model, ds, "test", nullptr, &a) == UM_OK);
    REQUIRE(um_model_evaluate(loaded, ds, nullptr, nullptr, &b) == UM_OK);
    const json ra = json::parse(take(a));
    CHECK(ra == json::parse(take(b)));
    CHECK(ra["split"] == "test");
    CHECK(ra["average_accuracy"].is_number());
    CHECK(ra["categories"][0]["cycle_consistent"] == true);
    CHECK(um_model_evaluate(model, ds, "validation", nullptr, &a) == UM_ERR_USAGE);

    const std::string gdir = (dir / "geom").string();
    REQUIRE(um_model_export_geometry(loaded, ds, "all", gdir.c_str(), nullptr) == UM_OK);
    CHECK(fs::exists(fs::path(gdir) / "universe_cat0.ply"));
    CHECK(fs::exists(fs::path(gdir) / "geometry_summary.json"));
    const std::string mdir = (dir / "match").string();
    REQUIRE(um_model_export_matchings(loaded, ds, "test", mdir.c_str(), nullptr, 1) == UM_OK);
    CHECK(fs::exists(fs::path(mdir) / "matchings_cat0.json"));

    // Resuming keeps the stored schedule and extends it.
    REQUIRE(um_model_train(loaded, ds, R"({"total_iterations":15})", nullptr, nullptr, nullptr, &text) == UM_OK);
    CHECK(json::parse(take(text))["iterations_run"] == 3);
    REQUIRE(um_model_run_config(loaded, &text) == UM_OK);
    CHECK(json::parse(take(text))["train"]["batch_size"] == 4);
    um_model_free(loaded);
  }

  SUBCASE("divergence reports a numerical error") {
    const char* cfg = R"({"warm_start_iterations":0,"total_iterations":5,"batch_size":4,"initial_lr":1e200})";
    CHECK(um_model_train(model, ds, cfg, ckpt.c_str(), nullptr, nullptr, &text) == UM_ERR_NUMERICAL);
    um_string_free(text);
    CHECK(fs::exists(ckpt));
  }

  SUBCASE("bad settings") {
    CHECK(um_model_train(model, ds, R"({"total_iterations":-1})", nullptr, nullptr, nullptr, nullptr) == UM_ERR_USAGE);
    CHECK(um_model_train(model, ds, R"({"nope":1})", nullptr, nullptr, nullptr, nullptr) == UM_ERR_USAGE);
    um_model* m2 = nullptr;
    CHECK(um_model_create(ds, R"({"latent":0})", 0, &m2) == UM_ERR_USAGE);
    CHECK(um_model_load((dir / "absent.ckpt").string().c_str(), &m2) == UM_ERR_IO);
  }

  um_model_free(model);
  um_dataset_free(ds);
}
