#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "popmap/popmap.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path path;
  Scratch() {
    path = fs::temp_directory_path() / ("popmap-capi-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

struct Config {
  popmap_config* c = nullptr;
  Config() { REQUIRE(popmap_config_new(&c) == POPMAP_OK); }
  ~Config() { popmap_config_free(c); }
  popmap_status set(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::vector<const char*> keys, values;
    for (const auto& [k, v] : kv) {
      keys.push_back(k.c_str());
      values.push_back(v.c_str());
    }
    return popmap_config_apply(c, keys.data(), values.data(), kv.size());
  }
  std::string get(const char* key) {
    size_t needed = 0;
    REQUIRE(popmap_config_get(c, key, nullptr, 0, &needed) == POPMAP_OK);
    std::string buf(needed, '\0');
    REQUIRE(popmap_config_get(c, key, buf.data(), buf.size(), nullptr) == POPMAP_OK);
    buf.pop_back();
    return buf;
  }
  std::string hash() {
    char h[17];
    REQUIRE(popmap_config_hash(c, h) == POPMAP_OK);
    return h;
  }
};

void collect(const char* line, void* user) {
  static_cast<std::vector<std::string>*>(user)->push_back(line);
}

} // namespace

TEST_CASE("status names and exit codes") {
  CHECK(std::string(popmap_status_name(POPMAP_OK)) == "Ok");
  CHECK(std::string(popmap_status_name(POPMAP_E_MISSING_TILE)) == "MissingTileError");
  CHECK(std::string(popmap_status_name(POPMAP_E_DIVERGENCE)) == "DivergenceError");
  CHECK(std::string(popmap_status_name(static_cast<popmap_status>(57))) == "UnknownError");

  CHECK(popmap_exit_code(POPMAP_OK) == 0);
  for (auto s : {POPMAP_E_USAGE, POPMAP_E_CONFIG, POPMAP_E_SPEC, POPMAP_E_SHAPE_INCOMPATIBLE})
    CHECK(popmap_exit_code(s) == 1);
  for (auto s : {POPMAP_E_MISSING_TILE, POPMAP_E_CHECKPOINT, POPMAP_E_IO, POPMAP_E_DEGENERATE_TRUTH,
                 POPMAP_E_OUT_OF_BOUNDS, POPMAP_E_INTERNAL})
    CHECK(popmap_exit_code(s) == 2);
  CHECK(popmap_exit_code(POPMAP_E_DIVERGENCE) == 3);
  CHECK(std::strlen(popmap_version()) > 0);
}

TEST_CASE("configuration through the C API") {
  Config cfg;
  CHECK(cfg.get("seed") == "1");
  const auto h0 = cfg.hash();
  CHECK(h0.size() == 16);

  CHECK(cfg.set({{"seed", "5"}, {"epochs", "3"}}) == POPMAP_OK);
  CHECK(cfg.get("seed") == "5");
  CHECK(cfg.get("epochs") == "3");
  const auto h1 = cfg.hash();
  CHECK(h1 != h0);

  // A bad entry anywhere in the batch leaves everything unchanged.
  CHECK(cfg.set({{"seed", "8"}, {"no_such_key", "1"}}) == POPMAP_E_CONFIG);
  CHECK(std::string(popmap_last_error()).find("no_such_key") != std::string::npos);
  CHECK(cfg.get("seed") == "5");
  CHECK(cfg.hash() == h1);
  CHECK(cfg.set({{"epochs", "-"}}) == POPMAP_E_CONFIG);
  CHECK(cfg.get("epochs") == "3");

  CHECK(popmap_config_get(cfg.c, "bogus", nullptr, 0, nullptr) == POPMAP_E_CONFIG);
  char small[3];
  size_t needed = 0;
  CHECK(popmap_config_get(cfg.c, "model_kind", small, sizeof small, &needed) == POPMAP_OK);
  CHECK(std::string(small) == "SI");
  CHECK(needed == std::strlen("SINGLE_OPTICAL") + 1);
  CHECK(popmap_last_error()[0] == '\0');

  CHECK(popmap_config_validate(cfg.c) == POPMAP_OK);
  CHECK(cfg.set({{"train_frac", "0"}}) == POPMAP_OK);
  CHECK(popmap_config_validate(cfg.c) == POPMAP_E_CONFIG);

  const size_t n = popmap_config_key_count();
  REQUIRE(n > 40);
  for (size_t i = 1; i < n; ++i)
    CHECK(std::strcmp(popmap_config_key(i - 1), popmap_config_key(i)) < 0);
  CHECK(popmap_config_key(n) == nullptr);

  Scratch dir;
  std::ofstream(dir.path / "a.cfg") << "seed = 11\nbatch_size = 4\n";
  CHECK(popmap_config_load(cfg.c, (dir.path / "a.cfg").c_str()) == POPMAP_OK);
  CHECK(cfg.get("seed") == "11");
  CHECK(cfg.get("batch_size") == "4");
  CHECK(popmap_config_load(cfg.c, (dir.path / "missing.cfg").c_str()) == POPMAP_E_CONFIG);

  CHECK(popmap_config_new(nullptr) == POPMAP_E_USAGE);
  CHECK(popmap_config_apply(nullptr, nullptr, nullptr, 0) == POPMAP_E_USAGE);
  popmap_config_free(nullptr);
}

TEST_CASE("metrics through the C API") {
  const double truth[] = {1.0, 2.0, 3.0, 4.0};
  const double mean[] = {2.5, 2.5, 2.5, 2.5};
  const double pred[] = {1.5, 2.0, 2.5, 5.0};
  double v = -1;
  CHECK(popmap_r_squared(mean, truth, 4, &v) == POPMAP_OK);
  CHECK(v == 0.0);
  CHECK(popmap_r_squared(pred, truth, 4, &v) == POPMAP_OK);
  CHECK(v == doctest::Approx(1.0 - 1.5 / 5.0));
  CHECK(popmap_mape(pred, truth, 4, &v) == POPMAP_OK);
  CHECK(v == doctest::Approx(100.0 * (0.5 + 0.0 + 0.5 / 3.0 + 0.25) / 4.0));
  CHECK(popmap_pct_rmse(pred, truth, 4, &v) == POPMAP_OK);
  CHECK(v == doctest::Approx(100.0 * std::sqrt(1.5 / 4.0) / 2.5));
  CHECK(popmap_pearson(truth, truth, 4, &v) == POPMAP_OK);
  CHECK(v == doctest::Approx(1.0));

  const double constant[] = {3.0, 3.0, 3.0};
  CHECK(popmap_r_squared(pred, constant, 3, &v) == POPMAP_E_DEGENERATE_TRUTH);
  const double zero[] = {1.0, 0.0};
  CHECK(popmap_mape(pred, zero, 2, &v) == POPMAP_E_ZERO_TRUTH);
  CHECK(popmap_r_squared(pred, truth, 4, nullptr) == POPMAP_E_USAGE);
}

TEST_CASE("pipeline and model through the C API") {
  Scratch dir;
  const auto out = (dir.path / "out").string();
  Config cfg;
  REQUIRE(cfg.set({{"out", out},
                   {"seed", "4"},
                   {"n_states", "1"},
                   {"n_districts_per_state", "2"},
                   {"n_subdistricts_per_district", "3"},
                   {"n_villages_per_subdistrict", "6"},
                   {"train_frac", "0.5"},
                   {"width_multiplier", "0.125"},
                   {"input_side", "64"},
                   {"epochs", "1"},
                   {"batch_size", "6"},
                   {"eval_batch_size", "8"}}) == POPMAP_OK);

  CHECK(popmap_run(cfg.c, "eval", nullptr, nullptr) == POPMAP_E_CHECKPOINT);
  CHECK(popmap_run(cfg.c, "fly", nullptr, nullptr) == POPMAP_E_USAGE);
  CHECK(popmap_run(cfg.c, nullptr, nullptr, nullptr) == POPMAP_E_USAGE);

  REQUIRE(popmap_command_count() == 6);
  CHECK(std::string(popmap_command_name(0)) == "synthgen");
  CHECK(popmap_command_name(6) == nullptr);
  std::vector<std::string> log;
  for (size_t i = 0; i < 4; ++i) // through eval
    REQUIRE_MESSAGE(popmap_run(cfg.c, popmap_command_name(i), collect, &log) == POPMAP_OK,
                    popmap_last_error());
  CHECK(!log.empty());

  // Reload the checkpoint and predict the evaluated villages again.
  std::vector<std::string> ids;
  std::vector<double> expected;
  {
    std::ifstream in(dir.path / "out" / "predictions.csv");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("village_id", 0) == 0)
        continue;
      const auto comma = line.find(',');
      ids.push_back(line.substr(0, comma));
      expected.push_back(std::stod(line.substr(comma + 1)));
    }
  }
  REQUIRE(!ids.empty());

  popmap_model* model = nullptr;
  REQUIRE(popmap_model_load((dir.path / "out" / "checkpoint.bin").c_str(), &model) == POPMAP_OK);
  int side = 0, dim = 0;
  CHECK(popmap_model_info(model, &side, &dim) == POPMAP_OK);
  CHECK(side == 64);
  CHECK(dim == 1);

  std::vector<const char*> id_ptrs;
  for (const auto& id : ids)
    id_ptrs.push_back(id.c_str());
  std::vector<double> got(ids.size());
  REQUIRE(popmap_model_predict(model, (dir.path / "out" / "manifest.csv").c_str(),
                               (dir.path / "out" / "tiles").c_str(), id_ptrs.data(), ids.size(), 8,
                               got.data()) == POPMAP_OK);
  for (size_t i = 0; i < ids.size(); ++i)
    CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));

  const char* unknown = "nowhere";
  double dummy = 0;
  CHECK(popmap_model_predict(model, (dir.path / "out" / "manifest.csv").c_str(),
                             (dir.path / "out" / "tiles").c_str(), &unknown, 1, 8,
                             &dummy) == POPMAP_E_MISSING_TILE);
  popmap_model_free(model);

  popmap_model* none = nullptr;
  CHECK(popmap_model_load((dir.path / "absent.bin").c_str(), &none) == POPMAP_E_CHECKPOINT);
  CHECK(none == nullptr);
}
