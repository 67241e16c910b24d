#include "popmap/popmap.h"

#include "popmap/config.hpp"
#include "popmap/error.hpp"
#include "popmap/evaluate.hpp"
#include "popmap/ingest.hpp"
#include "popmap/pipeline.hpp"
#include "popmap/train.hpp"

#include <cstring>
#include <exception>
#include <new>
#include <string>

struct popmap_config {
  popmap::ExperimentConfig value;
};

struct popmap_model {
  popmap::Network<float> network;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
popmap_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return POPMAP_OK;
  } catch (const popmap::Error& e) {
    g_last_error = e.what();
    return static_cast<popmap_status>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown failure";
  }
  return POPMAP_E_INTERNAL;
}

void need(const void* p, const char* what) {
  if (!p)
    popmap::fail(popmap::ErrorCode::Usage, std::string(what) + " must not be null");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& kv : popmap::ExperimentConfig{}.to_map())
      out.push_back(kv.first);
    return out;
  }();
  return keys;
}

using Metric = double (*)(std::span<const double>, std::span<const double>);

popmap_status metric(Metric f, const double* pred, const double* truth, size_t n, double* out) {
  return guarded([&] {
    need(out, "out");
    if (n > 0) {
      need(pred, "pred");
      need(truth, "truth");
    }
    *out = f({pred, n}, {truth, n});
  });
}

} // namespace

extern "C" {

const char* popmap_status_name(popmap_status status) {
  return popmap::error_code_name(static_cast<popmap::ErrorCode>(status));
}

int popmap_exit_code(popmap_status status) {
  return popmap::exit_status(static_cast<popmap::ErrorCode>(status));
}

const char* popmap_last_error(void) { return g_last_error.c_str(); }

const char* popmap_version(void) { return POPMAP_VERSION_STRING; }

popmap_status popmap_config_new(popmap_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new popmap_config{};
  });
}

void popmap_config_free(popmap_config* config) { delete config; }

popmap_status popmap_config_load(popmap_config* config, const char* path) {
  return guarded([&] {
    need(config, "config");
    need(path, "path");
    config->value.apply(popmap::read_config_file(path));
  });
}

popmap_status popmap_config_apply(popmap_config* config, const char* const* keys,
                                  const char* const* values, size_t n) {
  return guarded([&] {
    need(config, "config");
    popmap::ConfigMap batch;
    for (size_t i = 0; i < n; ++i) {
      need(keys[i], "key");
      need(values[i], "value");
      batch[keys[i]] = values[i];
    }
    // Applied to a copy so a bad key leaves the configuration untouched.
    popmap::ExperimentConfig next = config->value;
    next.apply(batch);
    config->value = std::move(next);
  });
}

popmap_status popmap_config_get(const popmap_config* config, const char* key, char* buf,
                                size_t buf_size, size_t* needed) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    const auto map = config->value.to_map();
    auto it = map.find(key);
    if (it == map.end())
      popmap::fail(popmap::ErrorCode::Config, std::string("unknown config key '") + key + "'");
    if (needed)
      *needed = it->second.size() + 1;
    if (buf && buf_size > 0) {
      const size_t n = std::min(buf_size - 1, it->second.size());
      std::memcpy(buf, it->second.data(), n);
      buf[n] = '\0';
    }
  });
}

size_t popmap_config_key_count(void) { return config_keys().size(); }

const char* popmap_config_key(size_t index) {
  const auto& keys = config_keys();
  return index < keys.size() ? keys[index].c_str() : nullptr;
}

popmap_status popmap_config_hash(const popmap_config* config, char out[17]) {
  return guarded([&] {
    need(config, "config");
    need(out, "out");
    const std::string h = config->value.hash();
    std::memcpy(out, h.c_str(), 17);
  });
}

popmap_status popmap_config_validate(const popmap_config* config) {
  return guarded([&] {
    need(config, "config");
    config->value.validate();
  });
}

size_t popmap_command_count(void) { return std::size(popmap::kCommandNames); }

const char* popmap_command_name(size_t index) {
  return index < popmap_command_count() ? popmap::kCommandNames[index] : nullptr;
}

popmap_status popmap_run(const popmap_config* config, const char* command, popmap_log_fn log,
                         void* user) {
  return guarded([&] {
    need(config, "config");
    need(command, "command");
    popmap::LogFn fn;
    if (log)
      fn = [log, user](const std::string& line) { log(line.c_str(), user); };
    popmap::run_command(command, config->value, fn);
  });
}

popmap_status popmap_r_squared(const double* pred, const double* truth, size_t n, double* out) {
  return metric(&popmap::r_squared, pred, truth, n, out);
}

popmap_status popmap_pearson(const double* pred, const double* truth, size_t n, double* out) {
  return metric(&popmap::pearson, pred, truth, n, out);
}

popmap_status popmap_mape(const double* pred, const double* truth, size_t n, double* out) {
  return metric(&popmap::mape, pred, truth, n, out);
}

popmap_status popmap_pct_rmse(const double* pred, const double* truth, size_t n, double* out) {
  return metric(&popmap::pct_rmse, pred, truth, n, out);
}

popmap_status popmap_model_load(const char* checkpoint_path, popmap_model** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint_path");
    need(out, "out");
    *out = new popmap_model{popmap::load_checkpoint(checkpoint_path)};
  });
}

void popmap_model_free(popmap_model* model) { delete model; }

popmap_status popmap_model_info(const popmap_model* model, int* input_side, int* output_dim) {
  return guarded([&] {
    need(model, "model");
    if (input_side)
      *input_side = model->network.spec().input_side;
    if (output_dim)
      *output_dim = model->network.output_dim();
  });
}

popmap_status popmap_model_predict(popmap_model* model, const char* manifest_path,
                                   const char* tile_root, const char* const* village_ids,
                                   size_t n, int batch_size, double* out_log2) {
  return guarded([&] {
    need(model, "model");
    need(manifest_path, "manifest_path");
    need(tile_root, "tile_root");
    if (n > 0) {
      need(village_ids, "village_ids");
      need(out_log2, "out_log2");
    }
    popmap::ManifestLoadOptions options;
    options.tile_root = tile_root;
    const auto manifest = popmap::load_manifest(manifest_path, options);
    std::vector<std::string> ids;
    for (size_t i = 0; i < n; ++i) {
      need(village_ids[i], "village id");
      ids.emplace_back(village_ids[i]);
    }
    const auto preds = popmap::predict(model->network, manifest, ids, batch_size);
    for (size_t i = 0; i < n; ++i)
      out_log2[i] = preds.at(ids[i]).value;
  });
}

} // extern "C"
