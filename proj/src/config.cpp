#include "popmap/config.hpp"

#include "popmap/error.hpp"
#include "popmap/rng.hpp"
#include "popmap/text.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace popmap {

ConfigMap parse_config_text(const std::string& body, const std::string& origin) {
  ConfigMap out;
  std::istringstream in(body);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = line.substr(0, line.find('#'));
    auto t = text::trim(view);
    if (t.empty())
      continue;
    const auto eq = t.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos)
      fail(ErrorCode::Config, where + ": expected key = value");
    const std::string key(text::trim(t.substr(0, eq)));
    if (key.empty())
      fail(ErrorCode::Config, where + ": empty key");
    if (!out.emplace(key, std::string(text::trim(t.substr(eq + 1)))).second)
      fail(ErrorCode::Config, where + ": duplicate key '" + key + "'");
  }
  return out;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorCode::Config, "cannot read config file " + path.string());
  std::ostringstream body;
  body << in.rdbuf();
  return parse_config_text(body.str(), path.string());
}

namespace {

struct Binding {
  std::string key;
  std::function<std::string()> get;
  std::function<void(std::string_view)> set;
};

[[noreturn]] void bad_value(const std::string& key, std::string_view value) {
  fail(ErrorCode::Config, "bad value '" + std::string(value) + "' for key " + key);
}

template <typename T>
Binding number(std::string key, T& field) {
  return {key,
          [&field] {
            if constexpr (std::is_floating_point_v<T>)
              return text::format_double(field);
            else
              return std::to_string(field);
          },
          [key, &field](std::string_view v) {
            auto parsed = text::parse_number<T>(v);
            if (!parsed)
              bad_value(key, v);
            field = *parsed;
          }};
}

Binding flag(std::string key, bool& field) {
  return {key, [&field] { return std::string(field ? "true" : "false"); },
          [key, &field](std::string_view v) {
            if (v == "true" || v == "1")
              field = true;
            else if (v == "false" || v == "0")
              field = false;
            else
              bad_value(key, v);
          }};
}

Binding path(std::string key, std::filesystem::path& field) {
  return {key, [&field] { return field.generic_string(); },
          [&field](std::string_view v) { field = std::filesystem::path(std::string(v)); }};
}

template <typename E>
Binding choice(std::string key, E& field, std::function<std::string(E)> name,
               std::function<E(std::string_view)> parse) {
  return {key, [&field, name] { return name(field); },
          [key, &field, parse](std::string_view v) {
            try {
              field = parse(v);
            } catch (const Error&) {
              bad_value(key, v);
            }
          }};
}

std::vector<Binding> bindings(ExperimentConfig& c) {
  auto& s = c.synth;
  auto& m = c.model;
  auto& t = c.train;
  std::vector<Binding> b = {
      number("seed", c.seed),
      number("workers", c.workers),
      path("out", c.out_dir),
      path("manifest", c.manifest),
      path("tile_root", c.tile_root),
      path("grid", c.grid),
      path("split", c.split),
      path("checkpoint", c.checkpoint),
      path("predictions", c.predictions),

      number("n_states", s.n_states),
      number("n_districts_per_state", s.n_districts_per_state),
      number("n_subdistricts_per_district", s.n_subdistricts_per_district),
      number("n_villages_per_subdistrict", s.n_villages_per_subdistrict),
      number("density_log2_mean", s.density_log2_mean),
      number("density_log2_std", s.density_log2_std),
      number("density_log2_min", s.density_log2_min),
      number("density_log2_max", s.density_log2_max),
      number("area_pareto_alpha", s.area_pareto_alpha),
      number("area_min_km2", s.area_min_km2),
      number("area_max_km2", s.area_max_km2),
      number("tile_footprint_km", s.tile_footprint_km),
      number("origin_lat", s.origin_lat),
      number("origin_lon", s.origin_lon),
      number("village_spacing_km", s.village_spacing_km),
      number("min_spacing_km", s.min_spacing_km),
      number("structures_per_person", s.structures_per_person),
      number("structure_min_px", s.structure_min_px),
      number("structure_max_px", s.structure_max_px),
      number("structures_per_hamlet", s.structures_per_hamlet),
      number("hamlet_sigma_km", s.hamlet_sigma_km),
      number("fixed_spread_km", s.fixed_spread_km),
      number("max_distractors", s.max_distractors),
      choice<RenderMode>(
          "render_mode", s.render_mode,
          [](RenderMode r) { return std::string(render_mode_name(r)); }, parse_render_mode),
      number("grid_cell_deg", s.grid_cell_deg),
      number("grid_noise_lo", s.grid_noise_lo),
      number("grid_noise_hi", s.grid_noise_hi),
      number("grid_margin_deg", s.grid_margin_deg),

      number("train_frac", c.train_frac),
      number("overlap_threshold_km", c.overlap_threshold_km),
      flag("per_axis", c.per_axis),
      number("outlier_lower_frac", c.outlier_lower_frac),
      number("outlier_upper_frac", c.outlier_upper_frac),

      choice<ModelKind>(
          "model_kind", m.kind, [](ModelKind k) { return std::string(model_kind_name(k)); },
          parse_model_kind),
      number("width_multiplier", m.width_multiplier),
      number("input_side", m.input_side),
      number("dropout_keep", m.dropout_keep),
      number("n_classes", m.n_classes),
      number("class_lo", m.class_lo),
      number("class_hi", m.class_hi),
      choice<InitKind>(
          "init", m.init,
          [](InitKind k) {
            return std::string(k == InitKind::Random ? "RANDOM" : "PRETRAINED_HOOK");
          },
          [](std::string_view v) {
            if (v == "RANDOM")
              return InitKind::Random;
            if (v == "PRETRAINED_HOOK")
              return InitKind::PretrainedHook;
            fail(ErrorCode::Config, "unknown init");
          }),
      {"pretrained_path", [&m] { return m.pretrained_path; },
       [&m](std::string_view v) { m.pretrained_path = std::string(v); }},

      number("learning_rate", t.learning_rate),
      number("lr_decay_factor", t.lr_decay_factor),
      {"lr_decay_epochs",
       [&t] {
         std::string out;
         for (int e : t.lr_decay_epochs)
           out += (out.empty() ? "" : ",") + std::to_string(e);
         return out;
       },
       [&t](std::string_view v) {
         t.lr_decay_epochs.clear();
         if (text::trim(v).empty())
           return;
         for (auto part : text::split(v, ',')) {
           auto e = text::parse_number<int>(part);
           if (!e)
             bad_value("lr_decay_epochs", v);
           t.lr_decay_epochs.push_back(*e);
         }
       }},
      number("weight_decay", t.weight_decay),
      number("momentum", t.momentum),
      number("batch_size", t.batch_size),
      number("eval_batch_size", t.eval_batch_size),
      number("epochs", t.epochs),
      choice<LossKind>(
          "loss", t.loss, [](LossKind l) { return std::string(loss_kind_name(l)); },
          parse_loss_kind),
      flag("augment", t.augment),
      flag("init_bias_to_mean", t.init_bias_to_mean),

      {"eval_set", [&c] { return c.eval_set; },
       [&c](std::string_view v) {
         if (v != "val" && v != "all")
           bad_value("eval_set", v);
         c.eval_set = std::string(v);
       }},
      number("report_scale_pct", c.report_scale_pct),
      number("report_px_per_km", c.report_px_per_km),
  };
  return b;
}

} // namespace

std::filesystem::path ExperimentConfig::manifest_path() const {
  return manifest.empty() ? out_dir / "manifest.csv" : manifest;
}
std::filesystem::path ExperimentConfig::tile_root_path() const {
  return tile_root.empty() ? out_dir / "tiles" : tile_root;
}
std::filesystem::path ExperimentConfig::grid_path() const {
  return grid.empty() ? out_dir / "grid.asc" : grid;
}
std::filesystem::path ExperimentConfig::split_path() const {
  return split.empty() ? out_dir / "split.csv" : split;
}
std::filesystem::path ExperimentConfig::checkpoint_path() const {
  return checkpoint.empty() ? out_dir / "checkpoint.bin" : checkpoint;
}
std::filesystem::path ExperimentConfig::predictions_path() const {
  return predictions.empty() ? out_dir / "predictions.csv" : predictions;
}

void ExperimentConfig::apply(const ConfigMap& values) {
  auto table = bindings(*this);
  bool loss_given = false;
  for (const auto& [key, value] : values) {
    auto it = std::find_if(table.begin(), table.end(), [&](const Binding& b) { return b.key == key; });
    if (it == table.end())
      fail(ErrorCode::Config, "unknown config key '" + key + "'");
    it->set(value);
    loss_given = loss_given || key == "loss";
  }
  // The loss follows the model kind unless stated explicitly.
  if (!loss_given && values.count("model_kind"))
    train.loss = default_loss(model.kind);
  train.seed = seed;
  synth.seed = seed;
}

ConfigMap ExperimentConfig::to_map() const {
  ConfigMap out;
  for (const auto& b : bindings(const_cast<ExperimentConfig&>(*this)))
    out.emplace(b.key, b.get());
  return out;
}

std::string ExperimentConfig::hash() const {
  std::string canonical;
  for (const auto& [key, value] : to_map()) {
    // Output locations and worker count do not change results.
    if (key == "out" || key == "workers")
      continue;
    canonical += key + "=" + value + "\n";
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical)));
  return buf;
}

std::string ExperimentConfig::provenance() const {
  return "config_hash=" + hash() + " seed=" + std::to_string(seed);
}

void ExperimentConfig::validate() const {
  if (workers < 1)
    fail(ErrorCode::Config, "workers must be >= 1");
  if (!(train_frac > 0.0 && train_frac < 1.0))
    fail(ErrorCode::Config, "train_frac must lie in (0, 1)");
  if (!(overlap_threshold_km >= 0.0))
    fail(ErrorCode::Config, "overlap_threshold_km must be >= 0");
  if (!(outlier_lower_frac >= 0.0 && outlier_upper_frac >= 0.0 &&
        outlier_lower_frac + outlier_upper_frac < 1.0))
    fail(ErrorCode::Config, "outlier fractions must be >= 0 and sum below 1");
  if (!(report_scale_pct > 0.0) || !(report_px_per_km > 0.0))
    fail(ErrorCode::Config, "report_scale_pct and report_px_per_km must be > 0");
  synth.validate();
  model.validate();
  train.validate();
}

ExperimentConfig load_experiment_config(const std::filesystem::path& file,
                                        const ConfigMap& overrides) {
  ExperimentConfig cfg;
  if (!file.empty())
    cfg.apply(read_config_file(file));
  cfg.apply(overrides);
  cfg.validate();
  return cfg;
}

} // namespace popmap
