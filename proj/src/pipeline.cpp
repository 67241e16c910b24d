#include "popmap/pipeline.hpp"

#include "popmap/error.hpp"
#include "popmap/grid.hpp"
#include "popmap/ingest.hpp"
#include "popmap/partition.hpp"
#include "popmap/synthgen.hpp"
#include "popmap/text.hpp"
#include "popmap/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>

namespace popmap {
namespace {

void say(const LogFn& log, const std::string& line) {
  if (log)
    log(line);
}

void require_file(const std::filesystem::path& path, ErrorCode code, const std::string& hint) {
  if (!std::filesystem::exists(path))
    fail(code, "missing " + path.string() + " (" + hint + ")");
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    fail(ErrorCode::Io, "cannot create directory " + dir.string() + ": " + ec.message());
}

DatasetManifest open_manifest(const ExperimentConfig& config, bool with_tiles, const LogFn& log) {
  require_file(config.manifest_path(), ErrorCode::Io, "run synthgen first or set manifest");
  ManifestLoadOptions options;
  options.footprint_km = config.synth.tile_footprint_km;
  if (with_tiles) {
    require_file(config.tile_root_path(), ErrorCode::MissingTile, "tile root");
    options.tile_root = config.tile_root_path();
  }
  DatasetManifest manifest = load_manifest(config.manifest_path(), options);
  for (const auto& issue : manifest.issues)
    say(log, "manifest line " + std::to_string(issue.line) + ": " + issue.message);
  return manifest;
}

SplitAssignment open_split(const ExperimentConfig& config, const DatasetManifest& manifest) {
  require_file(config.split_path(), ErrorCode::Io, "run split first or set split");
  return read_split(config.split_path(), manifest.villages);
}

std::ofstream open_csv(const std::filesystem::path& path, const std::string& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  out << "# " << provenance << '\n';
  return out;
}

void close_csv(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out)
    fail(ErrorCode::Io, "write failed for " + path.string());
}

std::string district_id(const AdminCode& code) {
  return std::to_string(code.state_id) + "/" + std::to_string(code.district_id);
}

// Village, subdistrict and district reports under `prefix`; a level whose truth is
// degenerate (e.g. a single unit) is skipped with a log line.
void write_level_reports(const ExperimentConfig& config, const std::string& prefix,
                         const EvalReport& village,
                         const std::map<AdminCode, PopulationPair>& subdistricts,
                         CommandOutput& result, const LogFn& log) {
  std::vector<EvalReport> reports{village};
  auto attempt = [&](EvalLevel level, auto make) {
    try {
      reports.push_back(make());
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateTruth)
        throw;
      say(log, std::string(eval_level_name(level)) + " level skipped: " + e.what());
    }
  };
  attempt(EvalLevel::Subdistrict, [&] { return subdistrict_level_eval(subdistricts); });
  attempt(EvalLevel::District, [&] {
    EvalReport r = subdistrict_level_eval(roll_up_districts(subdistricts));
    r.level = EvalLevel::District;
    for (auto& row : r.rows) {
      auto parts = text::split(row.unit_id, '/');
      row.unit_id = std::string(parts[0]) + "/" + std::string(parts[1]);
    }
    return r;
  });

  const std::string prov = config.provenance();
  for (const auto& r : reports) {
    const auto path = config.out_dir / (prefix + "_" + std::string(eval_level_name(r.level)) + ".csv");
    write_residuals_csv(path, r, prov);
    result.files.push_back(path);
    say(log, prefix + " " + std::string(eval_level_name(r.level)) + ": n=" +
                 std::to_string(r.n) + " r2=" + text::format_fixed(r.r2, 4) +
                 " pearson=" + text::format_fixed(r.pearson, 4));
  }
  const auto summary = config.out_dir / (prefix + "_summary.csv");
  write_summary_csv(summary, reports, prov);
  result.files.push_back(summary);
}

std::vector<VillageRecord> records_for(const DatasetManifest& manifest,
                                       const std::vector<std::string>& ids) {
  std::vector<VillageRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids)
    out.push_back(*manifest.find(id));
  return out;
}

} // namespace

std::vector<std::string> evaluation_ids(const ExperimentConfig& config,
                                        const DatasetManifest& manifest,
                                        const SplitAssignment& split) {
  std::set<std::string> chosen(split.val_villages.begin(), split.val_villages.end());
  if (config.eval_set == "all") {
    chosen.insert(split.train_villages.begin(), split.train_villages.end());
    chosen.insert(split.pruned_villages.begin(), split.pruned_villages.end());
  }
  std::vector<std::string> ids;
  for (const auto& v : manifest.villages)
    if (v.has_target() && chosen.count(v.village_id))
      ids.push_back(v.village_id);
  if (ids.empty())
    fail(ErrorCode::EmptyDataset, "no villages with a target in the evaluation set");
  return ids;
}

// ---- synthgen / split -----------------------------------------------------------------

CommandOutput cmd_synthgen(const ExperimentConfig& config, const LogFn& log) {
  config.validate();
  ensure_dir(config.out_dir);
  const std::string prov = config.provenance();
  const SyntheticWorld world = generate_world(config.synth);
  say(log, "generated " + std::to_string(world.villages.size()) + " villages");

  CommandOutput result;
  const auto manifest = config.manifest_path();
  write_manifest(manifest, world.villages, prov);
  result.files.push_back(manifest);

  const auto truth = config.out_dir / "ground_truth.csv";
  write_ground_truth(truth, world.truth, prov);
  result.files.push_back(truth);

  const auto grid = config.grid_path();
  write_ascii_grid(grid, world.grid);
  {
    // The grid format has no comment syntax, so provenance lives beside it.
    const auto side = std::filesystem::path(grid.string() + ".provenance");
    std::ofstream out(side, std::ios::binary);
    out << prov << '\n';
    if (!out)
      fail(ErrorCode::Io, "cannot write " + side.string());
    result.files.push_back(side);
  }
  result.files.push_back(grid);

  render_tiles(world, config.tile_root_path(), config.workers);
  say(log, "rendered tiles under " + config.tile_root_path().string());
  return result;
}

CommandOutput cmd_split(const ExperimentConfig& config, const LogFn& log) {
  config.validate();
  ensure_dir(config.out_dir);
  const DatasetManifest manifest = open_manifest(config, false, log);

  std::vector<VillageRecord> usable;
  for (const auto& v : manifest.villages)
    if (v.has_target())
      usable.push_back(v);
  const OutlierSplit filtered =
      filter_outliers(usable, config.outlier_lower_frac, config.outlier_upper_frac);
  say(log, std::to_string(manifest.villages.size() - usable.size()) +
               " zero-population villages dropped, " + std::to_string(filtered.removed.size()) +
               " outliers removed");

  std::vector<AdminCode> codes;
  for (const auto& v : filtered.kept)
    codes.push_back(v.admin);
  SplitAssignment split = split_subdistricts(codes, config.train_frac, config.seed);
  split = prune_overlaps(std::move(split), filtered.kept, config.overlap_threshold_km,
                         config.per_axis);
  say(log, "train " + std::to_string(split.train_villages.size()) + ", val " +
               std::to_string(split.val_villages.size()) + ", pruned " +
               std::to_string(split.pruned_villages.size()));

  write_split(config.split_path(), split, filtered.kept, config.provenance());
  return {{config.split_path()}};
}

// ---- train / eval ---------------------------------------------------------------------

CommandOutput cmd_train(const ExperimentConfig& config, const LogFn& log) {
  config.validate();
  ensure_dir(config.out_dir);
  const DatasetManifest manifest = open_manifest(config, true, log);
  const SplitAssignment split = open_split(config, manifest);

  Network<float> model = build_model<float>(config.model);
  init_parameters(model, config.model.init, config.seed, config.model.pretrained_path);
  TrainConfig tc = config.train;
  tc.seed = config.seed;
  tc.workers = config.workers;
  say(log, std::string(model_kind_name(config.model.kind)) + ": " +
               std::to_string(model.parameter_count()) + " parameters");

  const TrainHistory history =
      train(model, manifest, split, tc, config.checkpoint_path(), [&](const EpochRecord& r) {
        say(log, "epoch " + std::to_string(r.epoch) + " train_loss=" +
                     text::format_fixed(r.train_loss, 5) + " val_loss=" +
                     text::format_fixed(r.val_loss, 5) + " val_r2=" +
                     text::format_fixed(r.val_r2, 4) + " (" + text::format_fixed(r.seconds, 1) +
                     " s)");
      });
  say(log, "best epoch " + std::to_string(history.best_epoch));

  // Wall-clock time is left out in single-worker mode so reruns are byte-identical.
  const auto path = config.out_dir / "history.csv";
  write_history_csv(path, history, config.workers > 1, config.provenance());
  return {{config.checkpoint_path(), path}};
}

CommandOutput cmd_eval(const ExperimentConfig& config, const LogFn& log) {
  config.validate();
  require_file(config.checkpoint_path(), ErrorCode::Checkpoint, "run train first");
  ensure_dir(config.out_dir);
  const DatasetManifest manifest = open_manifest(config, true, log);
  const SplitAssignment split = open_split(config, manifest);
  const auto ids = evaluation_ids(config, manifest, split);

  const auto predictions =
      predict(config.checkpoint_path(), manifest, ids, config.train.eval_batch_size, config.workers);
  std::map<std::string, double> pred_log2, truth_log2;
  for (const auto& [id, p] : predictions) {
    pred_log2[id] = p.value;
    truth_log2[id] = *manifest.find(id)->log2_density;
  }

  CommandOutput result;
  write_predictions_csv(config.predictions_path(), pred_log2, config.provenance());
  result.files.push_back(config.predictions_path());

  const auto villages = records_for(manifest, ids);
  write_level_reports(config, "eval", village_level_eval(pred_log2, truth_log2),
                      aggregate_to_population(pred_log2, villages), result, log);
  return result;
}

// ---- baseline -------------------------------------------------------------------------

CommandOutput cmd_baseline(const ExperimentConfig& config, const LogFn& log) {
  config.validate();
  require_file(config.grid_path(), ErrorCode::Io, "population grid");
  ensure_dir(config.out_dir);
  const PopulationGrid grid = read_ascii_grid(config.grid_path());
  const DatasetManifest manifest = open_manifest(config, false, log);
  const SplitAssignment split = open_split(config, manifest);
  const auto ids = evaluation_ids(config, manifest, split);
  const auto villages = records_for(manifest, ids);

  CommandOutput result;
  const std::string prov = config.provenance();
  const auto blocks_path = config.out_dir / "baseline_blocks.csv";
  auto blocks = open_csv(blocks_path, prov);
  blocks << "village_id,row,col,k,block_population,block_area_km2,density\n";

  const BaselineResult base = baseline_eval(grid, villages);
  for (const auto& v : villages) {
    const BlockEstimate& b = base.blocks.at(v.village_id);
    blocks << v.village_id << ',' << b.row << ',' << b.col << ',' << b.k << ','
           << text::format_double(b.population) << ',' << text::format_double(b.area_km2) << ','
           << text::format_double(b.density) << '\n';
  }
  close_csv(blocks, blocks_path);
  result.files.push_back(blocks_path);
  if (base.floored > 0)
    say(log, "warning: " + std::to_string(base.floored) +
                 " empty blocks floored to density " + text::format_double(base.floor_density));

  write_level_reports(config, "baseline", base.village, base.subdistricts, result, log);
  return result;
}

// ---- report ---------------------------------------------------------------------------

std::vector<DistrictError> district_errors(const std::map<AdminCode, PopulationPair>& districts) {
  std::vector<DistrictError> out;
  for (const auto& [code, pair] : districts) {
    DistrictError e;
    e.district = code;
    e.pred_pop = pair.pred_pop;
    e.true_pop = pair.true_pop;
    e.error_pct = pair.true_pop > 0.0 ? 100.0 * (pair.pred_pop - pair.true_pop) / pair.true_pop
                                      : std::numeric_limits<double>::quiet_NaN();
    out.push_back(e);
  }
  return out;
}

std::array<std::uint8_t, 3> error_color(double error_pct, double scale_pct) {
  if (!std::isfinite(error_pct))
    return {128, 128, 128};
  constexpr std::array<double, 3> under = {33, 102, 172};
  constexpr std::array<double, 3> over = {178, 24, 43};
  const double t = std::clamp(error_pct / scale_pct, -1.0, 1.0);
  const auto& end = t < 0 ? under : over;
  std::array<std::uint8_t, 3> c{};
  for (int i = 0; i < 3; ++i)
    c[i] = static_cast<std::uint8_t>(
        std::lround(kNeutralColor[i] + std::abs(t) * (end[i] - kNeutralColor[i])));
  return c;
}

RgbImage render_error_map(const std::vector<DistrictError>& errors,
                          std::span<const VillageRecord> villages, double scale_pct,
                          double px_per_km) {
  struct Box {
    double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
    double x1 = -std::numeric_limits<double>::infinity(), y1 = x1;
  };
  if (villages.empty())
    fail(ErrorCode::EmptyDataset, "error map needs at least one village");
  double lat_max = -90.0, lat_min = 90.0, lon_min = 180.0;
  for (const auto& v : villages) {
    lat_max = std::max(lat_max, v.lat);
    lat_min = std::min(lat_min, v.lat);
    lon_min = std::min(lon_min, v.lon);
  }
  const double kx = kKmPerDegree * std::cos(0.5 * (lat_max + lat_min) * std::numbers::pi / 180.0);

  std::map<AdminCode, Box> boxes;
  Box all;
  for (const auto& v : villages) {
    const double r = std::sqrt(v.area_km2 / std::numbers::pi);
    const double x = (v.lon - lon_min) * kx;
    const double y = (lat_max - v.lat) * kKmPerDegree;
    auto grow = [&](Box& b) {
      b.x0 = std::min(b.x0, x - r);
      b.x1 = std::max(b.x1, x + r);
      b.y0 = std::min(b.y0, y - r);
      b.y1 = std::max(b.y1, y + r);
    };
    grow(boxes[AdminCode{v.admin.state_id, v.admin.district_id, 0}]);
    grow(all);
  }
  constexpr int kMargin = 4;
  constexpr double kMaxSide = 4000.0;
  const double span = std::max(all.x1 - all.x0, all.y1 - all.y0);
  const double scale = std::min(px_per_km, kMaxSide / std::max(span, 1e-9));
  const int w = static_cast<int>(std::ceil((all.x1 - all.x0) * scale)) + 2 * kMargin;
  const int h = static_cast<int>(std::ceil((all.y1 - all.y0) * scale)) + 2 * kMargin;

  RgbImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      std::copy(kMapBackground.begin(), kMapBackground.end(), img.at(x, y));
  for (const auto& e : errors) {
    auto it = boxes.find(AdminCode{e.district.state_id, e.district.district_id, 0});
    if (it == boxes.end())
      continue;
    const Box& b = it->second;
    const auto color = error_color(e.error_pct, scale_pct);
    const int px0 = kMargin + static_cast<int>(std::floor((b.x0 - all.x0) * scale));
    const int px1 = kMargin + static_cast<int>(std::ceil((b.x1 - all.x0) * scale));
    const int py0 = kMargin + static_cast<int>(std::floor((b.y0 - all.y0) * scale));
    const int py1 = kMargin + static_cast<int>(std::ceil((b.y1 - all.y0) * scale));
    for (int y = std::max(0, py0); y < std::min(h, py1); ++y)
      for (int x = std::max(0, px0); x < std::min(w, px1); ++x)
        std::copy(color.begin(), color.end(), img.at(x, y));
  }
  return img;
}

CommandOutput cmd_report(const ExperimentConfig& config, const LogFn& log) {
  config.validate();
  require_file(config.predictions_path(), ErrorCode::Io, "run eval first");
  ensure_dir(config.out_dir);
  const DatasetManifest manifest = open_manifest(config, false, log);
  const auto predictions = read_predictions_csv(config.predictions_path());

  std::vector<VillageRecord> villages;
  for (const auto& [id, value] : predictions) {
    const VillageRecord* v = manifest.find(id);
    if (!v)
      fail(ErrorCode::MissingVillage, "prediction for unknown village " + id);
    villages.push_back(*v);
  }
  const auto errors = district_errors(roll_up_districts(aggregate_to_population(predictions, villages)));

  CommandOutput result;
  const auto csv_path = config.out_dir / "report_districts.csv";
  auto csv = open_csv(csv_path, config.provenance());
  csv << "district_id,pred_pop,true_pop,error_pct\n";
  for (const auto& e : errors)
    csv << district_id(e.district) << ',' << text::format_double(e.pred_pop) << ','
        << text::format_double(e.true_pop) << ',' << text::format_double(e.error_pct) << '\n';
  close_csv(csv, csv_path);
  result.files.push_back(csv_path);

  const auto png_path = config.out_dir / "report_map.png";
  write_png(png_path,
            render_error_map(errors, villages, config.report_scale_pct, config.report_px_per_km));
  result.files.push_back(png_path);
  say(log, "mapped " + std::to_string(errors.size()) + " districts");
  return result;
}

CommandOutput run_command(const std::string& name, const ExperimentConfig& config,
                          const LogFn& log) {
  if (name == "synthgen")
    return cmd_synthgen(config, log);
  if (name == "split")
    return cmd_split(config, log);
  if (name == "train")
    return cmd_train(config, log);
  if (name == "eval")
    return cmd_eval(config, log);
  if (name == "baseline")
    return cmd_baseline(config, log);
  if (name == "report")
    return cmd_report(config, log);
  fail(ErrorCode::Usage, "unknown command '" + name + "'");
}

// ---- predictions file -----------------------------------------------------------------

void write_predictions_csv(const std::filesystem::path& path,
                           const std::map<std::string, double>& predictions,
                           const std::string& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  if (!provenance.empty())
    out << "# " << provenance << '\n';
  out << "village_id,pred_log2_density\n";
  for (const auto& [id, value] : predictions)
    out << id << ',' << text::format_double(value) << '\n';
  close_csv(out, path);
}

std::map<std::string, double> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorCode::Io, "cannot open " + path.string());
  std::map<std::string, double> out;
  std::string line;
  bool header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = text::trim(line);
    if (t.empty() || t.front() == '#')
      continue;
    if (!header) {
      if (t != "village_id,pred_log2_density")
        fail(ErrorCode::ManifestParse, path.string() + ": unexpected header");
      header = true;
      continue;
    }
    const auto cols = text::split(t, ',');
    std::optional<double> v;
    if (cols.size() == 2)
      v = text::parse_number<double>(cols[1]);
    if (!v)
      fail(ErrorCode::ManifestParse, path.string() + ":" + std::to_string(line_no) + ": bad row");
    out[std::string(text::trim(cols[0]))] = *v;
  }
  if (!header)
    fail(ErrorCode::ManifestParse, path.string() + ": missing header");
  return out;
}

} // namespace popmap
