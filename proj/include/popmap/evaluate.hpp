#pragma once

#include "popmap/domain.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace popmap {

// 1 - SS_res / SS_tot. Throws DegenerateTruth for constant truth.
double r_squared(std::span<const double> pred, std::span<const double> truth);
// Sample correlation. Throws DegenerateInput when either side is constant.
double pearson(std::span<const double> pred, std::span<const double> truth);
// Mean absolute percentage error. Throws ZeroTruth.
double mape(std::span<const double> pred, std::span<const double> truth);
// 100 * RMSE / mean(truth). Throws DegenerateTruth unless mean(truth) > 0.
double pct_rmse(std::span<const double> pred, std::span<const double> truth);

enum class EvalLevel { Village, Subdistrict, District };

std::string_view eval_level_name(EvalLevel level) noexcept;

struct ResidualRow {
  std::string unit_id;
  double pred = 0.0;
  double truth = 0.0;
  double residual() const noexcept { return pred - truth; }
};

struct EvalReport {
  EvalLevel level = EvalLevel::Village;
  std::size_t n = 0;
  double r2 = 0.0;
  double pearson = 0.0; // NaN for constant predictions
  // NaN when undefined at village level (a log2 truth of exactly zero), where both are
  // secondary metrics.
  double mape_percent = 0.0;
  double pct_rmse = 0.0;
  std::vector<ResidualRow> rows; // sorted by unit_id
};

// Builds a report from rows; order of `rows` does not matter.
EvalReport make_report(EvalLevel level, std::vector<ResidualRow> rows);

// Village level on log2 density. Every predicted id needs a truth entry (MissingVillage).
EvalReport village_level_eval(const std::map<std::string, double>& predictions_log2,
                              const std::map<std::string, double>& truth_log2);

struct PopulationPair {
  double pred_pop = 0.0;
  double true_pop = 0.0;
};

// pred_pop = 2^pred * area per village, summed per subdistrict. Throws MissingVillage.
std::map<AdminCode, PopulationPair>
aggregate_to_population(const std::map<std::string, double>& predictions_log2,
                        std::span<const VillageRecord> villages);

// Same, from per-village population estimates rather than log2 densities.
std::map<AdminCode, PopulationPair>
aggregate_population_estimates(const std::map<std::string, double>& predicted_population,
                               std::span<const VillageRecord> villages);

EvalReport subdistrict_level_eval(const std::map<AdminCode, PopulationPair>& totals);

// District totals keyed by (state, district); subdistrict_id is zero.
std::map<AdminCode, PopulationPair>
roll_up_districts(const std::map<AdminCode, PopulationPair>& subdistricts);

// 2^(class midpoint); a tail class sits half a bin width beyond its finite edge.
double classifier_to_density(int class_index, std::span<const double> edges);

// Residual table `unit_id,pred,truth,residual` and summary `level,n,r2,pearson,mape,pct_rmse`.
// `provenance` is written as a leading '#' comment line when non-empty.
void write_residuals_csv(const std::filesystem::path& path, const EvalReport& report,
                         const std::string& provenance = {});
void write_summary_csv(const std::filesystem::path& path, std::span<const EvalReport> reports,
                       const std::string& provenance = {});

} // namespace popmap
