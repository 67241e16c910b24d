#include "popmap/evaluate.hpp"

#include "popmap/error.hpp"
#include "popmap/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace popmap {
namespace {

void check_lengths(std::span<const double> pred, std::span<const double> truth,
                   std::size_t min_n, const char* what) {
  if (pred.size() != truth.size())
    fail(ErrorCode::Spec, std::string(what) + ": prediction and truth lengths differ");
  if (pred.size() < min_n)
    fail(ErrorCode::Spec, std::string(what) + ": need at least " + std::to_string(min_n) +
                              " values");
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v)
    s += x;
  return s / static_cast<double>(v.size());
}

double nan_if_throws(double (*metric)(std::span<const double>, std::span<const double>),
                     std::span<const double> pred, std::span<const double> truth) {
  try {
    return metric(pred, truth);
  } catch (const Error&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

std::ofstream open_out(const std::filesystem::path& path, const std::string& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  if (!provenance.empty())
    out << "# " << provenance << "\n";
  return out;
}

} // namespace

double r_squared(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred, truth, 2, "r_squared");
  const double m = mean_of(truth);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    ss_tot += (truth[i] - m) * (truth[i] - m);
  }
  if (ss_tot == 0.0)
    fail(ErrorCode::DegenerateTruth, "r_squared: truth is constant");
  return 1.0 - ss_res / ss_tot;
}

double pearson(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred, truth, 2, "pearson");
  const double mp = mean_of(pred);
  const double mt = mean_of(truth);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double dp = pred[i] - mp;
    const double dt = truth[i] - mt;
    sxy += dp * dt;
    sxx += dp * dp;
    syy += dt * dt;
  }
  if (sxx == 0.0 || syy == 0.0)
    fail(ErrorCode::DegenerateInput, "pearson: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double mape(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred, truth, 1, "mape");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == 0.0)
      fail(ErrorCode::ZeroTruth, "mape: truth value is zero at index " + std::to_string(i));
    s += std::abs(pred[i] - truth[i]) / std::abs(truth[i]);
  }
  return 100.0 * s / static_cast<double>(truth.size());
}

double pct_rmse(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred, truth, 1, "pct_rmse");
  const double m = mean_of(truth);
  if (!(m > 0.0))
    fail(ErrorCode::DegenerateTruth, "pct_rmse: mean of truth must be positive");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return 100.0 * std::sqrt(s / static_cast<double>(truth.size())) / m;
}

std::string_view eval_level_name(EvalLevel level) noexcept {
  switch (level) {
  case EvalLevel::Village: return "village";
  case EvalLevel::Subdistrict: return "subdistrict";
  case EvalLevel::District: return "district";
  }
  return "?";
}

EvalReport make_report(EvalLevel level, std::vector<ResidualRow> rows) {
  std::sort(rows.begin(), rows.end(),
            [](const ResidualRow& a, const ResidualRow& b) { return a.unit_id < b.unit_id; });
  std::vector<double> p, t;
  p.reserve(rows.size());
  t.reserve(rows.size());
  for (const auto& r : rows) {
    p.push_back(r.pred);
    t.push_back(r.truth);
  }
  EvalReport rep;
  rep.level = level;
  rep.n = rows.size();
  rep.r2 = r_squared(p, t);
  // Constant predictions leave the correlation undefined rather than the report.
  rep.pearson = nan_if_throws(&pearson, p, t);
  if (level == EvalLevel::Village) {
    rep.mape_percent = nan_if_throws(&mape, p, t);
    rep.pct_rmse = nan_if_throws(&pct_rmse, p, t);
  } else {
    rep.mape_percent = mape(p, t);
    rep.pct_rmse = pct_rmse(p, t);
  }
  rep.rows = std::move(rows);
  return rep;
}

EvalReport village_level_eval(const std::map<std::string, double>& predictions_log2,
                              const std::map<std::string, double>& truth_log2) {
  std::vector<ResidualRow> rows;
  rows.reserve(predictions_log2.size());
  for (const auto& [id, pred] : predictions_log2) {
    auto it = truth_log2.find(id);
    if (it == truth_log2.end())
      fail(ErrorCode::MissingVillage, "no truth for village " + id);
    rows.push_back({id, pred, it->second});
  }
  return make_report(EvalLevel::Village, std::move(rows));
}

std::map<AdminCode, PopulationPair>
aggregate_population_estimates(const std::map<std::string, double>& predicted_population,
                               std::span<const VillageRecord> villages) {
  std::map<std::string, const VillageRecord*> by_id;
  for (const auto& v : villages)
    by_id.emplace(v.village_id, &v);
  std::map<AdminCode, PopulationPair> out;
  for (const auto& [id, pop] : predicted_population) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      fail(ErrorCode::MissingVillage, "prediction for unknown village " + id);
    auto& cell = out[it->second->admin];
    cell.pred_pop += pop;
    cell.true_pop += static_cast<double>(it->second->population);
  }
  return out;
}

std::map<AdminCode, PopulationPair>
aggregate_to_population(const std::map<std::string, double>& predictions_log2,
                        std::span<const VillageRecord> villages) {
  std::map<std::string, const VillageRecord*> by_id;
  for (const auto& v : villages)
    by_id.emplace(v.village_id, &v);
  std::map<std::string, double> pops;
  for (const auto& [id, pred] : predictions_log2) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      fail(ErrorCode::MissingVillage, "prediction for unknown village " + id);
    const VillageRecord& v = *it->second;
    // 2^pred * area, taken relative to the census density when there is one so that a
    // prediction equal to the truth reproduces the census count exactly.
    const double pop = v.log2_density
                           ? std::exp2(pred - *v.log2_density) * static_cast<double>(v.population)
                           : std::exp2(pred) * v.area_km2;
    pops.emplace(id, pop);
  }
  return aggregate_population_estimates(pops, villages);
}

EvalReport subdistrict_level_eval(const std::map<AdminCode, PopulationPair>& totals) {
  std::vector<ResidualRow> rows;
  rows.reserve(totals.size());
  for (const auto& [code, pair] : totals)
    rows.push_back({code.str(), pair.pred_pop, pair.true_pop});
  return make_report(EvalLevel::Subdistrict, std::move(rows));
}

std::map<AdminCode, PopulationPair>
roll_up_districts(const std::map<AdminCode, PopulationPair>& subdistricts) {
  std::map<AdminCode, PopulationPair> out;
  for (const auto& [code, pair] : subdistricts) {
    auto& d = out[AdminCode{code.state_id, code.district_id, 0}];
    d.pred_pop += pair.pred_pop;
    d.true_pop += pair.true_pop;
  }
  return out;
}

double classifier_to_density(int class_index, std::span<const double> edges) {
  const int n = static_cast<int>(edges.size()) - 1;
  if (n < 2)
    fail(ErrorCode::Spec, "classifier_to_density: need at least two classes");
  if (class_index < 0 || class_index >= n)
    fail(ErrorCode::Spec, "classifier_to_density: class " + std::to_string(class_index) +
                              " out of range");
  double lo = edges[class_index];
  double hi = edges[class_index + 1];
  if (std::isinf(lo) && std::isinf(hi))
    fail(ErrorCode::Spec, "classifier_to_density: class has no finite edge");
  if (std::isinf(lo) || std::isinf(hi)) {
    // A tail class is treated as one bin width beyond its finite edge, taking the width
    // from the bounded neighbour.
    const int nb = std::isinf(lo) ? class_index + 1 : class_index - 1;
    const double width = edges[nb + 1] - edges[nb];
    if (!std::isfinite(width))
      fail(ErrorCode::Spec, "classifier_to_density: tail class has no bounded neighbour");
    return std::exp2(std::isinf(lo) ? hi - 0.5 * width : lo + 0.5 * width);
  }
  return std::exp2(0.5 * (lo + hi));
}

void write_residuals_csv(const std::filesystem::path& path, const EvalReport& report,
                         const std::string& provenance) {
  auto out = open_out(path, provenance);
  out << "unit_id,pred,truth,residual\n";
  for (const auto& r : report.rows)
    out << r.unit_id << ',' << text::format_double(r.pred) << ','
        << text::format_double(r.truth) << ',' << text::format_double(r.residual()) << '\n';
  if (!out)
    fail(ErrorCode::Io, "write failed for " + path.string());
}

void write_summary_csv(const std::filesystem::path& path, std::span<const EvalReport> reports,
                       const std::string& provenance) {
  auto out = open_out(path, provenance);
  out << "level,n,r2,pearson,mape,pct_rmse\n";
  for (const auto& r : reports)
    out << eval_level_name(r.level) << ',' << r.n << ',' << text::format_double(r.r2) << ','
        << text::format_double(r.pearson) << ',' << text::format_double(r.mape_percent) << ','
        << text::format_double(r.pct_rmse) << '\n';
  if (!out)
    fail(ErrorCode::Io, "write failed for " + path.string());
}

} // namespace popmap
