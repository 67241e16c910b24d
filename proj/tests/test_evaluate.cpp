#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "metric_oracle.hpp"
#include "support.hpp"

#include "popmap/evaluate.hpp"
#include "popmap/models.hpp"
#include "popmap/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

using namespace popmap;
using V = std::vector<double>;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

VillageRecord village(const std::string& id, AdminCode admin, double area, long long pop) {
  VillageRecord v;
  v.village_id = id;
  v.admin = admin;
  v.area_km2 = area;
  v.population = pop;
  return derive_density(v);
}

V random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  V v(n);
  for (auto& x : v)
    x = uniform(rng, lo, hi);
  return v;
}

} // namespace

TEST_CASE("r_squared examples") {
  CHECK(r_squared(V{1, 2, 3}, V{1, 2, 3}) == 1.0);
  CHECK(r_squared(V{2, 2, 2}, V{1, 2, 3}) == 0.0);
  CHECK(r_squared(V{1, 2, 5}, V{1, 2, 3}) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(code_of([] { r_squared(V{1, 2}, V{4, 4}); }) == ErrorCode::DegenerateTruth);
}

TEST_CASE("pearson examples") {
  const V t{1, 2, 3, 4};
  V affine;
  for (double x : t)
    affine.push_back(2 * x + 3);
  CHECK(pearson(affine, t) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(V{-1, -2, -3, -4}, t) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(pearson(V{1, 3, 2, 4}, t) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(code_of([] { pearson(V{1, 1}, V{1, 2}); }) == ErrorCode::DegenerateInput);
  CHECK(code_of([] { pearson(V{1, 2}, V{3, 3}); }) == ErrorCode::DegenerateInput);
}

TEST_CASE("mape examples") {
  CHECK(mape(V{110}, V{100}) == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(mape(V{5, 6}, V{5, 6}) == 0.0);
  CHECK(mape(V{90, 240}, V{100, 200}) == doctest::Approx(15.0).epsilon(1e-14));
  CHECK(code_of([] { mape(V{1, 2}, V{0, 2}); }) == ErrorCode::ZeroTruth);
}

TEST_CASE("pct_rmse examples") {
  CHECK(pct_rmse(V{3, 4}, V{3, 4}) == 0.0);
  CHECK(pct_rmse(V{0, 0}, V{3, 4}) == doctest::Approx(100.0 * std::sqrt(12.5) / 3.5).epsilon(1e-14));
  CHECK(pct_rmse(V{0, 0}, V{3, 4}) == doctest::Approx(101.015).epsilon(1e-5));
  CHECK(pct_rmse(V{0, 0}, V{3, 4}) == doctest::Approx(pct_rmse(V{0, 0}, V{30, 40})).epsilon(1e-14));
  CHECK(code_of([] { pct_rmse(V{1, 1}, V{-1, 1}); }) == ErrorCode::DegenerateTruth);
}

TEST_CASE("metrics reject mismatched lengths") {
  CHECK_THROWS_AS(r_squared(V{1, 2, 3}, V{1, 2}), Error);
  CHECK_THROWS_AS(pearson(V{1}, V{1}), Error);
}

TEST_CASE("metrics agree with the spreadsheet oracle") {
  Rng rng = make_rng(31, "metric-oracle");
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(uniform_int(rng, 2, 100));
    const V t = random_vector(rng, n, 1.0, 50.0);
    V p = t;
    for (auto& x : p)
      x += uniform(rng, -10.0, 10.0);
    CHECK(oracle::rel_error(r_squared(p, t), oracle::r_squared(p, t)) <= 1e-9);
    CHECK(oracle::rel_error(pearson(p, t), oracle::pearson(p, t)) <= 1e-9);
    CHECK(oracle::rel_error(mape(p, t), oracle::mape(p, t)) <= 1e-9);
    CHECK(oracle::rel_error(pct_rmse(p, t), oracle::pct_rmse(p, t)) <= 1e-9);
  }
}

TEST_CASE("r_squared is at most one and reaches one only on exact predictions") {
  Rng rng = make_rng(32, "r2-bound");
  for (int trial = 0; trial < 500; ++trial) {
    const auto n = static_cast<std::size_t>(uniform_int(rng, 2, 30));
    const V t = random_vector(rng, n, -5.0, 5.0);
    V p = t;
    const auto k = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n) - 1));
    p[k] += uniform(rng, 1e-6, 1.0);
    CHECK(r_squared(p, t) < 1.0);
    CHECK(r_squared(t, t) == 1.0);
    // The mean predictor scores zero exactly.
    double m = 0.0;
    for (double x : t)
      m += x;
    m /= static_cast<double>(n);
    CHECK(r_squared(V(n, m), t) == 0.0);
  }
}

TEST_CASE("pearson is invariant under positive affine maps") {
  Rng rng = make_rng(33, "affine");
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(uniform_int(rng, 3, 40));
    const V t = random_vector(rng, n, 0.0, 10.0);
    const V p = random_vector(rng, n, 0.0, 10.0);
    const double a = uniform(rng, 0.1, 10.0), b = uniform(rng, -5.0, 5.0);
    V pa = p, ta = t;
    for (auto& x : pa)
      x = a * x + b;
    for (auto& x : ta)
      x = a * x + b;
    const double base = pearson(p, t);
    CHECK(pearson(pa, t) == doctest::Approx(base).epsilon(1e-9));
    CHECK(pearson(p, ta) == doctest::Approx(base).epsilon(1e-9));
    CHECK(std::abs(base) <= 1.0);
  }
}

TEST_CASE("village report on a five-village toy set matches hand computation") {
  const std::map<std::string, double> truth = {
      {"a", 2.0}, {"b", 4.0}, {"c", 6.0}, {"d", 8.0}, {"e", 10.0}};
  const std::map<std::string, double> pred = {
      {"a", 3.0}, {"b", 4.0}, {"c", 5.0}, {"d", 8.0}, {"e", 12.0}};
  const auto r = village_level_eval(pred, truth);
  // Residuals 1,0,-1,0,2: SS_res 6, SS_tot 40, mean truth 6.
  CHECK(r.level == EvalLevel::Village);
  CHECK(r.n == 5);
  CHECK(r.r2 == doctest::Approx(1.0 - 6.0 / 40.0).epsilon(1e-15));
  // Pred mean 6.4; deviations -3.4,-2.4,-1.4,1.6,5.6 against -4,-2,0,2,4.
  const double sxy = 13.6 + 4.8 + 0.0 + 3.2 + 22.4;
  const double sxx = 11.56 + 5.76 + 1.96 + 2.56 + 31.36;
  CHECK(r.pearson == doctest::Approx(sxy / std::sqrt(sxx * 40.0)).epsilon(1e-12));
  CHECK(r.mape_percent == doctest::Approx(100.0 * (0.5 + 0 + 1.0 / 6 + 0 + 0.2) / 5).epsilon(1e-12));
  CHECK(r.pct_rmse == doctest::Approx(100.0 * std::sqrt(6.0 / 5) / 6.0).epsilon(1e-12));
  REQUIRE(r.rows.size() == 5);
  CHECK(r.rows[4].unit_id == "e");
  CHECK(r.rows[4].residual() == 2.0);
}

TEST_CASE("village report is independent of input order and needs truth for every id") {
  Rng rng = make_rng(34, "order");
  std::vector<ResidualRow> rows;
  for (int i = 0; i < 30; ++i)
    rows.push_back({"v" + std::to_string(i), uniform(rng, 0, 10), uniform(rng, 0, 10)});
  const auto a = make_report(EvalLevel::Village, rows);
  shuffle_in_place(rows, rng);
  const auto b = make_report(EvalLevel::Village, rows);
  CHECK(a.r2 == b.r2);
  CHECK(a.pearson == b.pearson);
  CHECK(a.mape_percent == b.mape_percent);

  CHECK(code_of([] { village_level_eval({{"x", 1.0}, {"y", 2.0}}, {{"x", 1.0}}); }) ==
        ErrorCode::MissingVillage);
}

TEST_CASE("constant predictions leave pearson undefined but keep the report") {
  const auto r = make_report(EvalLevel::Village, {{"a", 5, 1}, {"b", 5, 2}, {"c", 5, 3}});
  CHECK(std::isnan(r.pearson));
  CHECK(r.r2 < 0.0);
}

TEST_CASE("aggregation examples") {
  const std::vector<VillageRecord> one = {village("a", {1, 1, 1}, 2.0, 20)};
  auto t = aggregate_to_population({{"a", 3.0}}, one);
  CHECK(t.at({1, 1, 1}).pred_pop == doctest::Approx(16.0).epsilon(1e-14));
  CHECK(t.at({1, 1, 1}).true_pop == 20.0);

  const std::vector<VillageRecord> two = {village("a", {1, 1, 1}, 2.0, 20),
                                          village("b", {1, 1, 1}, 3.0, 30)};
  t = aggregate_to_population({{"a", 3.0}, {"b", 3.0}}, two);
  CHECK(t.at({1, 1, 1}).pred_pop == doctest::Approx(40.0).epsilon(1e-14));
  CHECK(t.at({1, 1, 1}).true_pop == 50.0);

  // A zero-population village has no log2 target but still converts by area.
  const std::vector<VillageRecord> empty = {village("z", {1, 1, 1}, 4.0, 0)};
  CHECK(aggregate_to_population({{"z", 1.0}}, empty).at({1, 1, 1}).pred_pop == 8.0);

  CHECK(code_of([&] { aggregate_to_population({{"q", 1.0}}, two); }) == ErrorCode::MissingVillage);
}

TEST_CASE("aggregation is additive and order-equivariant") {
  const auto world = generate_world(testsupport::small_world_config(10, 14));
  Rng rng = make_rng(35, "additive");
  std::map<std::string, double> preds;
  for (const auto& v : world.villages)
    preds[v.village_id] = uniform(rng, 0.0, 12.0);

  // Merge everything into one subdistrict and compare to the sum of the parts.
  auto merged = world.villages;
  for (auto& v : merged)
    v.admin = {9, 9, 9};
  const auto whole = aggregate_to_population(preds, merged).at({9, 9, 9});
  double pred_sum = 0.0, true_sum = 0.0;
  for (const auto& [code, pair] : aggregate_to_population(preds, world.villages)) {
    pred_sum += pair.pred_pop;
    true_sum += pair.true_pop;
  }
  CHECK(whole.pred_pop == doctest::Approx(pred_sum).epsilon(1e-12));
  CHECK(whole.true_pop == true_sum);

  auto reversed = world.villages;
  std::reverse(reversed.begin(), reversed.end());
  const auto a = aggregate_to_population(preds, world.villages);
  const auto b = aggregate_to_population(preds, reversed);
  REQUIRE(a.size() == b.size());
  for (const auto& [code, pair] : a) {
    CHECK(b.at(code).pred_pop == doctest::Approx(pair.pred_pop).epsilon(1e-12));
    CHECK(b.at(code).true_pop == pair.true_pop);
  }
}

TEST_CASE("perfect predictions give a perfect subdistrict report") {
  const auto world = generate_world(testsupport::small_world_config(10, 15));
  std::map<std::string, double> preds;
  for (const auto& v : world.villages)
    if (v.log2_density)
      preds[v.village_id] = *v.log2_density;
  const auto totals = aggregate_to_population(preds, world.villages);
  const auto r = subdistrict_level_eval(totals);
  CHECK(r.level == EvalLevel::Subdistrict);
  CHECK(r.n == 20);
  CHECK(r.r2 == 1.0);
  CHECK(r.pearson == 1.0);
  CHECK(r.mape_percent == 0.0);
  CHECK(r.pct_rmse == 0.0);

  const auto districts = roll_up_districts(totals);
  CHECK(districts.size() == 2);
  CHECK(districts.count(AdminCode{1, 1, 0}) == 1);
}

TEST_CASE("classifier classes convert to bin midpoints") {
  const auto e = bin_edges(12, 0.0, 12.0);
  CHECK(classifier_to_density(4, e) == doctest::Approx(std::exp2(4.5)));
  CHECK(classifier_to_density(4, e) == doctest::Approx(22.627).epsilon(1e-4));
  CHECK(classifier_to_density(0, e) == doctest::Approx(std::exp2(0.5)));
  CHECK(classifier_to_density(11, e) == doctest::Approx(std::exp2(11.5)));
  CHECK(code_of([&] { classifier_to_density(12, e); }) == ErrorCode::Spec);

  Rng rng = make_rng(36, "quantize");
  const auto e8 = bin_edges(8, 2.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = uniform(rng, 2.0, 10.0);
    const double back = std::log2(classifier_to_density(class_of(x, e8), e8));
    CHECK(std::abs(back - x) <= 0.5 + 1e-12);
  }
}

TEST_CASE("report files carry the expected headers") {
  testsupport::TempDir dir("evaluate");
  const auto r = make_report(EvalLevel::Village, {{"a", 1, 1.5}, {"b", 2, 2.5}});
  write_residuals_csv(dir / "res.csv", r, "config_hash=1 seed=2");
  const EvalReport reports[] = {r};
  write_summary_csv(dir / "sum.csv", reports);
  std::ifstream a(dir / "res.csv"), b(dir / "sum.csv");
  std::string line;
  std::getline(a, line);
  CHECK(line == "# config_hash=1 seed=2");
  std::getline(a, line);
  CHECK(line == "unit_id,pred,truth,residual");
  std::getline(a, line);
  CHECK(line == "a,1,1.5,-0.5");
  std::getline(b, line);
  CHECK(line == "level,n,r2,pearson,mape,pct_rmse");
  std::getline(b, line);
  CHECK(line.starts_with("village,2,"));
}
