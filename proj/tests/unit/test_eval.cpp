#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "wim/eval/eval.hpp"
#include "wim/feat/classify.hpp"
#include "wim/num/random.hpp"
#include "wim/scene/generator.hpp"

using namespace wim;
using eval::CalibrationCurve;
using model::ForecastSet;

namespace {

model::ModelConfig small_config() {
  model::ModelConfig c;
  c.d = 16;
  c.heads = 2;
  c.ffn = 32;
  c.seed = 4;
  return c;
}

std::vector<scene::Scene> scenes(std::size_t n, std::uint64_t seed = 21) {
  auto s = scene::generate_dataset(n, seed, {});
  feat::label_dataset(s);
  return s;
}

cv::ControlVector random_vector(std::size_t d, std::uint64_t seed, double scale = 1.0) {
  num::Rng rng = num::make_rng(seed, 0);
  cv::ControlVector v;
  for (std::size_t j = 0; j < d; ++j) v.v.push_back(num::normal(rng, 0.0, scale));
  return v;
}

ForecastSet two_mode_forecast() {
  // Mode 0 runs along +x, mode 1 along +y; horizon 2.
  ForecastSet f;
  f.modes = 2;
  f.horizon = 2;
  f.positions = {1, 0, 2, 0, 0, 1, 0, 2};
  f.confidences = {0.3, 0.7};
  return f;
}

// Top-1 forward velocity computed straight from the stored waypoints.
double forward_velocity(const ForecastSet& f, double dt) {
  const std::size_t j = static_cast<std::size_t>(
      std::max_element(f.confidences.begin(), f.confidences.end()) - f.confidences.begin());
  return f.positions[(j * f.horizon + f.horizon - 1) * 2] / (static_cast<double>(f.horizon) * dt);
}

}  // namespace

TEST_CASE("straightness index") {
  const std::vector<double> x{0, 1, 2}, y{0, 1, 0};
  CHECK(std::abs(eval::straightness_index(x, y, false) - 2.0 / (2.0 * std::sqrt(2.0))) <= 1e-9);
  CHECK(std::abs(eval::straightness_index(x, y, false) - 0.7071) <= 1e-4);
  const std::vector<double> lx{-5, 0, 5, 10}, ly{3, 1, -1, -3};
  CHECK(eval::straightness_index(lx, ly, true) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS(eval::straightness_index(std::vector<double>{1}, std::vector<double>{1}, false));
  CHECK_THROWS(eval::straightness_index(std::vector<double>{1, 1}, std::vector<double>{2, 2}, false));
}

TEST_CASE("a straight calibration line is perfectly linear") {
  std::vector<double> t, c;
  for (int i = -5; i <= 5; ++i) {
    t.push_back(10.0 * i);
    c.push_back(0.8 * 10.0 * i + 2.0);
  }
  const auto r = eval::linearity(CalibrationCurve::from_points(t, c));
  CHECK(r.pearson == 1.0);
  CHECK(r.r2 == 1.0);
  CHECK(r.s_idx == 1.0);
  CHECK(r.points == 11);
  CHECK(r.slope == doctest::Approx(0.8));
  CHECK(r.intercept == doctest::Approx(2.0));
}

TEST_CASE("digitized plain calibration curve") {
  const std::vector<double> t{-50, -40, -30, -20, -10, 0, 10, 20, 30, 40, 50};
  const std::vector<double> c{-48.6273956298828, -35.5667533874512, -21.6760330200195, -13.1704349517822,
                              -6.7293062210083,  0,                 6.60260343551636,  13.9433975219727,
                              24.4411945343018,  45.2114601135254,  91.4710083007812};
  const CalibrationCurve curve = CalibrationCurve::from_points(t, c);
  CHECK(curve.in_band_count() == 10);
  const auto r = eval::linearity(curve);
  CHECK(r.pearson >= 0.98);
  // Reference values from an independent double-precision recomputation.
  CHECK(r.pearson == doctest::Approx(0.9876790022569347).epsilon(1e-9));
  CHECK(r.r2 == doctest::Approx(0.914108558712162).epsilon(1e-9));
  CHECK(r.tau_min == -50.0);
  CHECK(r.tau_max == 40.0);
  // The plotted reference line passes through (-50, -50.805) and (50, 60.969).
  CHECK(r.slope == doctest::Approx((60.9688914689151 + 50.805302251469) / 100.0).epsilon(1e-9));
  CHECK(r.intercept == doctest::Approx(5.08179460872303).epsilon(1e-9));

  const auto id = eval::linearity(curve, eval::ReferenceLine::identity);
  CHECK(id.slope == 1.0);
  CHECK(id.intercept == 0.0);
  CHECK(id.pearson == r.pearson);
  CHECK(id.r2 == doctest::Approx(0.9640155802481123).epsilon(1e-9));
}

TEST_CASE("linearity is unchanged by rescaling tau") {
  const std::vector<double> t{-50, -40, -30, -20, -10, 0, 10, 20, 30, 40, 50};
  const std::vector<double> c{-60, -41, -30, -22, -9, 0, 12, 19, 33, 45, 70};
  std::vector<double> scaled;
  for (double x : t) scaled.push_back(x * 0.37);
  const auto a = eval::linearity(CalibrationCurve::from_points(t, c));
  const auto b = eval::linearity(CalibrationCurve::from_points(scaled, c));
  CHECK(a.pearson == doctest::Approx(b.pearson).epsilon(1e-12));
  CHECK(a.r2 == doctest::Approx(b.r2).epsilon(1e-12));
  CHECK(a.s_idx == doctest::Approx(b.s_idx).epsilon(1e-12));
  CHECK(a.points == 9);
}

TEST_CASE("linearity needs three in-band points") {
  CHECK_THROWS(eval::linearity(CalibrationCurve::from_points({-10, 0, 10}, {-80, 0, 70})));
  CHECK_THROWS(eval::linearity(CalibrationCurve::from_points({0, 10}, {0, 5})));
  CHECK_THROWS(CalibrationCurve::from_points({0, 10}, {0}));
}

TEST_CASE("linearity metrics stay in range on random curves") {
  num::Rng rng = num::make_rng(31, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> t, c;
    for (int i = 0; i < 9; ++i) {
      t.push_back(10.0 * i - 40.0);
      c.push_back(num::uniform(rng, -45.0, 45.0));
    }
    const auto r = eval::linearity(CalibrationCurve::from_points(t, c));
    CHECK(r.pearson >= -1.0);
    CHECK(r.pearson <= 1.0);
    CHECK(r.s_idx > 0.0);
    CHECK(r.s_idx <= 1.0);
    CHECK(r.r2 <= 1.0);
  }
}

TEST_CASE("tau for a target change") {
  const auto c = CalibrationCurve::from_points({-20, -10, 0, 10, 20}, {-40, -20, 0, 10, 30});
  CHECK(eval::tau_for_change(c, 5.0) == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(eval::tau_for_change(c, -30.0) == doctest::Approx(-15.0).epsilon(1e-9));
  CHECK(eval::tau_for_change(c, 10.0) == 10.0);
  CHECK_THROWS(eval::tau_for_change(c, 50.0));
  // With several crossings the one nearest tau = 0 wins; ties go to the lower tau.
  const auto bump = CalibrationCurve::from_points({-20, -10, 0, 10, 20}, {-10, 10, 0, 10, -10});
  CHECK(eval::tau_for_change(bump, 5.0) == doctest::Approx(-5.0).epsilon(1e-9));
  const auto skew = CalibrationCurve::from_points({-20, -10, 0, 10, 20}, {10, 20, 0, 10, 20});
  CHECK(eval::tau_for_change(skew, 15.0) == doctest::Approx(-7.5).epsilon(1e-9));
  CHECK(eval::tau_for_change(bump, -5.0) == doctest::Approx(-17.5).epsilon(1e-9));
}

TEST_CASE("forecast metrics by hand") {
  const ForecastSet f = two_mode_forecast();
  const num::Tensor gt = num::Tensor::matrix(2, 2, {1, 1, 2, 2});
  const auto m = eval::sample_metrics(f, gt);
  // Mode 0 errors: 1, 2; mode 1: 1, 2. Ties go to the more confident mode.
  CHECK(m.min_ade == doctest::Approx(1.5));
  CHECK(m.min_fde == doctest::Approx(2.0));
  CHECK(m.brier_min_ade == doctest::Approx(1.5 + 0.09));
  CHECK(m.brier_min_fde == doctest::Approx(2.0 + 0.09));
  CHECK(m.miss_rate == 0.0);

  const num::Tensor along_x = num::Tensor::matrix(2, 2, {1, 0, 5, 0});
  const auto n = eval::sample_metrics(f, along_x);
  CHECK(n.min_ade == doctest::Approx(1.5));
  CHECK(n.min_fde == doctest::Approx(3.0));
  CHECK(n.brier_min_fde == doctest::Approx(3.0 + 0.49));
  CHECK(n.miss_rate == 1.0);
  CHECK(eval::sample_metrics(f, along_x, 3.5).miss_rate == 0.0);
  CHECK_THROWS_AS(eval::sample_metrics(f, num::Tensor::matrix(1, 2, {0, 0})), num::ShapeError);
}

TEST_CASE("forecast metrics ignore mode order") {
  num::Rng rng = num::make_rng(41, 0);
  for (int trial = 0; trial < 20; ++trial) {
    ForecastSet f;
    f.modes = 4;
    f.horizon = 5;
    for (std::size_t i = 0; i < 40; ++i) f.positions.push_back(num::uniform(rng, -3.0, 3.0));
    double total = 0.0;
    for (int j = 0; j < 4; ++j) total += f.confidences.emplace_back(num::uniform(rng, 0.1, 1.0));
    for (double& p : f.confidences) p /= total;
    num::Tensor gt({5, 2});
    for (double& v : gt.values()) v = num::uniform(rng, -3.0, 3.0);

    const auto perm = num::permutation(4, rng);
    ForecastSet g = f;
    for (std::size_t j = 0; j < 4; ++j) {
      g.confidences[j] = f.confidences[perm[j]];
      std::copy_n(f.positions.begin() + perm[j] * 10, 10, g.positions.begin() + j * 10);
    }
    const auto a = eval::sample_metrics(f, gt), b = eval::sample_metrics(g, gt);
    CHECK(a.min_ade == b.min_ade);
    CHECK(a.min_fde == b.min_fde);
    CHECK(a.brier_min_ade == b.brier_min_ade);
    CHECK(a.brier_min_fde == b.brier_min_fde);
    CHECK(a.brier_min_ade - a.min_ade >= 0.0);
    CHECK(a.brier_min_ade - a.min_ade <= 1.0);
  }
}

TEST_CASE("aggregate forecast metrics are sample means") {
  const ForecastSet f = two_mode_forecast();
  const std::vector<ForecastSet> fs{f, f};
  const std::vector<num::Tensor> gt{num::Tensor::matrix(2, 2, {1, 1, 2, 2}), num::Tensor::matrix(2, 2, {1, 0, 5, 0})};
  const auto m = eval::forecast_metrics(fs, gt);
  CHECK(m.count == 2);
  CHECK(m.min_fde == doctest::Approx(2.5));
  CHECK(m.miss_rate == doctest::Approx(0.5));
  CHECK_THROWS(eval::forecast_metrics(std::span<const ForecastSet>(), std::span<const num::Tensor>()));
  CHECK_THROWS(eval::forecast_metrics(fs, std::span<const num::Tensor>(gt.data(), 1)));
}

TEST_CASE("explained variance of rank-one differences") {
  num::Rng rng = num::make_rng(51, 0);
  const std::vector<double> u{0.6, 0.0, -0.8, 0.0};
  num::Tensor diffs({30, 4});
  for (std::size_t i = 0; i < 30; ++i) {
    const double a = num::normal(rng, 1.0, 0.5);
    for (std::size_t j = 0; j < 4; ++j) diffs.at(i, j) = a * u[j];
  }
  const auto e = eval::explained_variance(diffs, 3, "speed", "plain");
  REQUIRE(e.ratios.size() == 3);
  CHECK(e.ratios[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(e.ratios[1]) < 1e-9);
  const std::vector<eval::ExplainedVariance> rows{e};
  CHECK(eval::explained_variance_csv(rows).rows().size() == 3);
  CHECK(eval::explained_variance(diffs, 10, "speed", "plain").ratios.size() == 4);
}

TEST_CASE("calibration curve matches a direct recomputation") {
  const model::MotionFormer m(small_config());
  const auto s = scenes(40);
  const auto v = random_vector(16, 3, 0.2);
  eval::CalibrationOptions opt;
  opt.min_speed = 0.0;
  const std::vector<double> grid{-20, 20};
  const CalibrationCurve curve = eval::calibration_curve(m, v, s, grid, opt);
  REQUIRE(curve.tau == std::vector<double>{-20, 0, 20});
  CHECK(curve.change[1] == 0.0);

  std::vector<scene::Scene> moving;
  for (const auto& sc : s)
    if (sc.labels->direction != feat::DirectionClass::stationary) moving.push_back(sc);
  CHECK(curve.excluded_stationary == s.size() - moving.size());
  const double dt = m.config().dt;
  const auto base = m.forward_batch(moving);
  const model::SteeringDirective d{2, v.v, 20.0};
  const auto steered = m.forward_batch(moving, std::span(&d, 1));
  double expect = 0.0;
  for (std::size_t i = 0; i < moving.size(); ++i) {
    const double b = forward_velocity(base[i].forecast, dt);
    expect += (forward_velocity(steered[i].forecast, dt) - b) / std::abs(b) * 100.0;
  }
  expect /= static_cast<double>(moving.size());
  CHECK(curve.change[2] == doctest::Approx(expect).epsilon(1e-9));
  CHECK(curve.counts[2] == moving.size());
  CHECK(curve.to_csv().rows().size() == 3);

  CHECK_THROWS(eval::calibration_curve(m, v, s, std::vector<double>{10, -10}, opt));
  CHECK_THROWS(eval::calibration_curve(m, v, s, std::vector<double>{}, opt));
}

TEST_CASE("a zero control vector leaves every forecast unchanged") {
  const model::MotionFormer m(small_config());
  const auto s = scenes(30);
  cv::ControlVector zero;
  zero.v.assign(16, 0.0);
  eval::CalibrationOptions opt;
  opt.min_speed = 0.0;
  const CalibrationCurve c = eval::calibration_curve(m, zero, s, eval::default_tau_grid(), opt);
  CHECK(c.size() == 11);
  for (double x : c.change) CHECK(x == 0.0);

  const std::vector<double> taus{-50, 0, 30};
  const auto table = eval::zero_shot_eval(m, s, zero, taus);
  CHECK(table.rows.size() == 4);
  for (double t : taus) {
    CHECK(table.at_tau(t).metrics.min_ade == table.none().metrics.min_ade);
    CHECK(table.at_tau(t).metrics.brier_min_fde == table.none().metrics.brier_min_fde);
  }
  CHECK_THROWS(table.at_tau(7.0));
  CHECK(table.to_csv().rows().size() == 4);
  CHECK(table.to_csv().rows()[0][0] == "none");
}

TEST_CASE("zero-shot metrics at tau 0 equal the unsteered row") {
  const model::MotionFormer m(small_config());
  const auto s = scenes(20, 5);
  const std::vector<double> taus{0.0, 40.0};
  const auto table = eval::zero_shot_eval(m, s, random_vector(16, 9), taus);
  CHECK(table.at_tau(0.0).metrics.min_ade == table.none().metrics.min_ade);
  CHECK(table.at_tau(40.0).metrics.min_ade != table.none().metrics.min_ade);
  CHECK(table.none().metrics.count == 20);
  CHECK_THROWS(eval::zero_shot_eval(m, std::span<const scene::Scene>(), random_vector(16, 9), taus));
}

TEST_CASE("latency bench") {
  const model::MotionFormer m(small_config());
  const auto s = scenes(4);
  const auto r = eval::steering_latency_bench(m, random_vector(16, 1), s, 2);
  CHECK(r.iterations == 2);
  CHECK(r.base_ms > 0.0);
  CHECK(r.steered_ms > 0.0);
  CHECK(r.overhead_fraction == doctest::Approx((r.steered_ms - r.base_ms) / r.base_ms));
  CHECK_THROWS(eval::steering_latency_bench(m, random_vector(16, 1), s, 0));
}

TEST_CASE("calibration chart") {
  const std::vector<CalibrationCurve> curves{CalibrationCurve::from_points({-10, 0, 10}, {-5, 0, 6}),
                                             CalibrationCurve::from_points({-10, 0, 10}, {-8, 0, 9})};
  const std::vector<std::string> names{"plain", "sae<128>"};
  const std::string svg = eval::calibration_svg(curves, names);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(std::count(svg.begin(), svg.end(), '\n') > 5);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("sae&lt;128>") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK_THROWS(eval::calibration_svg(curves, std::span<const std::string>(names.data(), 1)));
}
