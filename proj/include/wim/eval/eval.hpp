#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wim/cv/control_vector.hpp"
#include "wim/model/motionformer.hpp"
#include "wim/num/csv.hpp"
#include "wim/num/tensor.hpp"

namespace wim::eval {

struct CalibrationOptions {
  double min_speed = 0.1;  // |baseline top-1 speed| below this excludes the sample (m/s)
  double band = 50.0;      // percent
  unsigned threads = 1;
};

// Mean per-sample relative change (%) of the top-1 forecast's signed speed
// against the unsteered forecast, for each tau.
struct CalibrationCurve {
  std::vector<double> tau;
  std::vector<double> change;
  std::vector<std::size_t> counts;
  std::vector<bool> in_band;
  double band = 50.0;
  std::size_t excluded_stationary = 0;
  std::size_t excluded_slow = 0;

  std::size_t size() const noexcept { return tau.size(); }
  std::size_t in_band_count() const;
  num::CsvTable to_csv() const;
  // Builds a curve from precomputed points; band flags follow |change| <= band.
  static CalibrationCurve from_points(std::vector<double> tau, std::vector<double> change, double band = 50.0);
};

// Forecast statistic the curve is built on.
double top1_speed(const model::ForecastSet& forecast, double dt);

// tau must be strictly increasing; 0 is inserted when missing. Stationary
// samples (by ground-truth direction label) are skipped.
CalibrationCurve calibration_curve(const model::MotionFormer& model, const cv::ControlVector& cv,
                                   std::span<const scene::Scene> scenes, std::span<const double> tau,
                                   const CalibrationOptions& options = {});

std::vector<double> default_tau_grid();  // -50, -40, ..., 50

enum class ReferenceLine { least_squares, identity };

struct LinearityReport {
  double pearson = 0.0;
  double r2 = 0.0;
  double s_idx = 0.0;      // on min-max normalized axes
  double s_idx_raw = 0.0;  // on raw (tau, percent) axes
  double tau_min = 0.0;    // in-band tau range
  double tau_max = 0.0;
  std::size_t points = 0;
  double slope = 0.0;  // reference line
  double intercept = 0.0;
  ReferenceLine reference = ReferenceLine::least_squares;

  num::CsvTable to_csv(const std::string& name) const;
};

std::string_view to_string(ReferenceLine r);

// Chord length over polyline length; optionally after min-max normalizing each axis.
double straightness_index(std::span<const double> x, std::span<const double> y, bool normalize);

LinearityReport linearity(const CalibrationCurve& curve, ReferenceLine reference = ReferenceLine::least_squares);

struct ForecastMetrics {
  double min_ade = 0.0;
  double brier_min_ade = 0.0;
  double min_fde = 0.0;
  double brier_min_fde = 0.0;
  double miss_rate = 0.0;
  std::size_t count = 0;
};

// Per-sample metrics; gt is (horizon x 2) in the forecast's frame.
ForecastMetrics sample_metrics(const model::ForecastSet& forecast, const num::Tensor& gt, double miss_threshold = 2.0);
ForecastMetrics forecast_metrics(std::span<const model::ForecastSet> forecasts, std::span<const num::Tensor> gt,
                                 double miss_threshold = 2.0);

struct ZeroShotRow {
  std::optional<double> tau;  // empty for the unsteered row
  ForecastMetrics metrics;
};

struct ZeroShotTable {
  std::vector<ZeroShotRow> rows;
  const ZeroShotRow& none() const;
  const ZeroShotRow& at_tau(double tau) const;
  num::CsvTable to_csv() const;
};

// tau whose interpolated curve value equals target, searched by bisection on
// the piecewise-linear curve; throws if target is not bracketed.
double tau_for_change(const CalibrationCurve& curve, double target);

ZeroShotTable zero_shot_eval(const model::MotionFormer& model, std::span<const scene::Scene> scenes,
                             const cv::ControlVector& cv, std::span<const double> taus, unsigned threads = 1,
                             double miss_threshold = 2.0);

struct ExplainedVariance {
  std::string feature;
  std::string representation;
  std::vector<double> ratios;
};

ExplainedVariance explained_variance(const num::Tensor& diffs, std::size_t k, std::string feature,
                                     std::string representation);
num::CsvTable explained_variance_csv(std::span<const ExplainedVariance> rows);

struct LatencyReport {
  double base_ms = 0.0;
  double steered_ms = 0.0;
  double overhead_fraction = 0.0;
  std::size_t iterations = 0;
};

// Alternates unsteered and steered forward passes over `scenes` after a warm-up.
LatencyReport steering_latency_bench(const model::MotionFormer& model, const cv::ControlVector& cv,
                                     std::span<const scene::Scene> scenes, std::size_t iterations, double tau = 10.0);

// Plain SVG polyline chart of one or more curves.
std::string calibration_svg(std::span<const CalibrationCurve> curves, std::span<const std::string> names);

}  // namespace wim::eval
