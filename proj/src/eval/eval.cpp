#include "wim/eval/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "wim/feat/classify.hpp"
#include "wim/num/pca.hpp"
#include "wim/num/stats.hpp"

namespace wim::eval {

using num::Tensor;

std::size_t CalibrationCurve::in_band_count() const {
  return static_cast<std::size_t>(std::count(in_band.begin(), in_band.end(), true));
}

num::CsvTable CalibrationCurve::to_csv() const {
  num::CsvTable t({"tau", "change_percent", "count", "in_band"});
  for (std::size_t i = 0; i < size(); ++i)
    t.add({num::format_number(tau[i]), num::format_number(change[i]), std::to_string(counts[i]), in_band[i] ? "1" : "0"});
  return t;
}

CalibrationCurve CalibrationCurve::from_points(std::vector<double> tau, std::vector<double> change, double band) {
  if (tau.size() != change.size()) throw std::invalid_argument("curve needs one change per tau");
  CalibrationCurve c;
  c.band = band;
  c.counts.assign(tau.size(), 0);
  for (double v : change) c.in_band.push_back(std::abs(v) <= band);
  c.tau = std::move(tau);
  c.change = std::move(change);
  return c;
}

double top1_speed(const model::ForecastSet& forecast, double dt) { return forecast.signed_speed(forecast.top1(), dt); }

std::vector<double> default_tau_grid() {
  std::vector<double> g;
  for (int t = -50; t <= 50; t += 10) g.push_back(t);
  return g;
}

CalibrationCurve calibration_curve(const model::MotionFormer& model, const cv::ControlVector& cv,
                                   std::span<const scene::Scene> scenes, std::span<const double> tau,
                                   const CalibrationOptions& options) {
  if (tau.empty()) throw std::invalid_argument("calibration needs a non-empty tau grid");
  for (std::size_t i = 1; i < tau.size(); ++i)
    if (!(tau[i] > tau[i - 1])) throw std::invalid_argument("tau grid must be strictly increasing");
  std::vector<double> grid(tau.begin(), tau.end());
  if (std::find(grid.begin(), grid.end(), 0.0) == grid.end()) grid.insert(std::upper_bound(grid.begin(), grid.end(), 0.0), 0.0);

  CalibrationCurve curve;
  curve.band = options.band;
  std::vector<scene::Scene> moving;
  for (const scene::Scene& s : scenes) {
    const feat::MotionLabels l = s.labels ? *s.labels : feat::label_scene(s);
    if (l.direction == feat::DirectionClass::stationary)
      ++curve.excluded_stationary;
    else
      moving.push_back(s);
  }
  const double dt = model.config().dt;
  const auto base = model.forward_batch(moving, {}, options.threads, false);
  std::vector<std::size_t> kept;
  std::vector<double> base_speed;
  for (std::size_t i = 0; i < moving.size(); ++i) {
    const double s = top1_speed(base[i].forecast, dt);
    if (std::abs(s) < options.min_speed) {
      ++curve.excluded_slow;
      continue;
    }
    kept.push_back(i);
    base_speed.push_back(s);
  }
  if (kept.empty()) throw std::invalid_argument("no moving samples left for calibration");
  std::vector<scene::Scene> used;
  for (std::size_t i : kept) used.push_back(std::move(moving[i]));

  for (double t : grid) {
    double change = 0.0;
    if (t != 0.0) {
      const model::SteeringDirective d = cv.directive(t);
      const auto out = model.forward_batch(used, std::span(&d, 1), options.threads, false);
      for (std::size_t i = 0; i < used.size(); ++i)
        change += (top1_speed(out[i].forecast, dt) - base_speed[i]) / std::abs(base_speed[i]) * 100.0;
      change /= static_cast<double>(used.size());
    }
    curve.tau.push_back(t);
    curve.change.push_back(change);
    curve.counts.push_back(used.size());
    curve.in_band.push_back(std::abs(change) <= options.band);
  }
  return curve;
}

std::string_view to_string(ReferenceLine r) { return r == ReferenceLine::least_squares ? "least-squares" : "identity"; }

double straightness_index(std::span<const double> x, std::span<const double> y, bool normalize) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("straightness index needs at least 2 points");
  auto scaled = [normalize](std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    if (!normalize) return out;
    const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
    const double a = *lo, range = *hi - *lo;
    for (double& e : out) e = range > 0.0 ? (e - a) / range : 0.0;
    return out;
  };
  const auto xs = scaled(x), ys = scaled(y);
  double path = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) path += std::hypot(xs[i] - xs[i - 1], ys[i] - ys[i - 1]);
  if (path == 0.0) throw std::invalid_argument("straightness index of a curve with zero length");
  const double chord = std::hypot(xs.back() - xs.front(), ys.back() - ys.front());
  return std::min(1.0, chord / path);
}

LinearityReport linearity(const CalibrationCurve& curve, ReferenceLine reference) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < curve.size(); ++i)
    if (curve.in_band[i]) {
      x.push_back(curve.tau[i]);
      y.push_back(curve.change[i]);
    }
  if (x.size() < 3)
    throw std::invalid_argument("linearity needs at least 3 in-band points, curve has " + std::to_string(x.size()));
  LinearityReport r;
  r.reference = reference;
  r.points = x.size();
  r.tau_min = x.front();
  r.tau_max = x.back();
  try {
    r.pearson = std::clamp(num::pearson(x, y), -1.0, 1.0);
  } catch (const num::NumericError&) {
    r.pearson = std::numeric_limits<double>::quiet_NaN();
  }
  if (reference == ReferenceLine::least_squares) {
    const num::LineFit fit = num::least_squares_line(curve.tau, curve.change);
    r.slope = fit.slope;
    r.intercept = fit.intercept;
  } else {
    r.slope = 1.0;
    r.intercept = 0.0;
  }
  const double ybar = num::mean(y);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (r.slope * x[i] + r.intercept);
    ss_res += e * e;
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
  }
  r.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : std::numeric_limits<double>::quiet_NaN();
  r.s_idx = straightness_index(x, y, true);
  r.s_idx_raw = straightness_index(x, y, false);
  return r;
}

num::CsvTable LinearityReport::to_csv(const std::string& name) const {
  num::CsvTable t({"vector", "pearson", "r2", "s_idx", "s_idx_raw", "points", "tau_min", "tau_max", "reference",
                   "slope", "intercept"});
  t.add({name, num::format_number(pearson), num::format_number(r2), num::format_number(s_idx),
         num::format_number(s_idx_raw), std::to_string(points), num::format_number(tau_min),
         num::format_number(tau_max), std::string(to_string(reference)), num::format_number(slope),
         num::format_number(intercept)});
  return t;
}

ForecastMetrics sample_metrics(const model::ForecastSet& f, const Tensor& gt, double miss_threshold) {
  if (f.modes == 0) throw std::invalid_argument("forecast has no modes");
  if (gt.rank() != 2 || gt.rows() != f.horizon || gt.cols() != 2)
    throw num::ShapeError("ground truth " + num::shape_str(gt.shape()) + " does not match forecast horizon " +
                          std::to_string(f.horizon));
  const std::size_t H = f.horizon;
  auto better = [&](double e, std::size_t j, double best, std::size_t best_j) {
    return e < best || (e == best && f.confidences[j] > f.confidences[best_j]);
  };
  double best_ade = std::numeric_limits<double>::infinity(), best_fde = best_ade;
  std::size_t ja = 0, jf = 0;
  for (std::size_t j = 0; j < f.modes; ++j) {
    double ade = 0.0;
    for (std::size_t t = 0; t < H; ++t) ade += std::hypot(f.x(j, t) - gt.at(t, 0), f.y(j, t) - gt.at(t, 1));
    ade /= static_cast<double>(H);
    const double fde = std::hypot(f.x(j, H - 1) - gt.at(H - 1, 0), f.y(j, H - 1) - gt.at(H - 1, 1));
    if (j == 0 || better(ade, j, best_ade, ja)) {
      best_ade = ade;
      ja = j;
    }
    if (j == 0 || better(fde, j, best_fde, jf)) {
      best_fde = fde;
      jf = j;
    }
  }
  ForecastMetrics m;
  m.count = 1;
  m.min_ade = best_ade;
  m.min_fde = best_fde;
  m.brier_min_ade = best_ade + (1.0 - f.confidences[ja]) * (1.0 - f.confidences[ja]);
  m.brier_min_fde = best_fde + (1.0 - f.confidences[jf]) * (1.0 - f.confidences[jf]);
  m.miss_rate = best_fde > miss_threshold ? 1.0 : 0.0;
  return m;
}

ForecastMetrics forecast_metrics(std::span<const model::ForecastSet> forecasts, std::span<const Tensor> gt,
                                 double miss_threshold) {
  if (forecasts.size() != gt.size()) throw std::invalid_argument("one ground truth per forecast required");
  if (forecasts.empty()) throw std::invalid_argument("metrics of an empty evaluation set");
  ForecastMetrics total;
  for (std::size_t i = 0; i < forecasts.size(); ++i) {
    const ForecastMetrics m = sample_metrics(forecasts[i], gt[i], miss_threshold);
    total.min_ade += m.min_ade;
    total.brier_min_ade += m.brier_min_ade;
    total.min_fde += m.min_fde;
    total.brier_min_fde += m.brier_min_fde;
    total.miss_rate += m.miss_rate;
  }
  const double n = static_cast<double>(forecasts.size());
  total.min_ade /= n;
  total.brier_min_ade /= n;
  total.min_fde /= n;
  total.brier_min_fde /= n;
  total.miss_rate /= n;
  total.count = forecasts.size();
  return total;
}

const ZeroShotRow& ZeroShotTable::none() const {
  for (const ZeroShotRow& r : rows)
    if (!r.tau) return r;
  throw std::out_of_range("zero-shot table has no unsteered row");
}

const ZeroShotRow& ZeroShotTable::at_tau(double tau) const {
  for (const ZeroShotRow& r : rows)
    if (r.tau && *r.tau == tau) return r;
  throw std::out_of_range("zero-shot table has no row for tau " + num::format_number(tau));
}

num::CsvTable ZeroShotTable::to_csv() const {
  num::CsvTable t({"tau", "minADE", "brier_minADE", "minFDE", "brier_minFDE", "miss_rate", "count"});
  for (const ZeroShotRow& r : rows)
    t.add({r.tau ? num::format_number(*r.tau) : "none", num::format_number(r.metrics.min_ade),
           num::format_number(r.metrics.brier_min_ade), num::format_number(r.metrics.min_fde),
           num::format_number(r.metrics.brier_min_fde), num::format_number(r.metrics.miss_rate),
           std::to_string(r.metrics.count)});
  return t;
}

double tau_for_change(const CalibrationCurve& curve, double target) {
  if (curve.size() < 2) throw std::invalid_argument("curve needs at least 2 points to invert");
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k + 1 < curve.size(); ++k) {
    const double a = curve.change[k] - target, b = curve.change[k + 1] - target;
    if ((a <= 0.0 && b >= 0.0) || (a >= 0.0 && b <= 0.0)) {
      const double distance = std::min(std::abs(curve.tau[k]), std::abs(curve.tau[k + 1]));
      if (!best || distance < std::min(std::abs(curve.tau[*best]), std::abs(curve.tau[*best + 1]))) best = k;
    }
  }
  if (!best) throw std::invalid_argument("target change " + num::format_number(target) + "% is not reached by the curve");
  const std::size_t k = *best;
  const double t0 = curve.tau[k], t1 = curve.tau[k + 1], c0 = curve.change[k], c1 = curve.change[k + 1];
  if (c0 == target) return t0;
  if (c1 == target) return t1;
  auto value = [&](double t) { return c0 + (t - t0) / (t1 - t0) * (c1 - c0); };
  const bool rising = c1 > c0;
  double lo = t0, hi = t1;
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if ((value(mid) < target) == rising)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

ZeroShotTable zero_shot_eval(const model::MotionFormer& model, std::span<const scene::Scene> scenes,
                             const cv::ControlVector& cv, std::span<const double> taus, unsigned threads,
                             double miss_threshold) {
  if (scenes.empty()) throw std::invalid_argument("zero-shot evaluation needs scenes");
  std::vector<Tensor> gt;
  gt.reserve(scenes.size());
  for (const scene::Scene& s : scenes) gt.push_back(model::agent_frame_future(s));
  auto run = [&](std::span<const model::SteeringDirective> d) {
    const auto out = model.forward_batch(scenes, d, threads, false);
    std::vector<model::ForecastSet> f;
    f.reserve(out.size());
    for (const auto& o : out) f.push_back(o.forecast);
    return forecast_metrics(f, gt, miss_threshold);
  };
  ZeroShotTable table;
  table.rows.push_back({std::nullopt, run({})});
  for (double t : taus) {
    const model::SteeringDirective d = cv.directive(t);
    table.rows.push_back({t, run(std::span(&d, 1))});
  }
  return table;
}

ExplainedVariance explained_variance(const Tensor& diffs, std::size_t k, std::string feature,
                                     std::string representation) {
  const std::size_t kk = std::min({k, diffs.cols(), diffs.rows()});
  const num::PcaResult p = num::pca_top_components(diffs, kk, num::Centering::none);
  return {std::move(feature), std::move(representation), p.explained_variance_ratio};
}

num::CsvTable explained_variance_csv(std::span<const ExplainedVariance> rows) {
  num::CsvTable t({"feature", "representation", "component", "ratio"});
  for (const ExplainedVariance& e : rows)
    for (std::size_t i = 0; i < e.ratios.size(); ++i)
      t.add({e.feature, e.representation, std::to_string(i + 1), num::format_number(e.ratios[i])});
  return t;
}

LatencyReport steering_latency_bench(const model::MotionFormer& model, const cv::ControlVector& cv,
                                     std::span<const scene::Scene> scenes, std::size_t iterations, double tau) {
  if (iterations == 0) throw std::invalid_argument("latency bench needs at least one iteration");
  if (scenes.empty()) throw std::invalid_argument("latency bench needs scenes");
  const model::SteeringDirective d = cv.directive(tau);
  using clock = std::chrono::steady_clock;
  auto time = [&](std::span<const model::SteeringDirective> dirs) {
    const auto t0 = clock::now();
    const auto out = model.forward_batch(scenes, dirs, 1, false);
    const auto t1 = clock::now();
    if (out.size() != scenes.size()) throw std::logic_error("forward pass lost samples");
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };
  for (int i = 0; i < 5; ++i) {
    time({});
    time(std::span(&d, 1));
  }
  LatencyReport r;
  r.iterations = iterations;
  for (std::size_t i = 0; i < iterations; ++i) {
    if (i % 2 == 0) {
      r.base_ms += time({});
      r.steered_ms += time(std::span(&d, 1));
    } else {
      r.steered_ms += time(std::span(&d, 1));
      r.base_ms += time({});
    }
  }
  r.base_ms /= static_cast<double>(iterations);
  r.steered_ms /= static_cast<double>(iterations);
  r.overhead_fraction = (r.steered_ms - r.base_ms) / r.base_ms;
  return r;
}

std::string calibration_svg(std::span<const CalibrationCurve> curves, std::span<const std::string> names) {
  if (curves.size() != names.size()) throw std::invalid_argument("one name per curve required");
  constexpr double W = 640, H = 420, L = 70, R = 170, T = 20, B = 60;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const CalibrationCurve& c : curves)
    for (std::size_t i = 0; i < c.size(); ++i) {
      x0 = std::min(x0, c.tau[i]);
      x1 = std::max(x1, c.tau[i]);
      y0 = std::min(y0, c.change[i]);
      y1 = std::max(y1, c.change[i]);
    }
  if (!std::isfinite(x0)) x0 = -1, x1 = 1, y0 = -1, y1 = 1;
  if (x1 == x0) x0 -= 1, x1 += 1;
  if (y1 == y0) y0 -= 1, y1 += 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::string svg;
  char buf[256];
  std::snprintf(buf, sizeof buf, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\">\n", W, H);
  svg += buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, H - B, W - R, H - B);
  svg += buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, T, L, H - B);
  svg += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">τ</text>\n", (L + W - R) / 2, H - 15);
  svg += buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"15\" y=\"%g\" text-anchor=\"middle\" transform=\"rotate(-90 15 %g)\">percent</text>\n",
                (T + H - B) / 2, (T + H - B) / 2);
  svg += buf;
  for (double v : {x0, x1}) {
    std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%g\" text-anchor=\"middle\">%g</text>\n", px(v), H - B + 18, v);
    svg += buf;
  }
  for (double v : {y0, y1}) {
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%.2f\" text-anchor=\"end\">%.1f</text>\n", L - 5, py(v) + 4, v);
    svg += buf;
  }
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* color = colors[c % std::size(colors)];
    svg += "<polyline fill=\"none\" stroke=\"";
    svg += color;
    svg += "\" points=\"";
    for (std::size_t i = 0; i < curves[c].size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", px(curves[c].tau[i]), py(curves[c].change[i]));
      svg += buf;
    }
    svg += "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" fill=\"%s\">", W - R + 10, T + 20.0 + 18.0 * c, color);
    svg += buf;
    for (char ch : names[c]) {
      if (ch == '<') svg += "&lt;";
      else if (ch == '&') svg += "&amp;";
      else svg += ch;
    }
    svg += "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace wim::eval
