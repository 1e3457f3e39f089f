#include "wim/collapse/collapse.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "wim/num/random.hpp"
#include "wim/num/stats.hpp"

namespace wim::collapse {

using num::Tensor;

std::vector<ClusterStats> cluster_stats(const Tensor& h, std::span<const int> labels, std::size_t classes) {
  if (h.rank() != 2 || h.rows() != labels.size())
    throw num::ShapeError("cluster_stats: " + num::shape_str(h.shape()) + " rows do not match " +
                          std::to_string(labels.size()) + " labels");
  const std::size_t d = h.cols();
  std::vector<std::vector<double>> sums(classes, std::vector<double>(d, 0.0));
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw std::out_of_range("cluster_stats: label " + std::to_string(labels[i]) + " out of range");
    const auto c = static_cast<std::size_t>(labels[i]);
    ++counts[c];
    for (std::size_t j = 0; j < d; ++j) sums[c][j] += h.at(i, j);
  }
  std::vector<ClusterStats> out;
  std::vector<std::size_t> slot(classes, 0);
  for (std::size_t c = 0; c < classes; ++c) {
    if (!counts[c]) continue;
    ClusterStats s;
    s.label = static_cast<int>(c);
    s.count = counts[c];
    s.mean = sums[c];
    for (double& v : s.mean) v /= static_cast<double>(counts[c]);
    slot[c] = out.size();
    out.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ClusterStats& s = out[slot[static_cast<std::size_t>(labels[i])]];
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = h.at(i, j) - s.mean[j];
      s.variance += diff * diff;
    }
  }
  for (ClusterStats& s : out) s.variance /= static_cast<double>(s.count);
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("accuracy of an empty evaluation set");
  if (predicted.size() != labels.size()) throw std::invalid_argument("prediction and label counts differ");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double probing_accuracy(const model::LinearProbe& probe, const Tensor& h, std::span<const int> labels) {
  if (labels.empty()) throw std::invalid_argument("probing accuracy of an empty evaluation set");
  return accuracy(probe.predict(h), labels);
}

double std_l2_norm(const Tensor& h) {
  if (h.rank() != 2 || h.rows() < 2) throw std::invalid_argument("std_l2_norm needs at least 2 rows");
  const std::size_t n = h.rows(), d = h.cols();
  std::vector<double> normalized(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm += h.at(i, j) * h.at(i, j);
    norm = std::sqrt(norm);
    if (norm == 0.0) throw std::invalid_argument("std_l2_norm: row " + std::to_string(i) + " is zero");
    for (std::size_t j = 0; j < d; ++j) normalized[i * d + j] = h.at(i, j) / norm;
  }
  double total = 0.0;
  std::vector<double> column(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = normalized[i * d + j];
    total += num::stddev(column);
  }
  return total / static_cast<double>(d);
}

namespace {
double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw num::ShapeError("cluster mean dimensions differ");
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}
}  // namespace

double cdnv(const ClusterStats& a, const ClusterStats& b) {
  const double dist = squared_distance(a.mean, b.mean);
  if (dist == 0.0)
    throw std::invalid_argument("degenerate pair: classes " + std::to_string(a.label) + " and " +
                                std::to_string(b.label) + " have coincident means");
  return (a.variance + b.variance) / (2.0 * dist);
}

double summary_ratio(double variance_term, double distance_term) {
  if (!(distance_term > 0.0)) throw std::invalid_argument("distance term must be positive");
  return variance_term / distance_term;
}

CdnvSummary aggregate_cdnv(const std::vector<ClusterStats>& stats, std::size_t min_count) {
  std::vector<const ClusterStats*> kept;
  CdnvSummary s;
  for (const ClusterStats& c : stats) {
    if (c.count < min_count)
      s.dropped.push_back(c.label);
    else
      kept.push_back(&c);
  }
  if (kept.size() < 2) throw std::invalid_argument("cdnv needs at least two classes with enough samples");
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      const double value = cdnv(*kept[i], *kept[j]);
      s.pairs.push_back({kept[i]->label, kept[j]->label, value});
      s.mean += value;
      s.variance_term += kept[i]->variance + kept[j]->variance;
      s.distance_term += 2.0 * squared_distance(kept[i]->mean, kept[j]->mean);
    }
  const double pairs = static_cast<double>(s.pairs.size());
  s.mean /= pairs;
  s.variance_term /= pairs;
  s.distance_term /= pairs;
  s.ratio = summary_ratio(s.variance_term, s.distance_term);
  return s;
}

num::CsvTable SpearmanHeatmap::to_csv() const {
  std::vector<std::string> header{"class"};
  header.insert(header.end(), names.begin(), names.end());
  num::CsvTable t(header);
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::vector<std::string> row{names[i]};
    for (std::size_t j = 0; j < names.size(); ++j) row.push_back(num::format_number(at(i, j)));
    t.add(std::move(row));
  }
  return t;
}

SpearmanHeatmap cluster_spearman_heatmap(const std::vector<std::vector<double>>& means,
                                         const std::vector<std::string>& names) {
  if (means.size() < 2) throw std::invalid_argument("spearman heatmap needs at least 2 clusters");
  if (names.size() != means.size()) throw std::invalid_argument("one name per cluster required");
  const std::size_t n = means.size();
  SpearmanHeatmap h;
  h.names = names;
  h.values.assign(n * n, std::numeric_limits<double>::quiet_NaN());
  h.defined.assign(n * n, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      try {
        const double r = num::spearman(means[i], means[j]);
        h.values[i * n + j] = h.values[j * n + i] = r;
        h.defined[i * n + j] = h.defined[j * n + i] = true;
      } catch (const num::NumericError&) {
      }
    }
  return h;
}

SpearmanHeatmap feature_spearman_heatmap(const Tensor& h, std::span<const feat::MotionLabels> labels) {
  std::vector<std::vector<double>> means;
  std::vector<std::string> names;
  for (feat::Feature f : feat::kFeatures) {
    const auto stats = cluster_stats(h, model::feature_labels(labels, f), feat::class_count(f));
    for (const ClusterStats& s : stats) {
      means.push_back(s.mean);
      names.push_back(std::string(feat::to_string(f)) + ":" + std::string(feat::class_name(f, s.label)));
    }
  }
  return cluster_spearman_heatmap(means, names);
}

num::CsvTable CollapseReport::to_csv() const {
  num::CsvTable t({"module", "feature", "accuracy", "std_l2", "cdnv"});
  for (const CollapseRow& r : rows)
    t.add({std::to_string(r.module), std::string(feat::to_string(r.feature)), num::format_number(r.accuracy),
           num::format_number(r.std_l2), num::format_number(r.cdnv)});
  for (std::size_t m = 0; m < overall_cdnv.size(); ++m)
    t.add({std::to_string(m), "overall", "nan", num::format_number(find(m, feat::Feature::speed).std_l2),
           num::format_number(overall_cdnv[m])});
  return t;
}

const CollapseRow& CollapseReport::find(std::size_t module, feat::Feature f) const {
  for (const CollapseRow& r : rows)
    if (r.module == module && r.feature == f) return r;
  throw std::out_of_range("no collapse row for module " + std::to_string(module));
}

CollapseReport collapse_report(std::span<const Tensor> train_h, std::span<const feat::MotionLabels> train_labels,
                               std::span<const Tensor> test_h, std::span<const feat::MotionLabels> test_labels,
                               const model::ProbeConfig& probe_config) {
  if (train_h.size() != test_h.size()) throw std::invalid_argument("train and test module counts differ");
  CollapseReport report;
  for (std::size_t m = 0; m < train_h.size(); ++m) {
    const double spread = std_l2_norm(test_h[m]);
    for (feat::Feature f : feat::kFeatures) {
      CollapseRow row;
      row.module = m;
      row.feature = f;
      row.std_l2 = spread;
      model::LinearProbe probe(train_h[m].cols(), feat::class_count(f),
                               num::derive_seed(probe_config.seed, m * 4 + static_cast<std::size_t>(f)),
                               probe_config.learning_rate);
      probe.fit(train_h[m], model::feature_labels(train_labels, f), probe_config.epochs, probe_config.batch_size,
                probe_config.seed);
      const auto test_y = model::feature_labels(test_labels, f);
      row.accuracy = probing_accuracy(probe, test_h[m], test_y);
      try {
        row.detail = aggregate_cdnv(cluster_stats(test_h[m], test_y, feat::class_count(f)));
        row.cdnv = row.detail.mean;
        for (int c : row.detail.dropped)
          report.warnings.push_back("module " + std::to_string(m) + " " + std::string(feat::to_string(f)) + ":" +
                                    std::string(feat::class_name(f, c)) + " has fewer than 10 samples; dropped from cdnv");
      } catch (const std::invalid_argument& e) {
        row.cdnv = std::numeric_limits<double>::quiet_NaN();
        report.warnings.push_back("module " + std::to_string(m) + " " + std::string(feat::to_string(f)) + ": " + e.what());
      }
      report.rows.push_back(std::move(row));
    }
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t k = report.rows.size() - feat::kFeatures.size(); k < report.rows.size(); ++k)
      if (std::isfinite(report.rows[k].cdnv)) {
        sum += report.rows[k].cdnv;
        ++defined;
      }
    report.overall_cdnv.push_back(defined ? sum / static_cast<double>(defined) : std::numeric_limits<double>::quiet_NaN());
  }
  return report;
}

}  // namespace wim::collapse
