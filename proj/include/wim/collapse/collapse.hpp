#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wim/feat/motion_labels.hpp"
#include "wim/model/probes.hpp"
#include "wim/num/csv.hpp"
#include "wim/num/tensor.hpp"

namespace wim::collapse {

struct ClusterStats {
  int label = 0;
  std::vector<double> mean;
  double variance = 0.0;  // mean squared distance to the class mean
  std::size_t count = 0;
};

// Statistics for every class present in `labels`; absent classes are skipped.
std::vector<ClusterStats> cluster_stats(const num::Tensor& h, std::span<const int> labels, std::size_t classes);

double accuracy(std::span<const int> predicted, std::span<const int> labels);
double probing_accuracy(const model::LinearProbe& probe, const num::Tensor& h, std::span<const int> labels);

// Mean over dimensions of the per-dimension standard deviation of the l2-normalized rows.
double std_l2_norm(const num::Tensor& h);

double cdnv(const ClusterStats& a, const ClusterStats& b);
// Ratio of the variance term to the distance term.
double summary_ratio(double variance_term, double distance_term);

struct PairCdnv {
  int a = 0;
  int b = 0;
  double value = 0.0;
};

struct CdnvSummary {
  double mean = 0.0;           // mean of pairwise cdnv
  double variance_term = 0.0;  // mean over pairs of sigma_a^2 + sigma_b^2
  double distance_term = 0.0;  // mean over pairs of 2 |mu_a - mu_b|^2
  double ratio = 0.0;          // variance_term / distance_term
  std::vector<PairCdnv> pairs;
  std::vector<int> dropped;  // classes with fewer than min_count samples
};

CdnvSummary aggregate_cdnv(const std::vector<ClusterStats>& stats, std::size_t min_count = 10);

struct SpearmanHeatmap {
  std::vector<std::string> names;
  std::vector<double> values;  // row-major, NaN where undefined
  std::vector<bool> defined;

  std::size_t size() const noexcept { return names.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * names.size() + j]; }
  num::CsvTable to_csv() const;
};

SpearmanHeatmap cluster_spearman_heatmap(const std::vector<std::vector<double>>& means,
                                         const std::vector<std::string>& names);
// Cluster means of every class of every feature (14 classes) from H rows.
SpearmanHeatmap feature_spearman_heatmap(const num::Tensor& h, std::span<const feat::MotionLabels> labels);

struct CollapseRow {
  std::size_t module = 0;
  feat::Feature feature = feat::Feature::speed;
  double accuracy = 0.0;
  double std_l2 = 0.0;
  double cdnv = 0.0;
  CdnvSummary detail;
};

struct CollapseReport {
  std::vector<CollapseRow> rows;
  std::vector<double> overall_cdnv;  // per module, mean of the defined per-feature values
  std::vector<std::string> warnings;

  num::CsvTable to_csv() const;
  const CollapseRow& find(std::size_t module, feat::Feature f) const;
};

// Trains one probe per (module, feature) on the train split and measures on the test split.
CollapseReport collapse_report(std::span<const num::Tensor> train_h, std::span<const feat::MotionLabels> train_labels,
                               std::span<const num::Tensor> test_h, std::span<const feat::MotionLabels> test_labels,
                               const model::ProbeConfig& probe_config);

}  // namespace wim::collapse
