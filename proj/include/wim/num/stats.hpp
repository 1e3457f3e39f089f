#pragma once

#include <span>
#include <vector>

namespace wim::num {

double mean(std::span<const double> x);
// Sample standard deviation (n - 1 denominator).
double stddev(std::span<const double> x);
// Throws NumericError if either sequence has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);
// Pearson correlation of average ranks (ties share the mean of their ranks).
double spearman(std::span<const double> x, std::span<const double> y);
// 1-based average ranks.
std::vector<double> average_ranks(std::span<const double> x);

struct PairStats {
  double pearson = 0.0;
  double spearman = 0.0;
  double mean = 0.0;  // of x
  double std = 0.0;   // of x
};

PairStats stats(std::span<const double> x, std::span<const double> y);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

// Ordinary least squares y = slope * x + intercept.
LineFit least_squares_line(std::span<const double> x, std::span<const double> y);

}  // namespace wim::num
