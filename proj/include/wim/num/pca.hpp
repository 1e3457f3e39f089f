#pragma once

#include <cstddef>
#include <vector>

#include "wim/num/tensor.hpp"

namespace wim::num {

enum class Centering {
  mean,  // classical PCA on mean-centered rows
  none,  // top directions of the raw second-moment matrix
};

struct PcaResult {
  // k unit vectors, each of length d, mutually orthogonal.
  std::vector<std::vector<double>> components;
  // Fraction of total (co)variance carried by each component; non-increasing.
  std::vector<double> explained_variance_ratio;
  std::vector<double> eigenvalues;
};

struct PowerIterationOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
};

// Power iteration with deflation on the (co)variance of X (n x d). Each
// component's sign is fixed so that its largest-magnitude coordinate is positive.
// Throws NumericError("degenerate data") if X carries no variance.
PcaResult pca_top_components(const Tensor& X, std::size_t k, Centering centering = Centering::mean,
                             PowerIterationOptions options = {});

// Flips `v` in place so its largest-magnitude coordinate is positive.
void canonicalize_sign(std::vector<double>& v);

}  // namespace wim::num
