#include "wim/num/pca.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

namespace wim::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double norm(const Eigen::VectorXd& v) { return std::sqrt(v.squaredNorm()); }

// Unit vector orthogonal to every column in `basis`, starting from standard axes.
Eigen::VectorXd orthogonal_fill(const std::vector<Eigen::VectorXd>& basis, std::size_t d) {
  for (std::size_t axis = 0; axis < d; ++axis) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    v[static_cast<Eigen::Index>(axis)] = 1.0;
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) v -= b.dot(v) * b;
    const double n = norm(v);
    if (n > 1e-6) return v / n;
  }
  return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
}

}  // namespace

void canonicalize_sign(std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  if (!v.empty() && v[best] < 0.0)
    for (double& x : v) x = -x;
}

PcaResult pca_top_components(const Tensor& X, std::size_t k, Centering centering, PowerIterationOptions options) {
  const std::size_t n = X.rows(), d = X.cols();
  if (n < 2) throw ShapeError("pca needs at least 2 rows, got " + std::to_string(n));
  if (k < 1 || k > std::min(n, d)) {
    throw ShapeError("pca: k=" + std::to_string(k) + " outside [1, " + std::to_string(std::min(n, d)) + "]");
  }
  X.check_finite("pca input");

  Eigen::Map<const RowMat> data(X.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  RowMat centered = data;
  double denom = static_cast<double>(n);
  if (centering == Centering::mean) {
    const Eigen::RowVectorXd mu = data.colwise().mean();
    centered.rowwise() -= mu;
    denom = static_cast<double>(n - 1);
  }
  Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
  const double total = cov.trace();
  const double scale = std::max(1.0, data.cwiseAbs().maxCoeff());
  if (!(total > 1e-24 * scale * scale)) throw NumericError("degenerate data");

  PcaResult result;
  std::vector<Eigen::VectorXd> found;
  for (std::size_t c = 0; c < k; ++c) {
    Eigen::Index start = 0;
    cov.diagonal().maxCoeff(&start);
    Eigen::VectorXd v = cov.col(start);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : found) v -= b.dot(v) * b;
    double vn = norm(v);
    double lambda = 0.0;
    if (vn <= 1e-14 * total) {
      v = orthogonal_fill(found, d);
    } else {
      v /= vn;
      for (std::size_t it = 0; it < options.max_iterations; ++it) {
        Eigen::VectorXd w = cov * v;
        for (const auto& b : found) w -= b.dot(w) * b;
        const double wn = norm(w);
        if (wn <= 1e-14 * total) break;
        w /= wn;
        if (w.dot(v) < 0.0) w = -w;
        const double change = norm(w - v);
        v = std::move(w);
        if (change < options.tolerance) break;
      }
      lambda = std::max(0.0, v.dot(cov * v));
    }
    cov -= lambda * v * v.transpose();
    found.push_back(v);
    std::vector<double> comp(v.data(), v.data() + d);
    canonicalize_sign(comp);
    result.components.push_back(std::move(comp));
    result.eigenvalues.push_back(lambda);
    result.explained_variance_ratio.push_back(lambda / total);
  }
  return result;
}

}  // namespace wim::num
