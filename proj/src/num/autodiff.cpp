#include "wim/num/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wim::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

MapC as_mat(const Tensor& t) { return MapC(t.data(), t.rows(), t.cols()); }
MapM as_mat(Tensor& t) { return MapM(t.data(), t.rows(), t.cols()); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected matrix, got " + shape_str(a.shape()));
}

void add_into(Tensor& dst, const Tensor& src, double s = 1.0) {
  double* d = dst.data();
  const double* p = src.data();
  for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s * p[i];
}

}  // namespace

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  std::fill(grad.values().begin(), grad.values().end(), 0.0);
}

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value(id_);
}

Tape& Var::tape() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return *tape_;
}

Var Tape::constant(Tensor value) {
  value.check_finite("constant");
  nodes_.push_back(Node{std::move(value), Tensor(), false, nullptr, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  value.check_finite("leaf");
  nodes_.push_back(Node{std::move(value), Tensor(), record_, nullptr, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  p.value.check_finite(p.name.c_str());
  nodes_.push_back(Node{p.value, Tensor(), record_, nullptr, record_ ? &p : nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(const Var& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw std::invalid_argument("variable does not belong to this tape");
  }
}

bool Tape::requires_grad(const Var& v) const {
  check_owned(v);
  return nodes_[v.id_].requires_grad;
}

Tensor& Tape::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

const Tensor& Tape::grad(const Var& v) {
  check_owned(v);
  return grad_of(v.id_);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool any = false;
  for (const Var& in : inputs) {
    check_owned(in);
    any = any || nodes_[in.id_].requires_grad;
  }
  value.check_finite(op);
  const bool req = record_ && any;
  nodes_.push_back(Node{std::move(value), Tensor(), req, req ? std::move(fn) : nullptr, nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& loss) {
  check_owned(loss);
  Node& root = nodes_[loss.id_];
  if (root.value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(root.value.shape()));
  }
  if (!root.requires_grad) {
    throw std::invalid_argument("backward() on a value that was not produced by a taped computation");
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_of(loss.id_)[0] = 1.0;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      if (n.param->grad.shape() != n.value.shape()) n.param->zero_grad();
      add_into(n.param->grad, n.grad);
    }
  }
}

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix("matmul", A);
  require_matrix("matmul", B);
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  Tensor out({A.rows(), B.cols()});
  as_mat(out).noalias() = as_mat(A) * as_mat(B);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    if (t.needs_grad(ia)) as_mat(t.grad_of(ia)).noalias() += as_mat(g) * as_mat(t.value(ib)).transpose();
    if (t.needs_grad(ib)) as_mat(t.grad_of(ib)).noalias() += as_mat(t.value(ia)).transpose() * as_mat(g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix("matmul_nt", A);
  require_matrix("matmul_nt", B);
  if (A.cols() != B.cols()) {
    throw ShapeError("matmul_nt: shape mismatch " + shape_str(A.shape()) + " x " + shape_str(B.shape()) + "^T");
  }
  Tensor out({A.rows(), B.rows()});
  as_mat(out).noalias() = as_mat(A) * as_mat(B).transpose();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("matmul_nt", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    if (t.needs_grad(ia)) as_mat(t.grad_of(ia)).noalias() += as_mat(g) * as_mat(t.value(ib));
    if (t.needs_grad(ib)) as_mat(t.grad_of(ib)).noalias() += as_mat(g).transpose() * as_mat(t.value(ia));
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  add_into(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    if (t.needs_grad(ia)) add_into(t.grad_of(ia), g);
    if (t.needs_grad(ib)) add_into(t.grad_of(ib), g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  add_into(out, b.value(), -1.0);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    if (t.needs_grad(ia)) add_into(t.grad_of(ia), g);
    if (t.needs_grad(ib)) add_into(t.grad_of(ib), g, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad_of(ia);
      const Tensor& vb = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad_of(ib);
      const Tensor& va = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  const std::size_t ia = a.id();
  return a.tape().record("scale", std::move(out), {a}, [ia, s](Tape& t, std::size_t self) {
    add_into(t.grad_of(ia), t.output_grad(self), s);
  });
}

Var add_bias(const Var& a, const Var& bias) {
  const Tensor& A = a.value();
  const Tensor& b = bias.value();
  require_matrix("add_bias", A);
  if (b.rank() != 1 || b.size() != A.cols()) {
    throw ShapeError("add_bias: bias shape " + shape_str(b.shape()) + " does not fit " + shape_str(A.shape()));
  }
  Tensor out = A;
  const std::size_t n = A.rows(), m = A.cols();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] += b[c];
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape().record("add_bias", std::move(out), {a, bias}, [ia, ib, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    if (t.needs_grad(ia)) add_into(t.grad_of(ia), g);
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad_of(ib);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) gb[c] += g[r * m + c];
    }
  });
}

Var add_tiled(const Var& a, const Var& block) {
  const Tensor& A = a.value();
  const Tensor& B = block.value();
  require_matrix("add_tiled", A);
  require_matrix("add_tiled", B);
  if (B.cols() != A.cols() || B.rows() == 0 || A.rows() % B.rows() != 0) {
    throw ShapeError("add_tiled: block " + shape_str(B.shape()) + " does not tile " + shape_str(A.shape()));
  }
  Tensor out = A;
  const std::size_t bs = B.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i % bs];
  const std::size_t ia = a.id(), ib = block.id();
  return a.tape().record("add_tiled", std::move(out), {a, block}, [ia, ib, bs](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    if (t.needs_grad(ia)) add_into(t.grad_of(ia), g);
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad_of(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % bs] += g[i];
    }
  });
}

Var relu(const Var& a) { return jump_relu(a, 0.0); }

Var jump_relu(const Var& a, double threshold) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > threshold ? v : 0.0;
  const std::size_t ia = a.id();
  return a.tape().record("jump_relu", std::move(out), {a}, [ia, threshold](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > threshold) ga[i] += g[i];
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  const std::size_t ia = a.id();
  return a.tape().record("tanh", std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

namespace {

void softmax_inplace(std::span<double> row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  double z = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : row) v /= z;
}

}  // namespace

Var softmax_rows(const Var& a) {
  require_matrix("softmax_rows", a.value());
  Tensor out = a.value();
  const std::size_t n = out.rows(), m = out.cols();
  for (std::size_t r = 0; r < n; ++r) softmax_inplace(out.row(r));
  const std::size_t ia = a.id();
  return a.tape().record("softmax_rows", std::move(out), {a}, [ia, n, m](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_of(ia);
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < m; ++c) dot += g[r * m + c] * y[r * m + c];
      for (std::size_t c = 0; c < m; ++c) ga[r * m + c] += y[r * m + c] * (g[r * m + c] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& X = x.value();
  require_matrix("layer_norm", X);
  const std::size_t n = X.rows(), m = X.cols();
  if (gamma.value().shape() != Shape{m} || beta.value().shape() != Shape{m}) {
    throw ShapeError("layer_norm: gain/bias shapes " + shape_str(gamma.value().shape()) + ", " +
                     shape_str(beta.value().shape()) + " do not fit " + shape_str(X.shape()));
  }
  Tensor xhat({n, m});
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < m; ++c) mu += X[r * m + c];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const double d = X[r * m + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(m);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < m; ++c) xhat[r * m + c] = (X[r * m + c] - mu) * inv_std[r];
  }
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  Tensor out({n, m});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out[r * m + c] = G[c] * xhat[r * m + c] + B[c];
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [ix, ig, ib, n, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Tensor& g = t.output_grad(self);
        if (t.needs_grad(ig)) {
          Tensor& gg = t.grad_of(ig);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) gg[c] += g[r * m + c] * xhat[r * m + c];
        }
        if (t.needs_grad(ib)) {
          Tensor& gb = t.grad_of(ib);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) gb[c] += g[r * m + c];
        }
        if (t.needs_grad(ix)) {
          const Tensor& G = t.value(ig);
          Tensor& gx = t.grad_of(ix);
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t r = 0; r < n; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t c = 0; c < m; ++c) {
              const double dxh = g[r * m + c] * G[c];
              s1 += dxh;
              s2 += dxh * xhat[r * m + c];
            }
            for (std::size_t c = 0; c < m; ++c) {
              const double dxh = g[r * m + c] * G[c];
              gx[r * m + c] += inv_std[r] * (dxh - s1 * inv_m - xhat[r * m + c] * s2 * inv_m);
            }
          }
        }
      });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t batch, std::size_t seq, std::size_t heads) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  require_matrix("attention", Q);
  require_same_shape("attention", Q, K);
  require_same_shape("attention", Q, V);
  const std::size_t d = Q.cols();
  if (Q.rows() != batch * seq || heads == 0 || d % heads != 0) {
    throw ShapeError("attention: " + shape_str(Q.shape()) + " incompatible with batch=" + std::to_string(batch) +
                     " seq=" + std::to_string(seq) + " heads=" + std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs[b][h][i][j]
  std::vector<double> probs(batch * heads * seq * seq);
  Tensor out({batch * seq, d});
  std::vector<double> row(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const double* qi = Q.data() + (b * seq + i) * d + h * dh;
        for (std::size_t j = 0; j < seq; ++j) {
          const double* kj = K.data() + (b * seq + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
          row[j] = s * inv_sqrt;
        }
        softmax_inplace(row);
        std::copy(row.begin(), row.end(), P + i * seq);
        double* oi = out.data() + (b * seq + i) * d + h * dh;
        for (std::size_t j = 0; j < seq; ++j) {
          const double* vj = V.data() + (b * seq + j) * d + h * dh;
          const double p = row[j];
          for (std::size_t e = 0; e < dh; ++e) oi[e] += p * vj[e];
        }
      }
    }
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape().record(
      "attention", std::move(out), {q, k, v},
      [iq, ik, iv, batch, seq, heads, d, dh, inv_sqrt, probs = std::move(probs)](Tape& t, std::size_t self) {
        const Tensor& g = t.output_grad(self);
        const Tensor& Q = t.value(iq);
        const Tensor& K = t.value(ik);
        const Tensor& V = t.value(iv);
        const bool nq = t.needs_grad(iq), nk = t.needs_grad(ik), nv = t.needs_grad(iv);
        Tensor* gq = nq ? &t.grad_of(iq) : nullptr;
        Tensor* gk = nk ? &t.grad_of(ik) : nullptr;
        Tensor* gv = nv ? &t.grad_of(iv) : nullptr;
        std::vector<double> dp(seq);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* P = probs.data() + (b * heads + h) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
              const double* gi = g.data() + (b * seq + i) * d + h * dh;
              double dot = 0.0;
              for (std::size_t j = 0; j < seq; ++j) {
                const double* vj = V.data() + (b * seq + j) * d + h * dh;
                double s = 0.0;
                for (std::size_t e = 0; e < dh; ++e) s += gi[e] * vj[e];
                dp[j] = s;
                dot += s * P[i * seq + j];
                if (gv) {
                  double* gvj = gv->data() + (b * seq + j) * d + h * dh;
                  const double p = P[i * seq + j];
                  for (std::size_t e = 0; e < dh; ++e) gvj[e] += p * gi[e];
                }
              }
              const double* qi = Q.data() + (b * seq + i) * d + h * dh;
              for (std::size_t j = 0; j < seq; ++j) {
                const double ds = P[i * seq + j] * (dp[j] - dot) * inv_sqrt;
                if (ds == 0.0) continue;
                const double* kj = K.data() + (b * seq + j) * d + h * dh;
                if (gq) {
                  double* gqi = gq->data() + (b * seq + i) * d + h * dh;
                  for (std::size_t e = 0; e < dh; ++e) gqi[e] += ds * kj[e];
                }
                if (gk) {
                  double* gkj = gk->data() + (b * seq + j) * d + h * dh;
                  for (std::size_t e = 0; e < dh; ++e) gkj[e] += ds * qi[e];
                }
              }
            }
          }
        }
      });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record("sum", Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.output_grad(self)[0];
    for (auto& v : t.grad_of(ia).values()) v += g;
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_abs(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += std::abs(v);
  const std::size_t ia = a.id();
  return a.tape().record("sum_abs", Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.output_grad(self)[0];
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad_of(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += x[i] > 0.0 ? g : (x[i] < 0.0 ? -g : 0.0);
  });
}

Var sum_squares(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v * v;
  const std::size_t ia = a.id();
  return a.tape().record("sum_squares", Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.output_grad(self)[0];
    const Tensor& x = t.value(ia);
    Tensor& ga = t.grad_of(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += 2.0 * g * x[i];
  });
}

Var gather_rows(const Var& a, std::vector<std::size_t> rows) {
  const Tensor& A = a.value();
  require_matrix("gather_rows", A);
  const std::size_t m = A.cols();
  Tensor out({rows.size(), m});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= A.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[r]) + " out of range for " + shape_str(A.shape()));
    }
    std::copy_n(A.data() + rows[r] * m, m, out.data() + r * m);
  }
  const std::size_t ia = a.id();
  return a.tape().record("gather_rows", std::move(out), {a}, [ia, m, rows = std::move(rows)](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    Tensor& ga = t.grad_of(ia);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < m; ++c) ga[rows[r] * m + c] += g[r * m + c];
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  const Tensor& A = a.value();
  require_matrix("slice_cols", A);
  if (begin + count > A.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_str(A.shape()));
  }
  const std::size_t n = A.rows(), m = A.cols();
  Tensor out({n, count});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(A.data() + r * m + begin, count, out.data() + r * count);
  const std::size_t ia = a.id();
  return a.tape().record("slice_cols", std::move(out), {a}, [ia, n, m, begin, count](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    Tensor& ga = t.grad_of(ia);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < count; ++c) ga[r * m + begin + c] += g[r * count + c];
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record("reshape", std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    add_into(t.grad_of(ia), t.output_grad(self));
  });
}

Var transpose(const Var& a) {
  require_matrix("transpose", a.value());
  Tensor out = a.value().transposed();
  const std::size_t ia = a.id();
  return a.tape().record("transpose", std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    add_into(t.grad_of(ia), t.output_grad(self).transposed());
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const Tensor& L = logits.value();
  require_matrix("cross_entropy", L);
  const std::size_t n = L.rows(), m = L.cols();
  if (labels.size() != n || n == 0) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + shape_str(L.shape()));
  }
  Tensor probs = L;
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= m) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[r]) + " outside [0, " +
                              std::to_string(m) + ")");
    }
    auto row = probs.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    loss += -(row[static_cast<std::size_t>(labels[r])] - mx - std::log(z));
    softmax_inplace(row);
  }
  loss /= static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  return logits.tape().record(
      "cross_entropy", Tensor::scalar(loss), {logits},
      [il, n, m, probs = std::move(probs), lab = std::move(lab)](Tape& t, std::size_t self) {
        const double g = t.output_grad(self)[0] / static_cast<double>(n);
        Tensor& gl = t.grad_of(il);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < m; ++c) gl[r * m + c] += g * probs[r * m + c];
          gl[r * m + static_cast<std::size_t>(lab[r])] -= g;
        }
      });
}

Var circular_conv1d(const Var& x, const Var& w, std::size_t in_channels, std::size_t length) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  require_matrix("circular_conv1d", X);
  if (W.rank() != 3 || W.dim(1) != in_channels || X.cols() != in_channels * length || length == 0) {
    throw ShapeError("circular_conv1d: input " + shape_str(X.shape()) + " and kernel " + shape_str(W.shape()) +
                     " incompatible with in_channels=" + std::to_string(in_channels) +
                     " length=" + std::to_string(length));
  }
  const std::size_t n = X.rows(), oc = W.dim(0), ic = in_channels, ks = W.dim(2), len = length;
  const std::size_t half = ks / 2;
  Tensor out({n, oc * len});
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = X.data() + s * ic * len;
    double* ys = out.data() + s * oc * len;
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t c = 0; c < ic; ++c) {
        const double* wk = W.data() + (o * ic + c) * ks;
        const double* xc = xs + c * len;
        for (std::size_t i = 0; i < len; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < ks; ++j) acc += wk[j] * xc[(i + j + len * ks - half) % len];
          ys[o * len + i] += acc;
        }
      }
  }
  const std::size_t ix = x.id(), iw = w.id();
  return x.tape().record("circular_conv1d", std::move(out), {x, w},
                         [ix, iw, n, oc, ic, ks, len, half](Tape& t, std::size_t self) {
                           const Tensor& g = t.output_grad(self);
                           const Tensor& X = t.value(ix);
                           const Tensor& W = t.value(iw);
                           Tensor* gx = t.needs_grad(ix) ? &t.grad_of(ix) : nullptr;
                           Tensor* gw = t.needs_grad(iw) ? &t.grad_of(iw) : nullptr;
                           for (std::size_t s = 0; s < n; ++s)
                             for (std::size_t o = 0; o < oc; ++o)
                               for (std::size_t c = 0; c < ic; ++c)
                                 for (std::size_t i = 0; i < len; ++i) {
                                   const double gi = g[s * oc * len + o * len + i];
                                   for (std::size_t j = 0; j < ks; ++j) {
                                     const std::size_t src = s * ic * len + c * len + (i + j + len * ks - half) % len;
                                     const std::size_t wi = (o * ic + c) * ks + j;
                                     if (gx) (*gx)[src] += W[wi] * gi;
                                     if (gw) (*gw)[wi] += X[src] * gi;
                                   }
                                 }
                         });
}

Var token_mix(const Var& x, const Var& w, std::size_t tokens, std::size_t channels) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  require_matrix("token_mix", X);
  if (W.shape() != Shape{tokens, tokens} || X.cols() != tokens * channels) {
    throw ShapeError("token_mix: input " + shape_str(X.shape()) + " and mixer " + shape_str(W.shape()) +
                     " incompatible with tokens=" + std::to_string(tokens) +
                     " channels=" + std::to_string(channels));
  }
  const std::size_t n = X.rows(), P = tokens, C = channels;
  Tensor out({n, P * C});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t q = 0; q < P; ++q) {
        const double wpq = W[p * P + q];
        const double* xq = X.data() + s * P * C + q * C;
        double* yp = out.data() + s * P * C + p * C;
        for (std::size_t c = 0; c < C; ++c) yp[c] += wpq * xq[c];
      }
  const std::size_t ix = x.id(), iw = w.id();
  return x.tape().record("token_mix", std::move(out), {x, w}, [ix, iw, n, P, C](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    const Tensor& X = t.value(ix);
    const Tensor& W = t.value(iw);
    Tensor* gx = t.needs_grad(ix) ? &t.grad_of(ix) : nullptr;
    Tensor* gw = t.needs_grad(iw) ? &t.grad_of(iw) : nullptr;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t p = 0; p < P; ++p)
        for (std::size_t q = 0; q < P; ++q) {
          const double* gp = g.data() + s * P * C + p * C;
          const double* xq = X.data() + s * P * C + q * C;
          if (gx) {
            double* gxq = gx->data() + s * P * C + q * C;
            for (std::size_t c = 0; c < C; ++c) gxq[c] += W[p * P + q] * gp[c];
          }
          if (gw) {
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c) acc += gp[c] * xq[c];
            (*gw)[p * P + q] += acc;
          }
        }
  });
}

Var row_operator(const Var& z, const Var& ops, std::size_t group) {
  const Tensor& Z = z.value();
  const Tensor& O = ops.value();
  require_matrix("row_operator", Z);
  require_matrix("row_operator", O);
  const std::size_t k = Z.cols();
  if (group == 0 || O.cols() != k * k || Z.rows() != O.rows() * group) {
    throw ShapeError("row_operator: states " + shape_str(Z.shape()) + " and operators " + shape_str(O.shape()) +
                     " incompatible with group=" + std::to_string(group));
  }
  const std::size_t rows = Z.rows();
  Tensor out({rows, k});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* op = O.data() + (r / group) * k * k;
    const double* zr = Z.data() + r * k;
    double* yr = out.data() + r * k;
    for (std::size_t i = 0; i < k; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += op[i * k + j] * zr[j];
      yr[i] = acc;
    }
  }
  const std::size_t iz = z.id(), io = ops.id();
  return z.tape().record("row_operator", std::move(out), {z, ops}, [iz, io, rows, k, group](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    const Tensor& Z = t.value(iz);
    const Tensor& O = t.value(io);
    Tensor* gz = t.needs_grad(iz) ? &t.grad_of(iz) : nullptr;
    Tensor* go = t.needs_grad(io) ? &t.grad_of(io) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t b = r / group;
      const double* gr = g.data() + r * k;
      const double* zr = Z.data() + r * k;
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          if (gz) (*gz)[r * k + j] += O[b * k * k + i * k + j] * gr[i];
          if (go) (*go)[b * k * k + i * k + j] += gr[i] * zr[j];
        }
      }
    }
  });
}

Var row_matmul(const Var& a, const Var& b, std::size_t k) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix("row_matmul", A);
  require_same_shape("row_matmul", A, B);
  if (A.cols() != k * k) throw ShapeError("row_matmul: rows of " + shape_str(A.shape()) + " are not " +
                                          std::to_string(k) + "x" + std::to_string(k) + " matrices");
  const std::size_t n = A.rows();
  Tensor out({n, k * k});
  for (std::size_t r = 0; r < n; ++r) {
    MapC ar(A.data() + r * k * k, k, k), br(B.data() + r * k * k, k, k);
    MapM(out.data() + r * k * k, k, k).noalias() = ar * br;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record("row_matmul", std::move(out), {a, b}, [ia, ib, n, k](Tape& t, std::size_t self) {
    const Tensor& g = t.output_grad(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t off = r * k * k;
      MapC gr(g.data() + off, k, k), ar(A.data() + off, k, k), br(B.data() + off, k, k);
      if (t.needs_grad(ia)) MapM(t.grad_of(ia).data() + off, k, k).noalias() += gr * br.transpose();
      if (t.needs_grad(ib)) MapM(t.grad_of(ib).data() + off, k, k).noalias() += ar.transpose() * gr;
    }
  });
}

}  // namespace wim::num
