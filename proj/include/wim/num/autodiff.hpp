#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "wim/num/tensor.hpp"

namespace wim::num {

// A trainable tensor together with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  void zero_grad();

  std::string name;
  Tensor value;
  Tensor grad;
};

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order, so backward() is a single reverse sweep. Single-threaded.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t node)>;

  // A tape created with record=false only evaluates values (inference mode).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  Var param(Parameter& p);

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(const Var& v) const;
  // Gradient of the last backward() loss with respect to `v`; zeros if unreached.
  const Tensor& grad(const Var& v);

  // Propagates d(loss)/d(node) to every node, then adds leaf gradients into
  // their Parameters. `loss` must be a scalar produced on this tape.
  void backward(const Var& loss);

  // --- op implementation support ---
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Tensor& grad_of(std::size_t id);
  const Tensor& output_grad(std::size_t id) { return grad_of(id); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  void check_owned(const Var& v) const;

  std::deque<Node> nodes_;
  bool record_ = true;
};

// ---- primitives ----
// Shapes follow the row-vector convention: a batch of vectors is an (n x d) matrix.

Var matmul(const Var& a, const Var& b);     // (n x k)(k x m)
Var matmul_nt(const Var& a, const Var& b);  // (n x k)(m x k)^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_bias(const Var& a, const Var& bias);    // bias (m) added to every row of a (n x m)
Var add_tiled(const Var& a, const Var& block);  // block (T x m) repeated down a (B*T x m)
Var relu(const Var& a);
// Zeroes entries whose value does not exceed `threshold`; the gradient passes
// straight through on surviving entries.
Var jump_relu(const Var& a, double threshold);
Var tanh(const Var& a);
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Multi-head scaled dot-product self-attention over `batch` independent
// sequences of length `seq`. q, k, v are (batch*seq x d); d divisible by heads.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t batch, std::size_t seq,
              std::size_t heads);
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_abs(const Var& a);
Var sum_squares(const Var& a);
Var gather_rows(const Var& a, std::vector<std::size_t> rows);
Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);
// Mean cross-entropy of row-wise softmax(logits) against integer labels.
Var cross_entropy(const Var& logits, std::span<const int> labels);
// x: (n x in_ch*len) channel-major signals; w: (out_ch x in_ch x kernel).
// y[o][i] = sum_c sum_j w[o][c][j] * x[c][(i + j - kernel/2) mod len]
Var circular_conv1d(const Var& x, const Var& w, std::size_t in_channels, std::size_t length);
// x: (n x tokens*channels); w: (tokens x tokens). y[p][c] = sum_q w[p][q] x[q][c]
Var token_mix(const Var& x, const Var& w, std::size_t tokens, std::size_t channels);

// z: (B*group x k); ops: (B x k*k) row-major k x k matrices. Row r of the
// result is ops[r / group] applied to z[r].
Var row_operator(const Var& z, const Var& ops, std::size_t group);
// a, b: (B x k*k). Row i of the result is the k x k product a_i b_i.
Var row_matmul(const Var& a, const Var& b, std::size_t k);

}  // namespace wim::num
