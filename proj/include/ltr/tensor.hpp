#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ltr/error.hpp"

namespace ltr {

// Dense row-major matrix of f64. Scalars are 1x1. All ops are value
// semantics: no operation mutates its inputs.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols, double fill = 0.0)
      : nrows_(rows), ncols_(cols),
        data_(static_cast<size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0)
      fail(ErrorCode::ShapeMismatch, "negative tensor dims");
  }

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.data_[0] = v;
    return t;
  }
  static Tensor row(std::vector<double> v) {
    Tensor t;
    t.nrows_ = 1;
    t.ncols_ = static_cast<int>(v.size());
    t.data_ = std::move(v);
    return t;
  }
  static Tensor col(std::vector<double> v) {
    Tensor t;
    t.nrows_ = static_cast<int>(v.size());
    t.ncols_ = 1;
    t.data_ = std::move(v);
    return t;
  }
  static Tensor from(int rows, int cols, std::vector<double> v) {
    if (v.size() != static_cast<size_t>(rows) * cols)
      fail(ErrorCode::ShapeMismatch, "Tensor::from: data/shape mismatch");
    Tensor t;
    t.nrows_ = rows;
    t.ncols_ = cols;
    t.data_ = std::move(v);
    return t;
  }

  int rows() const { return nrows_; }
  int cols() const { return ncols_; }
  size_t size() const { return data_.size(); }
  bool same_shape(const Tensor& o) const {
    return nrows_ == o.nrows_ && ncols_ == o.ncols_;
  }

  double& at(int r, int c) { return data_[static_cast<size_t>(r) * ncols_ + c]; }
  double at(int r, int c) const {
    return data_[static_cast<size_t>(r) * ncols_ + c];
  }
  double* row_ptr(int r) { return data_.data() + static_cast<size_t>(r) * ncols_; }
  const double* row_ptr(int r) const {
    return data_.data() + static_cast<size_t>(r) * ncols_;
  }

  double item() const {
    if (size() != 1) fail(ErrorCode::ShapeMismatch, "item() on non-scalar");
    return data_[0];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  int nrows_ = 0;
  int ncols_ = 0;
  std::vector<double> data_;
};

// Value-level kernels (no tape).
Tensor matmul_values(const Tensor& a, const Tensor& b);      // A*B
Tensor matmul_nt_values(const Tensor& a, const Tensor& b);   // A*B^T
Tensor matmul_tn_values(const Tensor& a, const Tensor& b);   // A^T*B

// Reverse-mode tape. Nodes are created in topological order by the op
// functions below; backward() replays them in reverse. Node storage is a
// deque so Tensor references obtained via value() stay valid while the
// graph keeps growing.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  int push(Tensor value, bool requires_grad, BackFn back = nullptr) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  const Tensor& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].requires_grad; }

  // Valid only during/after backward().
  const Tensor& grad(int id) const { return grads_[id]; }

  // Accumulates g into the gradient slot of node id.
  void acc(int id, const Tensor& g) {
    Tensor& slot = grads_[id];
    if (!slot.same_shape(g))
      fail(ErrorCode::ShapeMismatch, "gradient shape mismatch");
    double* d = slot.data().data();
    const double* s = g.data().data();
    for (size_t i = 0; i < slot.size(); ++i) d[i] += s[i];
  }

  // Seeds d(loss)/d(loss)=1 and propagates to every requires_grad node.
  void backward(int loss_id);

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackFn back;
  };
  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
};

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& val() const { return tape->value(id); }
};

// --- graph construction -----------------------------------------------------

Var leaf(Tape& t, Tensor value, bool requires_grad = false);

Var matmul(Var a, Var b);     // (m x k)(k x n)
Var matmul_nt(Var a, Var b);  // (m x k)(n x k)^T
Var add(Var a, Var b);        // same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);                  // elementwise
Var add_rowvec(Var m, Var r);           // broadcast 1 x n bias over rows
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var relu(Var a);
Var softplus(Var a);
Var l2_normalize_rows(Var a, double eps = 1e-12);
Var rowwise_dot(Var a, Var b);          // n x d, n x d -> n x 1
Var cosine_rows(Var a, Var b, double eps = 1e-12);
Var mean_all(Var a);                    // -> scalar
Var sum_all(Var a);                     // -> scalar
Var logsumexp_all(Var a);               // -> scalar, max-shifted
// Per-row logsumexp over entries with mask!=0; mask is row-major n*m bytes.
Var masked_logsumexp_rows(Var a, const std::vector<uint8_t>& mask);
Var stop_gradient(Var a);
Var concat_rows(Var a, Var b);
Var concat_cols(Var a, Var b);
Var slice_rows(Var a, int start, int len);
Var gather_rows(Var a, const std::vector<int>& idx);
// Picks M[r,c] for each (r,c) pair -> k x 1.
Var gather_pairs(Var m, const std::vector<std::pair<int, int>>& idx);
// s is n x 1; result n x n with out[i][j] = s_i - s_j.
Var pairwise_diff_col(Var s);
// sum(W .* X) with constant weights -> scalar.
Var weighted_sum(Var x, Tensor weights);
// Inverted dropout: keep with prob 1-p, scale kept values by 1/(1-p).
// Mask is drawn deterministically from seed.
Var dropout(Var a, double p, uint64_t seed);
// Train-mode batchnorm over rows (features = columns). gamma/beta are 1 x d.
// Writes the batch statistics (mean, biased var) if out pointers are given.
Var batchnorm_train(Var x, Var gamma, Var beta, double eps = 1e-5,
                    Tensor* out_mean = nullptr, Tensor* out_var = nullptr);
Var batchnorm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                   const Tensor& running_var, double eps = 1e-5);

// --- optimizer ---------------------------------------------------------------

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m, v;
  long step = 0;
};

void adam_step(const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, AdamState& state,
               const AdamConfig& cfg);

// --- gradient checking --------------------------------------------------------

// f builds a scalar loss from the given leaves (same order as `point`).
// Returns max over coordinates of |analytic - central diff| / max(1, |analytic|).
double grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& f,
    const std::vector<Tensor>& point, double h = 1e-5);

}  // namespace ltr
