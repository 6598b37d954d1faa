#include "ltr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ltr/rng.hpp"

namespace ltr {

namespace {

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape)
    fail(ErrorCode::InvalidConfig, "operands belong to different tapes");
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.rows(), t.cols()); }

}  // namespace

Tensor matmul_values(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    fail(ErrorCode::ShapeMismatch, "matmul: inner dims differ");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c(m, n);
  for (int i = 0; i < m; ++i) {
    double* crow = c.row_ptr(i);
    const double* arow = a.row_ptr(i);
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b.row_ptr(kk);
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor matmul_nt_values(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    fail(ErrorCode::ShapeMismatch, "matmul_nt: inner dims differ");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c(m, n);
  for (int i = 0; i < m; ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (int j = 0; j < n; ++j) {
      const double* brow = b.row_ptr(j);
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      crow[j] = s;
    }
  }
  return c;
}

Tensor matmul_tn_values(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows())
    fail(ErrorCode::ShapeMismatch, "matmul_tn: inner dims differ");
  const int m = a.cols(), k = a.rows(), n = b.cols();
  Tensor c(m, n);
  for (int i = 0; i < k; ++i) {
    const double* arow = a.row_ptr(i);
    const double* brow = b.row_ptr(i);
    for (int kk = 0; kk < m; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      double* crow = c.row_ptr(kk);
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

void Tape::backward(int loss_id) {
  if (loss_id < 0 || loss_id >= size())
    fail(ErrorCode::InvalidConfig,
         "backward: detached graph (loss is not a node of this tape)");
  if (nodes_[loss_id].value.size() != 1)
    fail(ErrorCode::ShapeMismatch, "backward: loss must be scalar");
  // A loss with requires_grad=false (everything behind stop_gradient) is
  // legal: every gradient is zero.
  grads_.clear();
  grads_.reserve(nodes_.size());
  for (const Node& n : nodes_) grads_.push_back(zeros_like(n.value));
  grads_[loss_id] = Tensor::scalar(1.0);
  for (int id = loss_id; id >= 0; --id) {
    if (!nodes_[id].requires_grad || !nodes_[id].back) continue;
    nodes_[id].back(*this, id);
  }
}

Var leaf(Tape& t, Tensor value, bool requires_grad) {
  return {&t, t.push(std::move(value), requires_grad)};
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  Tensor c = matmul_values(t.value(a.id), t.value(b.id));
  bool rg = t.needs_grad(a.id) || t.needs_grad(b.id);
  int aid = a.id, bid = b.id;
  int id = t.push(std::move(c), rg, [aid, bid](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(aid)) tp.acc(aid, matmul_nt_values(g, tp.value(bid)));
    if (tp.needs_grad(bid)) tp.acc(bid, matmul_tn_values(tp.value(aid), g));
  });
  return {&t, id};
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  Tensor c = matmul_nt_values(t.value(a.id), t.value(b.id));
  bool rg = t.needs_grad(a.id) || t.needs_grad(b.id);
  int aid = a.id, bid = b.id;
  int id = t.push(std::move(c), rg, [aid, bid](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(aid)) tp.acc(aid, matmul_values(g, tp.value(bid)));
    if (tp.needs_grad(bid)) tp.acc(bid, matmul_tn_values(g, tp.value(aid)));
  });
  return {&t, id};
}

namespace {

Var elementwise_binary(Var a, Var b, double (*fwd)(double, double),
                       void (*bwd)(Tape&, int, int, int)) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  const Tensor& bv = t.value(b.id);
  if (!av.same_shape(bv))
    fail(ErrorCode::ShapeMismatch, "elementwise op: shape mismatch");
  Tensor c = zeros_like(av);
  for (size_t i = 0; i < c.size(); ++i)
    c.data()[i] = fwd(av.data()[i], bv.data()[i]);
  bool rg = t.needs_grad(a.id) || t.needs_grad(b.id);
  int aid = a.id, bid = b.id;
  int id = t.push(std::move(c), rg, [aid, bid, bwd](Tape& tp, int self) {
    bwd(tp, self, aid, bid);
  });
  return {&t, id};
}

}  // namespace

Var add(Var a, Var b) {
  return elementwise_binary(
      a, b, [](double x, double y) { return x + y; },
      [](Tape& tp, int self, int aid, int bid) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(aid)) tp.acc(aid, g);
        if (tp.needs_grad(bid)) tp.acc(bid, g);
      });
}

Var sub(Var a, Var b) {
  return elementwise_binary(
      a, b, [](double x, double y) { return x - y; },
      [](Tape& tp, int self, int aid, int bid) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(aid)) tp.acc(aid, g);
        if (tp.needs_grad(bid)) {
          Tensor ng = g;
          for (double& v : ng.data()) v = -v;
          tp.acc(bid, ng);
        }
      });
}

Var mul(Var a, Var b) {
  return elementwise_binary(
      a, b, [](double x, double y) { return x * y; },
      [](Tape& tp, int self, int aid, int bid) {
        const Tensor& g = tp.grad(self);
        if (tp.needs_grad(aid)) {
          Tensor da = g;
          const Tensor& bv = tp.value(bid);
          for (size_t i = 0; i < da.size(); ++i) da.data()[i] *= bv.data()[i];
          tp.acc(aid, da);
        }
        if (tp.needs_grad(bid)) {
          Tensor db = g;
          const Tensor& av = tp.value(aid);
          for (size_t i = 0; i < db.size(); ++i) db.data()[i] *= av.data()[i];
          tp.acc(bid, db);
        }
      });
}

Var add_rowvec(Var m, Var r) {
  check_same_tape(m, r);
  Tape& t = *m.tape;
  const Tensor& mv = t.value(m.id);
  const Tensor& rv = t.value(r.id);
  if (rv.rows() != 1 || rv.cols() != mv.cols())
    fail(ErrorCode::ShapeMismatch, "add_rowvec: bias must be 1 x cols");
  Tensor c = mv;
  for (int i = 0; i < c.rows(); ++i) {
    double* crow = c.row_ptr(i);
    const double* br = rv.row_ptr(0);
    for (int j = 0; j < c.cols(); ++j) crow[j] += br[j];
  }
  bool rg = t.needs_grad(m.id) || t.needs_grad(r.id);
  int mid = m.id, rid = r.id;
  int id = t.push(std::move(c), rg, [mid, rid](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(mid)) tp.acc(mid, g);
    if (tp.needs_grad(rid)) {
      Tensor dr(1, g.cols());
      for (int i = 0; i < g.rows(); ++i) {
        const double* grow = g.row_ptr(i);
        for (int j = 0; j < g.cols(); ++j) dr.data()[j] += grow[j];
      }
      tp.acc(rid, dr);
    }
  });
  return {&t, id};
}

Var scale(Var a, double c) {
  Tape& t = *a.tape;
  Tensor out = t.value(a.id);
  for (double& v : out.data()) v *= c;
  int aid = a.id;
  int id = t.push(std::move(out), t.needs_grad(a.id),
                  [aid, c](Tape& tp, int self) {
                    if (!tp.needs_grad(aid)) return;
                    Tensor g = tp.grad(self);
                    for (double& v : g.data()) v *= c;
                    tp.acc(aid, g);
                  });
  return {&t, id};
}

Var add_const(Var a, double c) {
  Tape& t = *a.tape;
  Tensor out = t.value(a.id);
  for (double& v : out.data()) v += c;
  int aid = a.id;
  int id = t.push(std::move(out), t.needs_grad(a.id),
                  [aid](Tape& tp, int self) {
                    if (tp.needs_grad(aid)) tp.acc(aid, tp.grad(self));
                  });
  return {&t, id};
}

Var relu(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.value(a.id);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  int aid = a.id;
  int id = t.push(std::move(out), t.needs_grad(a.id),
                  [aid](Tape& tp, int self) {
                    if (!tp.needs_grad(aid)) return;
                    Tensor g = tp.grad(self);
                    const Tensor& x = tp.value(aid);
                    for (size_t i = 0; i < g.size(); ++i)
                      if (x.data()[i] <= 0.0) g.data()[i] = 0.0;
                    tp.acc(aid, g);
                  });
  return {&t, id};
}

Var softplus(Var a) {
  Tape& t = *a.tape;
  Tensor out = t.value(a.id);
  for (double& v : out.data())
    v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  int aid = a.id;
  int id = t.push(std::move(out), t.needs_grad(a.id),
                  [aid](Tape& tp, int self) {
                    if (!tp.needs_grad(aid)) return;
                    Tensor g = tp.grad(self);
                    const Tensor& x = tp.value(aid);
                    for (size_t i = 0; i < g.size(); ++i) {
                      double s = 1.0 / (1.0 + std::exp(-x.data()[i]));
                      g.data()[i] *= s;
                    }
                    tp.acc(aid, g);
                  });
  return {&t, id};
}

Var l2_normalize_rows(Var a, double eps) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a.id);
  Tensor out = x;
  std::vector<double> denom(x.rows());
  for (int i = 0; i < x.rows(); ++i) {
    const double* xr = x.row_ptr(i);
    double sq = 0.0;
    for (int j = 0; j < x.cols(); ++j) sq += xr[j] * xr[j];
    double norm = std::sqrt(sq);
    denom[i] = norm + eps;
    double* orow = out.row_ptr(i);
    for (int j = 0; j < x.cols(); ++j) orow[j] = xr[j] / denom[i];
  }
  int aid = a.id;
  int id = t.push(std::move(out), t.needs_grad(a.id),
                  [aid, denom](Tape& tp, int self) {
                    if (!tp.needs_grad(aid)) return;
                    const Tensor& g = tp.grad(self);
                    const Tensor& x = tp.value(aid);
                    Tensor dx = zeros_like(x);
                    for (int i = 0; i < x.rows(); ++i) {
                      const double* xr = x.row_ptr(i);
                      const double* gr = g.row_ptr(i);
                      double* dr = dx.row_ptr(i);
                      double s = denom[i];
                      double norm = 0.0;
                      for (int j = 0; j < x.cols(); ++j) norm += xr[j] * xr[j];
                      norm = std::sqrt(norm);
                      double gx = 0.0;
                      for (int j = 0; j < x.cols(); ++j) gx += gr[j] * xr[j];
                      // y = x/(|x|+eps): dy_j/dx_i = d_ij/s - x_j x_i/(|x| s^2)
                      double coef = norm > 0.0 ? gx / (norm * s * s) : 0.0;
                      for (int j = 0; j < x.cols(); ++j)
                        dr[j] = gr[j] / s - xr[j] * coef;
                    }
                    tp.acc(aid, dx);
                  });
  return {&t, id};
}

Var rowwise_dot(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  const Tensor& bv = t.value(b.id);
  if (!av.same_shape(bv))
    fail(ErrorCode::ShapeMismatch, "rowwise_dot: shape mismatch");
  Tensor out(av.rows(), 1);
  for (int i = 0; i < av.rows(); ++i) {
    const double* ar = av.row_ptr(i);
    const double* br = bv.row_ptr(i);
    double s = 0.0;
    for (int j = 0; j < av.cols(); ++j) s += ar[j] * br[j];
    out.at(i, 0) = s;
  }
  bool rg = t.needs_grad(a.id) || t.needs_grad(b.id);
  int aid = a.id, bid = b.id;
  int id = t.push(std::move(out), rg, [aid, bid](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.value(aid);
    const Tensor& bv = tp.value(bid);
    if (tp.needs_grad(aid)) {
      Tensor da = zeros_like(av);
      for (int i = 0; i < av.rows(); ++i) {
        double gi = g.at(i, 0);
        const double* br = bv.row_ptr(i);
        double* dr = da.row_ptr(i);
        for (int j = 0; j < av.cols(); ++j) dr[j] = gi * br[j];
      }
      tp.acc(aid, da);
    }
    if (tp.needs_grad(bid)) {
      Tensor db = zeros_like(bv);
      for (int i = 0; i < bv.rows(); ++i) {
        double gi = g.at(i, 0);
        const double* ar = av.row_ptr(i);
        double* dr = db.row_ptr(i);
        for (int j = 0; j < bv.cols(); ++j) dr[j] = gi * ar[j];
      }
      tp.acc(bid, db);
    }
  });
  return {&t, id};
}

Var cosine_rows(Var a, Var b, double eps) {
  return rowwise_dot(l2_normalize_rows(a, eps), l2_normalize_rows(b, eps));
}

Var mean_all(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  if (av.size() == 0) fail(ErrorCode::ShapeMismatch, "mean of empty tensor");
  double s = 0.0;
  for (double v : av.data()) s += v;
  double n = static_cast<double>(av.size());
  int aid = a.id;
  int id = t.push(Tensor::scalar(s / n), t.needs_grad(a.id),
                  [aid, n](Tape& tp, int self) {
                    if (!tp.needs_grad(aid)) return;
                    double g = tp.grad(self).item() / n;
                    Tensor da = zeros_like(tp.value(aid));
                    for (double& v : da.data()) v = g;
                    tp.acc(aid, da);
                  });
  return {&t, id};
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  double s = 0.0;
  for (double v : av.data()) s += v;
  int aid = a.id;
  int id = t.push(Tensor::scalar(s), t.needs_grad(a.id),
                  [aid](Tape& tp, int self) {
                    if (!tp.needs_grad(aid)) return;
                    double g = tp.grad(self).item();
                    Tensor da = zeros_like(tp.value(aid));
                    for (double& v : da.data()) v = g;
                    tp.acc(aid, da);
                  });
  return {&t, id};
}

Var logsumexp_all(Var a) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  if (av.size() == 0) fail(ErrorCode::ShapeMismatch, "logsumexp of empty tensor");
  double m = av.data()[0];
  for (double v : av.data()) m = std::max(m, v);
  double s = 0.0;
  for (double v : av.data()) s += std::exp(v - m);
  double out = m + std::log(s);
  int aid = a.id;
  int id = t.push(Tensor::scalar(out), t.needs_grad(a.id),
                  [aid, m, s](Tape& tp, int self) {
                    if (!tp.needs_grad(aid)) return;
                    double g = tp.grad(self).item();
                    const Tensor& x = tp.value(aid);
                    Tensor da = zeros_like(x);
                    for (size_t i = 0; i < x.size(); ++i)
                      da.data()[i] = g * std::exp(x.data()[i] - m) / s;
                    tp.acc(aid, da);
                  });
  return {&t, id};
}

Var masked_logsumexp_rows(Var a, const std::vector<uint8_t>& mask) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  if (mask.size() != av.size())
    fail(ErrorCode::ShapeMismatch, "masked_logsumexp_rows: mask size mismatch");
  const int n = av.rows(), m = av.cols();
  Tensor out(n, 1);
  std::vector<double> maxes(n), sums(n);
  for (int i = 0; i < n; ++i) {
    const double* row = av.row_ptr(i);
    const uint8_t* mr = mask.data() + static_cast<size_t>(i) * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j)
      if (mr[j]) mx = std::max(mx, row[j]);
    if (!std::isfinite(mx))
      fail(ErrorCode::InvalidConfig,
           "masked_logsumexp_rows: row with empty mask");
    double s = 0.0;
    for (int j = 0; j < m; ++j)
      if (mr[j]) s += std::exp(row[j] - mx);
    maxes[i] = mx;
    sums[i] = s;
    out.at(i, 0) = mx + std::log(s);
  }
  int aid = a.id;
  int id = t.push(std::move(out), t.needs_grad(a.id),
                  [aid, mask, maxes, sums](Tape& tp, int self) {
                    if (!tp.needs_grad(aid)) return;
                    const Tensor& g = tp.grad(self);
                    const Tensor& x = tp.value(aid);
                    Tensor dx = zeros_like(x);
                    const int m = x.cols();
                    for (int i = 0; i < x.rows(); ++i) {
                      double gi = g.at(i, 0);
                      const double* row = x.row_ptr(i);
                      const uint8_t* mr = mask.data() + static_cast<size_t>(i) * m;
                      double* dr = dx.row_ptr(i);
                      for (int j = 0; j < m; ++j)
                        if (mr[j])
                          dr[j] = gi * std::exp(row[j] - maxes[i]) / sums[i];
                    }
                    tp.acc(aid, dx);
                  });
  return {&t, id};
}

Var stop_gradient(Var a) {
  Tape& t = *a.tape;
  // requires_grad=false: downstream ops treat this node as a constant.
  return {&t, t.push(t.value(a.id), false)};
}

Var concat_rows(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  const Tensor& bv = t.value(b.id);
  if (av.cols() != bv.cols())
    fail(ErrorCode::ShapeMismatch, "concat_rows: column mismatch");
  Tensor out(av.rows() + bv.rows(), av.cols());
  std::copy(av.data().begin(), av.data().end(), out.data().begin());
  std::copy(bv.data().begin(), bv.data().end(),
            out.data().begin() + av.size());
  bool rg = t.needs_grad(a.id) || t.needs_grad(b.id);
  int aid = a.id, bid = b.id;
  int arows = av.rows();
  int id = t.push(std::move(out), rg, [aid, bid, arows](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(aid)) {
      Tensor da(arows, g.cols());
      std::copy(g.data().begin(), g.data().begin() + da.size(),
                da.data().begin());
      tp.acc(aid, da);
    }
    if (tp.needs_grad(bid)) {
      Tensor db(g.rows() - arows, g.cols());
      std::copy(g.data().begin() + static_cast<size_t>(arows) * g.cols(),
                g.data().end(), db.data().begin());
      tp.acc(bid, db);
    }
  });
  return {&t, id};
}

Var concat_cols(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  const Tensor& bv = t.value(b.id);
  if (av.rows() != bv.rows())
    fail(ErrorCode::ShapeMismatch, "concat_cols: row mismatch");
  Tensor out(av.rows(), av.cols() + bv.cols());
  for (int i = 0; i < av.rows(); ++i) {
    std::copy(av.row_ptr(i), av.row_ptr(i) + av.cols(), out.row_ptr(i));
    std::copy(bv.row_ptr(i), bv.row_ptr(i) + bv.cols(),
              out.row_ptr(i) + av.cols());
  }
  bool rg = t.needs_grad(a.id) || t.needs_grad(b.id);
  int aid = a.id, bid = b.id;
  int acols = av.cols();
  int id = t.push(std::move(out), rg, [aid, bid, acols](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(aid)) {
      Tensor da(g.rows(), acols);
      for (int i = 0; i < g.rows(); ++i)
        std::copy(g.row_ptr(i), g.row_ptr(i) + acols, da.row_ptr(i));
      tp.acc(aid, da);
    }
    if (tp.needs_grad(bid)) {
      Tensor db(g.rows(), g.cols() - acols);
      for (int i = 0; i < g.rows(); ++i)
        std::copy(g.row_ptr(i) + acols, g.row_ptr(i) + g.cols(),
                  db.row_ptr(i));
      tp.acc(bid, db);
    }
  });
  return {&t, id};
}

Var slice_rows(Var a, int start, int len) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  if (start < 0 || len < 0 || start + len > av.rows())
    fail(ErrorCode::ShapeMismatch, "slice_rows: out of range");
  Tensor out(len, av.cols());
  std::copy(av.row_ptr(start), av.row_ptr(start) + out.size(),
            out.data().begin());
  int aid = a.id;
  int id = t.push(std::move(out), t.needs_grad(a.id),
                  [aid, start](Tape& tp, int self) {
                    if (!tp.needs_grad(aid)) return;
                    const Tensor& g = tp.grad(self);
                    Tensor da = zeros_like(tp.value(aid));
                    std::copy(g.data().begin(), g.data().end(),
                              da.row_ptr(start));
                    tp.acc(aid, da);
                  });
  return {&t, id};
}

Var gather_rows(Var a, const std::vector<int>& idx) {
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  Tensor out(static_cast<int>(idx.size()), av.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= av.rows())
      fail(ErrorCode::ShapeMismatch, "gather_rows: index out of range");
    std::copy(av.row_ptr(idx[i]), av.row_ptr(idx[i]) + av.cols(),
              out.row_ptr(static_cast<int>(i)));
  }
  int aid = a.id;
  int id = t.push(std::move(out), t.needs_grad(a.id),
                  [aid, idx](Tape& tp, int self) {
                    if (!tp.needs_grad(aid)) return;
                    const Tensor& g = tp.grad(self);
                    Tensor da = zeros_like(tp.value(aid));
                    for (size_t i = 0; i < idx.size(); ++i) {
                      const double* gr = g.row_ptr(static_cast<int>(i));
                      double* dr = da.row_ptr(idx[i]);
                      for (int j = 0; j < g.cols(); ++j) dr[j] += gr[j];
                    }
                    tp.acc(aid, da);
                  });
  return {&t, id};
}

Var gather_pairs(Var m, const std::vector<std::pair<int, int>>& idx) {
  Tape& t = *m.tape;
  const Tensor& mv = t.value(m.id);
  Tensor out(static_cast<int>(idx.size()), 1);
  for (size_t i = 0; i < idx.size(); ++i) {
    auto [r, c] = idx[i];
    if (r < 0 || r >= mv.rows() || c < 0 || c >= mv.cols())
      fail(ErrorCode::ShapeMismatch, "gather_pairs: index out of range");
    out.at(static_cast<int>(i), 0) = mv.at(r, c);
  }
  int mid = m.id;
  int id = t.push(std::move(out), t.needs_grad(m.id),
                  [mid, idx](Tape& tp, int self) {
                    if (!tp.needs_grad(mid)) return;
                    const Tensor& g = tp.grad(self);
                    Tensor dm = zeros_like(tp.value(mid));
                    for (size_t i = 0; i < idx.size(); ++i)
                      dm.at(idx[i].first, idx[i].second) +=
                          g.at(static_cast<int>(i), 0);
                    tp.acc(mid, dm);
                  });
  return {&t, id};
}

Var pairwise_diff_col(Var s) {
  Tape& t = *s.tape;
  const Tensor& sv = t.value(s.id);
  if (sv.cols() != 1)
    fail(ErrorCode::ShapeMismatch, "pairwise_diff_col: expects n x 1");
  const int n = sv.rows();
  Tensor out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) = sv.at(i, 0) - sv.at(j, 0);
  int sid = s.id;
  int id = t.push(std::move(out), t.needs_grad(s.id),
                  [sid, n](Tape& tp, int self) {
                    if (!tp.needs_grad(sid)) return;
                    const Tensor& g = tp.grad(self);
                    Tensor ds(n, 1);
                    for (int i = 0; i < n; ++i) {
                      double acc = 0.0;
                      for (int j = 0; j < n; ++j)
                        acc += g.at(i, j) - g.at(j, i);
                      ds.at(i, 0) = acc;
                    }
                    tp.acc(sid, ds);
                  });
  return {&t, id};
}

Var weighted_sum(Var x, Tensor weights) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x.id);
  if (!xv.same_shape(weights))
    fail(ErrorCode::ShapeMismatch, "weighted_sum: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < xv.size(); ++i)
    s += xv.data()[i] * weights.data()[i];
  int xid = x.id;
  int id = t.push(Tensor::scalar(s), t.needs_grad(x.id),
                  [xid, w = std::move(weights)](Tape& tp, int self) {
                    if (!tp.needs_grad(xid)) return;
                    double g = tp.grad(self).item();
                    Tensor dx = w;
                    for (double& v : dx.data()) v *= g;
                    tp.acc(xid, dx);
                  });
  return {&t, id};
}

Var dropout(Var a, double p, uint64_t seed) {
  if (p < 0.0 || p >= 1.0)
    fail(ErrorCode::InvalidConfig, "dropout: p must be in [0, 1)");
  Tape& t = *a.tape;
  const Tensor& av = t.value(a.id);
  Rng rng(seed);
  std::vector<uint8_t> keep(av.size());
  const double inv = 1.0 / (1.0 - p);
  Tensor out = av;
  for (size_t i = 0; i < av.size(); ++i) {
    keep[i] = rng.uniform() >= p ? 1 : 0;
    out.data()[i] = keep[i] ? av.data()[i] * inv : 0.0;
  }
  int aid = a.id;
  int id = t.push(std::move(out), t.needs_grad(a.id),
                  [aid, keep = std::move(keep), inv](Tape& tp, int self) {
                    if (!tp.needs_grad(aid)) return;
                    Tensor g = tp.grad(self);
                    for (size_t i = 0; i < g.size(); ++i)
                      g.data()[i] = keep[i] ? g.data()[i] * inv : 0.0;
                    tp.acc(aid, g);
                  });
  return {&t, id};
}

Var batchnorm_train(Var x, Var gamma, Var beta, double eps, Tensor* out_mean,
                    Tensor* out_var) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x.id);
  const Tensor& gv = t.value(gamma.id);
  const Tensor& bv = t.value(beta.id);
  const int n = xv.rows(), d = xv.cols();
  if (n < 2)
    fail(ErrorCode::InvalidConfig, "batchnorm_train: batch size must be >= 2");
  if (gv.rows() != 1 || gv.cols() != d || bv.rows() != 1 || bv.cols() != d)
    fail(ErrorCode::ShapeMismatch, "batchnorm: gamma/beta must be 1 x d");
  std::vector<double> mean(d, 0.0), var(d, 0.0), istd(d);
  for (int i = 0; i < n; ++i) {
    const double* row = xv.row_ptr(i);
    for (int j = 0; j < d; ++j) mean[j] += row[j];
  }
  for (int j = 0; j < d; ++j) mean[j] /= n;
  for (int i = 0; i < n; ++i) {
    const double* row = xv.row_ptr(i);
    for (int j = 0; j < d; ++j) {
      double c = row[j] - mean[j];
      var[j] += c * c;
    }
  }
  for (int j = 0; j < d; ++j) {
    var[j] /= n;  // biased, used for normalization
    istd[j] = 1.0 / std::sqrt(var[j] + eps);
  }
  if (out_mean) *out_mean = Tensor::row(mean);
  if (out_var) *out_var = Tensor::row(var);
  Tensor xhat(n, d), out(n, d);
  for (int i = 0; i < n; ++i) {
    const double* row = xv.row_ptr(i);
    double* hr = xhat.row_ptr(i);
    double* orow = out.row_ptr(i);
    for (int j = 0; j < d; ++j) {
      hr[j] = (row[j] - mean[j]) * istd[j];
      orow[j] = gv.at(0, j) * hr[j] + bv.at(0, j);
    }
  }
  bool rg = t.needs_grad(x.id) || t.needs_grad(gamma.id) || t.needs_grad(beta.id);
  int xid = x.id, gid = gamma.id, bid = beta.id;
  int id = t.push(
      std::move(out), rg,
      [xid, gid, bid, xhat = std::move(xhat), istd](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const int n = g.rows(), d = g.cols();
        const Tensor& gv = tp.value(gid);
        if (tp.needs_grad(gid)) {
          Tensor dg(1, d);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
              dg.at(0, j) += g.at(i, j) * xhat.at(i, j);
          tp.acc(gid, dg);
        }
        if (tp.needs_grad(bid)) {
          Tensor db(1, d);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) db.at(0, j) += g.at(i, j);
          tp.acc(bid, db);
        }
        if (tp.needs_grad(xid)) {
          // dL/dx = gamma*istd * (g - mean(g) - xhat * mean(g*xhat))
          std::vector<double> gmean(d, 0.0), gxmean(d, 0.0);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
              gmean[j] += g.at(i, j);
              gxmean[j] += g.at(i, j) * xhat.at(i, j);
            }
          for (int j = 0; j < d; ++j) {
            gmean[j] /= n;
            gxmean[j] /= n;
          }
          Tensor dx(n, d);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
              dx.at(i, j) = gv.at(0, j) * istd[j] *
                            (g.at(i, j) - gmean[j] -
                             xhat.at(i, j) * gxmean[j]);
          tp.acc(xid, dx);
        }
      });
  return {&t, id};
}

Var batchnorm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                   const Tensor& running_var, double eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x.id);
  const Tensor& gv = t.value(gamma.id);
  const Tensor& bv = t.value(beta.id);
  const int n = xv.rows(), d = xv.cols();
  if (running_mean.cols() != d || running_var.cols() != d)
    fail(ErrorCode::ShapeMismatch, "batchnorm_eval: running stats mismatch");
  std::vector<double> istd(d);
  for (int j = 0; j < d; ++j)
    istd[j] = 1.0 / std::sqrt(running_var.at(0, j) + eps);
  Tensor xhat(n, d), out(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      xhat.at(i, j) = (xv.at(i, j) - running_mean.at(0, j)) * istd[j];
      out.at(i, j) = gv.at(0, j) * xhat.at(i, j) + bv.at(0, j);
    }
  bool rg = t.needs_grad(x.id) || t.needs_grad(gamma.id) || t.needs_grad(beta.id);
  int xid = x.id, gid = gamma.id, bid = beta.id;
  int id = t.push(
      std::move(out), rg,
      [xid, gid, bid, xhat = std::move(xhat), istd](Tape& tp, int self) {
        const Tensor& g = tp.grad(self);
        const int n = g.rows(), d = g.cols();
        if (tp.needs_grad(gid)) {
          Tensor dg(1, d);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
              dg.at(0, j) += g.at(i, j) * xhat.at(i, j);
          tp.acc(gid, dg);
        }
        if (tp.needs_grad(bid)) {
          Tensor db(1, d);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) db.at(0, j) += g.at(i, j);
          tp.acc(bid, db);
        }
        if (tp.needs_grad(xid)) {
          const Tensor& gv = tp.value(gid);
          Tensor dx(n, d);
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
              dx.at(i, j) = g.at(i, j) * gv.at(0, j) * istd[j];
          tp.acc(xid, dx);
        }
      });
  return {&t, id};
}

void adam_step(const std::vector<Tensor*>& params,
               const std::vector<const Tensor*>& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (params.size() != grads.size())
    fail(ErrorCode::ShapeMismatch, "adam_step: params/grads count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size())
    fail(ErrorCode::ShapeMismatch, "adam_step: state size mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (!p.same_shape(g) || !p.same_shape(m))
      fail(ErrorCode::ShapeMismatch, "adam_step: shape mismatch");
    for (size_t i = 0; i < p.size(); ++i) {
      double gi = g.data()[i];
      m.data()[i] = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
      v.data()[i] = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
      double mhat = m.data()[i] / bc1;
      double vhat = v.data()[i] / bc2;
      p.data()[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& f,
    const std::vector<Tensor>& point, double h) {
  // Analytic gradients.
  std::vector<Tensor> analytic;
  {
    Tape t;
    std::vector<Var> leaves;
    leaves.reserve(point.size());
    for (const Tensor& p : point) leaves.push_back(leaf(t, p, true));
    Var loss = f(t, leaves);
    t.backward(loss.id);
    for (const Var& v : leaves) analytic.push_back(t.grad(v.id));
  }
  auto eval_at = [&](const std::vector<Tensor>& pt) {
    Tape t;
    std::vector<Var> leaves;
    for (const Tensor& p : pt) leaves.push_back(leaf(t, p, true));
    return f(t, leaves).val().item();
  };
  double max_rel = 0.0;
  std::vector<Tensor> pt = point;
  for (size_t k = 0; k < pt.size(); ++k) {
    for (size_t i = 0; i < pt[k].size(); ++i) {
      double orig = pt[k].data()[i];
      pt[k].data()[i] = orig + h;
      double fp = eval_at(pt);
      pt[k].data()[i] = orig - h;
      double fm = eval_at(pt);
      pt[k].data()[i] = orig;
      double fd = (fp - fm) / (2.0 * h);
      double an = analytic[k].data()[i];
      double rel = std::abs(an - fd) / std::max(1.0, std::abs(an));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace ltr
