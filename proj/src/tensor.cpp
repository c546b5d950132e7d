#include "pifold/tensor.hpp"

#include <unsupported/Eigen/SpecialFunctions>

#include <algorithm>
#include <numbers>
#include <string>

namespace pifold::ad {

namespace {

template <class T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
  require(a.valid() && b.valid(), "operation on an unbound tensor");
  require(a.tape() == b.tape(), "operands live on different tapes");
  return *a.tape();
}

void check_segments(const IndexList& seg, Index rows, Index num_segments, const char* op) {
  if (seg == nullptr) fail(ErrorKind::kInvalidArgument, std::string(op) + ": missing segment ids");
  if (static_cast<Index>(seg->size()) != rows) fail(ErrorKind::kInvalidArgument, std::string(op) + ": segment ids do not match row count");
  if (num_segments < 0) fail(ErrorKind::kInvalidArgument, std::string(op) + ": negative segment count");
  for (auto s : *seg) {
    if (s < 0 || s >= num_segments) fail(ErrorKind::kInvalidArgument, std::string(op) + ": segment id out of range");
  }
}

std::string shape_str(Shape s) {
  return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) fail(ErrorKind::kInvalidArgument, std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

}  // namespace

// --- Tape -----------------------------------------------------------------

template <class T>
Var<T> Tape<T>::constant(Matrix<T> value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::variable(Matrix<T> value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::record(Matrix<T> value, bool requires_grad, Backward backward) {
  if (backward_done_) fail(ErrorKind::kState, "tape already differentiated; start a new forward pass");
  Node node{std::move(value), {}, requires_grad, {}};
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
const Matrix<T>& Tape<T>::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || n.grad.rows() != n.value.rows()) {
    n.grad = Matrix<T>::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

template <class T>
Matrix<T>& Tape<T>::grad_accumulator(std::size_t id) {
  grad(id);
  return nodes_[id].grad;
}

template <class T>
void Tape<T>::rewind(std::size_t size) {
  require(size <= nodes_.size(), "rewind: tape is shorter than the requested size");
  if (backward_done_) fail(ErrorKind::kState, "rewind: tape already differentiated");
  nodes_.resize(size);
}

template <class T>
void Tape<T>::backward(Var<T> root) {
  require(root.tape() == this, "backward: root belongs to another tape");
  if (backward_done_) fail(ErrorKind::kState, "backward called twice without a new forward pass");
  require(root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
  backward_done_ = true;
  if (!nodes_[root.id()].requires_grad) return;
  grad_accumulator(root.id()).setOnes();
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.size() == 0) continue;
    trace_.push_back(id);
    n.backward(*this, id);
  }
}

// --- linear algebra ---------------------------------------------------------

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  if (a.cols() != b.rows()) fail(ErrorKind::kInvalidArgument, "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
  Matrix<T> out;
  out.noalias() = a.value() * b.value();
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape<T>& tp, std::size_t self) {
                    const Matrix<T>& g = tp.grad(self);
                    if (tp.requires_grad(ia))
                      tp.grad_accumulator(ia).noalias() += g * tp.value(ib).transpose();
                    if (tp.requires_grad(ib))
                      tp.grad_accumulator(ib).noalias() += tp.value(ia).transpose() * g;
                  });
}

template <class T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> b) {
  Tape<T>& t = same_tape(x, w);
  same_tape(x, b);
  if (x.cols() != w.rows()) fail(ErrorKind::kInvalidArgument, "affine: input width " + std::to_string(x.cols()) +
                                    " does not match weight " + shape_str(w.shape()));
  require(b.rows() == 1 && b.cols() == w.cols(), "affine: bias must be 1 x out");
  Matrix<T> out(x.rows(), w.cols());
  out.noalias() = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  const auto ix = x.id(), iw = w.id(), ib = b.id();
  return t.record(std::move(out), x.requires_grad() || w.requires_grad() || b.requires_grad(),
                  [ix, iw, ib](Tape<T>& tp, std::size_t self) {
                    const Matrix<T>& g = tp.grad(self);
                    if (tp.requires_grad(ix))
                      tp.grad_accumulator(ix).noalias() += g * tp.value(iw).transpose();
                    if (tp.requires_grad(iw))
                      tp.grad_accumulator(iw).noalias() += tp.value(ix).transpose() * g;
                    if (tp.requires_grad(ib)) tp.grad_accumulator(ib) += g.colwise().sum();
                  });
}

// --- elementwise ------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  require_same_shape(a, b, "add");
  const auto ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape<T>& tp, std::size_t self) {
                    const Matrix<T>& g = tp.grad(self);
                    if (tp.requires_grad(ia)) tp.grad_accumulator(ia) += g;
                    if (tp.requires_grad(ib)) tp.grad_accumulator(ib) += g;
                  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  require_same_shape(a, b, "sub");
  const auto ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape<T>& tp, std::size_t self) {
                    const Matrix<T>& g = tp.grad(self);
                    if (tp.requires_grad(ia)) tp.grad_accumulator(ia) += g;
                    if (tp.requires_grad(ib)) tp.grad_accumulator(ib) -= g;
                  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  require_same_shape(a, b, "mul");
  const auto ia = a.id(), ib = b.id();
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape<T>& tp, std::size_t self) {
                    const Matrix<T>& g = tp.grad(self);
                    if (tp.requires_grad(ia))
                      tp.grad_accumulator(ia) += g.cwiseProduct(tp.value(ib));
                    if (tp.requires_grad(ib))
                      tp.grad_accumulator(ib) += g.cwiseProduct(tp.value(ia));
                  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  Tape<T>& t = *a.tape();
  const auto ia = a.id();
  return t.record(a.value() * factor, a.requires_grad(),
                  [ia, factor](Tape<T>& tp, std::size_t self) {
                    tp.grad_accumulator(ia) += tp.grad(self) * factor;
                  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  Tape<T>& t = *x.tape();
  Matrix<T> out = (T(1) / (T(1) + (-x.value().array()).exp())).matrix();
  const auto ix = x.id();
  return t.record(std::move(out), x.requires_grad(), [ix](Tape<T>& tp, std::size_t self) {
    const Matrix<T>& y = tp.value(self);
    tp.grad_accumulator(ix).array() +=
        tp.grad(self).array() * y.array() * (T(1) - y.array());
  });
}

template <class T>
Var<T> gelu(Var<T> x) {
  Tape<T>& t = *x.tape();
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  const auto xa = x.value().array();
  Matrix<T> out = (T(0.5) * xa * (T(1) + (xa * inv_sqrt2).erf())).matrix();
  const auto ix = x.id();
  return t.record(std::move(out), x.requires_grad(), [ix, inv_sqrt2](Tape<T>& tp, std::size_t self) {
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    const auto v = tp.value(ix).array();
    const auto cdf = T(0.5) * (T(1) + (v * inv_sqrt2).erf());
    const auto pdf = inv_sqrt2pi * (T(-0.5) * v.square()).exp();
    tp.grad_accumulator(ix).array() += tp.grad(self).array() * (cdf + v * pdf);
  });
}

// --- structural -------------------------------------------------------------

template <class T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Tape<T>& t = *parts[0].tape();
  const Index rows = parts[0].rows();
  Index cols = 0;
  bool needs_grad = false;
  std::vector<std::size_t> ids;
  std::vector<Index> offsets;
  for (const auto& p : parts) {
    same_tape(parts[0], p);
    require(p.rows() == rows, "concat_cols: row counts differ");
    ids.push_back(p.id());
    offsets.push_back(cols);
    cols += p.cols();
    needs_grad = needs_grad || p.requires_grad();
  }
  Matrix<T> out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (parts[k].cols() > 0) out.middleCols(offsets[k], parts[k].cols()) = parts[k].value();
  }
  return t.record(std::move(out), needs_grad,
                  [ids = std::move(ids), offsets = std::move(offsets)](Tape<T>& tp, std::size_t self) {
                    const Matrix<T>& g = tp.grad(self);
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (!tp.requires_grad(ids[k])) continue;
                      const Index w = tp.value(ids[k]).cols();
                      if (w > 0) tp.grad_accumulator(ids[k]) += g.middleCols(offsets[k], w);
                    }
                  });
}

template <class T>
Var<T> concat_rows(Var<T> top, Var<T> bottom) {
  Tape<T>& t = same_tape(top, bottom);
  require(top.cols() == bottom.cols(), "concat_rows: column counts differ");
  Matrix<T> out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top.value();
  out.bottomRows(bottom.rows()) = bottom.value();
  const auto it = top.id(), ib = bottom.id();
  return t.record(std::move(out), top.requires_grad() || bottom.requires_grad(),
                  [it, ib](Tape<T>& tp, std::size_t self) {
                    const Matrix<T>& g = tp.grad(self);
                    const Index split = tp.value(it).rows();
                    if (tp.requires_grad(it)) tp.grad_accumulator(it) += g.topRows(split);
                    if (tp.requires_grad(ib)) tp.grad_accumulator(ib) += g.bottomRows(g.rows() - split);
                  });
}

template <class T>
Var<T> gather_rows(Var<T> x, const IndexList& rows) {
  Tape<T>& t = *x.tape();
  require(rows != nullptr, "gather_rows: missing indices");
  const Matrix<T>& xv = x.value();
  const Index n = static_cast<Index>(rows->size());
  Matrix<T> out(n, xv.cols());
  for (Index r = 0; r < n; ++r) {
    const auto src = (*rows)[r];
    require(src >= 0 && src < xv.rows(), "gather_rows: index out of range");
    out.row(r) = xv.row(src);
  }
  const auto ix = x.id();
  return t.record(std::move(out), x.requires_grad(), [ix, rows](Tape<T>& tp, std::size_t self) {
    const Matrix<T>& g = tp.grad(self);
    Matrix<T>& gx = tp.grad_accumulator(ix);
    for (Index r = 0; r < g.rows(); ++r) gx.row((*rows)[r]) += g.row(r);
  });
}

// --- segment reductions -----------------------------------------------------

template <class T>
Var<T> segment_softmax(Var<T> logits, const IndexList& segments, Index num_segments) {
  Tape<T>& t = *logits.tape();
  const Matrix<T>& x = logits.value();
  require(x.rows() >= 1, "segment_softmax: empty segment list");
  check_segments(segments, x.rows(), num_segments, "segment_softmax");
  if (!x.allFinite()) {
    for (Index i = 0; i < x.size(); ++i)
      if (std::isnan(x.data()[i])) fail(ErrorKind::kNumeric, "segment_softmax: NaN logit");
  }
  const auto& seg = *segments;
  const Index cols = x.cols();
  Matrix<T> mx = Matrix<T>::Constant(num_segments, cols, -std::numeric_limits<T>::infinity());
  for (Index r = 0; r < x.rows(); ++r) mx.row(seg[r]) = mx.row(seg[r]).cwiseMax(x.row(r));
  Matrix<T> out(x.rows(), cols);
  Matrix<T> denom = Matrix<T>::Zero(num_segments, cols);
  for (Index r = 0; r < x.rows(); ++r) {
    out.row(r) = (x.row(r) - mx.row(seg[r])).array().exp().matrix();
    denom.row(seg[r]) += out.row(r);
  }
  for (Index r = 0; r < x.rows(); ++r)
    out.row(r).array() /= denom.row(seg[r]).array();
  return t.record(std::move(out), logits.requires_grad(),
                  [ix = logits.id(), segments, num_segments](Tape<T>& tp, std::size_t self) {
                    const auto& sg = *segments;
                    const Matrix<T>& y = tp.value(self);
                    const Matrix<T>& g = tp.grad(self);
                    Matrix<T> dot = Matrix<T>::Zero(num_segments, y.cols());
                    for (Index r = 0; r < y.rows(); ++r)
                      dot.row(sg[r]) += g.row(r).cwiseProduct(y.row(r));
                    Matrix<T>& gx = tp.grad_accumulator(ix);
                    for (Index r = 0; r < y.rows(); ++r)
                      gx.row(r) += y.row(r).cwiseProduct(g.row(r) - dot.row(sg[r]));
                  });
}

template <class T>
Var<T> segment_sum(Var<T> x, const IndexList& segments, Index num_segments) {
  Tape<T>& t = *x.tape();
  check_segments(segments, x.rows(), num_segments, "segment_sum");
  const auto& seg = *segments;
  const Matrix<T>& xv = x.value();
  Matrix<T> out = Matrix<T>::Zero(num_segments, xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) out.row(seg[r]) += xv.row(r);
  return t.record(std::move(out), x.requires_grad(),
                  [ix = x.id(), segments](Tape<T>& tp, std::size_t self) {
                    const auto& sg = *segments;
                    const Matrix<T>& g = tp.grad(self);
                    Matrix<T>& gx = tp.grad_accumulator(ix);
                    for (Index r = 0; r < gx.rows(); ++r) gx.row(r) += g.row(sg[r]);
                  });
}

template <class T>
Var<T> segment_mean(Var<T> x, const IndexList& segments, Index num_segments) {
  Tape<T>& t = *x.tape();
  check_segments(segments, x.rows(), num_segments, "segment_mean");
  const auto& seg = *segments;
  std::vector<T> count(static_cast<std::size_t>(num_segments), T(0));
  for (auto s : seg) count[s] += T(1);
  for (Index s = 0; s < num_segments; ++s)
    if (count[s] == T(0)) fail(ErrorKind::kInvalidArgument, "segment_mean: empty segment " + std::to_string(s));
  const Matrix<T>& xv = x.value();
  Matrix<T> out = Matrix<T>::Zero(num_segments, xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) out.row(seg[r]) += xv.row(r);
  for (Index s = 0; s < num_segments; ++s) out.row(s) /= count[s];
  return t.record(std::move(out), x.requires_grad(),
                  [ix = x.id(), segments, count = std::move(count)](Tape<T>& tp, std::size_t self) {
                    const auto& sg = *segments;
                    const Matrix<T>& g = tp.grad(self);
                    Matrix<T>& gx = tp.grad_accumulator(ix);
                    for (Index r = 0; r < gx.rows(); ++r) gx.row(r) += g.row(sg[r]) / count[sg[r]];
                  });
}

template <class T>
Var<T> segment_weighted_sum(Var<T> weights, Var<T> values, const IndexList& segments,
                            Index num_segments) {
  Tape<T>& t = same_tape(weights, values);
  const Matrix<T>& w = weights.value();
  const Matrix<T>& v = values.value();
  require(w.rows() == v.rows(), "segment_weighted_sum: weights and values are not row-aligned");
  require(w.cols() >= 1 && v.cols() % w.cols() == 0,
          "segment_weighted_sum: head count must divide value width");
  check_segments(segments, v.rows(), num_segments, "segment_weighted_sum");
  const auto& seg = *segments;
  const Index heads = w.cols();
  const Index width = v.cols() / heads;
  Matrix<T> out = Matrix<T>::Zero(num_segments, v.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    for (Index h = 0; h < heads; ++h)
      out.row(seg[r]).segment(h * width, width) += w(r, h) * v.row(r).segment(h * width, width);
  }
  return t.record(
      std::move(out), weights.requires_grad() || values.requires_grad(),
      [iw = weights.id(), iv = values.id(), segments, heads, width](Tape<T>& tp, std::size_t self) {
        const auto& sg = *segments;
        const Matrix<T>& g = tp.grad(self);
        const Matrix<T>& wv = tp.value(iw);
        const Matrix<T>& vv = tp.value(iv);
        const bool gw = tp.requires_grad(iw), gv = tp.requires_grad(iv);
        for (Index r = 0; r < vv.rows(); ++r) {
          for (Index h = 0; h < heads; ++h) {
            auto gs = g.row(sg[r]).segment(h * width, width);
            if (gw) tp.grad_accumulator(iw)(r, h) += gs.dot(vv.row(r).segment(h * width, width));
            if (gv) tp.grad_accumulator(iv).row(r).segment(h * width, width) += wv(r, h) * gs;
          }
        }
      });
}

template <class T>
Var<T> prefix_mean(Var<T> x, const IndexList& segments, Index num_segments) {
  Tape<T>& t = *x.tape();
  check_segments(segments, x.rows(), num_segments, "prefix_mean");
  const auto& seg = *segments;
  const Matrix<T>& xv = x.value();
  Matrix<T> running = Matrix<T>::Zero(num_segments, xv.cols());
  std::vector<T> seen(static_cast<std::size_t>(num_segments), T(0));
  std::vector<T> count(static_cast<std::size_t>(xv.rows()));
  Matrix<T> out(xv.rows(), xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) {
    running.row(seg[r]) += xv.row(r);
    seen[seg[r]] += T(1);
    count[r] = seen[seg[r]];
    out.row(r) = running.row(seg[r]) / count[r];
  }
  return t.record(std::move(out), x.requires_grad(),
                  [ix = x.id(), segments, num_segments, count = std::move(count)](Tape<T>& tp,
                                                                                 std::size_t self) {
                    const auto& sg = *segments;
                    const Matrix<T>& g = tp.grad(self);
                    Matrix<T>& gx = tp.grad_accumulator(ix);
                    Matrix<T> acc = Matrix<T>::Zero(num_segments, g.cols());
                    for (Index r = g.rows(); r-- > 0;) {
                      acc.row(sg[r]) += g.row(r) / count[r];
                      gx.row(r) += acc.row(sg[r]);
                    }
                  });
}

// --- normalisation and loss -------------------------------------------------

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  Tape<T>& t = same_tape(x, gamma);
  same_tape(x, beta);
  const Index d = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == d && beta.rows() == 1 && beta.cols() == d,
          "layer_norm: gamma/beta must be 1 x width");
  const Matrix<T>& xv = x.value();
  Matrix<T> xhat(xv.rows(), d);
  std::vector<T> rstd(static_cast<std::size_t>(xv.rows()));
  for (Index r = 0; r < xv.rows(); ++r) {
    const T mu = xv.row(r).mean();
    const T var = (xv.row(r).array() - mu).square().mean();
    rstd[r] = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * rstd[r];
  }
  Matrix<T> out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                  beta.value().row(0).array();
  return t.record(
      std::move(out), x.requires_grad() || gamma.requires_grad() || beta.requires_grad(),
      [ix = x.id(), ig = gamma.id(), ibeta = beta.id(), xhat = std::move(xhat),
       rstd = std::move(rstd)](Tape<T>& tp, std::size_t self) {
        const Matrix<T>& g = tp.grad(self);
        if (tp.requires_grad(ig)) tp.grad_accumulator(ig) += g.cwiseProduct(xhat).colwise().sum();
        if (tp.requires_grad(ibeta)) tp.grad_accumulator(ibeta) += g.colwise().sum();
        if (tp.requires_grad(ix)) {
          Matrix<T>& gx = tp.grad_accumulator(ix);
          const auto gam = tp.value(ig).row(0).array();
          for (Index r = 0; r < g.rows(); ++r) {
            auto dxhat = (g.row(r).array() * gam).eval();
            const T m1 = dxhat.mean();
            const T m2 = (dxhat * xhat.row(r).array()).mean();
            gx.row(r).array() += rstd[r] * (dxhat - m1 - xhat.row(r).array() * m2);
          }
        }
      });
}

template <class T>
Var<T> nll_loss(Var<T> logits, std::span<const std::int32_t> labels,
                std::span<const T> row_weights) {
  Tape<T>& t = *logits.tape();
  const Matrix<T>& x = logits.value();
  require(static_cast<Index>(labels.size()) == x.rows(), "nll_loss: label count mismatch");
  require(static_cast<Index>(row_weights.size()) == x.rows(), "nll_loss: weight count mismatch");
  Matrix<T> logp = log_softmax_rows(x);
  T total = 0, wsum = 0;
  for (Index r = 0; r < x.rows(); ++r) {
    if (row_weights[r] == T(0)) continue;
    require(labels[r] >= 0 && labels[r] < x.cols(), "nll_loss: label out of range");
    total -= row_weights[r] * logp(r, labels[r]);
    wsum += row_weights[r];
  }
  if (!(wsum > T(0))) fail(ErrorKind::kInvalidArgument, "nll_loss: every row is masked");
  Matrix<T> out(1, 1);
  out(0, 0) = total / wsum;
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  std::vector<T> wts(row_weights.begin(), row_weights.end());
  return t.record(std::move(out), logits.requires_grad(),
                  [ix = logits.id(), logp = std::move(logp), lab = std::move(lab),
                   wts = std::move(wts), wsum](Tape<T>& tp, std::size_t self) {
                    const T g = tp.grad(self)(0, 0);
                    Matrix<T>& gx = tp.grad_accumulator(ix);
                    for (Index r = 0; r < logp.rows(); ++r) {
                      if (wts[r] == T(0)) continue;
                      const T c = g * wts[r] / wsum;
                      gx.row(r) += c * logp.row(r).array().exp().matrix();
                      gx(r, lab[r]) -= c;
                    }
                  });
}

template <class T>
Var<T> sum(Var<T> x) {
  Tape<T>& t = *x.tape();
  Matrix<T> out(1, 1);
  out(0, 0) = x.value().sum();
  return t.record(std::move(out), x.requires_grad(), [ix = x.id()](Tape<T>& tp, std::size_t self) {
    tp.grad_accumulator(ix).array() += tp.grad(self)(0, 0);
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  require(x.value().size() > 0, "mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

template <class T>
Matrix<T> log_softmax_rows(const Matrix<T>& logits) {
  Matrix<T> out(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const T mx = logits.row(r).maxCoeff();
    const T lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

#define PIFOLD_INSTANTIATE(T)                                                                  \
  template class Tape<T>;                                                                      \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                   \
  template Var<T> affine<T>(Var<T>, Var<T>, Var<T>);                                           \
  template Var<T> add<T>(Var<T>, Var<T>);                                                      \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                      \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                      \
  template Var<T> scale<T>(Var<T>, T);                                                         \
  template Var<T> concat_cols<T>(std::span<const Var<T>>);                                     \
  template Var<T> gather_rows<T>(Var<T>, const IndexList&);                                    \
  template Var<T> concat_rows<T>(Var<T>, Var<T>);                                              \
  template Var<T> segment_softmax<T>(Var<T>, const IndexList&, Index);                         \
  template Var<T> segment_sum<T>(Var<T>, const IndexList&, Index);                             \
  template Var<T> segment_mean<T>(Var<T>, const IndexList&, Index);                            \
  template Var<T> segment_weighted_sum<T>(Var<T>, Var<T>, const IndexList&, Index);            \
  template Var<T> prefix_mean<T>(Var<T>, const IndexList&, Index);                             \
  template Var<T> sigmoid<T>(Var<T>);                                                          \
  template Var<T> gelu<T>(Var<T>);                                                             \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                    \
  template Var<T> nll_loss<T>(Var<T>, std::span<const std::int32_t>, std::span<const T>);      \
  template Var<T> sum<T>(Var<T>);                                                              \
  template Var<T> mean<T>(Var<T>);                                                             \
  template Matrix<T> log_softmax_rows<T>(const Matrix<T>&);

PIFOLD_INSTANTIATE(float)
PIFOLD_INSTANTIATE(double)

#undef PIFOLD_INSTANTIATE

}  // namespace pifold::ad
