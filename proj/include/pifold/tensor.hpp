#pragma once

// Dense 2-D tensors with tape-based reverse-mode differentiation.
//
// Every tensor lives on a Tape as a node. Operations append nodes in
// execution order and, when any input requires a gradient, register a
// backward closure. Tape::backward() walks the closures in exact reverse
// order, once. The operation set is deliberately closed: it covers the
// PiGNN layer, the input projections, the readout and the training loss.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "pifold/error.hpp"

namespace pifold::ad {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

// Shared, immutable index vector. Closures hold a copy of the pointer, so
// index lists outlive every tape that references them.
using IndexList = std::shared_ptr<const std::vector<std::int32_t>>;

inline IndexList make_indices(std::vector<std::int32_t> v) {
  return std::make_shared<const std::vector<std::int32_t>>(std::move(v));
}

struct Shape {
  Index rows = 0;
  Index cols = 0;
  bool operator==(const Shape&) const = default;
  Index size() const { return rows * cols; }
};

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix<T>& value() const;
  // Zero matrix of the value's shape until backward() reaches this node.
  const Matrix<T>& grad() const;
  bool requires_grad() const;
  Shape shape() const;
  Index rows() const { return shape().rows; }
  Index cols() const { return shape().cols; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Matrix<T> value);
  Var<T> variable(Matrix<T> value);

  // Appends a computed node. `backward` is dropped when no input needs a
  // gradient.
  Var<T> record(Matrix<T> value, bool requires_grad, Backward backward);

  void backward(Var<T> root);

  // Drops every node recorded after the first `size`; handles to them become
  // dangling. Used to reuse one tape across inference steps.
  void rewind(std::size_t size);

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  const Matrix<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Matrix<T>& grad(std::size_t id) const;
  // Lazily zero-initialised accumulator used by backward closures.
  Matrix<T>& grad_accumulator(std::size_t id);

  // Ids of operation nodes in the order their backward closures ran.
  const std::vector<std::size_t>& backward_trace() const { return trace_; }

 private:
  struct Node {
    Matrix<T> value;
    mutable Matrix<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::size_t> trace_;
  bool backward_done_ = false;
};

template <class T>
const Matrix<T>& Var<T>::value() const {
  return tape_->value(id_);
}
template <class T>
const Matrix<T>& Var<T>::grad() const {
  return tape_->grad(id_);
}
template <class T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}
template <class T>
Shape Var<T>::shape() const {
  const auto& v = value();
  return {v.rows(), v.cols()};
}

// --- operations -----------------------------------------------------------

template <class T> Var<T> matmul(Var<T> a, Var<T> b);
// x·W + b, with b a 1×out row broadcast over rows.
template <class T> Var<T> affine(Var<T> x, Var<T> w, Var<T> b);
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> scale(Var<T> a, T factor);
template <class T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <class T> Var<T> concat_cols(std::initializer_list<Var<T>> parts) {
  return concat_cols<T>(std::span<const Var<T>>(parts.begin(), parts.size()));
}
template <class T> Var<T> gather_rows(Var<T> x, const IndexList& rows);
// Stacks `top` above `bottom`; column counts must agree.
template <class T> Var<T> concat_rows(Var<T> top, Var<T> bottom);

// Column-wise softmax inside each segment (one independent softmax per
// column, e.g. per attention head). Rows may appear in any segment order.
template <class T>
Var<T> segment_softmax(Var<T> logits, const IndexList& segments, Index num_segments);
template <class T>
Var<T> segment_sum(Var<T> x, const IndexList& segments, Index num_segments);
template <class T>
Var<T> segment_mean(Var<T> x, const IndexList& segments, Index num_segments);
// weights: m×H, values: m×d with H | d. Head h scales column slice
// [h·d/H, (h+1)·d/H) of each value row before summing per segment.
template <class T>
Var<T> segment_weighted_sum(Var<T> weights, Var<T> values, const IndexList& segments,
                            Index num_segments);
// Running mean over rows of the same segment, in row order (row r sees
// rows r' <= r only).
template <class T>
Var<T> prefix_mean(Var<T> x, const IndexList& segments, Index num_segments);

template <class T> Var<T> sigmoid(Var<T> x);
template <class T> Var<T> gelu(Var<T> x);
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

// Mean over weighted rows of -log_softmax(logits)[label]; 1×1.
template <class T>
Var<T> nll_loss(Var<T> logits, std::span<const std::int32_t> labels,
                std::span<const T> row_weights);
template <class T> Var<T> sum(Var<T> x);
template <class T> Var<T> mean(Var<T> x);

// Row-wise log-softmax outside of any tape.
template <class T> Matrix<T> log_softmax_rows(const Matrix<T>& logits);

// --- gradient checking ----------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  Index worst_index = 0;
  Matrix<double> analytic;
  Matrix<double> numeric;
};

// Compares the tape gradient of a scalar function with central finite
// differences; error per coordinate is |analytic - numeric| / max(1, |analytic|).
template <class F>
GradCheckResult grad_check(F&& f, const Matrix<double>& x, double step) {
  require(step > 0.0, "grad_check: step must be positive");
  GradCheckResult result;
  {
    Tape<double> tape;
    Var<double> xv = tape.variable(x);
    Var<double> y = f(tape, xv);
    require(y.rows() == 1 && y.cols() == 1, "grad_check: function must be scalar");
    if (!std::isfinite(y.value()(0, 0))) fail(ErrorKind::kNumeric, "grad_check: non-finite value at x");
    tape.backward(y);
    result.analytic = xv.grad();
  }
  result.numeric.resize(x.rows(), x.cols());
  auto eval = [&](const Matrix<double>& at) {
    Tape<double> tape;
    Var<double> xv = tape.constant(at);
    double v = f(tape, xv).value()(0, 0);
    if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "grad_check: non-finite value while probing");
    return v;
  };
  Matrix<double> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double fp = eval(probe);
    probe.data()[i] = orig - step;
    const double fm = eval(probe);
    probe.data()[i] = orig;
    const double num = (fp - fm) / (2.0 * step);
    const double ana = result.analytic.data()[i];
    result.numeric.data()[i] = num;
    const double err = std::abs(ana - num) / std::max(1.0, std::abs(ana));
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace pifold::ad
