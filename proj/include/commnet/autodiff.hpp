#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "commnet/tensor.hpp"

namespace commnet {

/// Handle to a node on a Tape.
struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

/// Per-output-row source lists for row_set_mean: out[r] = mean of in[s] over
/// s in lists[r]; an empty list yields a zero row. Carries both communication
/// neighborhoods (exclusive) and per-episode row groups (inclusive).
struct RowSets {
  std::vector<std::vector<int>> lists;
};

/// Tape-based reverse-mode differentiation over Tensors. Graphs are built
/// fresh per forward pass and discarded; creation order is the topological
/// order, so the backward sweep is a single reverse scan that visits each
/// node once.
class Tape {
  enum class Op {
    Leaf, MatMul, Add, Sub, Mul, Scale, AddBias, Relu, Tanh, Sigmoid,
    SoftmaxRows, LogSoftmaxRows, GatherRows, SelectCols, RowSetMean,
    ConcatCols, ConcatRows, SliceCols, SumAll, MeanAll, Reshape,
  };

  struct Node {
    Tensor value;                    // owned result (empty for external leaves)
    const Tensor* ext = nullptr;     // external leaf storage, not owned
    Tensor grad;                     // allocated on first touch during backward
    Op op = Op::Leaf;
    int a = -1, b = -1;
    double scalar = 0.0;
    int begin = 0, width = 0;        // slice bounds
    std::vector<int> idx;            // gather / select indices
    std::shared_ptr<const RowSets> sets;

    const Tensor& val() const { return ext ? *ext : value; }
  };

public:
  Tape() { nodes_.reserve(256); }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(Var v) const { return at(v).val(); }

  /// Gradient of the last backward() root w.r.t. v; zero tensor if the root
  /// did not depend on v.
  const Tensor& grad(Var v) {
    Node& n = at(v);
    if (n.grad.empty() && n.val().size() > 0) n.grad = Tensor(n.val().shape());
    return n.grad;
  }

  /// Leaf viewing external storage; the pointee must outlive the tape pass.
  Var leaf(const Tensor* external) {
    Node n;
    n.ext = external;
    return push(std::move(n));
  }

  /// Leaf owning its value (constants, inputs).
  Var constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var matmul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require_matrix(ta, "tape matmul");
    require_matrix(tb, "tape matmul");
    if (ta.cols() != tb.rows())
      throw std::invalid_argument("tape matmul: inner dimensions disagree: " +
                                  ta.shape_string() + " vs " + tb.shape_string());
    Node n;
    n.op = Op::MatMul;
    n.a = a.i;
    n.b = b.i;
    n.value = Tensor({ta.rows(), tb.cols()});
    matmul_accumulate(ta, tb, n.value);
    return push(std::move(n));
  }

  Var add(Var a, Var b) { return binary(Op::Add, a, b); }
  Var sub(Var a, Var b) { return binary(Op::Sub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::Mul, a, b); }

  Var scale(Var a, double s) {
    Node n;
    n.op = Op::Scale;
    n.a = a.i;
    n.scalar = s;
    n.value = val(a);
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] *= s;
    return push(std::move(n));
  }

  /// Adds a length-n bias vector to every row of an [m x n] matrix.
  Var add_bias(Var a, Var bias) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(bias);
    require_matrix(ta, "add_bias");
    if (tb.rank() != 1 || tb.size() != ta.cols())
      throw std::invalid_argument("add_bias: bias length does not match columns");
    Node n;
    n.op = Op::AddBias;
    n.a = a.i;
    n.b = bias.i;
    n.value = ta;
    for (std::size_t r = 0; r < ta.rows(); ++r)
      for (std::size_t c = 0; c < ta.cols(); ++c) n.value.at(r, c) += tb[c];
    return push(std::move(n));
  }

  Var relu(Var a) {
    Node n = unary(Op::Relu, a);
    for (std::size_t i = 0; i < n.value.size(); ++i)
      n.value[i] = n.value[i] > 0.0 ? n.value[i] : 0.0;
    return push(std::move(n));
  }

  Var tanh_(Var a) {
    Node n = unary(Op::Tanh, a);
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::tanh(n.value[i]);
    return push(std::move(n));
  }

  Var sigmoid(Var a) {
    Node n = unary(Op::Sigmoid, a);
    for (std::size_t i = 0; i < n.value.size(); ++i)
      n.value[i] = 1.0 / (1.0 + std::exp(-n.value[i]));
    return push(std::move(n));
  }

  /// Row-wise softmax with max-subtraction. Accepts a vector or a matrix.
  Var softmax_rows(Var a) { return softmaxish(a, /*log=*/false); }

  /// Row-wise log-softmax (same stabilization).
  Var log_softmax_rows(Var a) { return softmaxish(a, /*log=*/true); }

  /// out[r] = in[rows[r]]; also serves as an embedding-table lookup.
  Var gather_rows(Var a, std::vector<int> rows) {
    const Tensor& ta = val(a);
    require_matrix(ta, "gather_rows");
    Node n;
    n.op = Op::GatherRows;
    n.a = a.i;
    n.value = Tensor({rows.size(), ta.cols()});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] < 0 || static_cast<std::size_t>(rows[r]) >= ta.rows())
        throw std::out_of_range("gather_rows: row index out of range");
      for (std::size_t c = 0; c < ta.cols(); ++c)
        n.value.at(r, c) = ta.at(static_cast<std::size_t>(rows[r]), c);
    }
    n.idx = std::move(rows);
    return push(std::move(n));
  }

  /// out[r, 0] = in[r, cols[r]]; picks one entry per row (log-prob of the
  /// chosen action).
  Var select_cols(Var a, std::vector<int> cols) {
    const Tensor& ta = val(a);
    require_matrix(ta, "select_cols");
    if (cols.size() != ta.rows())
      throw std::invalid_argument("select_cols: one index per row required");
    Node n;
    n.op = Op::SelectCols;
    n.a = a.i;
    n.value = Tensor({ta.rows(), std::size_t(1)});
    for (std::size_t r = 0; r < cols.size(); ++r) {
      if (cols[r] < 0 || static_cast<std::size_t>(cols[r]) >= ta.cols())
        throw std::out_of_range("select_cols: column index out of range");
      n.value.at(r, 0) = ta.at(r, static_cast<std::size_t>(cols[r]));
    }
    n.idx = std::move(cols);
    return push(std::move(n));
  }

  /// out[r] = mean of in rows listed in sets->lists[r]; empty list -> zeros.
  Var row_set_mean(Var a, std::shared_ptr<const RowSets> sets) {
    const Tensor& ta = val(a);
    require_matrix(ta, "row_set_mean");
    Node n;
    n.op = Op::RowSetMean;
    n.a = a.i;
    n.sets = std::move(sets);
    n.value = Tensor({n.sets->lists.size(), ta.cols()});
    for (std::size_t r = 0; r < n.sets->lists.size(); ++r) {
      const auto& list = n.sets->lists[r];
      if (list.empty()) continue;
      double inv = 1.0 / static_cast<double>(list.size());
      for (int s : list)
        for (std::size_t c = 0; c < ta.cols(); ++c)
          n.value.at(r, c) += ta.at(static_cast<std::size_t>(s), c);
      for (std::size_t c = 0; c < ta.cols(); ++c) n.value.at(r, c) *= inv;
    }
    return push(std::move(n));
  }

  Var concat_cols(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rows() != tb.rows())
      throw std::invalid_argument("concat_cols: row counts differ");
    Node n;
    n.op = Op::ConcatCols;
    n.a = a.i;
    n.b = b.i;
    n.value = Tensor({ta.rows(), ta.cols() + tb.cols()});
    for (std::size_t r = 0; r < ta.rows(); ++r) {
      for (std::size_t c = 0; c < ta.cols(); ++c) n.value.at(r, c) = ta.at(r, c);
      for (std::size_t c = 0; c < tb.cols(); ++c)
        n.value.at(r, ta.cols() + c) = tb.at(r, c);
    }
    return push(std::move(n));
  }

  Var concat_rows(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.cols() != tb.cols())
      throw std::invalid_argument("concat_rows: column counts differ");
    Node n;
    n.op = Op::ConcatRows;
    n.a = a.i;
    n.b = b.i;
    n.value = Tensor({ta.rows() + tb.rows(), ta.cols()});
    std::copy(ta.data(), ta.data() + ta.size(), n.value.data());
    std::copy(tb.data(), tb.data() + tb.size(), n.value.data() + ta.size());
    return push(std::move(n));
  }

  Var slice_cols(Var a, std::size_t begin, std::size_t width) {
    const Tensor& ta = val(a);
    require_matrix(ta, "slice_cols");
    if (begin + width > ta.cols())
      throw std::out_of_range("slice_cols: slice exceeds columns");
    Node n;
    n.op = Op::SliceCols;
    n.a = a.i;
    n.begin = static_cast<int>(begin);
    n.width = static_cast<int>(width);
    n.value = Tensor({ta.rows(), width});
    for (std::size_t r = 0; r < ta.rows(); ++r)
      for (std::size_t c = 0; c < width; ++c) n.value.at(r, c) = ta.at(r, begin + c);
    return push(std::move(n));
  }

  Var sum(Var a) { return reduce(Op::SumAll, a); }
  Var mean(Var a) { return reduce(Op::MeanAll, a); }

  /// Same data, new shape; element count must be unchanged.
  Var reshape(Var a, std::vector<std::size_t> shape) {
    const Tensor& ta = val(a);
    if (Tensor::count(shape) != ta.size())
      throw std::invalid_argument("reshape: element count mismatch");
    Node n;
    n.op = Op::Reshape;
    n.a = a.i;
    n.value = Tensor(std::move(shape));
    std::copy(ta.data(), ta.data() + ta.size(), n.value.data());
    return push(std::move(n));
  }

  /// Reverse sweep from a scalar root. Gradients of unreachable nodes stay
  /// empty (read as zeros); each node's grad accumulates across all uses.
  void backward(Var root) {
    Node& r = at(root);
    if (r.val().size() != 1)
      throw std::invalid_argument("backward: root must be scalar-valued");
    r.grad = Tensor(r.val().shape());
    r.grad[0] = 1.0;
    for (int i = root.i; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.empty()) continue;  // root does not depend on this node
      apply_adjoint(n);
    }
  }

private:
  std::vector<Node> nodes_;

  Node& at(Var v) {
    if (!v.valid() || static_cast<std::size_t>(v.i) >= nodes_.size())
      throw std::out_of_range("Tape: invalid Var");
    return nodes_[static_cast<std::size_t>(v.i)];
  }
  const Node& at(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.i) >= nodes_.size())
      throw std::out_of_range("Tape: invalid Var");
    return nodes_[static_cast<std::size_t>(v.i)];
  }
  const Tensor& val(Var v) const { return at(v).val(); }

  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  Node unary(Op op, Var a) {
    Node n;
    n.op = op;
    n.a = a.i;
    n.value = val(a);
    return n;
  }

  Var binary(Op op, Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb))
      throw std::invalid_argument("tape elementwise: shapes differ: " +
                                  ta.shape_string() + " vs " + tb.shape_string());
    Node n;
    n.op = op;
    n.a = a.i;
    n.b = b.i;
    n.value = ta;
    switch (op) {
      case Op::Add:
        for (std::size_t i = 0; i < tb.size(); ++i) n.value[i] += tb[i];
        break;
      case Op::Sub:
        for (std::size_t i = 0; i < tb.size(); ++i) n.value[i] -= tb[i];
        break;
      case Op::Mul:
        for (std::size_t i = 0; i < tb.size(); ++i) n.value[i] *= tb[i];
        break;
      default:
        throw std::logic_error("binary: not an elementwise op");
    }
    return push(std::move(n));
  }

  Var reduce(Op op, Var a) {
    const Tensor& ta = val(a);
    Node n;
    n.op = op;
    n.a = a.i;
    double acc = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) acc += ta[i];
    if (op == Op::MeanAll) acc /= static_cast<double>(ta.size());
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
  }

  Var softmaxish(Var a, bool log) {
    const Tensor& ta = val(a);
    std::size_t rows = ta.rank() == 1 ? 1 : ta.rows();
    std::size_t cols = ta.rank() == 1 ? ta.size() : ta.cols();
    if (ta.rank() > 2 || cols == 0)
      throw std::invalid_argument("softmax: expected a nonempty vector or matrix");
    Node n;
    n.op = log ? Op::LogSoftmaxRows : Op::SoftmaxRows;
    n.a = a.i;
    n.value = Tensor(ta.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* in = ta.data() + r * cols;
      double* out = n.value.data() + r * cols;
      double mx = in[0];
      for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
      if (!std::isfinite(mx))
        throw std::invalid_argument("softmax: non-finite input");
      double denom = 0.0;
      for (std::size_t c = 0; c < cols; ++c) denom += std::exp(in[c] - mx);
      if (log) {
        double ld = std::log(denom);
        for (std::size_t c = 0; c < cols; ++c) out[c] = in[c] - mx - ld;
      } else {
        for (std::size_t c = 0; c < cols; ++c) out[c] = std::exp(in[c] - mx) / denom;
      }
    }
    return push(std::move(n));
  }

  Tensor& touch_grad(int i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty()) n.grad = Tensor(n.val().shape());
    return n.grad;
  }

  void apply_adjoint(Node& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        const Tensor& av = nodes_[n.a].val();
        const Tensor& bv = nodes_[n.b].val();
        matmul_a_bt_accumulate(g, bv, touch_grad(n.a));
        matmul_at_b_accumulate(av, g, touch_grad(n.b));
        break;
      }
      case Op::Add: {
        Tensor& ga = touch_grad(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        Tensor& gb = touch_grad(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        break;
      }
      case Op::Sub: {
        Tensor& ga = touch_grad(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        Tensor& gb = touch_grad(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        break;
      }
      case Op::Mul: {
        const Tensor& av = nodes_[n.a].val();
        const Tensor& bv = nodes_[n.b].val();
        Tensor& ga = touch_grad(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        Tensor& gb = touch_grad(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        break;
      }
      case Op::Scale: {
        Tensor& ga = touch_grad(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.scalar * g[i];
        break;
      }
      case Op::AddBias: {
        Tensor& ga = touch_grad(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        Tensor& gb = touch_grad(n.b);
        std::size_t cols = gb.size();
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < cols; ++c) gb[c] += g.at(r, c);
        break;
      }
      case Op::Relu: {
        const Tensor& av = nodes_[n.a].val();
        Tensor& ga = touch_grad(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (av[i] > 0.0) ga[i] += g[i];
        break;
      }
      case Op::Tanh: {
        Tensor& ga = touch_grad(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
        break;
      }
      case Op::Sigmoid: {
        Tensor& ga = touch_grad(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
        break;
      }
      case Op::SoftmaxRows: {
        Tensor& ga = touch_grad(n.a);
        std::size_t rows = n.value.rank() == 1 ? 1 : n.value.rows();
        std::size_t cols = n.value.size() / rows;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = n.value.data() + r * cols;
          const double* gr = g.data() + r * cols;
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * y[c];
          double* out = ga.data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) out[c] += y[c] * (gr[c] - dot);
        }
        break;
      }
      case Op::LogSoftmaxRows: {
        Tensor& ga = touch_grad(n.a);
        std::size_t rows = n.value.rank() == 1 ? 1 : n.value.rows();
        std::size_t cols = n.value.size() / rows;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = n.value.data() + r * cols;
          const double* gr = g.data() + r * cols;
          double gsum = 0.0;
          for (std::size_t c = 0; c < cols; ++c) gsum += gr[c];
          double* out = ga.data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c)
            out[c] += gr[c] - std::exp(y[c]) * gsum;
        }
        break;
      }
      case Op::GatherRows: {
        Tensor& ga = touch_grad(n.a);
        std::size_t cols = n.value.cols();
        for (std::size_t r = 0; r < n.idx.size(); ++r)
          for (std::size_t c = 0; c < cols; ++c)
            ga.at(static_cast<std::size_t>(n.idx[r]), c) += g.at(r, c);
        break;
      }
      case Op::SelectCols: {
        Tensor& ga = touch_grad(n.a);
        for (std::size_t r = 0; r < n.idx.size(); ++r)
          ga.at(r, static_cast<std::size_t>(n.idx[r])) += g.at(r, 0);
        break;
      }
      case Op::RowSetMean: {
        Tensor& ga = touch_grad(n.a);
        std::size_t cols = n.value.cols();
        for (std::size_t r = 0; r < n.sets->lists.size(); ++r) {
          const auto& list = n.sets->lists[r];
          if (list.empty()) continue;
          double inv = 1.0 / static_cast<double>(list.size());
          for (int s : list)
            for (std::size_t c = 0; c < cols; ++c)
              ga.at(static_cast<std::size_t>(s), c) += inv * g.at(r, c);
        }
        break;
      }
      case Op::ConcatCols: {
        const Tensor& av = nodes_[n.a].val();
        Tensor& ga = touch_grad(n.a);
        for (std::size_t r = 0; r < av.rows(); ++r)
          for (std::size_t c = 0; c < av.cols(); ++c) ga.at(r, c) += g.at(r, c);
        const Tensor& bv = nodes_[n.b].val();
        Tensor& gb = touch_grad(n.b);
        for (std::size_t r = 0; r < bv.rows(); ++r)
          for (std::size_t c = 0; c < bv.cols(); ++c)
            gb.at(r, c) += g.at(r, av.cols() + c);
        break;
      }
      case Op::ConcatRows: {
        const Tensor& av = nodes_[n.a].val();
        Tensor& ga = touch_grad(n.a);
        for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[i];
        const Tensor& bv = nodes_[n.b].val();
        Tensor& gb = touch_grad(n.b);
        for (std::size_t i = 0; i < bv.size(); ++i) gb[i] += g[i + av.size()];
        break;
      }
      case Op::SliceCols: {
        Tensor& ga = touch_grad(n.a);
        std::size_t begin = static_cast<std::size_t>(n.begin);
        for (std::size_t r = 0; r < n.value.rows(); ++r)
          for (std::size_t c = 0; c < n.value.cols(); ++c)
            ga.at(r, begin + c) += g.at(r, c);
        break;
      }
      case Op::SumAll: {
        Tensor& ga = touch_grad(n.a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
        break;
      }
      case Op::MeanAll: {
        Tensor& ga = touch_grad(n.a);
        double s = g[0] / static_cast<double>(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
        break;
      }
      case Op::Reshape: {
        Tensor& ga = touch_grad(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        break;
      }
    }
  }
};

/// Max over coordinates of |autodiff - central difference| / max(1, |cd|)
/// for a scalar function of several parameter tensors. `f` is called as
/// f(tape, leaves) and must return a scalar Var.
template <class F>
double grad_check(F&& f, std::vector<Tensor> params, double eps = 1e-5) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

  auto eval = [&](const std::vector<Tensor>& p) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(p.size());
    for (const Tensor& t : p) leaves.push_back(tape.leaf(&t));
    Var out = f(tape, leaves);
    double v = tape.value(out)[0];
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite value");
    return v;
  };

  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& t : params) leaves.push_back(tape.leaf(&t));
  Var out = f(tape, leaves);
  tape.backward(out);
  std::vector<Tensor> auto_grads;
  auto_grads.reserve(params.size());
  for (Var v : leaves) auto_grads.push_back(tape.grad(v));

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      double saved = params[p][i];
      params[p][i] = saved + eps;
      double up = eval(params);
      params[p][i] = saved - eps;
      double dn = eval(params);
      params[p][i] = saved;
      double fd = (up - dn) / (2.0 * eps);
      double err = std::abs(auto_grads[p][i] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template <class F>
double grad_check_single(F&& f, Tensor theta, double eps = 1e-5) {
  return grad_check(
      [&](Tape& tape, const std::vector<Var>& leaves) { return f(tape, leaves[0]); },
      {std::move(theta)}, eps);
}

}  // namespace commnet
