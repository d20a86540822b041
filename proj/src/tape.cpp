#include "binn/tape.hpp"

#include <cmath>
#include <limits>
#include <utility>

namespace binn::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kElu: return "elu";
    case Op::kSoftplus: return "softplus";
    case Op::kReciprocal: return "reciprocal";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSliceCols: return "slice_cols";
    case Op::kGatherRows: return "gather_rows";
    case Op::kScatterSumRows: return "scatter_sum_rows";
    case Op::kSqErr: return "squared_error";
    case Op::kReshape: return "reshape";
    case Op::kLinear: return "linear";
  }
  return "?";
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw std::invalid_argument("Tape: node id not on tape");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::push(Node&& n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

void Tape::check_finite(Var v) {
  // A single vectorized sum detects any NaN/Inf (infinities of mixed sign
  // collapse to NaN in the horizontal reduction). Bounded maps (tanh, elu,
  // softplus, relu) and pure copies cannot produce non-finite values from
  // finite inputs and skip the check at their emit sites.
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.value.size() > 0 && !std::isfinite(n.value.array().sum()))
    throw NonFiniteError(std::string("non-finite result in op '") + op_name(n.op) +
                             "' at node " + std::to_string(v.id),
                         v.id);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  Var v = push(std::move(n));
  check_finite(v);
  return v;
}

Var Tape::emit_unary(Op op, Var x) {
  const Tensor& xv = node(x).value;
  Node n;
  n.op = op;
  n.in0 = x.id;
  n.needs_grad = node(x).needs_grad;
  switch (op) {
    case Op::kTanh: {
      // tanh through the vectorized exp kernel: 1 - 2/(e^{2x}+1). Stays
      // within a couple of ULP of std::tanh and clamps strictly inside
      // (-1, 1); for |x| > ~19 the rounded double would land exactly on the
      // boundary.
      constexpr double bound = 1.0 - 1e-16;
      Tensor out(xv.shape());
      out.array() =
          (1.0 - 2.0 / ((2.0 * xv.array()).exp() + 1.0)).min(bound).max(-bound);
      n.value = std::move(out);
      break;
    }
    case Op::kRelu: {
      Tensor out(xv.shape());
      out.array() = xv.array().max(0.0);
      n.value = std::move(out);
      break;
    }
    case Op::kElu: {
      Tensor out(xv.shape());
      out.array() = (xv.array() >= 0.0).select(xv.array(), xv.array().exp() - 1.0);
      n.value = std::move(out);
      break;
    }
    case Op::kSoftplus: {
      // log1p(exp(x)) with the standard overflow-safe split; floored at the
      // smallest normal so the mapped value stays strictly positive.
      Tensor out(xv.shape());
      out.array() = (xv.array().max(0.0) + (-xv.array().abs()).exp().log1p())
                        .max(std::numeric_limits<double>::min());
      n.value = std::move(out);
      break;
    }
    case Op::kReciprocal: {
      Tensor out(xv.shape());
      out.array() = xv.array().inverse();
      n.value = std::move(out);
      break;
    }
    case Op::kSum: {
      n.value = Tensor::scalar(xv.array().sum());
      break;
    }
    case Op::kMean: {
      if (xv.size() == 0) throw std::invalid_argument("mean: empty tensor");
      n.value = Tensor::scalar(xv.array().mean());
      break;
    }
    default:
      throw std::invalid_argument("emit_unary: bad op");
  }
  Var v = push(std::move(n));
  if (op == Op::kReciprocal || op == Op::kSum || op == Op::kMean) check_finite(v);
  return v;
}

Var Tape::emit_binary(Op op, Var a, Var b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  Node n;
  n.op = op;
  n.in0 = a.id;
  n.in1 = b.id;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  switch (op) {
    case Op::kMatmul: {
      if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
        throw std::invalid_argument("matmul: shape mismatch " + av.shape_str() + " * " +
                                    bv.shape_str());
      Tensor out({av.rows(), bv.cols()});
      out.mat().noalias() = av.mat() * bv.mat();
      n.value = std::move(out);
      break;
    }
    case Op::kAdd: {
      if (av.same_shape(bv)) {
        Tensor out(av.shape());
        out.array() = av.array() + bv.array();
        n.value = std::move(out);
      } else if (bv.rank() == 1 && av.rank() == 2 && av.cols() == bv.cols()) {
        // bias broadcast over rows
        Tensor out(av.shape());
        out.mat() = av.mat().rowwise() + bv.mat().row(0);
        n.value = std::move(out);
      } else {
        throw std::invalid_argument("add: shape mismatch " + av.shape_str() + " + " +
                                    bv.shape_str());
      }
      break;
    }
    case Op::kMul: {
      if (!av.same_shape(bv))
        throw std::invalid_argument("mul: shape mismatch " + av.shape_str() + " * " +
                                    bv.shape_str());
      Tensor out(av.shape());
      out.array() = av.array() * bv.array();
      n.value = std::move(out);
      break;
    }
    case Op::kSqErr: {
      if (!av.same_shape(bv))
        throw std::invalid_argument("squared_error: shape mismatch " + av.shape_str() + " vs " +
                                    bv.shape_str());
      Tensor out(av.shape());
      out.array() = (av.array() - bv.array()).square();
      n.value = std::move(out);
      break;
    }
    default:
      throw std::invalid_argument("emit_binary: bad op");
  }
  Var v = push(std::move(n));
  check_finite(v);
  return v;
}

Var Tape::emit_scale(Var x, double c) {
  const Tensor& xv = node(x).value;
  Node n;
  n.op = Op::kScale;
  n.in0 = x.id;
  n.aux_scalar = c;
  n.needs_grad = node(x).needs_grad;
  Tensor out(xv.shape());
  out.array() = xv.array() * c;
  n.value = std::move(out);
  Var v = push(std::move(n));
  check_finite(v);
  return v;
}

Var Tape::emit_concat_cols(Var a, Var b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows())
    throw std::invalid_argument("concat_cols: shape mismatch " + av.shape_str() + " | " +
                                bv.shape_str());
  Node n;
  n.op = Op::kConcatCols;
  n.in0 = a.id;
  n.in1 = b.id;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  Tensor out({av.rows(), av.cols() + bv.cols()});
  out.mat().leftCols(av.cols()) = av.mat();
  out.mat().rightCols(bv.cols()) = bv.mat();
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::emit_slice_cols(Var x, Index begin, Index len) {
  const Tensor& xv = node(x).value;
  if (xv.rank() != 2 || begin < 0 || len < 0 || begin + len > xv.cols())
    throw std::invalid_argument("slice_cols: out of range on " + xv.shape_str());
  Node n;
  n.op = Op::kSliceCols;
  n.in0 = x.id;
  n.aux = {begin, len};
  n.needs_grad = node(x).needs_grad;
  Tensor out({xv.rows(), len});
  out.mat() = xv.mat().middleCols(begin, len);
  n.value = std::move(out);
  return push(std::move(n));  // subset of finite input, no check needed
}

Var Tape::emit_gather_rows(Var x, std::vector<std::int32_t> rows) {
  const Tensor& xv = node(x).value;
  if (xv.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 input required");
  for (std::int32_t r : rows)
    if (r < 0 || r >= xv.rows()) throw std::invalid_argument("gather_rows: row out of range");
  Node n;
  n.op = Op::kGatherRows;
  n.in0 = x.id;
  n.needs_grad = node(x).needs_grad;
  Tensor out({static_cast<Index>(rows.size()), xv.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.mat().row(static_cast<Index>(i)) = xv.mat().row(rows[i]);
  n.aux_idx = std::move(rows);
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::emit_scatter_sum_rows(Var x, std::vector<std::int32_t> dest, Index out_rows) {
  const Tensor& xv = node(x).value;
  if (xv.rank() != 2 || static_cast<Index>(dest.size()) != xv.rows())
    throw std::invalid_argument("scatter_sum_rows: index/input mismatch");
  for (std::int32_t d : dest)
    if (d < 0 || d >= out_rows) throw std::invalid_argument("scatter_sum_rows: dest out of range");
  Node n;
  n.op = Op::kScatterSumRows;
  n.in0 = x.id;
  n.needs_grad = node(x).needs_grad;
  n.aux = {out_rows};
  Tensor out({out_rows, xv.cols()});
  for (std::size_t i = 0; i < dest.size(); ++i)
    out.mat().row(dest[i]) += xv.mat().row(static_cast<Index>(i));
  n.aux_idx = std::move(dest);
  n.value = std::move(out);
  Var v = push(std::move(n));
  check_finite(v);
  return v;
}

Var Tape::emit_reshape(Var x, std::vector<Index> shape) {
  const Tensor& xv = node(x).value;
  Index count = shape.empty() ? 0 : 1;
  for (Index d : shape) count *= d;
  if (count != xv.size())
    throw std::invalid_argument("reshape: element count mismatch");
  Node n;
  n.op = Op::kReshape;
  n.in0 = x.id;
  n.needs_grad = node(x).needs_grad;
  n.value = Tensor(std::move(shape), AlignedBuffer(xv.data(), xv.data() + xv.size()));
  return push(std::move(n));
}

Var Tape::emit_linear(Var x, Var w, Var b, int activation) {
  const Tensor& xv = node(x).value;
  const Tensor& wv = node(w).value;
  const Tensor& bv = node(b).value;
  if (xv.rank() != 2 || wv.rank() != 2 || xv.cols() != wv.rows() || bv.rank() != 1 ||
      bv.cols() != wv.cols())
    throw std::invalid_argument("linear: shape mismatch " + xv.shape_str() + " * " +
                                wv.shape_str() + " + " + bv.shape_str());
  Node n;
  n.op = Op::kLinear;
  n.in0 = x.id;
  n.in1 = w.id;
  n.in2 = b.id;
  n.aux = {activation};
  n.needs_grad = node(x).needs_grad || node(w).needs_grad || node(b).needs_grad;
  Tensor out({xv.rows(), wv.cols()});
  out.mat().noalias() = xv.mat() * wv.mat();
  out.mat().rowwise() += bv.mat().row(0);
  switch (activation) {
    case 0:
      break;
    case 1: {
      constexpr double bound = 1.0 - 1e-16;
      out.array() = (1.0 - 2.0 / ((2.0 * out.array()).exp() + 1.0)).min(bound).max(-bound);
      break;
    }
    case 2:
      out.array() = out.array().max(0.0);
      break;
    case 3:
      out.array() = (out.array() >= 0.0).select(out.array(), out.array().exp() - 1.0);
      break;
    default:
      throw std::invalid_argument("linear: bad activation code");
  }
  n.value = std::move(out);
  Var v = push(std::move(n));
  if (activation != 1) check_finite(v);  // everything but tanh is unbounded above
  return v;
}

Tensor& Tape::grad_slot(std::int32_t id, const Tensor& like) {
  Tensor& g = grads_[static_cast<std::size_t>(id)];
  if (g.shape() != like.shape()) g = Tensor::zeros(like.shape());
  return g;
}

const Tensor& Tape::grad(Var v) {
  if (grads_.size() != nodes_.size())
    throw std::logic_error("Tape::grad: backward() has not run");
  return grad_slot(v.id, node(v).value);
}

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + ln.value.shape_str());

  grads_.clear();
  grads_.resize(nodes_.size());
  grad_slot(loss.id, ln.value)[0] = 1.0;

  for (std::int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    Tensor& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty() || !n.needs_grad || n.op == Op::kLeaf) continue;

    Node& a = nodes_[static_cast<std::size_t>(n.in0)];
    const bool need_a = a.needs_grad;
    switch (n.op) {
      case Op::kMatmul: {
        Node& b = nodes_[static_cast<std::size_t>(n.in1)];
        if (need_a) grad_slot(n.in0, a.value).mat().noalias() += g.mat() * b.value.mat().transpose();
        if (b.needs_grad)
          grad_slot(n.in1, b.value).mat().noalias() += a.value.mat().transpose() * g.mat();
        break;
      }
      case Op::kAdd: {
        Node& b = nodes_[static_cast<std::size_t>(n.in1)];
        if (need_a) grad_slot(n.in0, a.value).array() += g.array();
        if (b.needs_grad) {
          Tensor& gb = grad_slot(n.in1, b.value);
          if (b.value.same_shape(n.value)) {
            gb.array() += g.array();
          } else {
            gb.mat().row(0) += g.mat().colwise().sum();  // bias broadcast
          }
        }
        break;
      }
      case Op::kMul: {
        Node& b = nodes_[static_cast<std::size_t>(n.in1)];
        if (need_a) grad_slot(n.in0, a.value).array() += g.array() * b.value.array();
        if (b.needs_grad) grad_slot(n.in1, b.value).array() += g.array() * a.value.array();
        break;
      }
      case Op::kScale: {
        if (need_a) grad_slot(n.in0, a.value).array() += g.array() * n.aux_scalar;
        break;
      }
      case Op::kTanh: {
        if (need_a)
          grad_slot(n.in0, a.value).array() += g.array() * (1.0 - n.value.array().square());
        break;
      }
      case Op::kRelu: {
        if (need_a)
          grad_slot(n.in0, a.value).array() +=
              g.array() * (a.value.array() > 0.0).cast<double>();
        break;
      }
      case Op::kElu: {
        if (need_a)
          grad_slot(n.in0, a.value).array() +=
              g.array() *
              (a.value.array() >= 0.0).select(Eigen::ArrayXd::Ones(a.value.size()),
                                              n.value.array() + 1.0);
        break;
      }
      case Op::kSoftplus: {
        if (need_a)
          grad_slot(n.in0, a.value).array() +=
              g.array() / (1.0 + (-a.value.array()).exp());
        break;
      }
      case Op::kReciprocal: {
        if (need_a)
          grad_slot(n.in0, a.value).array() -= g.array() * n.value.array().square();
        break;
      }
      case Op::kSum: {
        if (need_a) grad_slot(n.in0, a.value).array() += g[0];
        break;
      }
      case Op::kMean: {
        if (need_a)
          grad_slot(n.in0, a.value).array() += g[0] / static_cast<double>(a.value.size());
        break;
      }
      case Op::kConcatCols: {
        Node& b = nodes_[static_cast<std::size_t>(n.in1)];
        if (need_a) grad_slot(n.in0, a.value).mat() += g.mat().leftCols(a.value.cols());
        if (b.needs_grad)
          grad_slot(n.in1, b.value).mat() += g.mat().rightCols(b.value.cols());
        break;
      }
      case Op::kSliceCols: {
        if (need_a)
          grad_slot(n.in0, a.value).mat().middleCols(n.aux[0], n.aux[1]) += g.mat();
        break;
      }
      case Op::kGatherRows: {
        if (need_a) {
          Tensor& ga = grad_slot(n.in0, a.value);
          for (std::size_t i = 0; i < n.aux_idx.size(); ++i)
            ga.mat().row(n.aux_idx[i]) += g.mat().row(static_cast<Index>(i));
        }
        break;
      }
      case Op::kScatterSumRows: {
        if (need_a) {
          Tensor& ga = grad_slot(n.in0, a.value);
          for (std::size_t i = 0; i < n.aux_idx.size(); ++i)
            ga.mat().row(static_cast<Index>(i)) += g.mat().row(n.aux_idx[i]);
        }
        break;
      }
      case Op::kSqErr: {
        Node& b = nodes_[static_cast<std::size_t>(n.in1)];
        if (need_a)
          grad_slot(n.in0, a.value).array() +=
              g.array() * 2.0 * (a.value.array() - b.value.array());
        if (b.needs_grad)
          grad_slot(n.in1, b.value).array() -=
              g.array() * 2.0 * (a.value.array() - b.value.array());
        break;
      }
      case Op::kReshape: {
        if (need_a) grad_slot(n.in0, a.value).array() += g.array();
        break;
      }
      case Op::kLinear: {
        Node& w = nodes_[static_cast<std::size_t>(n.in1)];
        Node& b = nodes_[static_cast<std::size_t>(n.in2)];
        // activation derivative recovered from the output
        Tensor dz(n.value.shape());
        switch (n.aux[0]) {
          case 0:
            dz.array() = g.array();
            break;
          case 1:
            dz.array() = g.array() * (1.0 - n.value.array().square());
            break;
          case 2:
            dz.array() = g.array() * (n.value.array() > 0.0).cast<double>();
            break;
          case 3:
            dz.array() = g.array() * (n.value.array() >= 0.0)
                                         .select(Eigen::ArrayXd::Ones(n.value.size()),
                                                 n.value.array() + 1.0);
            break;
        }
        if (need_a) grad_slot(n.in0, a.value).mat().noalias() += dz.mat() * w.value.mat().transpose();
        if (w.needs_grad)
          grad_slot(n.in1, w.value).mat().noalias() += a.value.mat().transpose() * dz.mat();
        if (b.needs_grad) grad_slot(n.in2, b.value).mat().row(0) += dz.mat().colwise().sum();
        break;
      }
      case Op::kLeaf:
        break;
    }
  }
}

// ---- free functions ---------------------------------------------------------

Var matmul(Tape& t, Var a, Var b) { return t.emit_binary(Op::kMatmul, a, b); }
Var add(Tape& t, Var a, Var b) { return t.emit_binary(Op::kAdd, a, b); }
Var sub(Tape& t, Var a, Var b) { return t.emit_binary(Op::kAdd, a, t.emit_scale(b, -1.0)); }
Var mul(Tape& t, Var a, Var b) { return t.emit_binary(Op::kMul, a, b); }
Var scale(Tape& t, Var x, double c) { return t.emit_scale(x, c); }
Var tanh(Tape& t, Var x) { return t.emit_unary(Op::kTanh, x); }
Var relu(Tape& t, Var x) { return t.emit_unary(Op::kRelu, x); }
Var elu(Tape& t, Var x) { return t.emit_unary(Op::kElu, x); }
Var softplus(Tape& t, Var x) { return t.emit_unary(Op::kSoftplus, x); }
Var reciprocal(Tape& t, Var x) { return t.emit_unary(Op::kReciprocal, x); }
Var sum(Tape& t, Var x) { return t.emit_unary(Op::kSum, x); }
Var mean(Tape& t, Var x) { return t.emit_unary(Op::kMean, x); }
Var concat_cols(Tape& t, Var a, Var b) { return t.emit_concat_cols(a, b); }
Var slice_cols(Tape& t, Var x, Index begin, Index len) {
  return t.emit_slice_cols(x, begin, len);
}
Var gather_rows(Tape& t, Var x, std::vector<std::int32_t> rows) {
  return t.emit_gather_rows(x, std::move(rows));
}
Var scatter_sum_rows(Tape& t, Var x, std::vector<std::int32_t> dest, Index out_rows) {
  return t.emit_scatter_sum_rows(x, std::move(dest), out_rows);
}
Var squared_error(Tape& t, Var a, Var b) { return t.emit_binary(Op::kSqErr, a, b); }
Var reshape(Tape& t, Var x, std::vector<Index> shape) {
  return t.emit_reshape(x, std::move(shape));
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "elu") return Activation::kElu;
  throw std::invalid_argument("unknown activation: " + name);
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kElu: return "elu";
  }
  return "?";
}

Var activation_forward(Tape& t, Var x, Activation kind) {
  switch (kind) {
    case Activation::kTanh: return tanh(t, x);
    case Activation::kRelu: return relu(t, x);
    case Activation::kElu: return elu(t, x);
  }
  throw std::invalid_argument("activation_forward: bad kind");
}

Var linear_forward(Tape& t, Var x, Var w, Var b) { return t.emit_linear(x, w, b, 0); }

Var linear_activated(Tape& t, Var x, Var w, Var b, Activation kind) {
  switch (kind) {
    case Activation::kTanh: return t.emit_linear(x, w, b, 1);
    case Activation::kRelu: return t.emit_linear(x, w, b, 2);
    case Activation::kElu: return t.emit_linear(x, w, b, 3);
  }
  throw std::invalid_argument("linear_activated: bad kind");
}

}  // namespace binn::ad
