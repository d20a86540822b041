#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "binn/tensor.hpp"

namespace binn::ad {

/// Thrown when a forward op produces NaN/Inf. Carries the offending node.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, std::int32_t node_id)
      : std::runtime_error(what), node_id_(node_id) {}
  std::int32_t node_id() const { return node_id_; }

 private:
  std::int32_t node_id_;
};

enum class Op : std::uint8_t {
  kLeaf,
  kMatmul,
  kAdd,        // same shape, or rank-1 bias broadcast over rows
  kMul,        // elementwise, same shape
  kScale,      // multiply by a compile-time scalar (aux_scalar)
  kTanh,
  kRelu,
  kElu,
  kSoftplus,
  kReciprocal,
  kSum,        // reduce all elements to [1]
  kMean,       // reduce all elements to [1]
  kConcatCols,
  kSliceCols,  // aux: begin, len
  kGatherRows,   // aux_idx: source row per output row
  kScatterSumRows,  // aux_idx: destination row per input row; aux[0]: out rows
  kSqErr,      // elementwise (a-b)^2
  kReshape,
  kLinear,     // x*W + b (optionally fused with an activation; aux[0])
};

const char* op_name(Op op);

/// Handle to a node on a Tape.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Recorded computation graph for reverse-mode differentiation.
///
/// Nodes are appended in topological order by construction; backward() walks
/// them in reverse, accumulating (never overwriting) gradients at fan-out.
/// Every forward op checks its result for NaN/Inf and throws NonFiniteError
/// naming the node, which aborts the surrounding step.
class Tape {
 public:
  struct Node {
    Op op;
    std::int32_t in0 = -1, in1 = -1, in2 = -1;
    Tensor value;
    std::vector<Index> aux;
    std::vector<std::int32_t> aux_idx;
    double aux_scalar = 0.0;
    bool needs_grad = false;
  };

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return node(v).value; }

  /// Gradient of the last backward() loss w.r.t. node v. Zero for nodes not
  /// on any path to the loss.
  const Tensor& grad(Var v);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(Var v) const;

  /// Reverse sweep from a scalar loss node. Gradient buffers are reset first.
  void backward(Var loss);

  // Primitive builders. Free-function wrappers below are the public surface.
  Var emit_unary(Op op, Var x);
  Var emit_binary(Op op, Var a, Var b);
  Var emit_scale(Var x, double c);
  Var emit_concat_cols(Var a, Var b);
  Var emit_slice_cols(Var x, Index begin, Index len);
  Var emit_gather_rows(Var x, std::vector<std::int32_t> rows);
  Var emit_scatter_sum_rows(Var x, std::vector<std::int32_t> dest, Index out_rows);
  Var emit_reshape(Var x, std::vector<Index> shape);
  Var emit_linear(Var x, Var w, Var b, int activation);  // 0 none, 1 tanh, 2 relu, 3 elu

 private:
  Var push(Node&& n);
  void check_finite(Var v);
  Tensor& grad_slot(std::int32_t id, const Tensor& like);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// ---- expression-style free functions ---------------------------------------

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var x, double c);
Var tanh(Tape& t, Var x);
Var relu(Tape& t, Var x);
Var elu(Tape& t, Var x);
Var softplus(Tape& t, Var x);
Var reciprocal(Tape& t, Var x);
Var sum(Tape& t, Var x);
Var mean(Tape& t, Var x);
Var concat_cols(Tape& t, Var a, Var b);
Var slice_cols(Tape& t, Var x, Index begin, Index len);
Var gather_rows(Tape& t, Var x, std::vector<std::int32_t> rows);
Var scatter_sum_rows(Tape& t, Var x, std::vector<std::int32_t> dest, Index out_rows);
Var squared_error(Tape& t, Var a, Var b);
Var reshape(Tape& t, Var x, std::vector<Index> shape);

enum class Activation { kTanh, kRelu, kElu };

Activation activation_from_string(const std::string& name);
const char* activation_name(Activation a);

/// Elementwise activation of the given kind.
Var activation_forward(Tape& t, Var x, Activation kind);

/// x[n×in] * W[in×out] + b[out] with b broadcast over rows.
Var linear_forward(Tape& t, Var x, Var w, Var b);

/// Linear layer with the activation fused into the same node.
Var linear_activated(Tape& t, Var x, Var w, Var b, Activation kind);

}  // namespace binn::ad
