#pragma once

// Reverse-mode differentiation over a closed, enumerated set of tensor ops.
//
// Every policy and loss in the library is composed from the ops on Graph.
// Each op records its value and a hand-derived adjoint; Graph::backward
// replays the tape in reverse. Ops are 2-D unless stated (rank-1 tensors are
// single rows).

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "upa/tensor.hpp"

namespace upa::ad {

enum class OpKind {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kAddRow,
  kMatMul,
  kTranspose,
  kTanh,
  kRelu,
  kAbs,
  kExp,
  kLog,
  kSoftmax,
  kLayerNorm,
  kRowNormalize,
  kRowSum,
  kSum,
  kMean,
  kColMean,
  kMaxRows,
  kLogSumExpRows,
  kL2NormalizeRows,
  kConcatCols,
  kConcatRows,
  kSliceRows,
  kSliceCols,
  kSelectRows,
  kGather,
  kMaskMul,
  kReshape,
};

std::string_view op_name(OpKind kind);

struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor value);
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward() root w.r.t. v. Zero tensor if v was not reached.
  Tensor grad(Var v) const;

  // Parameter-free ops addressed by name; throws UnsupportedOperation otherwise.
  Var op(std::string_view name, std::span<const Var> args);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var add_row(Var a, Var row);  // broadcast a 1xC row over every row of a
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var abs(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var softmax_rows(Var a);
  Var layer_norm_rows(Var a, double eps = 1e-5);
  Var row_normalize(Var a);  // divide each row by its sum
  Var row_sum(Var a);        // R x 1
  Var sum(Var a);            // 1-element
  Var mean(Var a);
  Var col_mean(Var a);  // 1 x C, mean over rows
  Var max_rows(Var a);  // R x 1, subgradient routed to the first argmax
  Var logsumexp_rows(Var a);
  Var l2_normalize_rows(Var a);
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var select_rows(Var a, std::span<const std::size_t> rows);
  // out[i] = src[index[i]] (flat), or 0 where index[i] < 0.
  Var gather(Var src, std::span<const long> index, std::vector<std::size_t> out_shape);
  Var mask_mul(Var a, const Tensor& mask);
  Var reshape(Var a, std::vector<std::size_t> shape);

  void backward(Var root);

 private:
  struct Node;
  using Backward = std::function<void(Graph&, const Node&, const Tensor&)>;
  struct Node {
    OpKind kind;
    Tensor value;
    std::vector<Var> inputs;
    Backward backward;
    bool requires_grad = false;
  };

  Var push(OpKind kind, Tensor value, std::vector<Var> inputs, Backward fn);
  Tensor& grad_ref(Var v);

  std::deque<Node> nodes_;  // deque: references to values stay valid while the tape grows
  std::vector<Tensor> grads_;
};

using NamedTensors = std::map<std::string, Tensor>;
using NamedVars = std::map<std::string, Var>;
using Program = std::function<Var(Graph&, const NamedVars&)>;

struct ValueAndGrad {
  double value = 0.0;
  NamedTensors grads;
};

ValueAndGrad value_and_grad(const Program& program, const NamedTensors& inputs,
                            const std::set<std::string>& wrt);

struct GradReport {
  NamedTensors analytic;
  NamedTensors numeric;
  double max_rel_err = 0.0;
};

// Central differences (f(x+h) - f(x-h)) / 2h for every coordinate in wrt.
GradReport check_gradient(const Program& program, const NamedTensors& inputs,
                          const std::set<std::string>& wrt, double step = 1e-5);

namespace testing {

// Corrupts the adjoint of one op kind by a constant factor while alive.
// Only used to prove the gradient checker catches a wrong backward pass.
class ScopedAdjointFault {
 public:
  ScopedAdjointFault(OpKind kind, double factor);
  ~ScopedAdjointFault();
  ScopedAdjointFault(const ScopedAdjointFault&) = delete;
  ScopedAdjointFault& operator=(const ScopedAdjointFault&) = delete;
};

}  // namespace testing

}  // namespace upa::ad
