#include "upa/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

#include "upa/errors.hpp"

namespace upa::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
MutMap as_mat(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

std::atomic<int> g_fault_kind{-1};
std::atomic<double> g_fault_factor{1.0};

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
}


}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "input";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kTanh: return "tanh";
    case OpKind::kRelu: return "relu";
    case OpKind::kAbs: return "abs";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kRowNormalize: return "row_normalize";
    case OpKind::kRowSum: return "row_sum";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kColMean: return "col_mean";
    case OpKind::kMaxRows: return "max_rows";
    case OpKind::kLogSumExpRows: return "logsumexp";
    case OpKind::kL2NormalizeRows: return "l2_normalize";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kSelectRows: return "select_rows";
    case OpKind::kGather: return "gather";
    case OpKind::kMaskMul: return "mask_mul";
    case OpKind::kReshape: return "reshape";
  }
  return "unknown";
}

Var Graph::push(OpKind kind, Tensor value, std::vector<Var> inputs, Backward fn) {
  bool needs = false;
  for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
  Var out{nodes_.size()};
  nodes_.push_back(Node{kind, std::move(value), std::move(inputs), needs ? std::move(fn) : Backward{}, needs});
  return out;
}

Var Graph::input(Tensor value) {
  Var out{nodes_.size()};
  nodes_.push_back(Node{OpKind::kLeaf, std::move(value), {}, {}, true});
  return out;
}

Var Graph::constant(Tensor value) {
  Var out{nodes_.size()};
  nodes_.push_back(Node{OpKind::kConstant, std::move(value), {}, {}, false});
  return out;
}

double Graph::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) throw std::invalid_argument("scalar() on tensor of shape " + shape_string(t.shape()));
  return t[0];
}

Tensor Graph::grad(Var v) const {
  if (v.id < grads_.size() && grads_[v.id].size() > 0) return grads_[v.id];
  return Tensor(value(v).shape());
}

Tensor& Graph::grad_ref(Var v) {
  Tensor& g = grads_[v.id];
  if (g.size() == 0) g = Tensor(nodes_[v.id].value.shape());
  return g;
}

void Graph::backward(Var root) {
  if (value(root).size() != 1)
    throw std::invalid_argument("backward root must be scalar, got shape " + shape_string(value(root).shape()));
  grads_.assign(nodes_.size(), Tensor());
  grads_[root.id] = Tensor(value(root).shape(), 1.0);
  const int fault = g_fault_kind.load();
  const double factor = g_fault_factor.load();
  for (std::size_t i = root.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.backward || grads_[i].size() == 0) continue;
    if (fault >= 0 && static_cast<int>(node.kind) == fault) {
      Tensor scaled = factor * grads_[i];
      node.backward(*this, node, scaled);
    } else {
      node.backward(*this, node, grads_[i]);
    }
  }
}

Var Graph::op(std::string_view name, std::span<const Var> args) {
  auto unary = [&](auto fn) {
    if (args.size() != 1) throw std::invalid_argument(std::string(name) + " expects 1 argument");
    return fn(args[0]);
  };
  auto binary = [&](auto fn) {
    if (args.size() != 2) throw std::invalid_argument(std::string(name) + " expects 2 arguments");
    return fn(args[0], args[1]);
  };
  if (name == "add") return binary([&](Var a, Var b) { return add(a, b); });
  if (name == "sub") return binary([&](Var a, Var b) { return sub(a, b); });
  if (name == "mul") return binary([&](Var a, Var b) { return mul(a, b); });
  if (name == "matmul") return binary([&](Var a, Var b) { return matmul(a, b); });
  if (name == "add_row") return binary([&](Var a, Var b) { return add_row(a, b); });
  if (name == "transpose") return unary([&](Var a) { return transpose(a); });
  if (name == "tanh") return unary([&](Var a) { return tanh(a); });
  if (name == "relu") return unary([&](Var a) { return relu(a); });
  if (name == "abs") return unary([&](Var a) { return abs(a); });
  if (name == "exp") return unary([&](Var a) { return exp(a); });
  if (name == "log") return unary([&](Var a) { return log(a); });
  if (name == "softmax") return unary([&](Var a) { return softmax_rows(a); });
  if (name == "layer_norm") return unary([&](Var a) { return layer_norm_rows(a); });
  if (name == "row_normalize") return unary([&](Var a) { return row_normalize(a); });
  if (name == "row_sum") return unary([&](Var a) { return row_sum(a); });
  if (name == "sum") return unary([&](Var a) { return sum(a); });
  if (name == "mean") return unary([&](Var a) { return mean(a); });
  if (name == "col_mean") return unary([&](Var a) { return col_mean(a); });
  if (name == "max_rows") return unary([&](Var a) { return max_rows(a); });
  if (name == "logsumexp") return unary([&](Var a) { return logsumexp_rows(a); });
  if (name == "l2_normalize") return unary([&](Var a) { return l2_normalize_rows(a); });
  if (name == "concat_cols") return concat_cols(args);
  if (name == "concat_rows") return concat_rows(args);
  throw UnsupportedOperation(std::string(name));
}

Var Graph::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  return push(OpKind::kAdd, value(a) + value(b), {a, b}, [](Graph& g, const Node& n, const Tensor& go) {
    for (Var in : n.inputs)
      if (g.requires_grad(in)) {
        Tensor& gi = g.grad_ref(in);
        for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
      }
  });
}

Var Graph::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  return push(OpKind::kSub, value(a) - value(b), {a, b}, [](Graph& g, const Node& n, const Tensor& go) {
    if (g.requires_grad(n.inputs[0])) {
      Tensor& gi = g.grad_ref(n.inputs[0]);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    }
    if (g.requires_grad(n.inputs[1])) {
      Tensor& gi = g.grad_ref(n.inputs[1]);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] -= go[i];
    }
  });
}

Var Graph::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Tensor out = value(a);
  const Tensor& vb = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return push(OpKind::kMul, std::move(out), {a, b}, [](Graph& g, const Node& n, const Tensor& go) {
    const Tensor& va = g.value(n.inputs[0]);
    const Tensor& vb = g.value(n.inputs[1]);
    if (g.requires_grad(n.inputs[0])) {
      Tensor& gi = g.grad_ref(n.inputs[0]);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * vb[i];
    }
    if (g.requires_grad(n.inputs[1])) {
      Tensor& gi = g.grad_ref(n.inputs[1]);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * va[i];
    }
  });
}

Var Graph::scale(Var a, double s) {
  return push(OpKind::kScale, s * value(a), {a}, [s](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += s * go[i];
  });
}

Var Graph::add_scalar(Var a, double s) {
  Tensor out = value(a);
  for (auto& v : out.values()) v += s;
  return push(OpKind::kAddScalar, std::move(out), {a}, [](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
  });
}

Var Graph::add_row(Var a, Var row) {
  const Tensor& va = value(a);
  const Tensor& vr = value(row);
  if (vr.size() != va.cols())
    throw std::invalid_argument("add_row: row length " + std::to_string(vr.size()) + " != cols " +
                                std::to_string(va.cols()));
  Tensor out = va;
  const std::size_t r = va.rows(), c = va.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += vr[j];
  return push(OpKind::kAddRow, std::move(out), {a, row}, [r, c](Graph& g, const Node& n, const Tensor& go) {
    if (g.requires_grad(n.inputs[0])) {
      Tensor& gi = g.grad_ref(n.inputs[0]);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    }
    if (g.requires_grad(n.inputs[1])) {
      Tensor& gi = g.grad_ref(n.inputs[1]);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gi[j] += go[i * c + j];
    }
  });
}

Var Graph::matmul(Var a, Var b) {
  Tensor out = upa::matmul(value(a), value(b));
  return push(OpKind::kMatMul, std::move(out), {a, b}, [](Graph& g, const Node& n, const Tensor& go) {
    const Tensor& va = g.value(n.inputs[0]);
    const Tensor& vb = g.value(n.inputs[1]);
    if (g.requires_grad(n.inputs[0])) as_mat(g.grad_ref(n.inputs[0])).noalias() += as_mat(go) * as_mat(vb).transpose();
    if (g.requires_grad(n.inputs[1])) as_mat(g.grad_ref(n.inputs[1])).noalias() += as_mat(va).transpose() * as_mat(go);
  });
}

Var Graph::transpose(Var a) {
  return push(OpKind::kTranspose, value(a).transposed(), {a}, [](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    as_mat(gi) += as_mat(go).transpose();
  });
}

Var Graph::tanh(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values()) v = std::tanh(v);
  return push(OpKind::kTanh, std::move(out), {a}, [](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * (1.0 - n.value[i] * n.value[i]);
  });
}

Var Graph::relu(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return push(OpKind::kRelu, std::move(out), {a}, [](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    const Tensor& x = g.value(n.inputs[0]);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (x[i] > 0.0) gi[i] += go[i];
  });
}

Var Graph::abs(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values()) v = std::abs(v);
  return push(OpKind::kAbs, std::move(out), {a}, [](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    const Tensor& x = g.value(n.inputs[0]);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * ((x[i] > 0.0) - (x[i] < 0.0));
  });
}

Var Graph::exp(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values()) v = std::exp(v);
  return push(OpKind::kExp, std::move(out), {a}, [](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * n.value[i];
  });
}

Var Graph::log(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values()) {
    if (!(v > 0.0)) throw std::domain_error("log of non-positive value");
    v = std::log(v);
  }
  return push(OpKind::kLog, std::move(out), {a}, [](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    const Tensor& x = g.value(n.inputs[0]);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] / x[i];
  });
}

Var Graph::softmax_rows(Var a) {
  const Tensor& x = value(a);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < r; ++i) {
    double m = x[i * c];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, x[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (out[i * c + j] = std::exp(x[i * c + j] - m));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
  }
  return push(OpKind::kSoftmax, std::move(out), {a}, [r, c](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    const Tensor& y = n.value;
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += y[i * c + j] * (go[i * c + j] - dot);
    }
  });
}

Var Graph::layer_norm_rows(Var a, double eps) {
  const Tensor& x = value(a);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(x.shape());
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += x[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (x[i * c + j] - mu) * (x[i * c + j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (x[i * c + j] - mu) * inv_std[i];
  }
  return push(OpKind::kLayerNorm, std::move(out), {a},
              [r, c, inv_std = std::move(inv_std)](Graph& g, const Node& n, const Tensor& go) {
                Tensor& gi = g.grad_ref(n.inputs[0]);
                const Tensor& y = n.value;
                const double cn = static_cast<double>(c);
                for (std::size_t i = 0; i < r; ++i) {
                  double mg = 0.0, mgy = 0.0;
                  for (std::size_t j = 0; j < c; ++j) {
                    mg += go[i * c + j];
                    mgy += go[i * c + j] * y[i * c + j];
                  }
                  mg /= cn;
                  mgy /= cn;
                  for (std::size_t j = 0; j < c; ++j)
                    gi[i * c + j] += inv_std[i] * (go[i * c + j] - mg - y[i * c + j] * mgy);
                }
              });
}

Var Graph::row_normalize(Var a) {
  const Tensor& x = value(a);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(x.shape());
  std::vector<double> sums(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) sums[i] += x[i * c + j];
    if (sums[i] == 0.0) throw std::domain_error("row_normalize: zero row sum");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / sums[i];
  }
  return push(OpKind::kRowNormalize, std::move(out), {a},
              [r, c, sums = std::move(sums)](Graph& g, const Node& n, const Tensor& go) {
                Tensor& gi = g.grad_ref(n.inputs[0]);
                const Tensor& y = n.value;
                for (std::size_t i = 0; i < r; ++i) {
                  double dot = 0.0;
                  for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * y[i * c + j];
                  for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += (go[i * c + j] - dot) / sums[i];
                }
              });
}

Var Graph::row_sum(Var a) {
  const Tensor& x = value(a);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out({r, 1});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += x[i * c + j];
  return push(OpKind::kRowSum, std::move(out), {a}, [r, c](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += go[i];
  });
}

Var Graph::sum(Var a) {
  return push(OpKind::kSum, Tensor::scalar(value(a).sum()), {a}, [](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (auto& v : gi.values()) v += go[0];
  });
}

Var Graph::mean(Var a) {
  const double count = static_cast<double>(value(a).size());
  return push(OpKind::kMean, Tensor::scalar(value(a).sum() / count), {a},
              [count](Graph& g, const Node& n, const Tensor& go) {
                Tensor& gi = g.grad_ref(n.inputs[0]);
                for (auto& v : gi.values()) v += go[0] / count;
              });
}

Var Graph::col_mean(Var a) {
  const Tensor& x = value(a);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out({1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  for (auto& v : out.values()) v /= static_cast<double>(r);
  return push(OpKind::kColMean, std::move(out), {a}, [r, c](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += go[j] / static_cast<double>(r);
  });
}

Var Graph::max_rows(Var a) {
  const Tensor& x = value(a);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out({r, 1});
  std::vector<std::size_t> arg(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 1; j < c; ++j)
      if (x[i * c + j] > x[i * c + arg[i]]) arg[i] = j;
    out[i] = x[i * c + arg[i]];
  }
  return push(OpKind::kMaxRows, std::move(out), {a},
              [c, arg = std::move(arg)](Graph& g, const Node& n, const Tensor& go) {
                Tensor& gi = g.grad_ref(n.inputs[0]);
                for (std::size_t i = 0; i < arg.size(); ++i) gi[i * c + arg[i]] += go[i];
              });
}

Var Graph::logsumexp_rows(Var a) {
  const Tensor& x = value(a);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out({r, 1});
  Tensor soft(x.shape());
  for (std::size_t i = 0; i < r; ++i) {
    double m = x[i * c];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, x[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (soft[i * c + j] = std::exp(x[i * c + j] - m));
    for (std::size_t j = 0; j < c; ++j) soft[i * c + j] /= s;
    out[i] = m + std::log(s);
  }
  return push(OpKind::kLogSumExpRows, std::move(out), {a},
              [r, c, soft = std::move(soft)](Graph& g, const Node& n, const Tensor& go) {
                Tensor& gi = g.grad_ref(n.inputs[0]);
                for (std::size_t i = 0; i < r; ++i)
                  for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += go[i] * soft[i * c + j];
              });
}

Var Graph::l2_normalize_rows(Var a) {
  const Tensor& x = value(a);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(x.shape());
  std::vector<double> norms(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    norms[i] = l2_norm(std::span<const double>(x.data().data() + i * c, c));
    if (norms[i] == 0.0) throw std::domain_error("l2_normalize: zero-norm row");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / norms[i];
  }
  return push(OpKind::kL2NormalizeRows, std::move(out), {a},
              [r, c, norms = std::move(norms)](Graph& g, const Node& n, const Tensor& go) {
                Tensor& gi = g.grad_ref(n.inputs[0]);
                const Tensor& y = n.value;
                for (std::size_t i = 0; i < r; ++i) {
                  double dot = 0.0;
                  for (std::size_t j = 0; j < c; ++j) dot += go[i * c + j] * y[i * c + j];
                  for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += (go[i * c + j] - y[i * c + j] * dot) / norms[i];
                }
              });
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t r = value(parts[0]).rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (Var p : parts) {
    if (value(p).rows() != r) throw std::invalid_argument("concat_cols: row count mismatch");
    offsets.push_back(total);
    total += value(p).cols();
  }
  Tensor out({r, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = value(parts[k]);
    const std::size_t c = v.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * total + offsets[k] + j] = v[i * c + j];
  }
  return push(OpKind::kConcatCols, std::move(out), std::vector<Var>(parts.begin(), parts.end()),
              [r, total, offsets](Graph& g, const Node& n, const Tensor& go) {
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                  if (!g.requires_grad(n.inputs[k])) continue;
                  Tensor& gi = g.grad_ref(n.inputs[k]);
                  const std::size_t c = gi.cols();
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += go[i * total + offsets[k] + j];
                }
              });
}

Var Graph::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t c = value(parts[0]).cols();
  std::size_t total = 0;
  std::vector<double> data;
  for (Var p : parts) {
    const Tensor& v = value(p);
    if (v.cols() != c) throw std::invalid_argument("concat_rows: column count mismatch");
    total += v.rows();
    data.insert(data.end(), v.values().begin(), v.values().end());
  }
  return push(OpKind::kConcatRows, Tensor({total, c}, std::move(data)), std::vector<Var>(parts.begin(), parts.end()),
              [](Graph& g, const Node& n, const Tensor& go) {
                std::size_t offset = 0;
                for (Var in : n.inputs) {
                  const std::size_t len = g.value(in).size();
                  if (g.requires_grad(in)) {
                    Tensor& gi = g.grad_ref(in);
                    for (std::size_t i = 0; i < len; ++i) gi[i] += go[offset + i];
                  }
                  offset += len;
                }
              });
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = value(a);
  if (begin >= end || end > x.rows()) throw std::invalid_argument("slice_rows: bad range");
  const std::size_t c = x.cols();
  Tensor out({end - begin, c},
             std::vector<double>(x.values().begin() + begin * c, x.values().begin() + end * c));
  return push(OpKind::kSliceRows, std::move(out), {a}, [begin, c](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < go.size(); ++i) gi[begin * c + i] += go[i];
  });
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = value(a);
  if (begin >= end || end > x.cols()) throw std::invalid_argument("slice_cols: bad range");
  const std::size_t r = x.rows(), c = x.cols(), w = end - begin;
  Tensor out({r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x[i * c + begin + j];
  return push(OpKind::kSliceCols, std::move(out), {a}, [r, c, w, begin](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) gi[i * c + begin + j] += go[i * w + j];
  });
}

Var Graph::select_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& x = value(a);
  if (rows.empty()) throw std::invalid_argument("select_rows: empty selection");
  const std::size_t c = x.cols();
  Tensor out({rows.size(), c});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= x.rows()) throw std::invalid_argument("select_rows: index out of range");
    for (std::size_t j = 0; j < c; ++j) out[k * c + j] = x[rows[k] * c + j];
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return push(OpKind::kSelectRows, std::move(out), {a}, [c, idx = std::move(idx)](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < c; ++j) gi[idx[k] * c + j] += go[k * c + j];
  });
}

Var Graph::gather(Var src, std::span<const long> index, std::vector<std::size_t> out_shape) {
  const Tensor& x = value(src);
  Tensor out(std::move(out_shape));
  if (out.size() != index.size()) throw std::invalid_argument("gather: index length does not match output shape");
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0) continue;
    if (static_cast<std::size_t>(index[i]) >= x.size()) throw std::invalid_argument("gather: index out of range");
    out[i] = x[static_cast<std::size_t>(index[i])];
  }
  std::vector<long> idx(index.begin(), index.end());
  return push(OpKind::kGather, std::move(out), {src}, [idx = std::move(idx)](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (idx[i] >= 0) gi[static_cast<std::size_t>(idx[i])] += go[i];
  });
}

Var Graph::mask_mul(Var a, const Tensor& mask) {
  const Tensor& x = value(a);
  if (mask.size() != x.size()) throw std::invalid_argument("mask_mul: mask size mismatch");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return push(OpKind::kMaskMul, std::move(out), {a}, [mask](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * mask[i];
  });
}

Var Graph::reshape(Var a, std::vector<std::size_t> shape) {
  Tensor out = value(a).reshaped(std::move(shape));
  return push(OpKind::kReshape, std::move(out), {a}, [](Graph& g, const Node& n, const Tensor& go) {
    Tensor& gi = g.grad_ref(n.inputs[0]);
    for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
  });
}

ValueAndGrad value_and_grad(const Program& program, const NamedTensors& inputs, const std::set<std::string>& wrt) {
  for (const auto& name : wrt)
    if (!inputs.contains(name)) throw std::invalid_argument("value_and_grad: unknown input '" + name + "'");
  Graph g;
  NamedVars vars;
  for (const auto& [name, t] : inputs) vars[name] = wrt.contains(name) ? g.input(t) : g.constant(t);
  Var out = program(g, vars);
  if (g.value(out).size() != 1)
    throw std::invalid_argument("program output must be scalar, got shape " + shape_string(g.value(out).shape()));
  ValueAndGrad result;
  result.value = g.scalar(out);
  if (g.requires_grad(out)) g.backward(out);
  for (const auto& name : wrt) result.grads[name] = g.requires_grad(out) ? g.grad(vars[name]) : Tensor(inputs.at(name).shape());
  return result;
}

GradReport check_gradient(const Program& program, const NamedTensors& inputs, const std::set<std::string>& wrt,
                          double step) {
  if (!(step > 0.0)) throw std::invalid_argument("check_gradient: step must be positive");
  auto evaluate = [&](const NamedTensors& in) { return value_and_grad(program, in, {}).value; };
  GradReport report;
  report.analytic = value_and_grad(program, inputs, wrt).grads;
  NamedTensors probe = inputs;
  for (const auto& name : wrt) {
    Tensor numeric(inputs.at(name).shape());
    Tensor& x = probe.at(name);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + step;
      const double fp = evaluate(probe);
      x[i] = orig - step;
      const double fm = evaluate(probe);
      x[i] = orig;
      numeric[i] = (fp - fm) / (2.0 * step);
    }
    const Tensor& analytic = report.analytic.at(name);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = analytic[i], n = numeric[i];
      const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
      report.max_rel_err = std::max(report.max_rel_err, std::abs(a - n) / denom);
    }
    report.numeric[name] = std::move(numeric);
  }
  return report;
}

namespace testing {

ScopedAdjointFault::ScopedAdjointFault(OpKind kind, double factor) {
  g_fault_factor.store(factor);
  g_fault_kind.store(static_cast<int>(kind));
}

ScopedAdjointFault::~ScopedAdjointFault() {
  g_fault_kind.store(-1);
  g_fault_factor.store(1.0);
}

}  // namespace testing

}  // namespace upa::ad
