#include "nawr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nawr {

namespace {

constexpr double kLayerNormEps = 1e-5;

[[noreturn]] void shape_fail(const char* prim, const Tensor& a, const Tensor& b) {
  std::ostringstream os;
  os << prim << ": shape mismatch " << shape_str(a.shape) << " vs " << shape_str(b.shape);
  throw ShapeError(os.str());
}

[[noreturn]] void shape_fail(const char* prim, const Tensor& a, const std::string& why) {
  std::ostringstream os;
  os << prim << ": " << why << " (got " << shape_str(a.shape) << ")";
  throw ShapeError(os.str());
}

void require_rank2(const char* prim, const Tensor& a) {
  if (a.rank() != 2) shape_fail(prim, a, "expected a rank-2 tensor");
}

// max + log1p(exp(min - max)); stable for widely separated magnitudes
double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (std::isinf(b) && b < 0) return a;
  return a + std::log1p(std::exp(b - a));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  for (int64_t dim : shape) {
    if (dim <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
  }
  if (shape_numel(shape) != numel()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape s) {
  auto n = static_cast<size_t>(shape_numel(s));
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape s, double v) {
  auto n = static_cast<size_t>(shape_numel(s));
  return Tensor(std::move(s), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

int64_t Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return shape[0];
  throw ShapeError("rows: expected rank 1 or 2, got " + shape_str(shape));
}

int64_t Tensor::cols() const {
  if (rank() == 1) return shape[0];
  if (rank() == 2) return shape[1];
  throw ShapeError("cols: expected rank 1 or 2, got " + shape_str(shape));
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape) + " is not a scalar");
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kConcatCols: return "concat";
    case Op::kSliceRows: return "slice_rows";
    case Op::kSliceCols: return "slice_cols";
    case Op::kReshape: return "reshape";
    case Op::kMean: return "mean";
    case Op::kSum: return "sum";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kSoftplus: return "softplus";
    case Op::kSigmoid: return "sigmoid";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kLogAddExp: return "logaddexp";
    case Op::kConv1d: return "conv1d";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kClampMin: return "clamp_min";
  }
  return "?";
}

Tensor Tape::emit(Op op, Node node, Tensor value) {
  if (!recording_) {
    value.node = -1;
    return value;
  }
  node.op = op;
  node.out_shape = value.shape;
  value.node = static_cast<int32_t>(nodes_.size());
  nodes_.push_back(std::move(node));
  return value;
}

Tensor Tape::leaf(const Parameter& p) {
  Tensor v = p.value;
  v.node = -1;
  if (!recording_) return v;
  Node n;
  Tensor out = emit(Op::kLeaf, std::move(n), std::move(v));
  bindings_.emplace_back(&p, out.node);
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) shape_fail("add", a, b);
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) += b.at(i);
  Node n;
  n.in = {a.node, b.node, -1};
  return emit(Op::kAdd, std::move(n), std::move(out));
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) shape_fail("sub", a, b);
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) -= b.at(i);
  Node n;
  n.in = {a.node, b.node, -1};
  return emit(Op::kSub, std::move(n), std::move(out));
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) shape_fail("mul", a, b);
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) *= b.at(i);
  Node n;
  n.in = {a.node, b.node, -1};
  if (recording_) n.saved = {a, b};
  return emit(Op::kMul, std::move(n), std::move(out));
}

Tensor Tape::logaddexp(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) shape_fail("logaddexp", a, b);
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = log_add(a.at(i), b.at(i));
  Node n;
  n.in = {a.node, b.node, -1};
  if (recording_) n.saved = {a, b, out};
  return emit(Op::kLogAddExp, std::move(n), std::move(out));
}

Tensor Tape::scale(const Tensor& a, double factor) {
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) *= factor;
  Node n;
  n.in = {a.node, -1, -1};
  n.d0 = factor;
  return emit(Op::kScale, std::move(n), std::move(out));
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.shape[1] != b.shape[0]) shape_fail("matmul", a, b);
  const int64_t m = a.shape[0], k = a.shape[1], p = b.shape[1];
  Tensor out = Tensor::zeros({m, p});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < k; ++j) {
      const double av = a.at2(i, j);
      if (av == 0.0) continue;
      for (int64_t c = 0; c < p; ++c) out.at2(i, c) += av * b.at2(j, c);
    }
  }
  Node n;
  n.in = {a.node, b.node, -1};
  if (recording_) n.saved = {a, b};
  return emit(Op::kMatMul, std::move(n), std::move(out));
}

Tensor Tape::transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const int64_t r = a.shape[0], c = a.shape[1];
  Tensor out = Tensor::zeros({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out.at2(j, i) = a.at2(i, j);
  Node n;
  n.in = {a.node, -1, -1};
  return emit(Op::kTranspose, std::move(n), std::move(out));
}

Tensor Tape::concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2("concat", a);
  require_rank2("concat", b);
  if (a.shape[0] != b.shape[0]) shape_fail("concat", a, b);
  const int64_t r = a.shape[0], ca = a.shape[1], cb = b.shape[1];
  Tensor out = Tensor::zeros({r, ca + cb});
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t j = 0; j < ca; ++j) out.at2(i, j) = a.at2(i, j);
    for (int64_t j = 0; j < cb; ++j) out.at2(i, ca + j) = b.at2(i, j);
  }
  Node n;
  n.in = {a.node, b.node, -1};
  n.a0 = ca;
  return emit(Op::kConcatCols, std::move(n), std::move(out));
}

Tensor Tape::slice_rows(const Tensor& a, int64_t start, int64_t len) {
  require_rank2("slice_rows", a);
  if (start < 0 || len <= 0 || start + len > a.shape[0])
    shape_fail("slice_rows", a, "rows [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") out of range");
  Tensor out = Tensor::zeros({len, a.shape[1]});
  for (int64_t i = 0; i < len; ++i)
    for (int64_t j = 0; j < a.shape[1]; ++j) out.at2(i, j) = a.at2(start + i, j);
  Node n;
  n.in = {a.node, -1, -1};
  n.in_shape = a.shape;
  n.a0 = start;
  n.a1 = len;
  return emit(Op::kSliceRows, std::move(n), std::move(out));
}

Tensor Tape::slice_cols(const Tensor& a, int64_t start, int64_t len) {
  require_rank2("slice_cols", a);
  if (start < 0 || len <= 0 || start + len > a.shape[1])
    shape_fail("slice_cols", a, "cols [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") out of range");
  Tensor out = Tensor::zeros({a.shape[0], len});
  for (int64_t i = 0; i < a.shape[0]; ++i)
    for (int64_t j = 0; j < len; ++j) out.at2(i, j) = a.at2(i, start + j);
  Node n;
  n.in = {a.node, -1, -1};
  n.in_shape = a.shape;
  n.a0 = start;
  n.a1 = len;
  return emit(Op::kSliceCols, std::move(n), std::move(out));
}

Tensor Tape::reshape(const Tensor& a, Shape target) {
  if (shape_numel(target) != a.numel())
    shape_fail("reshape", a, "cannot reshape to " + shape_str(target));
  Tensor out(target, a.data);
  Node n;
  n.in = {a.node, -1, -1};
  n.in_shape = a.shape;
  return emit(Op::kReshape, std::move(n), std::move(out));
}

Tensor Tape::mean(const Tensor& a, int64_t axis) {
  require_rank2("mean", a);
  if (axis != 0 && axis != 1) shape_fail("mean", a, "axis must be 0 or 1");
  const int64_t r = a.shape[0], c = a.shape[1];
  Tensor out = axis == 0 ? Tensor::zeros({1, c}) : Tensor::zeros({r, 1});
  if (axis == 0) {
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) out.at(j) += a.at2(i, j);
    for (int64_t j = 0; j < c; ++j) out.at(j) /= static_cast<double>(r);
  } else {
    for (int64_t i = 0; i < r; ++i) {
      for (int64_t j = 0; j < c; ++j) out.at(i) += a.at2(i, j);
      out.at(i) /= static_cast<double>(c);
    }
  }
  Node n;
  n.in = {a.node, -1, -1};
  n.in_shape = a.shape;
  n.a0 = axis;
  return emit(Op::kMean, std::move(n), std::move(out));
}

Tensor Tape::sum(const Tensor& a) {
  double total = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) total += a.at(i);
  Node n;
  n.in = {a.node, -1, -1};
  n.in_shape = a.shape;
  return emit(Op::kSum, std::move(n), Tensor::scalar(total));
}

Tensor Tape::exp(const Tensor& a) {
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = std::exp(out.at(i));
  Node n;
  n.in = {a.node, -1, -1};
  if (recording_) n.saved = {out};
  return emit(Op::kExp, std::move(n), std::move(out));
}

Tensor Tape::log(const Tensor& a) {
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = std::log(out.at(i));
  Node n;
  n.in = {a.node, -1, -1};
  if (recording_) n.saved = {a};
  return emit(Op::kLog, std::move(n), std::move(out));
}

Tensor Tape::tanh(const Tensor& a) {
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = std::tanh(out.at(i));
  Node n;
  n.in = {a.node, -1, -1};
  if (recording_) n.saved = {out};
  return emit(Op::kTanh, std::move(n), std::move(out));
}

Tensor Tape::relu(const Tensor& a) {
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = std::max(0.0, out.at(i));
  Node n;
  n.in = {a.node, -1, -1};
  if (recording_) n.saved = {a};
  return emit(Op::kRelu, std::move(n), std::move(out));
}

Tensor Tape::softplus(const Tensor& a) {
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double x = out.at(i);
    // log(1 + e^x) without overflow for large |x|
    out.at(i) = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  Node n;
  n.in = {a.node, -1, -1};
  if (recording_) n.saved = {a};
  return emit(Op::kSoftplus, std::move(n), std::move(out));
}

Tensor Tape::sigmoid(const Tensor& a) {
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double x = out.at(i);
    out.at(i) = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  Node n;
  n.in = {a.node, -1, -1};
  if (recording_) n.saved = {out};
  return emit(Op::kSigmoid, std::move(n), std::move(out));
}

Tensor Tape::clamp_min(const Tensor& a, double floor) {
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = std::max(floor, out.at(i));
  Node n;
  n.in = {a.node, -1, -1};
  n.d0 = floor;
  if (recording_) n.saved = {a};
  return emit(Op::kClampMin, std::move(n), std::move(out));
}

Tensor Tape::log_softmax(const Tensor& a) {
  if (a.rank() != 1 && a.rank() != 2) shape_fail("log_softmax", a, "expected rank 1 or 2");
  const int64_t r = a.rows(), c = a.cols();
  Tensor out = a;
  for (int64_t i = 0; i < r; ++i) {
    double mx = out.at(i * c);
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, out.at(i * c + j));
    double lse = 0.0;
    for (int64_t j = 0; j < c; ++j) lse += std::exp(out.at(i * c + j) - mx);
    lse = mx + std::log(lse);
    for (int64_t j = 0; j < c; ++j) out.at(i * c + j) -= lse;
  }
  Node n;
  n.in = {a.node, -1, -1};
  if (recording_) n.saved = {out};
  return emit(Op::kLogSoftmax, std::move(n), std::move(out));
}

Tensor Tape::conv1d(const Tensor& input, const Tensor& weight, int64_t stride) {
  require_rank2("conv1d", input);
  if (weight.rank() != 3) shape_fail("conv1d", weight, "expected a rank-3 weight");
  if (stride < 1) throw ShapeError("conv1d: stride must be >= 1");
  const int64_t length = input.shape[0], cin = input.shape[1];
  const int64_t cout = weight.shape[0], k = weight.shape[2];
  if (weight.shape[1] != cin) shape_fail("conv1d", input, weight);
  if (length < k)
    shape_fail("conv1d", input, "input shorter than kernel " + std::to_string(k));
  const int64_t frames = (length - k) / stride + 1;
  Tensor out = Tensor::zeros({frames, cout});
  for (int64_t t = 0; t < frames; ++t) {
    const int64_t base = t * stride;
    for (int64_t co = 0; co < cout; ++co) {
      double acc = 0.0;
      for (int64_t ci = 0; ci < cin; ++ci) {
        const double* in_ptr = input.data.data() + base * cin + ci;
        const double* w_ptr = weight.data.data() + (co * cin + ci) * k;
        for (int64_t kk = 0; kk < k; ++kk) acc += in_ptr[kk * cin] * w_ptr[kk];
      }
      out.at2(t, co) = acc;
    }
  }
  Node n;
  n.in = {input.node, weight.node, -1};
  n.in_shape = input.shape;
  n.a0 = stride;
  if (recording_) n.saved = {input, weight};
  return emit(Op::kConv1d, std::move(n), std::move(out));
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require_rank2("layer_norm", x);
  const int64_t r = x.shape[0], c = x.shape[1];
  const Shape want{1, c};
  if (gamma.shape != want) shape_fail("layer_norm", x, gamma);
  if (beta.shape != want) shape_fail("layer_norm", x, beta);
  Tensor out = Tensor::zeros({r, c});
  for (int64_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (int64_t j = 0; j < c; ++j) mu += x.at2(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double d = x.at2(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int64_t j = 0; j < c; ++j)
      out.at2(i, j) = (x.at2(i, j) - mu) * inv * gamma.at(j) + beta.at(j);
  }
  Node n;
  n.in = {x.node, gamma.node, beta.node};
  if (recording_) n.saved = {x, gamma};
  return emit(Op::kLayerNorm, std::move(n), std::move(out));
}

Tensor& Tape::grad_slot(int32_t id, const Shape& shape) {
  if (!has_grad_[static_cast<size_t>(id)]) {
    grads_[static_cast<size_t>(id)] = Tensor::zeros(shape);
    has_grad_[static_cast<size_t>(id)] = 1;
  }
  return grads_[static_cast<size_t>(id)];
}

void Tape::backward(const Tensor& root) {
  if (root.node < 0 || static_cast<size_t>(root.node) >= nodes_.size())
    throw Error("backward: root is not on this tape");
  if (root.numel() != 1)
    throw Error("backward: root must be a scalar, got " + shape_str(root.shape));
  grads_.assign(nodes_.size(), Tensor{});
  has_grad_.assign(nodes_.size(), 0);
  grad_slot(root.node, nodes_[static_cast<size_t>(root.node)].out_shape).data[0] = 1.0;
  for (int32_t id = root.node; id >= 0; --id) {
    if (has_grad_[static_cast<size_t>(id)]) backprop_node(id);
  }
}

void Tape::backprop_node(int32_t id) {
  const Node& n = nodes_[static_cast<size_t>(id)];
  const Tensor& g = grads_[static_cast<size_t>(id)];
  const int32_t ia = n.in[0], ib = n.in[1], ic = n.in[2];
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kAdd: {
      if (ia >= 0) {
        Tensor& ga = grad_slot(ia, n.out_shape);
        for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) += g.at(i);
      }
      if (ib >= 0) {
        Tensor& gb = grad_slot(ib, n.out_shape);
        for (int64_t i = 0; i < g.numel(); ++i) gb.at(i) += g.at(i);
      }
      break;
    }
    case Op::kSub: {
      if (ia >= 0) {
        Tensor& ga = grad_slot(ia, n.out_shape);
        for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) += g.at(i);
      }
      if (ib >= 0) {
        Tensor& gb = grad_slot(ib, n.out_shape);
        for (int64_t i = 0; i < g.numel(); ++i) gb.at(i) -= g.at(i);
      }
      break;
    }
    case Op::kMul: {
      const Tensor& a = n.saved[0];
      const Tensor& b = n.saved[1];
      if (ia >= 0) {
        Tensor& ga = grad_slot(ia, a.shape);
        for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) += g.at(i) * b.at(i);
      }
      if (ib >= 0) {
        Tensor& gb = grad_slot(ib, b.shape);
        for (int64_t i = 0; i < g.numel(); ++i) gb.at(i) += g.at(i) * a.at(i);
      }
      break;
    }
    case Op::kScale: {
      if (ia >= 0) {
        Tensor& ga = grad_slot(ia, n.out_shape);
        for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) += g.at(i) * n.d0;
      }
      break;
    }
    case Op::kMatMul: {
      const Tensor& a = n.saved[0];
      const Tensor& b = n.saved[1];
      const int64_t m = a.shape[0], k = a.shape[1], p = b.shape[1];
      if (ia >= 0) {
        Tensor& ga = grad_slot(ia, a.shape);
        // dA = G * B^T
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int64_t c = 0; c < p; ++c) acc += g.at2(i, c) * b.at2(j, c);
            ga.at2(i, j) += acc;
          }
      }
      if (ib >= 0) {
        Tensor& gb = grad_slot(ib, b.shape);
        // dB = A^T * G
        for (int64_t j = 0; j < k; ++j)
          for (int64_t c = 0; c < p; ++c) {
            double acc = 0.0;
            for (int64_t i = 0; i < m; ++i) acc += a.at2(i, j) * g.at2(i, c);
            gb.at2(j, c) += acc;
          }
      }
      break;
    }
    case Op::kTranspose: {
      if (ia >= 0) {
        const int64_t r = n.out_shape[1], c = n.out_shape[0];
        Tensor& ga = grad_slot(ia, {r, c});
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) ga.at2(i, j) += g.at2(j, i);
      }
      break;
    }
    case Op::kConcatCols: {
      const int64_t r = n.out_shape[0], ca = n.a0, cb = n.out_shape[1] - n.a0;
      if (ia >= 0) {
        Tensor& ga = grad_slot(ia, {r, ca});
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < ca; ++j) ga.at2(i, j) += g.at2(i, j);
      }
      if (ib >= 0) {
        Tensor& gb = grad_slot(ib, {r, cb});
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < cb; ++j) gb.at2(i, j) += g.at2(i, ca + j);
      }
      break;
    }
    case Op::kSliceRows: {
      if (ia >= 0) {
        Tensor& ga = grad_slot(ia, n.in_shape);
        const int64_t c = n.in_shape[1];
        for (int64_t i = 0; i < n.a1; ++i)
          for (int64_t j = 0; j < c; ++j) ga.at2(n.a0 + i, j) += g.at(i * c + j);
      }
      break;
    }
    case Op::kSliceCols: {
      if (ia >= 0) {
        Tensor& ga = grad_slot(ia, n.in_shape);
        for (int64_t i = 0; i < n.out_shape[0]; ++i)
          for (int64_t j = 0; j < n.a1; ++j) ga.at2(i, n.a0 + j) += g.at(i * n.a1 + j);
      }
      break;
    }
    case Op::kReshape: {
      if (ia >= 0) {
        Tensor& ga = grad_slot(ia, n.in_shape);
        for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) += g.at(i);
      }
      break;
    }
    case Op::kMean: {
      if (ia >= 0) {
        Tensor& ga = grad_slot(ia, n.in_shape);
        const int64_t r = n.in_shape[0], c = n.in_shape[1];
        if (n.a0 == 0) {
          const double inv = 1.0 / static_cast<double>(r);
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) ga.at2(i, j) += g.at(j) * inv;
        } else {
          const double inv = 1.0 / static_cast<double>(c);
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) ga.at2(i, j) += g.at(i) * inv;
        }
      }
      break;
    }
    case Op::kSum: {
      if (ia >= 0) {
        Tensor& ga = grad_slot(ia, n.in_shape);
        const double gv = g.at(0);
        for (int64_t i = 0; i < ga.numel(); ++i) ga.at(i) += gv;
      }
      break;
    }
    case Op::kExp: {
      if (ia >= 0) {
        const Tensor& out = n.saved[0];
        Tensor& ga = grad_slot(ia, out.shape);
        for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) += g.at(i) * out.at(i);
      }
      break;
    }
    case Op::kLog: {
      if (ia >= 0) {
        const Tensor& a = n.saved[0];
        Tensor& ga = grad_slot(ia, a.shape);
        for (int64_t i = 0; i < g.numel(); ++i) ga.at(i) += g.at(i) / a.at(i);
      }
      break;
    }
    case Op::kTanh: {
      if (ia >= 0) {
        const Tensor& out = n.saved[0];
        Tensor& ga = grad_slot(ia, out.shape);
        for (int64_t i = 0; i < g.numel(); ++i)
          ga.at(i) += g.at(i) * (1.0 - out.at(i) * out.at(i));
      }
      break;
    }
    case Op::kRelu: {
      if (ia >= 0) {
        const Tensor& a = n.saved[0];
        Tensor& ga = grad_slot(ia, a.shape);
        for (int64_t i = 0; i < g.numel(); ++i)
          if (a.at(i) > 0) ga.at(i) += g.at(i);
      }
      break;
    }
    case Op::kSoftplus: {
      if (ia >= 0) {
        const Tensor& a = n.saved[0];
        Tensor& ga = grad_slot(ia, a.shape);
        for (int64_t i = 0; i < g.numel(); ++i) {
          const double x = a.at(i);
          const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
          ga.at(i) += g.at(i) * s;
        }
      }
      break;
    }
    case Op::kSigmoid: {
      if (ia >= 0) {
        const Tensor& out = n.saved[0];
        Tensor& ga = grad_slot(ia, out.shape);
        for (int64_t i = 0; i < g.numel(); ++i)
          ga.at(i) += g.at(i) * out.at(i) * (1.0 - out.at(i));
      }
      break;
    }
    case Op::kClampMin: {
      if (ia >= 0) {
        const Tensor& a = n.saved[0];
        Tensor& ga = grad_slot(ia, a.shape);
        for (int64_t i = 0; i < g.numel(); ++i)
          if (a.at(i) >= n.d0) ga.at(i) += g.at(i);
      }
      break;
    }
    case Op::kLogSoftmax: {
      if (ia >= 0) {
        const Tensor& y = n.saved[0];
        Tensor& ga = grad_slot(ia, y.shape);
        const int64_t r = y.rows(), c = y.cols();
        for (int64_t i = 0; i < r; ++i) {
          double gsum = 0.0;
          for (int64_t j = 0; j < c; ++j) gsum += g.at(i * c + j);
          for (int64_t j = 0; j < c; ++j)
            ga.at(i * c + j) += g.at(i * c + j) - std::exp(y.at(i * c + j)) * gsum;
        }
      }
      break;
    }
    case Op::kLogAddExp: {
      const Tensor& a = n.saved[0];
      const Tensor& b = n.saved[1];
      const Tensor& out = n.saved[2];
      if (ia >= 0) {
        Tensor& ga = grad_slot(ia, a.shape);
        for (int64_t i = 0; i < g.numel(); ++i)
          ga.at(i) += g.at(i) * std::exp(a.at(i) - out.at(i));
      }
      if (ib >= 0) {
        Tensor& gb = grad_slot(ib, b.shape);
        for (int64_t i = 0; i < g.numel(); ++i)
          gb.at(i) += g.at(i) * std::exp(b.at(i) - out.at(i));
      }
      break;
    }
    case Op::kConv1d: {
      const Tensor& input = n.saved[0];
      const Tensor& weight = n.saved[1];
      const int64_t stride = n.a0;
      const int64_t cin = input.shape[1];
      const int64_t cout = weight.shape[0], k = weight.shape[2];
      const int64_t frames = n.out_shape[0];
      if (ia >= 0) {
        Tensor& gin = grad_slot(ia, input.shape);
        for (int64_t t = 0; t < frames; ++t) {
          const int64_t base = t * stride;
          for (int64_t co = 0; co < cout; ++co) {
            const double gv = g.at2(t, co);
            if (gv == 0.0) continue;
            for (int64_t ci = 0; ci < cin; ++ci) {
              const double* w_ptr = weight.data.data() + (co * cin + ci) * k;
              double* gi_ptr = gin.data.data() + base * cin + ci;
              for (int64_t kk = 0; kk < k; ++kk) gi_ptr[kk * cin] += gv * w_ptr[kk];
            }
          }
        }
      }
      if (ib >= 0) {
        Tensor& gw = grad_slot(ib, weight.shape);
        for (int64_t t = 0; t < frames; ++t) {
          const int64_t base = t * stride;
          for (int64_t co = 0; co < cout; ++co) {
            const double gv = g.at2(t, co);
            if (gv == 0.0) continue;
            for (int64_t ci = 0; ci < cin; ++ci) {
              const double* in_ptr = input.data.data() + base * cin + ci;
              double* gw_ptr = gw.data.data() + (co * cin + ci) * k;
              for (int64_t kk = 0; kk < k; ++kk) gw_ptr[kk] += gv * in_ptr[kk * cin];
            }
          }
        }
      }
      break;
    }
    case Op::kLayerNorm: {
      const Tensor& x = n.saved[0];
      const Tensor& gamma = n.saved[1];
      const int64_t r = x.shape[0], c = x.shape[1];
      const double cf = static_cast<double>(c);
      Tensor* gx = ia >= 0 ? &grad_slot(ia, x.shape) : nullptr;
      Tensor* gg = ib >= 0 ? &grad_slot(ib, gamma.shape) : nullptr;
      Tensor* gb = ic >= 0 ? &grad_slot(ic, gamma.shape) : nullptr;
      std::vector<double> xhat(static_cast<size_t>(c));
      for (int64_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (int64_t j = 0; j < c; ++j) mu += x.at2(i, j);
        mu /= cf;
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) {
          const double d = x.at2(i, j) - mu;
          var += d * d;
        }
        var /= cf;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        for (int64_t j = 0; j < c; ++j) xhat[static_cast<size_t>(j)] = (x.at2(i, j) - mu) * inv;
        if (gg)
          for (int64_t j = 0; j < c; ++j)
            gg->at(j) += g.at2(i, j) * xhat[static_cast<size_t>(j)];
        if (gb)
          for (int64_t j = 0; j < c; ++j) gb->at(j) += g.at2(i, j);
        if (gx) {
          double s1 = 0.0, s2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
          for (int64_t j = 0; j < c; ++j) {
            const double dxh = g.at2(i, j) * gamma.at(j);
            s1 += dxh;
            s2 += dxh * xhat[static_cast<size_t>(j)];
          }
          s1 /= cf;
          s2 /= cf;
          for (int64_t j = 0; j < c; ++j) {
            const double dxh = g.at2(i, j) * gamma.at(j);
            gx->at2(i, j) += inv * (dxh - s1 - xhat[static_cast<size_t>(j)] * s2);
          }
        }
      }
      break;
    }
  }
}

const Tensor* Tape::grad(const Tensor& t) const { return node_grad(t.node); }

const Tensor* Tape::node_grad(int32_t id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) return nullptr;
  if (grads_.size() != nodes_.size() || !has_grad_[static_cast<size_t>(id)]) return nullptr;
  return &grads_[static_cast<size_t>(id)];
}

Tensor Tape::grad_or_zero(const Tensor& t) const {
  const Tensor* g = grad(t);
  return g ? *g : Tensor::zeros(t.shape);
}

Tensor position_table(int64_t length, int64_t dim) {
  Tensor out = Tensor::zeros({length, dim});
  for (int64_t pos = 0; pos < length; ++pos) {
    for (int64_t j = 0; j < dim; ++j) {
      const int64_t pair = j / 2;
      const double rate = std::pow(10000.0, -2.0 * static_cast<double>(pair) /
                                                 static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      out.at2(pos, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return out;
}

void check_finite(const Tensor& t, const std::string& context) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t.at(i)))
      throw Error(context + ": non-finite value at flat index " + std::to_string(i));
  }
}

double grad_check(const std::function<Tensor(Tape&)>& f,
                  std::span<Parameter* const> params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw Error("grad_check: eps must be in (0, 1e-3]");

  Tape tape(true);
  Tensor root = f(tape);
  if (!root.all_finite()) throw Error("grad_check: loss is non-finite");
  tape.backward(root);

  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const Parameter* p : params) {
    bool bound = false;
    for (const auto& [bp, node] : tape.leaf_bindings()) {
      if (bp == p) {
        const Tensor* gp = tape.node_grad(node);
        analytic.push_back(gp ? *gp : Tensor::zeros(p->value.shape));
        bound = true;
        break;
      }
    }
    if (!bound) throw Error("grad_check: parameter '" + p->name + "' was not bound by f");
  }

  auto eval = [&]() {
    Tape t(false);
    const double v = f(t).item();
    if (!std::isfinite(v)) throw Error("grad_check: loss is non-finite under perturbation");
    return v;
  };

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      const double saved = p->value.at(i);
      p->value.at(i) = saved + eps;
      const double fp = eval();
      p->value.at(i) = saved - eps;
      const double fm = eval();
      p->value.at(i) = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi].at(i);
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace nawr
