#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nawr/error.hpp"

namespace nawr {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense row-major 64-bit float tensor. A tensor produced by a Tape op
// carries the id of its node; plain data tensors have node == -1 and are
// treated as constants by backward.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  int32_t node = -1;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d);

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v);  // shape {1}

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t rows() const;  // rank-2 only
  int64_t cols() const;  // rank-1 is treated as a single row

  double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
  double& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  double at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  // value of a one-element tensor
  double item() const;
  bool all_finite() const;
};

// Named trainable value. Shape is fixed at construction.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

enum class Op : uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatMul,
  kTranspose,
  kConcatCols,
  kSliceRows,
  kSliceCols,
  kReshape,
  kMean,
  kSum,
  kExp,
  kLog,
  kTanh,
  kRelu,
  kSoftplus,
  kSigmoid,
  kLogSoftmax,
  kLogAddExp,
  kConv1d,
  kLayerNorm,
  kClampMin,
};

const char* op_name(Op op);

struct Node {
  Op op = Op::kLeaf;
  std::array<int32_t, 3> in = {-1, -1, -1};  // input node ids, -1 = constant
  std::vector<Tensor> saved;                 // forward values needed by backward
  Shape out_shape;
  Shape in_shape;   // primary input shape (slice/reshape/conv scatter targets)
  int64_t a0 = 0;   // op-specific integer attributes
  int64_t a1 = 0;
  double d0 = 0.0;  // op-specific scalar attribute
};

// Records one step's computation graph. Node inputs always refer to earlier
// nodes, so a single reverse sweep is a valid topological order. A tape is
// confined to one thread; construct with recording=false for inference,
// which runs the same forward code without recording nodes.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  // Registers a parameter value as a differentiable leaf and remembers the
  // binding so gradients can be read back per parameter.
  Tensor leaf(const Parameter& p);

  // elementwise, shapes must match exactly
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor logaddexp(const Tensor& a, const Tensor& b);

  Tensor scale(const Tensor& a, double factor);

  // rank-2 linear algebra
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);

  Tensor concat_cols(const Tensor& a, const Tensor& b);
  Tensor slice_rows(const Tensor& a, int64_t start, int64_t len);
  Tensor slice_cols(const Tensor& a, int64_t start, int64_t len);
  Tensor reshape(const Tensor& a, Shape target);

  // axis 0 pools rows to [1, C]; axis 1 pools columns to [R, 1]
  Tensor mean(const Tensor& a, int64_t axis);
  Tensor sum(const Tensor& a);  // full reduction to shape {1}

  Tensor exp(const Tensor& a);
  Tensor log(const Tensor& a);
  Tensor tanh(const Tensor& a);
  Tensor relu(const Tensor& a);
  Tensor softplus(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor clamp_min(const Tensor& a, double floor);

  // per-row log softmax over the last axis (rank 1 is one row)
  Tensor log_softmax(const Tensor& a);

  // input [L, Cin], weight [Cout, Cin, K], valid padding:
  // out[t, co] = sum_{ci,k} input[t*stride + k, ci] * weight[co, ci, k]
  Tensor conv1d(const Tensor& input, const Tensor& weight, int64_t stride);

  // per-row normalization over the last axis; gamma/beta are [1, C]
  Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

  // Populates gradients for every node reachable from root. Root must be a
  // one-element tensor produced on this tape.
  void backward(const Tensor& root);

  // Gradient of a tape tensor after backward; nullptr when the node was not
  // reached (its gradient is identically zero).
  const Tensor* grad(const Tensor& t) const;
  const Tensor* node_grad(int32_t id) const;
  Tensor grad_or_zero(const Tensor& t) const;

  const std::vector<std::pair<const Parameter*, int32_t>>& leaf_bindings() const {
    return bindings_;
  }

 private:
  Tensor emit(Op op, Node node, Tensor value);
  Tensor& grad_slot(int32_t id, const Shape& shape);
  void backprop_node(int32_t id);

  bool recording_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> has_grad_;
  std::vector<std::pair<const Parameter*, int32_t>> bindings_;
};

// Sinusoidal position table: row t, column 2i holds sin(t / 10000^(2i/dim)),
// column 2i+1 the matching cos. Returned as a constant.
Tensor position_table(int64_t length, int64_t dim);

// Throws if any entry is non-finite; context names the offending quantity.
void check_finite(const Tensor& t, const std::string& context);

// Max relative error between tape gradients and central finite differences
// over every entry of every parameter. f must bind exactly the given
// parameters on the tape it receives and return a one-element loss.
// Error metric per entry: |analytic - numeric| / max(1, |analytic|, |numeric|).
double grad_check(const std::function<Tensor(Tape&)>& f,
                  std::span<Parameter* const> params, double eps);

}  // namespace nawr
