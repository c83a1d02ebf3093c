#pragma once

// Dense row-major matrices with a dynamic reverse-mode tape.
//
// Every differentiable op records a forward kernel and a backward rule. The
// backward rules are themselves written with differentiable ops, so running
// backward with create_graph=true yields gradients that can be differentiated
// again (needed for gradient-alignment losses).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace coast {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor;

namespace detail {
struct Node;
struct NodeAccess;
}

using KernelInputs = std::vector<std::span<const double>>;
using ForwardKernel = std::function<std::vector<double>(const KernelInputs&)>;
// Receives the upstream gradient and the op's own output; returns one gradient
// per input (an undefined Tensor for inputs that need none).
using BackwardRule = std::function<std::vector<Tensor>(const Tensor& grad_out, const Tensor& out)>;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor row(std::vector<double> data, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rows() const { return shape().rows; }
  std::size_t cols() const { return shape().cols; }
  std::size_t size() const { return shape().size(); }

  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  // Only leaves may be written in place (parameter updates).
  std::span<double> mutable_data();

  bool requires_grad() const;
  bool is_leaf() const;
  std::uint64_t id() const;
  std::string_view op() const;

  // Same values, no tape history, requires_grad=false.
  Tensor detach() const;

  const detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(std::string_view, Shape, std::vector<Tensor>, ForwardKernel, BackwardRule);
  friend class Tape;
  friend struct detail::NodeAccess;
  friend std::vector<Tensor> grad(const Tensor&, std::span<const Tensor>, bool);
};

namespace detail {
struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<Tensor> inputs;
  ForwardKernel forward;
  BackwardRule backward;
};

struct NodeAccess {
  static std::shared_ptr<Node> share(const Tensor& t) { return t.node_; }
};
}  // namespace detail

// Builds an op result: runs the kernel, checks the output is finite, and
// records the node when gradient mode is on and some input requires grad.
Tensor make_op(std::string_view name, Shape shape, std::vector<Tensor> inputs, ForwardKernel forward,
               BackwardRule backward);

bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

// Sparse matrix with constant weights, stored as CSR together with its
// transpose so products can be differentiated w.r.t. the dense operand.
class SparseMatrix {
 public:
  struct Triplet {
    std::size_t row;
    std::size_t col;
    double value;
  };

  SparseMatrix() = default;
  // Duplicate coordinates are summed. Throws DimensionError on out-of-range
  // indices and NumericDomainError on non-finite weights.
  static std::shared_ptr<const SparseMatrix> from_triplets(std::size_t rows, std::size_t cols,
                                                           std::vector<Triplet> triplets);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }
  std::span<const std::size_t> row_ptr() const { return row_ptr_; }
  std::span<const std::size_t> col_idx() const { return col_idx_; }
  std::span<const double> values() const { return values_; }
  double coeff(std::size_t r, std::size_t c) const;
  // Null for matrices that are themselves a stored transpose.
  const std::shared_ptr<const SparseMatrix>& transposed() const { return transposed_; }

  std::vector<double> multiply(std::span<const double> dense, std::size_t dense_cols) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
  std::shared_ptr<const SparseMatrix> transposed_;
};

// ---------------------------------------------------------------------------
// Ops. Binary elementwise ops take `a` at full shape and allow `b` to be the
// same shape, a row vector (1×n), a column vector (r×1) or a scalar (1×1).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor sparse_matmul(const std::shared_ptr<const SparseMatrix>& adj, const Tensor& x);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double alpha = 0.01);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_rows(const Tensor& a);  // r×c -> 1×c
Tensor sum_cols(const Tensor& a);  // r×c -> r×1
Tensor expand(const Tensor& a, Shape shape);
Tensor reduce_to(const Tensor& a, Shape shape);
Tensor logsumexp_rows(const Tensor& a);  // r×c -> r×1

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
Tensor scatter_add_rows(const Tensor& a, std::span<const std::size_t> index, std::size_t out_rows);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor pad_cols(const Tensor& a, std::size_t begin, std::size_t total);
Tensor pad_rows(const Tensor& a, std::size_t begin, std::size_t total);
Tensor reshape(const Tensor& a, Shape shape);

// Composites.
Tensor row_dot(const Tensor& a, const Tensor& b);  // r×1
Tensor row_l2_normalize(const Tensor& a);          // throws DegenerateOutputError on a zero row
Tensor log_softmax_rows(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
// Concatenates the row-major contents of each tensor into a single 1×n row.
Tensor flatten(std::span<const Tensor> parts);

// ---------------------------------------------------------------------------

// Named tensors with a stable iteration order.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  void add(std::string name, Tensor tensor);
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  const Tensor* find(std::string_view name) const;
  std::vector<Tensor> tensors() const;

  std::size_t flat_size() const;
  std::vector<double> flatten() const;
  // Writes values back into the leaves, in iteration order.
  void unflatten(std::span<const double> flat);

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
};

// Reverse-mode gradients of a scalar w.r.t. each tensor in `wrt`. Tensors that
// do not participate receive zeros. With create_graph the returned gradients
// carry their own tape and can be differentiated again.
std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt, bool create_graph = false);
std::vector<Tensor> backward(const Tensor& loss, const ParamSet& wrt, bool create_graph = false);

// Snapshot of the recorded graph below a root, in topological order (inputs
// before consumers).
class Tape {
 public:
  struct Entry {
    std::uint64_t id;
    std::string_view op;
    std::vector<std::size_t> inputs;  // positions in the ordering
  };

  static Tape capture(const Tensor& root);

  std::span<const Entry> entries() const { return entries_; }
  bool is_topological() const;
  // Recomputes every recorded value from the leaf values.
  std::vector<std::vector<double>> replay() const;
  // Values as recorded during the original forward pass.
  std::vector<std::vector<double>> recorded() const;

 private:
  std::vector<Entry> entries_;
  std::vector<Tensor> nodes_;
};

}  // namespace coast
