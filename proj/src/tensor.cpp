#include "coast/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include <cblas.h>

#include "coast/errors.hpp"

namespace coast {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_next_id{1};

std::shared_ptr<detail::Node> new_leaf(Shape shape, std::vector<double> value, bool requires_grad) {
  if (value.size() != shape.size()) {
    throw DimensionError("tensor data length " + std::to_string(value.size()) + " does not match shape " +
                         shape.str());
  }
  auto node = std::make_shared<detail::Node>();
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = shape;
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

enum class Broadcast { kSame, kRow, kCol, kScalar };

Broadcast classify(const Shape& a, const Shape& b, std::string_view op) {
  if (a == b) return Broadcast::kSame;
  if (b.rows == 1 && b.cols == 1) return Broadcast::kScalar;
  if (b.rows == 1 && b.cols == a.cols) return Broadcast::kRow;
  if (b.cols == 1 && b.rows == a.rows) return Broadcast::kCol;
  throw DimensionError(std::string(op) + ": cannot broadcast " + b.str() + " onto " + a.str());
}

template <class F>
std::vector<double> binary_apply(std::span<const double> a, std::span<const double> b, Shape shape, Broadcast mode,
                                 F f) {
  std::vector<double> out(shape.size());
  const std::size_t rows = shape.rows, cols = shape.cols;
  switch (mode) {
    case Broadcast::kSame:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
      break;
    case Broadcast::kRow:
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = f(a[r * cols + c], b[c]);
      break;
    case Broadcast::kCol:
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = f(a[r * cols + c], b[r]);
      break;
    case Broadcast::kScalar:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[0]);
      break;
  }
  return out;
}

// Branch-free scan so the loop vectorizes: a value is non-finite exactly when
// its exponent bits are all ones.
bool all_finite(std::span<const double> v) {
  constexpr std::uint64_t kExp = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (double x : v) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(x) & kExp) == kExp);
  return bad == 0;
}

template <class F>
ForwardKernel unary_kernel(F f) {
  return [f](const KernelInputs& in) {
    std::vector<double> out(in[0].size());
    std::transform(in[0].begin(), in[0].end(), out.begin(), f);
    return out;
  };
}

// Product with a constant elementwise mask; its derivative is the same mask.
Tensor mask_mul(const Tensor& g, std::shared_ptr<const std::vector<double>> mask) {
  return make_op(
      "mask_mul", g.shape(), {g},
      [mask](const KernelInputs& in) {
        std::vector<double> out(in[0].size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[0][i] * (*mask)[i];
        return out;
      },
      [mask](const Tensor& gg, const Tensor&) { return std::vector<Tensor>{mask_mul(gg, mask)}; });
}

Tensor sparse_product(std::shared_ptr<const SparseMatrix> m, std::shared_ptr<const SparseMatrix> mt,
                      const Tensor& x) {
  if (m->cols() != x.rows()) {
    throw DimensionError("sparse_matmul: " + std::to_string(m->rows()) + "x" + std::to_string(m->cols()) +
                         " times " + x.shape().str());
  }
  const std::size_t cols = x.cols();
  return make_op(
      "sparse_matmul", Shape{m->rows(), cols}, {x},
      [m, cols](const KernelInputs& in) { return m->multiply(in[0], cols); },
      [m, mt](const Tensor& g, const Tensor&) { return std::vector<Tensor>{sparse_product(mt, m, g)}; });
}

}  // namespace

std::string Shape::str() const { return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]"; }

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(new_leaf(shape, std::vector<double>(shape.size(), 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  return Tensor(new_leaf(shape, std::vector<double>(shape.size(), value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (!all_finite(data)) throw NumericDomainError("tensor data contains a non-finite value");
  return Tensor(new_leaf(shape, std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({1, 1}, {value}, requires_grad); }

Tensor Tensor::row(std::vector<double> data, bool requires_grad) {
  const std::size_t n = data.size();
  return from_data({1, n}, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  static const Shape kEmpty{};
  return node_ ? node_->shape : kEmpty;
}

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return node_->value;
}

std::vector<double> Tensor::to_vector() const { return {data().begin(), data().end()}; }

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= cols()) throw DimensionError("at: index out of range for " + shape().str());
  return node_->value[r * cols() + c];
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on a tensor of shape " + shape().str());
  return node_->value[0];
}

std::span<double> Tensor::mutable_data() {
  if (!node_) return {};
  if (!node_->inputs.empty()) throw ContractError("mutable_data() on a non-leaf tensor");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_ || node_->inputs.empty(); }
std::uint64_t Tensor::id() const { return node_ ? node_->id : 0; }
std::string_view Tensor::op() const { return node_ ? node_->op : std::string_view{}; }

Tensor Tensor::detach() const {
  if (!node_) return {};
  auto node = new_leaf(node_->shape, node_->value, false);
  return Tensor(std::move(node));
}

// --- recording ----------------------------------------------------------------

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

Tensor make_op(std::string_view name, Shape shape, std::vector<Tensor> inputs, ForwardKernel forward,
               BackwardRule backward) {
  KernelInputs spans;
  spans.reserve(inputs.size());
  for (const auto& t : inputs) spans.push_back(t.data());
  std::vector<double> value = forward(spans);
  if (value.size() != shape.size()) {
    throw DimensionError(std::string(name) + ": kernel produced " + std::to_string(value.size()) +
                         " values for shape " + shape.str());
  }
  if (!all_finite(value)) throw NumericDomainError(std::string(name) + " produced a non-finite value");
  auto node = new_leaf(shape, std::move(value), false);
  node->op = name;
  const bool record =
      g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (record) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->forward = std::move(forward);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// --- sparse -------------------------------------------------------------------

std::shared_ptr<const SparseMatrix> SparseMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                                                std::vector<Triplet> triplets) {
  for (const auto& t : triplets) {
    if (t.row >= rows || t.col >= cols) {
      throw DimensionError("sparse entry (" + std::to_string(t.row) + "," + std::to_string(t.col) +
                           ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    if (!std::isfinite(t.value)) throw NumericDomainError("sparse entry weight is not finite");
  }
  auto make = [](std::size_t r, std::size_t c, std::vector<Triplet>& ts) {
    std::sort(ts.begin(), ts.end(),
              [](const Triplet& x, const Triplet& y) { return x.row != y.row ? x.row < y.row : x.col < y.col; });
    auto m = std::make_shared<SparseMatrix>();
    m->rows_ = r;
    m->cols_ = c;
    m->row_ptr_.assign(r + 1, 0);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (i > 0 && ts[i].row == ts[i - 1].row && ts[i].col == ts[i - 1].col) {
        m->values_.back() += ts[i].value;
        continue;
      }
      m->col_idx_.push_back(ts[i].col);
      m->values_.push_back(ts[i].value);
      m->row_ptr_[ts[i].row + 1] = m->values_.size();
    }
    for (std::size_t i = 1; i <= r; ++i) m->row_ptr_[i] = std::max(m->row_ptr_[i], m->row_ptr_[i - 1]);
    return m;
  };
  std::vector<Triplet> flipped;
  flipped.reserve(triplets.size());
  for (const auto& t : triplets) flipped.push_back({t.col, t.row, t.value});
  auto forward = make(rows, cols, triplets);
  forward->transposed_ = make(cols, rows, flipped);
  return forward;
}

double SparseMatrix::coeff(std::size_t r, std::size_t c) const {
  if (r >= rows_ || c >= cols_) throw DimensionError("coeff: index out of range");
  const auto first = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r]);
  const auto last = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[r + 1]);
  const auto it = std::lower_bound(first, last, c);
  if (it == last || *it != c) return 0.0;
  return values_[static_cast<std::size_t>(it - col_idx_.begin())];
}

std::vector<double> SparseMatrix::multiply(std::span<const double> dense, std::size_t dense_cols) const {
  std::vector<double> out(rows_ * dense_cols, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    double* dst = out.data() + r * dense_cols;
    for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
      const double w = values_[k];
      const double* src = dense.data() + col_idx_[k] * dense_cols;
      for (std::size_t c = 0; c < dense_cols; ++c) dst[c] += w * src[c];
    }
  }
  return out;
}

// --- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast mode = classify(a.shape(), b.shape(), "add");
  const Shape bs = b.shape();
  return make_op(
      "add", a.shape(), {a, b},
      [mode, shape = a.shape()](const KernelInputs& in) {
        return binary_apply(in[0], in[1], shape, mode, [](double x, double y) { return x + y; });
      },
      [bs](const Tensor& g, const Tensor&) { return std::vector<Tensor>{g, reduce_to(g, bs)}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Broadcast mode = classify(a.shape(), b.shape(), "sub");
  const Shape bs = b.shape();
  return make_op(
      "sub", a.shape(), {a, b},
      [mode, shape = a.shape()](const KernelInputs& in) {
        return binary_apply(in[0], in[1], shape, mode, [](double x, double y) { return x - y; });
      },
      [bs](const Tensor& g, const Tensor&) { return std::vector<Tensor>{g, neg(reduce_to(g, bs))}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast mode = classify(a.shape(), b.shape(), "mul");
  return make_op(
      "mul", a.shape(), {a, b},
      [mode, shape = a.shape()](const KernelInputs& in) {
        return binary_apply(in[0], in[1], shape, mode, [](double x, double y) { return x * y; });
      },
      [a, b](const Tensor& g, const Tensor&) {
        std::vector<Tensor> grads(2);
        if (a.requires_grad()) grads[0] = mul(g, b);
        if (b.requires_grad()) grads[1] = reduce_to(mul(g, a), b.shape());
        return grads;
      });
}

Tensor div(const Tensor& a, const Tensor& b) { return mul(a, reciprocal(b)); }

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double s) {
  return make_op(
      "scale", a.shape(), {a}, unary_kernel([s](double x) { return s * x; }),
      [s](const Tensor& g, const Tensor&) { return std::vector<Tensor>{scale(g, s)}; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return make_op(
      "add_scalar", a.shape(), {a}, unary_kernel([s](double x) { return x + s; }),
      [](const Tensor& g, const Tensor&) { return std::vector<Tensor>{g}; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("maximum: " + a.shape().str() + " vs " + b.shape().str());
  return make_op(
      "maximum", a.shape(), {a, b},
      [](const KernelInputs& in) {
        std::vector<double> out(in[0].size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(in[0][i], in[1][i]);
        return out;
      },
      [a, b](const Tensor& g, const Tensor&) {
        // Ties route the gradient to `a`.
        auto take_a = std::make_shared<std::vector<double>>(a.size());
        auto take_b = std::make_shared<std::vector<double>>(a.size());
        const auto av = a.data();
        const auto bv = b.data();
        for (std::size_t i = 0; i < take_a->size(); ++i) {
          (*take_a)[i] = av[i] >= bv[i] ? 1.0 : 0.0;
          (*take_b)[i] = 1.0 - (*take_a)[i];
        }
        return std::vector<Tensor>{mask_mul(g, take_a), mask_mul(g, take_b)};
      });
}

// --- linear algebra -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: " + a.shape().str() + " x " + b.shape().str());
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  return make_op(
      "matmul", Shape{m, n}, {a, b},
      [m, k, n](const KernelInputs& in) {
        std::vector<double> out(m * n, 0.0);
        if (m == 0 || n == 0 || k == 0) return out;
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                    static_cast<int>(k), 1.0, in[0].data(), static_cast<int>(k), in[1].data(),
                    static_cast<int>(n), 0.0, out.data(), static_cast<int>(n));
        return out;
      },
      [a, b](const Tensor& g, const Tensor&) {
        std::vector<Tensor> grads(2);
        if (a.requires_grad()) grads[0] = matmul(g, transpose(b));
        if (b.requires_grad()) grads[1] = matmul(transpose(a), g);
        return grads;
      });
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  return make_op(
      "transpose", Shape{c, r}, {a},
      [r, c](const KernelInputs& in) {
        std::vector<double> out(r * c);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[0][i * c + j];
        return out;
      },
      [](const Tensor& g, const Tensor&) { return std::vector<Tensor>{transpose(g)}; });
}

Tensor sparse_matmul(const std::shared_ptr<const SparseMatrix>& adj, const Tensor& x) {
  if (!adj) throw ContractError("sparse_matmul: null matrix");
  if (!adj->transposed()) throw ContractError("sparse_matmul: matrix was not built with from_triplets");
  return sparse_product(adj, adj->transposed(), x);
}

// --- pointwise nonlinearities ---------------------------------------------------

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor leaky_relu(const Tensor& a, double alpha) {
  return make_op(
      alpha == 0.0 ? "relu" : "leaky_relu", a.shape(), {a},
      unary_kernel([alpha](double x) { return x > 0.0 ? x : alpha * x; }),
      [a, alpha](const Tensor& g, const Tensor&) {
        // Piecewise linear: the slope mask is a constant, so the second
        // derivative is zero away from the kink.
        auto slope = std::make_shared<std::vector<double>>(a.size());
        const auto av = a.data();
        for (std::size_t i = 0; i < slope->size(); ++i) (*slope)[i] = av[i] > 0.0 ? 1.0 : alpha;
        return std::vector<Tensor>{mask_mul(g, std::move(slope))};
      });
}

Tensor sigmoid(const Tensor& a) {
  return make_op(
      "sigmoid", a.shape(), {a},
      unary_kernel([](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      }),
      [](const Tensor& g, const Tensor& out) {
        return std::vector<Tensor>{mul(g, mul(out, add_scalar(neg(out), 1.0)))};
      });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw NumericDomainError("log of non-positive value " + std::to_string(v));
  }
  return make_op(
      "log", a.shape(), {a}, unary_kernel([](double x) { return std::log(x); }),
      [a](const Tensor& g, const Tensor&) { return std::vector<Tensor>{mul(g, reciprocal(a))}; });
}

Tensor exp(const Tensor& a) {
  for (double v : a.data()) {
    if (v > 709.0) throw NumericDomainError("exp overflow for input " + std::to_string(v));
  }
  return make_op(
      "exp", a.shape(), {a}, unary_kernel([](double x) { return std::exp(x); }),
      [](const Tensor& g, const Tensor& out) { return std::vector<Tensor>{mul(g, out)}; });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v < 0.0) throw NumericDomainError("sqrt of negative value " + std::to_string(v));
  }
  return make_op(
      "sqrt", a.shape(), {a}, unary_kernel([](double x) { return std::sqrt(x); }),
      [](const Tensor& g, const Tensor& out) { return std::vector<Tensor>{mul(g, scale(reciprocal(out), 0.5))}; });
}

Tensor reciprocal(const Tensor& a) {
  for (double v : a.data()) {
    if (v == 0.0) throw NumericDomainError("reciprocal of zero");
  }
  return make_op(
      "reciprocal", a.shape(), {a}, unary_kernel([](double x) { return 1.0 / x; }),
      [](const Tensor& g, const Tensor& out) { return std::vector<Tensor>{neg(mul(g, square(out)))}; });
}

Tensor square(const Tensor& a) {
  return make_op(
      "square", a.shape(), {a}, unary_kernel([](double x) { return x * x; }),
      [a](const Tensor& g, const Tensor&) { return std::vector<Tensor>{mul(g, scale(a, 2.0))}; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw InvalidArgumentError("clamp: lo > hi");
  return make_op(
      "clamp", a.shape(), {a}, unary_kernel([lo, hi](double x) { return std::clamp(x, lo, hi); }),
      [a, lo, hi](const Tensor& g, const Tensor&) {
        auto inside = std::make_shared<std::vector<double>>(a.size());
        const auto av = a.data();
        for (std::size_t i = 0; i < inside->size(); ++i) (*inside)[i] = (av[i] >= lo && av[i] <= hi) ? 1.0 : 0.0;
        return std::vector<Tensor>{mask_mul(g, std::move(inside))};
      });
}

// --- reductions -----------------------------------------------------------------

Tensor sum(const Tensor& a) {
  const Shape s = a.shape();
  return make_op(
      "sum", Shape{1, 1}, {a},
      [](const KernelInputs& in) { return std::vector<double>{std::accumulate(in[0].begin(), in[0].end(), 0.0)}; },
      [s](const Tensor& g, const Tensor&) { return std::vector<Tensor>{expand(g, s)}; });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_rows(const Tensor& a) {
  const Shape s = a.shape();
  return make_op(
      "sum_rows", Shape{1, s.cols}, {a},
      [s](const KernelInputs& in) {
        std::vector<double> out(s.cols, 0.0);
        for (std::size_t r = 0; r < s.rows; ++r)
          for (std::size_t c = 0; c < s.cols; ++c) out[c] += in[0][r * s.cols + c];
        return out;
      },
      [s](const Tensor& g, const Tensor&) { return std::vector<Tensor>{expand(g, s)}; });
}

Tensor sum_cols(const Tensor& a) {
  const Shape s = a.shape();
  return make_op(
      "sum_cols", Shape{s.rows, 1}, {a},
      [s](const KernelInputs& in) {
        std::vector<double> out(s.rows, 0.0);
        for (std::size_t r = 0; r < s.rows; ++r)
          for (std::size_t c = 0; c < s.cols; ++c) out[r] += in[0][r * s.cols + c];
        return out;
      },
      [s](const Tensor& g, const Tensor&) { return std::vector<Tensor>{expand(g, s)}; });
}

Tensor expand(const Tensor& a, Shape shape) {
  if (a.shape() == shape) return a;
  const Broadcast mode = classify(shape, a.shape(), "expand");
  const Shape from = a.shape();
  return make_op(
      "expand", shape, {a},
      [shape, mode](const KernelInputs& in) {
        std::vector<double> zeros(shape.size(), 0.0);
        return binary_apply(zeros, in[0], shape, mode, [](double, double y) { return y; });
      },
      [from](const Tensor& g, const Tensor&) { return std::vector<Tensor>{reduce_to(g, from)}; });
}

Tensor reduce_to(const Tensor& a, Shape shape) {
  if (a.shape() == shape) return a;
  switch (classify(a.shape(), shape, "reduce_to")) {
    case Broadcast::kScalar: return sum(a);
    case Broadcast::kRow: return sum_rows(a);
    case Broadcast::kCol: return sum_cols(a);
    case Broadcast::kSame: break;
  }
  return a;
}

Tensor logsumexp_rows(const Tensor& a) {
  const Shape s = a.shape();
  if (s.cols == 0) throw ContractError("logsumexp over zero columns");
  return make_op(
      "logsumexp_rows", Shape{s.rows, 1}, {a},
      [s](const KernelInputs& in) {
        std::vector<double> out(s.rows);
        for (std::size_t r = 0; r < s.rows; ++r) {
          const auto row = in[0].subspan(r * s.cols, s.cols);
          const double mx = *std::max_element(row.begin(), row.end());
          double acc = 0.0;
          for (double v : row) acc += std::exp(v - mx);
          out[r] = mx + std::log(acc);
        }
        return out;
      },
      [a](const Tensor& g, const Tensor& out) {
        return std::vector<Tensor>{mul(exp(sub(a, out)), g)};
      });
}

// --- indexing -------------------------------------------------------------------

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  auto idx = std::make_shared<const std::vector<std::size_t>>(index.begin(), index.end());
  const Shape s = a.shape();
  for (std::size_t i : *idx) {
    if (i >= s.rows) throw DimensionError("gather_rows: row " + std::to_string(i) + " outside " + s.str());
  }
  return make_op(
      "gather_rows", Shape{idx->size(), s.cols}, {a},
      [idx, s](const KernelInputs& in) {
        std::vector<double> out(idx->size() * s.cols);
        for (std::size_t r = 0; r < idx->size(); ++r) {
          std::copy_n(in[0].begin() + static_cast<std::ptrdiff_t>((*idx)[r] * s.cols), s.cols,
                      out.begin() + static_cast<std::ptrdiff_t>(r * s.cols));
        }
        return out;
      },
      [idx, s](const Tensor& g, const Tensor&) {
        return std::vector<Tensor>{scatter_add_rows(g, *idx, s.rows)};
      });
}

Tensor scatter_add_rows(const Tensor& a, std::span<const std::size_t> index, std::size_t out_rows) {
  if (index.size() != a.rows()) throw DimensionError("scatter_add_rows: index length does not match rows");
  auto idx = std::make_shared<const std::vector<std::size_t>>(index.begin(), index.end());
  for (std::size_t i : *idx) {
    if (i >= out_rows) throw DimensionError("scatter_add_rows: target row out of range");
  }
  const std::size_t cols = a.cols();
  return make_op(
      "scatter_add_rows", Shape{out_rows, cols}, {a},
      [idx, cols, out_rows](const KernelInputs& in) {
        std::vector<double> out(out_rows * cols, 0.0);
        for (std::size_t r = 0; r < idx->size(); ++r) {
          double* dst = out.data() + (*idx)[r] * cols;
          const double* src = in[0].data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
        return out;
      },
      [idx](const Tensor& g, const Tensor&) { return std::vector<Tensor>{gather_rows(g, *idx)}; });
}

Tensor pad_cols(const Tensor& a, std::size_t begin, std::size_t total) {
  if (begin + a.cols() > total) throw DimensionError("pad_cols: slice does not fit");
  const Shape s = a.shape();
  return make_op(
      "pad_cols", Shape{s.rows, total}, {a},
      [s, begin, total](const KernelInputs& in) {
        std::vector<double> out(s.rows * total, 0.0);
        for (std::size_t r = 0; r < s.rows; ++r)
          std::copy_n(in[0].begin() + static_cast<std::ptrdiff_t>(r * s.cols), s.cols,
                      out.begin() + static_cast<std::ptrdiff_t>(r * total + begin));
        return out;
      },
      [begin, s](const Tensor& g, const Tensor&) { return std::vector<Tensor>{slice_cols(g, begin, s.cols)}; });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  const Shape s = a.shape();
  if (begin + count > s.cols) throw DimensionError("slice_cols: range outside " + s.str());
  return make_op(
      "slice_cols", Shape{s.rows, count}, {a},
      [s, begin, count](const KernelInputs& in) {
        std::vector<double> out(s.rows * count);
        for (std::size_t r = 0; r < s.rows; ++r)
          std::copy_n(in[0].begin() + static_cast<std::ptrdiff_t>(r * s.cols + begin), count,
                      out.begin() + static_cast<std::ptrdiff_t>(r * count));
        return out;
      },
      [begin, s](const Tensor& g, const Tensor&) { return std::vector<Tensor>{pad_cols(g, begin, s.cols)}; });
}

Tensor pad_rows(const Tensor& a, std::size_t begin, std::size_t total) {
  if (begin + a.rows() > total) throw DimensionError("pad_rows: slice does not fit");
  const Shape s = a.shape();
  return make_op(
      "pad_rows", Shape{total, s.cols}, {a},
      [s, begin, total](const KernelInputs& in) {
        std::vector<double> out(total * s.cols, 0.0);
        std::copy(in[0].begin(), in[0].end(), out.begin() + static_cast<std::ptrdiff_t>(begin * s.cols));
        return out;
      },
      [begin, s](const Tensor& g, const Tensor&) { return std::vector<Tensor>{slice_rows(g, begin, s.rows)}; });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  const Shape s = a.shape();
  if (begin + count > s.rows) throw DimensionError("slice_rows: range outside " + s.str());
  return make_op(
      "slice_rows", Shape{count, s.cols}, {a},
      [s, begin, count](const KernelInputs& in) {
        const auto first = in[0].begin() + static_cast<std::ptrdiff_t>(begin * s.cols);
        return std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count * s.cols));
      },
      [begin, s](const Tensor& g, const Tensor&) { return std::vector<Tensor>{pad_rows(g, begin, s.rows)}; });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  const std::size_t rows = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  return make_op(
      "concat_cols", Shape{rows, total}, std::vector<Tensor>(parts.begin(), parts.end()),
      [rows, total, widths](const KernelInputs& in) {
        std::vector<double> out(rows * total);
        std::size_t offset = 0;
        for (std::size_t p = 0; p < in.size(); ++p) {
          for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(in[p].begin() + static_cast<std::ptrdiff_t>(r * widths[p]), widths[p],
                        out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
          offset += widths[p];
        }
        return out;
      },
      [widths](const Tensor& g, const Tensor&) {
        std::vector<Tensor> grads;
        std::size_t offset = 0;
        for (std::size_t w : widths) {
          grads.push_back(slice_cols(g, offset, w));
          offset += w;
        }
        return grads;
      });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows of nothing");
  const std::size_t cols = parts.front().cols();
  std::vector<std::size_t> heights;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    heights.push_back(p.rows());
    total += p.rows();
  }
  return make_op(
      "concat_rows", Shape{total, cols}, std::vector<Tensor>(parts.begin(), parts.end()),
      [total, cols](const KernelInputs& in) {
        std::vector<double> out;
        out.reserve(total * cols);
        for (const auto& part : in) out.insert(out.end(), part.begin(), part.end());
        return out;
      },
      [heights](const Tensor& g, const Tensor&) {
        std::vector<Tensor> grads;
        std::size_t offset = 0;
        for (std::size_t h : heights) {
          grads.push_back(slice_rows(g, offset, h));
          offset += h;
        }
        return grads;
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape.size() != a.size()) throw DimensionError("reshape: " + a.shape().str() + " to " + shape.str());
  if (shape == a.shape()) return a;
  const Shape from = a.shape();
  return make_op(
      "reshape", shape, {a}, [](const KernelInputs& in) { return std::vector<double>(in[0].begin(), in[0].end()); },
      [from](const Tensor& g, const Tensor&) { return std::vector<Tensor>{reshape(g, from)}; });
}

// --- composites -------------------------------------------------------------------

Tensor row_dot(const Tensor& a, const Tensor& b) { return sum_cols(mul(a, b)); }

Tensor row_l2_normalize(const Tensor& a) {
  const Tensor sq = sum_cols(square(a));
  for (double v : sq.data()) {
    if (v < 1e-24) throw DegenerateOutputError("cannot L2-normalize a zero vector");
  }
  return div(a, sqrt(sq));
}

Tensor log_softmax_rows(const Tensor& a) { return sub(a, logsumexp_rows(a)); }

Tensor softmax_rows(const Tensor& a) { return exp(log_softmax_rows(a)); }

Tensor flatten(std::span<const Tensor> parts) {
  std::vector<Tensor> rows;
  rows.reserve(parts.size());
  for (const auto& p : parts) rows.push_back(reshape(p, Shape{1, p.size()}));
  return concat_cols(rows);
}

// --- ParamSet ---------------------------------------------------------------------

void ParamSet::add(std::string name, Tensor tensor) {
  if (find(name) != nullptr) throw InvalidArgumentError("duplicate parameter name " + name);
  entries_.push_back({std::move(name), std::move(tensor)});
}

const Tensor* ParamSet::find(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

std::size_t ParamSet::flat_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> out;
  out.reserve(flat_size());
  for (const auto& e : entries_) out.insert(out.end(), e.tensor.data().begin(), e.tensor.data().end());
  return out;
}

void ParamSet::unflatten(std::span<const double> flat) {
  if (flat.size() != flat_size()) throw DimensionError("unflatten: length mismatch");
  std::size_t offset = 0;
  for (auto& e : entries_) {
    auto dst = e.tensor.mutable_data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  }
}

// --- reverse pass -----------------------------------------------------------------

namespace {

// Post-order DFS: every node appears after all of its inputs.
std::vector<std::shared_ptr<detail::Node>> topological_order(const std::shared_ptr<detail::Node>& root,
                                                             bool grad_only) {
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<const detail::Node*> visited;
  struct Frame {
    std::shared_ptr<detail::Node> node;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({root});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next < top.node->inputs.size()) {
      const Tensor& child = top.node->inputs[top.next++];
      if (grad_only && !child.requires_grad()) continue;
      if (!visited.insert(child.node()).second) continue;
      stack.push_back({detail::NodeAccess::share(child)});
      continue;
    }
    order.push_back(top.node);
    stack.pop_back();
  }
  return order;
}

}  // namespace

std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt, bool create_graph) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + loss.shape().str());
  }
  std::vector<Tensor> result(wrt.size());
  if (!loss.requires_grad()) {
    for (std::size_t i = 0; i < wrt.size(); ++i) result[i] = Tensor::zeros(wrt[i].shape());
    return result;
  }

  const auto order = topological_order(loss.node_, true);
  std::unordered_set<const detail::Node*> keep;
  for (const auto& t : wrt) keep.insert(t.node());
  // Only nodes with a path from some wrt tensor need gradients.
  std::unordered_set<const detail::Node*> relevant(keep);
  for (const auto& node : order) {
    for (const auto& in : node->inputs) {
      if (relevant.contains(in.node())) {
        relevant.insert(node.get());
        break;
      }
    }
  }
  std::unordered_map<const detail::Node*, Tensor> grads;
  GradModeGuard mode(create_graph);
  grads[loss.node()] = Tensor::full({1, 1}, 1.0);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& node = *it;
    if (node->inputs.empty() || !relevant.contains(node.get())) continue;
    auto found = grads.find(node.get());
    if (found == grads.end()) continue;
    const Tensor upstream = found->second;
    const Tensor self(node);
    std::vector<Tensor> input_grads = node->backward(upstream, self);
    for (std::size_t i = 0; i < node->inputs.size() && i < input_grads.size(); ++i) {
      const Tensor& input = node->inputs[i];
      if (!input.requires_grad() || !input_grads[i].defined() || !relevant.contains(input.node())) continue;
      auto [slot, inserted] = grads.try_emplace(input.node(), input_grads[i]);
      if (!inserted) slot->second = add(slot->second, input_grads[i]);
    }
    // Upstream gradients of consumed nodes are no longer needed.
    if (!create_graph && !keep.contains(node.get())) grads.erase(node.get());
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) {
    auto found = grads.find(wrt[i].node());
    result[i] = found == grads.end() ? Tensor::zeros(wrt[i].shape()) : found->second;
  }
  return result;
}

std::vector<Tensor> backward(const Tensor& loss, const ParamSet& wrt, bool create_graph) {
  const auto tensors = wrt.tensors();
  return grad(loss, tensors, create_graph);
}

// --- Tape -------------------------------------------------------------------------

Tape Tape::capture(const Tensor& root) {
  Tape tape;
  if (!root.defined()) return tape;
  const auto order = topological_order(root.node_, false);
  std::unordered_map<const detail::Node*, std::size_t> position;
  for (std::size_t i = 0; i < order.size(); ++i) position[order[i].get()] = i;
  for (const auto& node : order) {
    Entry e{node->id, node->op, {}};
    for (const auto& in : node->inputs) e.inputs.push_back(position.at(in.node()));
    tape.entries_.push_back(std::move(e));
    tape.nodes_.push_back(Tensor(node));
  }
  return tape;
}

bool Tape::is_topological() const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    for (std::size_t in : entries_[i].inputs)
      if (in >= i) return false;
  return true;
}

std::vector<std::vector<double>> Tape::replay() const {
  std::vector<std::vector<double>> values(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto* node = nodes_[i].node();
    if (node->inputs.empty()) {
      values[i] = node->value;
      continue;
    }
    KernelInputs spans;
    for (std::size_t in : entries_[i].inputs) spans.push_back(values[in]);
    values[i] = node->forward(spans);
  }
  return values;
}

std::vector<std::vector<double>> Tape::recorded() const {
  std::vector<std::vector<double>> values;
  values.reserve(nodes_.size());
  for (const auto& t : nodes_) values.push_back(t.to_vector());
  return values;
}

}  // namespace coast
