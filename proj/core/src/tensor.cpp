#include "agtfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace agtfuse {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t shape_product(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check_positive_dims(std::span<const std::size_t> shape) {
  for (std::size_t d : shape) {
    if (d == 0) {
      throw TensorError("tensor dimensions must be positive, got " +
                        shape_to_string(shape));
    }
  }
}

void ensure_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericsError(std::string("non-finite value in forward output of ") +
                          op);
    }
  }
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw TensorError(std::string(op) + ": expected a 2-D tensor, got shape " +
                      shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw TensorError(std::string(op) + ": shape mismatch " +
                      shape_to_string(a.shape()) + " vs " +
                      shape_to_string(b.shape()));
  }
}

/// Wraps a freshly computed forward result: finite-checks it, and if a tape
/// is active and any input needs gradients, marks the output and records the
/// backward rule.
Tensor finish(const char* op, Tensor result, std::vector<Tensor> inputs,
              std::function<void()> backward) {
  ensure_finite(result.data(), op);
  Tape* tape = Tape::active();
  if (tape != nullptr) {
    bool any = false;
    for (const Tensor& in : inputs) any = any || in.requires_grad();
    if (any) {
      result.set_requires_grad(true);
      tape->record(op, std::move(inputs), result, std::move(backward));
    }
  }
  return result;
}

}  // namespace

std::string shape_to_string(std::span<const std::size_t> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// --- Tensor ----------------------------------------------------------------

Tensor::Node& Tensor::node() {
  if (!node_) throw TensorError("use of an undefined tensor");
  return *node_;
}

const Tensor::Node& Tensor::node() const {
  if (!node_) throw TensorError("use of an undefined tensor");
  return *node_;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value,
                    bool requires_grad) {
  check_positive_dims(shape);
  auto node = std::make_shared<Node>();
  node->data.assign(shape_product(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(std::vector<std::size_t> shape,
                         std::vector<double> data, bool requires_grad) {
  check_positive_dims(shape);
  if (shape_product(shape) != data.size()) {
    throw TensorError("data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_to_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::randn(std::vector<std::size_t> shape, SplitMix64& rng,
                     double stddev, bool requires_grad) {
  std::vector<double> data(shape_product(shape));
  for (double& v : data) v = stddev * rng.next_gaussian();
  return from_data(std::move(shape), std::move(data), requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const { return node().shape; }
std::size_t Tensor::size() const { return node().data.size(); }

std::size_t Tensor::rows() const {
  require_2d(*this, "rows");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require_2d(*this, "cols");
  return shape()[1];
}

std::span<const double> Tensor::data() const { return node().data; }
std::span<double> Tensor::mutable_data() { return node().data; }

double Tensor::at(std::size_t i) const {
  if (i >= size()) throw TensorError("index out of range");
  return node().data[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  require_2d(*this, "at");
  if (i >= shape()[0] || j >= shape()[1]) {
    throw TensorError("index out of range");
  }
  return node().data[i * shape()[1] + j];
}

double Tensor::value() const {
  if (size() != 1) {
    throw TensorError("value() requires a 1-element tensor, got shape " +
                      shape_to_string(shape()));
  }
  return node().data[0];
}

bool Tensor::requires_grad() const { return node().requires_grad; }
void Tensor::set_requires_grad(bool flag) { node().requires_grad = flag; }
bool Tensor::has_grad() const { return !node().grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) {
    throw TensorError("gradient not available; run backward first");
  }
  return node().grad;
}

void Tensor::zero_grad() const {
  if (!node_) throw TensorError("use of an undefined tensor");
  auto& g = node_->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> delta,
                             const char* context) const {
  if (!node_) throw TensorError("use of an undefined tensor");
  Node& n = *node_;
  if (delta.size() != n.data.size()) {
    throw TensorError(std::string("gradient size mismatch in ") + context);
  }
  for (double v : delta) {
    if (!std::isfinite(v)) {
      throw NumericsError(std::string("non-finite gradient in backward of ") +
                          context);
    }
  }
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  for (std::size_t i = 0; i < delta.size(); ++i) n.grad[i] += delta[i];
}

// --- Tape --------------------------------------------------------------------

Tape* Tape::active() noexcept { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

Tape::Scope::~Scope() { g_active_tape = previous_; }

void Tape::record(const char* name, std::vector<Tensor> inputs, Tensor output,
                  std::function<void()> backward) {
  ops_.push_back(
      Recorded{name, std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& root) {
  if (root.size() != 1) {
    throw TensorError("backward requires a scalar root, got shape " +
                      shape_to_string(root.shape()));
  }
  if (!root.requires_grad()) {
    throw TensorError("backward root was not recorded on the tape");
  }
  const double one = 1.0;
  root.accumulate_grad(std::span<const double>(&one, 1), "backward seed");
  // Execution order is topological, so one reverse pass visits every
  // operation after all consumers of its output.
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (it->output.has_grad()) {
      it->backward();
    }
  }
}

// --- operations -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("add", result, {a, b}, [a, b, result]() mutable {
    auto g = result.grad();
    if (a.requires_grad()) a.accumulate_grad(g, "add");
    if (b.requires_grad()) b.accumulate_grad(g, "add");
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("sub", result, {a, b}, [a, b, result]() mutable {
    auto g = result.grad();
    if (a.requires_grad()) a.accumulate_grad(g, "sub");
    if (b.requires_grad()) {
      std::vector<double> neg(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
      b.accumulate_grad(neg, "sub");
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("mul", result, {a, b}, [a, b, result]() mutable {
    auto g = result.grad();
    std::vector<double> buf(g.size());
    if (a.requires_grad()) {
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * b.data()[i];
      a.accumulate_grad(buf, "mul");
    }
    if (b.requires_grad()) {
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * a.data()[i];
      b.accumulate_grad(buf, "mul");
    }
  });
}

Tensor scalar_mul(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw NumericsError("scalar_mul: non-finite scalar");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.data()[i];
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("scalar_mul", result, {a}, [a, c, result]() mutable {
    auto g = result.grad();
    std::vector<double> buf(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] = c * g[i];
    a.accumulate_grad(buf, "scalar_mul");
  });
}

Tensor add_rowwise(const Tensor& mat, const Tensor& row) {
  require_2d(mat, "add_rowwise");
  if (row.ndim() != 1 || row.size() != mat.cols()) {
    throw TensorError("add_rowwise: row shape " + shape_to_string(row.shape()) +
                      " does not match matrix " + shape_to_string(mat.shape()));
  }
  const std::size_t m = mat.rows(), n = mat.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = mat.data()[i * n + j] + row.data()[j];
  Tensor result = Tensor::from_data(mat.shape(), std::move(out));
  return finish("add_rowwise", result, {mat, row}, [mat, row, result]() mutable {
    auto g = result.grad();
    const std::size_t m = mat.rows(), n = mat.cols();
    if (mat.requires_grad()) mat.accumulate_grad(g, "add_rowwise");
    if (row.requires_grad()) {
      std::vector<double> gr(n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
      row.accumulate_grad(gr, "add_rowwise");
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw TensorError("matmul: inner dimensions disagree, " +
                      shape_to_string(a.shape()) + " vs " +
                      shape_to_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[p * n + j];
    }
  }
  Tensor result = Tensor::from_data({m, n}, std::move(out));
  return finish("matmul", result, {a, b}, [a, b, result]() mutable {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    auto g = result.grad();
    if (a.requires_grad()) {
      // dA = dC . B^T
      std::vector<double> ga(m * k, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g[i * n + j];
          if (gv == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p)
            ga[i * k + p] += gv * b.data()[p * n + j];
        }
      a.accumulate_grad(ga, "matmul");
    }
    if (b.requires_grad()) {
      // dB = A^T . dC
      std::vector<double> gb(k * n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = a.data()[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j)
            gb[p * n + j] += av * g[i * n + j];
        }
      b.accumulate_grad(gb, "matmul");
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  Tensor result = Tensor::from_data({n, m}, std::move(out));
  return finish("transpose", result, {a}, [a, result]() mutable {
    const std::size_t m = a.rows(), n = a.cols();
    auto g = result.grad();
    std::vector<double> ga(m * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i) ga[i * n + j] = g[j * m + i];
    a.accumulate_grad(ga, "transpose");
  });
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  check_positive_dims(shape);
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (n != a.size()) {
    throw TensorError("reshape: cannot view " + shape_to_string(a.shape()) +
                      " as " + shape_to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  Tensor result = Tensor::from_data(std::move(shape), std::move(out));
  return finish("reshape", result, {a}, [a, result]() mutable {
    a.accumulate_grad(result.grad(), "reshape");
  });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t width) {
  require_2d(a, "slice_cols");
  if (width == 0 || start + width > a.cols()) {
    throw TensorError("slice_cols: range [" + std::to_string(start) + ", " +
                      std::to_string(start + width) + ") out of " +
                      shape_to_string(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * width);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < width; ++j)
      out[i * width + j] = a.data()[i * n + start + j];
  Tensor result = Tensor::from_data({m, width}, std::move(out));
  return finish("slice_cols", result, {a}, [a, start, width, result]() mutable {
    const std::size_t m = a.rows(), n = a.cols();
    auto g = result.grad();
    std::vector<double> ga(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < width; ++j)
        ga[i * n + start + j] = g[i * width + j];
    a.accumulate_grad(ga, "slice_cols");
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw TensorError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) {
      throw TensorError("concat_cols: row count mismatch " +
                        shape_to_string(parts.front().shape()) + " vs " +
                        shape_to_string(p.shape()));
    }
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out[i * total + offset + j] = p.data()[i * w + j];
    offset += w;
  }
  Tensor result = Tensor::from_data({m, total}, std::move(out));
  std::vector<Tensor> inputs = parts;
  return finish("concat_cols", result, inputs, [inputs, result]() mutable {
    const std::size_t m = result.rows(), total = result.cols();
    auto g = result.grad();
    std::size_t offset = 0;
    for (Tensor& p : inputs) {
      const std::size_t w = p.cols();
      if (p.requires_grad()) {
        std::vector<double> gp(m * w);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j)
            gp[i * w + j] = g[i * total + offset + j];
        p.accumulate_grad(gp, "concat_cols");
      }
      offset += w;
    }
  });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw TensorError("stack_rows: no inputs");
  const std::size_t n = rows.front().size();
  for (const Tensor& r : rows) {
    if (r.ndim() != 1 || r.size() != n) {
      throw TensorError("stack_rows: expected 1-D tensors of length " +
                        std::to_string(n) + ", got " +
                        shape_to_string(r.shape()));
    }
  }
  const std::size_t m = rows.size();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    std::copy(rows[i].data().begin(), rows[i].data().end(), out.begin() + i * n);
  Tensor result = Tensor::from_data({m, n}, std::move(out));
  std::vector<Tensor> inputs = rows;
  return finish("stack_rows", result, inputs, [inputs, result]() mutable {
    const std::size_t n = inputs.front().size();
    auto g = result.grad();
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].requires_grad()) {
        inputs[i].accumulate_grad(g.subspan(i * n, n), "stack_rows");
      }
    }
  });
}

Tensor mean_rows(const Tensor& a) {
  require_2d(a, "mean_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a.data()[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  Tensor result = Tensor::from_data({n}, std::move(out));
  return finish("mean_rows", result, {a}, [a, result]() mutable {
    const std::size_t m = a.rows(), n = a.cols();
    auto g = result.grad();
    std::vector<double> ga(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        ga[i * n + j] = g[j] / static_cast<double>(m);
    a.accumulate_grad(ga, "mean_rows");
  });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor result = Tensor::from_data({1}, {s});
  return finish("sum_all", result, {a}, [a, result]() mutable {
    const double g = result.grad()[0];
    std::vector<double> ga(a.size(), g);
    a.accumulate_grad(ga, "sum_all");
  });
}

Tensor gelu(const Tensor& a) {
  // Exact form, 0.5 x (1 + erf(x / sqrt(2))).
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  Tensor result = Tensor::from_data(a.shape(), std::move(out));
  return finish("gelu", result, {a}, [a, result]() mutable {
    auto g = result.grad();
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = a.data()[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      ga[i] = g[i] * (cdf + x * pdf);
    }
    a.accumulate_grad(ga, "gelu");
  });
}

namespace {

struct AxisLayout {
  std::size_t outer, len, inner;
};

AxisLayout axis_layout(const Tensor& x, int axis, const char* op) {
  const auto& shape = x.shape();
  int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw TensorError(std::string(op) + ": axis out of range for shape " +
                      shape_to_string(shape));
  }
  AxisLayout l{1, shape[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) l.outer *= shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < rank; ++i)
    l.inner *= shape[static_cast<std::size_t>(i)];
  return l;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const AxisLayout l = axis_layout(x, axis, "softmax");
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      double mx = xd[base];
      for (std::size_t k = 1; k < l.len; ++k)
        mx = std::max(mx, xd[base + k * l.inner]);
      double denom = 0.0;
      for (std::size_t k = 0; k < l.len; ++k) {
        const double e = std::exp(xd[base + k * l.inner] - mx);
        out[base + k * l.inner] = e;
        denom += e;
      }
      for (std::size_t k = 0; k < l.len; ++k) out[base + k * l.inner] /= denom;
    }
  }
  Tensor result = Tensor::from_data(x.shape(), std::move(out));
  return finish("softmax", result, {x}, [x, result, l]() mutable {
    auto g = result.grad();
    const auto y = result.data();
    std::vector<double> gx(g.size());
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.len * l.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < l.len; ++k) {
          const std::size_t idx = base + k * l.inner;
          dot += g[idx] * y[idx];
        }
        for (std::size_t k = 0; k < l.len; ++k) {
          const std::size_t idx = base + k * l.inner;
          gx[idx] = y[idx] * (g[idx] - dot);
        }
      }
    }
    x.accumulate_grad(gx, "softmax");
  });
}

Tensor l2_normalize_rows(const Tensor& x) {
  require_2d(x, "l2_normalize_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = x.data()[i * n + j];
      s += v * v;
    }
    const double norm = std::sqrt(s);
    if (norm == 0.0) {
      throw NumericsError("l2_normalize_rows: zero-norm row " +
                          std::to_string(i));
    }
    norms[i] = norm;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.data()[i * n + j] / norm;
  }
  Tensor result = Tensor::from_data({m, n}, std::move(out));
  return finish("l2_normalize_rows", result, {x},
                [x, result, norms = std::move(norms)]() mutable {
                  const std::size_t m = x.rows(), n = x.cols();
                  auto g = result.grad();
                  const auto y = result.data();
                  std::vector<double> gx(m * n);
                  for (std::size_t i = 0; i < m; ++i) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                      dot += y[i * n + j] * g[i * n + j];
                    for (std::size_t j = 0; j < n; ++j) {
                      gx[i * n + j] =
                          (g[i * n + j] - y[i * n + j] * dot) / norms[i];
                    }
                  }
                  x.accumulate_grad(gx, "l2_normalize_rows");
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.ndim() == 0) throw TensorError("layer_norm: empty tensor");
  if (eps <= 0.0) throw TensorError("layer_norm: eps must be positive");
  const std::size_t d = x.shape().back();
  if (gamma.ndim() != 1 || gamma.size() != d || beta.ndim() != 1 ||
      beta.size() != d) {
    throw TensorError("layer_norm: gamma/beta must be [" + std::to_string(d) +
                      "], got " + shape_to_string(gamma.shape()) + " and " +
                      shape_to_string(beta.shape()));
  }
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> inv_std(rows);
  std::vector<double> xhat(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  Tensor result = Tensor::from_data(x.shape(), std::move(out));
  return finish(
      "layer_norm", result, {x, gamma, beta},
      [x, gamma, beta, result, d, rows, inv_std = std::move(inv_std),
       xhat = std::move(xhat)]() mutable {
        auto g = result.grad();
        std::vector<double> gx(x.size());
        std::vector<double> ggamma(d, 0.0), gbeta(d, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          const double is = inv_std[r];
          double sum_gh = 0.0, sum_gh_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t idx = r * d + j;
            const double gh = g[idx] * gamma.data()[j];
            sum_gh += gh;
            sum_gh_xhat += gh * xhat[idx];
            ggamma[j] += g[idx] * xhat[idx];
            gbeta[j] += g[idx];
          }
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t idx = r * d + j;
            const double gh = g[idx] * gamma.data()[j];
            gx[idx] =
                is * (gh - inv_d * sum_gh - xhat[idx] * inv_d * sum_gh_xhat);
          }
        }
        if (x.requires_grad()) x.accumulate_grad(gx, "layer_norm");
        if (gamma.requires_grad()) gamma.accumulate_grad(ggamma, "layer_norm");
        if (beta.requires_grad()) beta.accumulate_grad(gbeta, "layer_norm");
      });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_2d(logits, "cross_entropy");
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b) {
    throw TensorError("cross_entropy: got " + std::to_string(labels.size()) +
                      " labels for " + std::to_string(b) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw TensorError("cross_entropy: label " + std::to_string(y) +
                        " out of range [0, " + std::to_string(c) + ")");
    }
  }
  // loss_i = logsumexp(row_i) - row_i[y_i], max-subtracted for stability.
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = logits.data().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    total += mx + std::log(denom) - row[static_cast<std::size_t>(labels[i])];
  }
  const double loss = total / static_cast<double>(b);
  Tensor result = Tensor::from_data({1}, {loss});
  return finish("cross_entropy", result, {logits},
                [logits, labels, result, b, c]() mutable {
                  const double g = result.grad()[0];
                  std::vector<double> gl(b * c);
                  for (std::size_t i = 0; i < b; ++i) {
                    const double* row = logits.data().data() + i * c;
                    double mx = row[0];
                    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
                    double denom = 0.0;
                    for (std::size_t j = 0; j < c; ++j)
                      denom += std::exp(row[j] - mx);
                    for (std::size_t j = 0; j < c; ++j) {
                      double p = std::exp(row[j] - mx) / denom;
                      if (j == static_cast<std::size_t>(labels[i])) p -= 1.0;
                      gl[i * c + j] = g * p / static_cast<double>(b);
                    }
                  }
                  logits.accumulate_grad(gl, "cross_entropy");
                });
}

}  // namespace agtfuse
