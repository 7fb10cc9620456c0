#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "agtfuse/rng.hpp"

namespace agtfuse {

/// Shape/width mismatches and invalid arguments to tensor operations.
class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised as soon as a NaN or Inf shows up in a forward value or a gradient.
/// Non-finite numbers are an error state here, never something to propagate.
class NumericsError : public std::runtime_error {
 public:
  explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

std::string shape_to_string(std::span<const std::size_t> shape);

/// Dense row-major tensor of doubles. A Tensor is a cheap value handle onto a
/// shared node holding data and (optionally) a gradient buffer. Forward
/// operations never mutate their inputs; new tensors are created instead.
/// Parameter updates go through mutable_data(), which is reserved for
/// optimizers and initialization.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<std::size_t> shape,
                          std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);
  /// Gaussian init, N(0, stddev^2), drawn in row-major order from `rng`.
  static Tensor randn(std::vector<std::size_t> shape, SplitMix64& rng,
                      double stddev, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t size() const;
  std::size_t ndim() const { return shape().size(); }
  /// 2-D accessors; throw unless ndim()==2.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  /// Value of a 1-element tensor.
  double value() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  // Gradient buffers live on the shared node, so these are callable through
  // any handle, const included.
  void zero_grad() const;
  /// Adds `delta` into the grad buffer (allocating it zeroed on first use).
  /// Throws NumericsError if the incoming values are not all finite.
  void accumulate_grad(std::span<const double> delta, const char* context) const;

  /// Identity of the underlying node; distinct tensors sharing a node
  /// compare equal.
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
  };

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  Node& node();
  const Node& node() const;

  std::shared_ptr<Node> node_;
};

/// Reverse-mode tape. Operations executed while a Tape is active (via
/// Tape::Scope) and touching at least one requires_grad tensor are recorded
/// in execution order, which is already topological: an operation's inputs
/// always precede it. backward() seeds the root with 1 and replays the
/// recorded rules exactly once each, in reverse order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* name, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward);

  /// Runs the reverse sweep from `root`, which must be a recorded scalar.
  void backward(const Tensor& root);

  std::size_t num_ops() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  /// RAII activation: the innermost live Scope's tape receives recordings
  /// on this thread. No scope active means forward-only execution.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active() noexcept;

 private:
  struct Recorded {
    const char* name;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Recorded> ops_;
};

// --- differentiable operations -------------------------------------------
// Each returns a fresh tensor; inputs are untouched. All forward outputs are
// checked finite (NumericsError otherwise).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double c);
/// mat[m,n] + row[n], broadcast over rows.
Tensor add_rowwise(const Tensor& mat, const Tensor& row);
/// Standard 2-D matrix product; backward accumulates dA = dC.B^T, dB = A^T.dC.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Same data, new shape (element count preserved).
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t width);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Stacks 1-D tensors of equal length into the rows of a matrix.
Tensor stack_rows(const std::vector<Tensor>& rows);
/// Mean over rows of a matrix -> 1-D tensor of column means.
Tensor mean_rows(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor gelu(const Tensor& a);
/// Softmax along `axis` (negative counts from the end). Max-subtracted for
/// stability; output sums to 1 along the axis.
Tensor softmax(const Tensor& x, int axis = -1);
/// Row-wise x / ||x||_2. Zero-norm rows are an error.
Tensor l2_normalize_rows(const Tensor& x);
/// y = gamma * (x - mean) / sqrt(var + eps) + beta over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
/// Mean over the batch of -log softmax(logits)[label]. logits is [b, c],
/// labels holds b class indices in [0, c).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace agtfuse
