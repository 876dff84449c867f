#pragma once

// Define-by-run reverse-mode automatic differentiation over dense row-major
// tensors. A Tape is built fresh for every forward pass; trainable values
// live in a ParameterStore outside the tape and receive their gradients in
// place when Tape::backward runs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hsnerf {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading extent for 2-D tensors; 1 for vectors and scalars.
  std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
  /// Trailing extent.
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  void fill(double v);

  bool requires_grad = false;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// A named trainable block owned by a ParameterStore.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Ordered collection of parameters with stable addresses.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor value);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t total_numel() const;
  /// Total element count of parameters whose name starts with prefix.
  std::size_t numel_with_prefix(std::string_view prefix) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t numel() const { return value().numel(); }
};

class Tape {
 public:
  using NodeId = std::uint32_t;
  /// Called once during backward with the gradient flowing into the node.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  struct Node {
    std::string_view op;
    std::vector<NodeId> inputs;
    Tensor value;
    Parameter* param = nullptr;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  /// With grad_enabled=false, parameters enter as constants and no backward
  /// closures are kept (inference mode).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  /// Leaf that honours value.requires_grad.
  Var leaf(Tensor value);
  /// Leaf bound to a parameter; gradients accumulate into param.grad.
  Var param(Parameter& p);

  /// Records an op output. The result requires grad if any input does.
  Var record(std::string_view op, Tensor value, std::vector<NodeId> inputs, BackwardFn fn);

  const Tensor& value(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  /// Zero-initialized (on first use) gradient buffer of a node.
  Tensor& grad_buffer(NodeId id);
  /// Gradient of a node after backward; zeros if nothing reached it.
  Tensor grad(Var v) const;

  /// Reverse sweep from a scalar loss node.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_[id]; }

 private:
  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, NodeId> param_nodes_;
};

/// Differentiable operations. All tensors are row-major; "vector" means a
/// 1-D tensor and matrices are 2-D. Shape violations throw ShapeError naming
/// the op and the offending shapes.
namespace ad {

Var matmul(Var a, Var b);                   // [n,k] x [k,m]
Var add(Var a, Var b);                      // same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);                      // elementwise
Var add_row(Var a, Var row);                // [n,m] + [m] broadcast over rows
Var broadcast_rows(Var row, std::size_t n); // [m] -> [n,m]
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);
/// ln(1 + exp(x - shift)); strictly positive.
Var softplus(Var a, double shift = 1.0);
Var exp(Var a);
Var concat(std::span<const Var> parts);     // along last axis
Var concat(std::initializer_list<Var> parts);
Var sum(Var a);                             // -> scalar
Var mean(Var a);
Var mse(Var a, Var b);                      // mean squared error -> scalar
Var sse(Var a, Var b);                      // sum of squared errors -> scalar
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::span<const std::size_t> index);
Var gather_cols(Var a, std::span<const std::size_t> index);
/// out has total_rows rows; out[index[j]] = a[j], other rows = fill.
Var scatter_rows(Var a, std::span<const std::size_t> index, std::size_t total_rows, double fill);
Var reshape(Var a, Shape shape);
/// out[i*L + l] = a[i] + b[l] for a:[n,h], b:[L,h] -> [n*L,h].
Var pair_sum(Var a, Var b);
/// Copy of the value with no gradient path.
Var detach(Var a);

}  // namespace ad

}  // namespace hsnerf
