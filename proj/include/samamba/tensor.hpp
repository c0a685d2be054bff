#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace samamba {

using Shape = std::vector<std::size_t>;

/// Thrown when tensor extents do not agree with what an operation needs.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a caller breaks an API precondition (non-scalar backward root, bad padding...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown for invalid configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an operation produces a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the grads of `inputs`.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  bool is_leaf() const { return !backward; }
};

}  // namespace detail

/// Dense row-major f64 array that can take part in a reverse-mode graph.
///
/// Copies are shallow: two `Tensor` handles may refer to the same node. Every
/// primitive returns a fresh node; only leaves are ever mutated in place (by the
/// optimizer and by parameter import).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double at(std::size_t i) const { return data()[i]; }
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  /// Accumulated gradient; all zeros when nothing reached this tensor.
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  /// Same values, cut from the graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  std::uint64_t id() const;
  const char* op() const;
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Runs reverse-mode differentiation from a scalar root. Leaf gradients
/// accumulate across calls until `zero_grad`.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

using BackwardFn = std::function<void(Node&)>;

/// Builds the result node of a primitive. Records inputs and the backward
/// closure only when grad mode is on and some input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                   std::initializer_list<Tensor> inputs, BackwardFn fn);
Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                   const std::vector<Tensor>& inputs, BackwardFn fn);

/// Grad buffer of input `i` of `self`, or nullptr when it does not need one.
double* input_grad(Node& self, std::size_t i);
const std::vector<double>& input_data(const Node& self, std::size_t i);

}  // namespace detail

}  // namespace samamba
