#include "samamba/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace samamba {
namespace {

std::atomic<std::uint64_t> next_id{1};
thread_local bool grad_mode = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->id = next_id.fetch_add(1);
  return node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = numel(shape);
  auto node = new_node(std::move(shape), std::vector<double>(n, value));
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  auto node = new_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("tensor: undefined");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("tensor: axis out of range");
  return s[axis];
}

std::size_t Tensor::size() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) throw ContractError("tensor: undefined");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ContractError("tensor: undefined");
  if (!node_->is_leaf()) throw ContractError("tensor: only leaves can be modified in place");
  return node_->data;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("tensor: item() on non-scalar " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_) throw ContractError("tensor: undefined");
  if (!node_->is_leaf()) throw ContractError("tensor: requires_grad can only be set on leaves");
  node_->requires_grad = flag;
}

std::span<const double> Tensor::grad() const {
  if (!node_) throw ContractError("tensor: undefined");
  node_->ensure_grad();
  return node_->grad;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

std::uint64_t Tensor::id() const { return node_ ? node_->id : 0; }

const char* Tensor::op() const { return node_ ? node_->op : "undefined"; }

bool grad_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined root");
  if (loss.size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + shape_str(loss.shape()));
  }
  auto root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::Node*> order;
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf()) continue;
    n->backward(*n);
    // Intermediate gradients are not needed once propagated.
    std::vector<double>().swap(n->grad);
  }
}

namespace detail {

namespace {

void check_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": produced a non-finite value");
  }
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                   const std::vector<Tensor>& inputs, BackwardFn fn) {
  check_finite(values, op);
  auto node = new_node(std::move(shape), std::move(values));
  node->op = op;
  bool needs = false;
  if (grad_mode) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(fn);
  }
  return Tensor(node);
}

Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                   std::initializer_list<Tensor> inputs, BackwardFn fn) {
  return make_result(std::move(shape), std::move(values), op, std::vector<Tensor>(inputs), std::move(fn));
}

double* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  in.ensure_grad();
  return in.grad.data();
}

const std::vector<double>& input_data(const Node& self, std::size_t i) { return self.inputs[i]->data; }

}  // namespace detail
}  // namespace samamba
