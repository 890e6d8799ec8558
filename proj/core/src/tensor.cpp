#include "grcn/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "grcn/errors.hpp"

namespace grcn {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

namespace {

std::shared_ptr<TensorNode> new_node(std::vector<int> shape) {
  for (int d : shape) {
    if (d <= 0) {
      throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
  }
  auto node = std::make_shared<TensorNode>();
  const std::int64_t n = shape_numel(shape);
  node->shape = std::move(shape);
  node->values.assign(static_cast<std::size_t>(n), 0.0);
  node->grad.assign(static_cast<std::size_t>(n), 0.0);
  return node;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(new_node(std::move(shape))); }

Tensor Tensor::full(std::vector<int> shape, double value) {
  auto node = new_node(std::move(shape));
  for (auto& v : node->values) v = value;
  return Tensor(std::move(node));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
  auto node = new_node(std::move(shape));
  if (static_cast<std::int64_t>(values.size()) != shape_numel(node->shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(node->shape));
  }
  node->values = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const std::vector<int>& Tensor::shape() const { return node_->shape; }
int Tensor::ndim() const { return static_cast<int>(node_->shape.size()); }

int Tensor::dim(int axis) const {
  if (axis < 0 || axis >= ndim()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::int64_t Tensor::size() const { return static_cast<std::int64_t>(node_->values.size()); }

std::vector<double>& Tensor::values() { return node_->values; }
const std::vector<double>& Tensor::values() const { return node_->values; }
std::vector<double>& Tensor::grad() { return node_->grad; }
const std::vector<double>& Tensor::grad() const { return node_->grad; }

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on non-scalar tensor of shape " + shape_str(node_->shape));
  }
  return node_->values[0];
}

namespace {
std::size_t flat_index(const std::vector<int>& shape, std::initializer_list<int> index) {
  if (index.size() != shape.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) +
                         " does not match tensor rank " + std::to_string(shape.size()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (int i : index) {
    if (i < 0 || i >= shape[axis]) {
      throw DimensionError("index " + std::to_string(i) + " out of bounds on axis " +
                           std::to_string(axis) + " of shape " + shape_str(shape));
    }
    flat = flat * static_cast<std::size_t>(shape[axis]) + static_cast<std::size_t>(i);
    ++axis;
  }
  return flat;
}
}  // namespace

double Tensor::at(std::initializer_list<int> index) const {
  return node_->values[flat_index(node_->shape, index)];
}

double& Tensor::at(std::initializer_list<int> index) {
  return node_->values[flat_index(node_->shape, index)];
}

double Tensor::grad_at(std::initializer_list<int> index) const {
  return node_->grad[flat_index(node_->shape, index)];
}

void Tensor::set_requires_grad(bool enabled) { node_->requires_grad = enabled; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::zero_grad() {
  for (auto& g : node_->grad) g = 0.0;
}

const void* Tensor::node_id() const { return node_.get(); }

Tensor Tensor::make_op(std::vector<int> shape, std::vector<Tensor> parents,
                       std::function<void(TensorNode&)> backward) {
  auto node = new_node(std::move(shape));
  bool any_requires = false;
  for (const auto& p : parents) any_requires = any_requires || p.requires_grad();
  node->requires_grad = any_requires;
  node->parents = std::move(parents);
  if (any_requires) node->backward_fn = std::move(backward);
  return Tensor(std::move(node));
}

void Tensor::backward() {
  if (size() != 1) {
    throw DimensionError("backward() must start from a scalar, got shape " +
                         shape_str(node_->shape));
  }
  backward_with({1.0});
}

void Tensor::backward_with(const std::vector<double>& seed_grad) {
  if (static_cast<std::int64_t>(seed_grad.size()) != size()) {
    throw DimensionError("backward_with: seed size " + std::to_string(seed_grad.size()) +
                         " does not match tensor size " + std::to_string(size()));
  }
  if (!node_->requires_grad) {
    return;  // nothing reachable wants a gradient
  }
  // Iterative post-order DFS; reverse visitation order is a topological order
  // of the subgraph that requires gradients.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      TensorNode* parent = top.node->parents[top.next_parent].node();
      ++top.next_parent;
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }
  for (std::size_t i = 0; i < seed_grad.size(); ++i) node_->grad[i] += seed_grad[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace grcn
