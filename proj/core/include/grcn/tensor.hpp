#ifndef GRCN_TENSOR_HPP
#define GRCN_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace grcn {

struct TensorNode;

// Dense n-dimensional float64 array with an accumulated gradient of the same
// shape. Image-like data is NCHW. A Tensor is a shared handle to its node:
// copies alias, which is what lets ops record the graph they need for
// reverse-mode differentiation. backward() on a scalar propagates exact
// gradients to every reachable node with requires_grad set.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const std::vector<int>& shape() const;
  int ndim() const;
  int dim(int axis) const;
  std::int64_t size() const;

  std::vector<double>& values();
  const std::vector<double>& values() const;
  std::vector<double>& grad();
  const std::vector<double>& grad() const;

  double item() const;
  double at(std::initializer_list<int> index) const;
  double& at(std::initializer_list<int> index);
  double grad_at(std::initializer_list<int> index) const;

  void set_requires_grad(bool enabled);
  bool requires_grad() const;
  void zero_grad();

  // Reverse-mode pass seeded from this scalar. Gradients accumulate, so zero
  // them explicitly between steps.
  void backward();
  // Reverse-mode pass from any tensor with an explicit output gradient.
  void backward_with(const std::vector<double>& seed_grad);

  // Stable identity of the underlying node; two handles alias iff equal.
  const void* node_id() const;

  TensorNode* node() const { return node_.get(); }

  // Creates an op node. `backward` receives the finished node (its grad is
  // populated) and accumulates into the parents' grads.
  static Tensor make_op(std::vector<int> shape, std::vector<Tensor> parents,
                        std::function<void(TensorNode&)> backward);

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<Tensor> parents;
  std::function<void(TensorNode&)> backward_fn;
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

}  // namespace grcn

#endif  // GRCN_TENSOR_HPP
